//! Flat storage of trainable tensors with the role of each one.

use serde::{Deserialize, Serialize};

use crate::tape::{Tape, Var};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    /// 1x1 channel-mixing weights.
    Pointwise,
    /// Per-channel temporal kernels.
    Depthwise,
    /// Classifier matrices.
    Dense,
    Bias,
    NormScale,
    NormShift,
}

impl ParamKind {
    /// Weight tensors: the ones counted in parameter reports and decayed by SGD.
    pub fn is_weight(self) -> bool {
        matches!(
            self,
            ParamKind::Pointwise | ParamKind::Depthwise | ParamKind::Dense
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct ParamMeta {
    pub name: String,
    pub kind: ParamKind,
}

#[derive(Debug, Clone)]
pub struct ParamStore<T> {
    tensors: Vec<Tensor<T>>,
    meta: Vec<ParamMeta>,
}

impl<T: Element> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            tensors: Vec::new(),
            meta: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor<T>) -> ParamId {
        self.tensors.push(value);
        self.meta.push(ParamMeta {
            name: name.into(),
            kind,
        });
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<T>) {
        debug_assert_eq!(value.shape(), self.tensors[id.0].shape());
        self.tensors[id.0] = value;
    }

    pub fn meta(&self, id: ParamId) -> &ParamMeta {
        &self.meta[id.0]
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamMeta, &Tensor<T>)> {
        self.meta
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (m, t))| (ParamId(i), m, t))
    }

    /// Scalars held by weight tensors (biases and norm parameters excluded).
    pub fn weight_count(&self) -> usize {
        self.iter()
            .filter(|(_, m, _)| m.kind.is_weight())
            .map(|(_, _, t)| t.len())
            .sum()
    }

    pub fn total_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Records every parameter as a leaf of `tape`, indexed by [`ParamId`].
    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> Bound<'t, T> {
        Bound(self.tensors.iter().map(|t| tape.leaf(t.clone())).collect())
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            meta: self.meta.clone(),
        }
    }
}

/// Parameters recorded on a tape.
pub struct Bound<'t, T: Element>(pub Vec<Var<'t, T>>);

impl<'t, T: Element> Bound<'t, T> {
    pub fn var(&self, id: ParamId) -> Var<'t, T> {
        self.0[id.0]
    }
}
