use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDims {
    pub steps: usize,
    pub spatial: usize,
    pub channels: usize,
}

impl FeatureDims {
    pub fn shape(&self) -> [usize; 4] {
        [self.steps, self.spatial, self.spatial, self.channels]
    }

    pub fn len(&self) -> usize {
        self.steps * self.spatial * self.spatial * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `[T, L, L, C]`.
    pub features: Tensor<f32>,
    /// One 0/1 entry per class.
    pub labels: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    pub dims: FeatureDims,
    pub classes: usize,
    /// Raw frames summarized by one feature timestep (metadata only).
    pub frames_per_timestep: usize,
    pub seed: u64,
    pub spec_hash: u64,
    pub samples: Vec<Sample>,
}

impl FeatureDataset {
    pub fn new(dims: FeatureDims, classes: usize) -> Self {
        FeatureDataset {
            dims,
            classes,
            frames_per_timestep: 1,
            seed: 0,
            spec_hash: 0,
            samples: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn push(&mut self, sample: Sample) -> Result<()> {
        if sample.features.shape() != self.dims.shape() {
            return Err(Error::shape(
                "dataset",
                format!("sample {:?}, dataset {:?}", sample.features.shape(), self.dims.shape()),
            ));
        }
        if sample.labels.len() != self.classes || sample.labels.iter().any(|&l| l > 1) {
            return Err(Error::Contract(format!(
                "labels must be {} binary entries",
                self.classes
            )));
        }
        self.samples.push(sample);
        Ok(())
    }

    /// Stacks the selected samples into `[B, T, L, L, C]` features and `[B, K]` targets.
    pub fn batch<T: Element>(&self, indices: &[usize]) -> Result<(Tensor<T>, Tensor<T>)> {
        if indices.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let mut x = Vec::with_capacity(indices.len() * self.dims.len());
        let mut y = Vec::with_capacity(indices.len() * self.classes);
        for &i in indices {
            let s = &self.samples[i];
            x.extend(s.features.data().iter().map(|&v| T::of(v as f64)));
            y.extend(s.labels.iter().map(|&l| T::of(l as f64)));
        }
        let [t, l, _, c] = self.dims.shape();
        Ok((
            Tensor::new(&[indices.len(), t, l, l, c], x)?,
            Tensor::new(&[indices.len(), self.classes], y)?,
        ))
    }

    /// Index of the first positive class per sample, for single-label tasks.
    pub fn class_indices(&self, indices: &[usize]) -> Result<Vec<usize>> {
        indices
            .iter()
            .map(|&i| {
                self.samples[i]
                    .labels
                    .iter()
                    .position(|&l| l == 1)
                    .ok_or_else(|| Error::Contract(format!("sample {i} has no positive label")))
            })
            .collect()
    }

    /// `[N, K]` label matrix as 0/1 bytes.
    pub fn label_matrix(&self) -> Vec<Vec<u8>> {
        self.samples.iter().map(|s| s.labels.clone()).collect()
    }

    /// SHA-256 of the file encoding.
    pub fn content_hash(&self) -> String {
        let bytes = super::format::encode_features(self);
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> FeatureDataset {
        FeatureDataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            ..self.clone_meta()
        }
    }

    pub(crate) fn clone_meta(&self) -> FeatureDataset {
        FeatureDataset {
            dims: self.dims,
            classes: self.classes,
            frames_per_timestep: self.frames_per_timestep,
            seed: self.seed,
            spec_hash: self.spec_hash,
            samples: Vec::new(),
        }
    }
}
