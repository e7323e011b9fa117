//! Test-time temporal-extent alteration: split the sequence into equal
//! segments, stretch some by repeating frames and squeeze their neighbours by
//! dropping frames, keeping the total length.

use serde::{Deserialize, Serialize};

use super::FeatureDataset;
use crate::error::{Error, Result};
use crate::tensor::{Element, Rng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    VeryCoarse,
    Coarse,
    Fine,
    VeryFine,
}

impl Granularity {
    pub const ALL: [Granularity; 4] = [
        Granularity::VeryCoarse,
        Granularity::Coarse,
        Granularity::Fine,
        Granularity::VeryFine,
    ];

    /// Segments over a 128-step sequence.
    pub fn segments(self) -> usize {
        match self {
            Granularity::VeryCoarse => 2,
            Granularity::Coarse => 4,
            Granularity::Fine => 8,
            Granularity::VeryFine => 16,
        }
    }

    pub fn letter(self) -> char {
        match self {
            Granularity::VeryCoarse => 'a',
            Granularity::Coarse => 'b',
            Granularity::Fine => 'c',
            Granularity::VeryFine => 'd',
        }
    }

    pub fn from_letter(letter: &str) -> Option<Self> {
        Granularity::ALL
            .into_iter()
            .find(|g| letter.len() == 1 && letter.starts_with(g.letter()))
    }

    pub fn name(self) -> &'static str {
        match self {
            Granularity::VeryCoarse => "very-coarse",
            Granularity::Coarse => "coarse",
            Granularity::Fine => "fine",
            Granularity::VeryFine => "very-fine",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentAction {
    Expand,
    Shrink,
    Keep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlterationSpec {
    pub granularity: Granularity,
    /// Explicit per-segment actions; `None` draws a paired pattern from the rng.
    #[serde(default)]
    pub actions: Option<Vec<SegmentAction>>,
    /// Frames moved between paired segments, as a fraction of the segment length.
    #[serde(default = "default_amount")]
    pub amount: f64,
}

fn default_amount() -> f64 {
    0.5
}

impl AlterationSpec {
    pub fn seeded(granularity: Granularity) -> Self {
        AlterationSpec {
            granularity,
            actions: None,
            amount: default_amount(),
        }
    }

    pub fn keep_all(granularity: Granularity) -> Self {
        AlterationSpec {
            granularity,
            actions: Some(vec![SegmentAction::Keep; granularity.segments()]),
            amount: default_amount(),
        }
    }

    /// Segments are paired `(0,1), (2,3), ...`; each pair expands one member
    /// and shrinks the other, the order chosen by a coin flip.
    pub fn draw_actions(&self, rng: &mut Rng) -> Vec<SegmentAction> {
        let n = self.granularity.segments();
        let mut actions = Vec::with_capacity(n);
        for _ in 0..n / 2 {
            if rng.bernoulli(0.5) {
                actions.extend([SegmentAction::Expand, SegmentAction::Shrink]);
            } else {
                actions.extend([SegmentAction::Shrink, SegmentAction::Expand]);
            }
        }
        if n % 2 == 1 {
            actions.push(SegmentAction::Keep);
        }
        actions
    }

    /// Output length of each segment for a sequence of `steps`.
    pub fn budgets(&self, steps: usize, actions: &[SegmentAction]) -> Result<Vec<usize>> {
        let n = self.granularity.segments();
        if steps % n != 0 {
            return Err(Error::InvalidSpec(format!("{n} segments do not divide {steps} steps")));
        }
        if actions.len() != n {
            return Err(Error::InvalidSpec(format!("{} actions for {n} segments", actions.len())));
        }
        if !(0.0..1.0).contains(&self.amount) {
            return Err(Error::InvalidSpec(format!("amount {} outside [0, 1)", self.amount)));
        }
        let seg = steps / n;
        let delta = (seg as f64 * self.amount).floor() as usize;
        let budgets: Vec<usize> = actions
            .iter()
            .map(|a| match a {
                SegmentAction::Expand => seg + delta,
                SegmentAction::Shrink => seg - delta,
                SegmentAction::Keep => seg,
            })
            .collect();
        if budgets.iter().sum::<usize>() != steps {
            return Err(Error::InvalidSpec(
                "expanded and shrunk segments must balance".into(),
            ));
        }
        Ok(budgets)
    }
}

/// Source frame for each output frame of a segment of `len` frames resized to
/// `budget` frames. Growing repeats frames (earlier frames take any extra
/// repeat); shrinking keeps uniformly spaced frames.
pub fn resample_indices(len: usize, budget: usize) -> Vec<usize> {
    if budget >= len {
        let (base, extra) = (budget / len, budget % len);
        (0..len)
            .flat_map(|i| std::iter::repeat_n(i, base + usize::from(i < extra)))
            .collect()
    } else {
        (0..budget).map(|i| i * len / budget).collect()
    }
}

/// Alters a `[T, ...]` feature tensor. With no explicit actions the pattern
/// comes from `rng`.
pub fn alter_extents<T: Element>(
    features: &Tensor<T>,
    spec: &AlterationSpec,
    rng: &mut Rng,
) -> Result<Tensor<T>> {
    let steps = features.shape()[0];
    let actions = match &spec.actions {
        Some(a) => a.clone(),
        None => spec.draw_actions(rng),
    };
    let budgets = spec.budgets(steps, &actions)?;
    let seg = steps / budgets.len();
    let frame = features.len() / steps;
    let data = features.data();
    let mut out = Vec::with_capacity(features.len());
    for (s, &budget) in budgets.iter().enumerate() {
        for src in resample_indices(seg, budget) {
            let t = s * seg + src;
            out.extend_from_slice(&data[t * frame..(t + 1) * frame]);
        }
    }
    Tensor::new(features.shape(), out)
}

/// Alters every sample of a dataset with patterns drawn from one seed. Labels
/// are carried over unchanged.
pub fn alter_dataset(
    dataset: &FeatureDataset,
    spec: &AlterationSpec,
    seed: u64,
) -> Result<FeatureDataset> {
    let mut rng = Rng::new(seed);
    let mut out = dataset.clone_meta();
    for s in &dataset.samples {
        let mut sample = s.clone();
        sample.features = alter_extents(&s.features, spec, &mut rng)?;
        out.samples.push(sample);
    }
    Ok(out)
}
