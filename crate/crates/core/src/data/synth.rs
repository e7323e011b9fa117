//! Synthetic complex actions: each sample mixes a few motifs (the
//! "one-actions") whose durations are stretched by a random scale. A motif
//! can be two bumps in a fixed order, and a label can also be made to fire
//! only when one motif precedes another.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{FeatureDataset, FeatureDims, Sample};
use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

const MAX_SCALE_RETRIES: usize = 100;
const PLACEMENT_TRIES: usize = 20;
const NO_WARP: [f64; 3] = [1.0; 3];

fn one() -> f64 {
    1.0
}

/// Second bump of a two-part motif, starting `gap` steps after the first
/// ends. Gap and duration stretch with the motif's scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FollowSpec {
    pub channels: Vec<usize>,
    pub gap: usize,
    pub duration: usize,
}

/// One class: a raised-cosine bump on a channel subset, optionally followed
/// by a second bump on other channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotifSpec {
    pub channels: Vec<usize>,
    /// Nominal duration in timesteps at scale 1.
    pub duration: usize,
    #[serde(default = "one")]
    pub amplitude: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    /// The label fires only if this class's motif is present and the named
    /// class's motif is centred before it.
    #[serde(default)]
    pub after: Option<usize>,
    #[serde(default)]
    pub follow: Option<FollowSpec>,
    /// Each part's duration and the gap are further multiplied by an
    /// independent log-uniform factor in `[1/jitter, jitter]`. 1 disables it.
    #[serde(default = "one")]
    pub jitter: f64,
}

impl MotifSpec {
    fn validate(&self, class: usize, spec: &SynthSpec) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidSpec(format!("motif {class}: {msg}")));
        if self.channels.is_empty() || self.channels.iter().any(|&c| c >= spec.channels) {
            return fail(format!("channels must be a non-empty subset of 0..{}", spec.channels));
        }
        if self.duration == 0 {
            return fail("duration must be positive".into());
        }
        if let Some(f) = &self.follow {
            if f.channels.is_empty() || f.channels.iter().any(|&c| c >= spec.channels) {
                return fail("follow channels must be a non-empty channel subset".into());
            }
            if f.duration == 0 {
                return fail("follow duration must be positive".into());
            }
        }
        if !(0.25..=4.0).contains(&self.scale_min)
            || !(0.25..=4.0).contains(&self.scale_max)
            || self.scale_min > self.scale_max
        {
            return fail(format!(
                "scale range [{}, {}] outside [0.25, 4]",
                self.scale_min, self.scale_max
            ));
        }
        if !(1.0..=4.0).contains(&self.jitter) {
            return fail(format!("jitter {} outside [1, 4]", self.jitter));
        }
        if let Some(a) = self.after {
            if a == class || a >= spec.motifs.len() {
                return fail(format!("order partner {a} invalid"));
            }
        }
        Ok(())
    }

    /// `(offset, duration, channels)` of each bump at `scale`.
    pub fn parts(&self, scale: f64) -> Vec<(usize, usize, &[usize])> {
        self.warped_parts(scale, NO_WARP)
    }

    /// Like [`MotifSpec::parts`] with per-part factors for the first
    /// duration, the gap and the second duration.
    pub fn warped_parts(&self, scale: f64, warp: [f64; 3]) -> Vec<(usize, usize, &[usize])> {
        let stretch = |d: usize, w: f64| ((d as f64 * scale * w).round() as usize).max(1);
        let first = stretch(self.duration, warp[0]);
        let mut parts = vec![(0, first, self.channels.as_slice())];
        if let Some(f) = &self.follow {
            let gap = (f.gap as f64 * scale * warp[1]).round() as usize;
            parts.push((first + gap, stretch(f.duration, warp[2]), f.channels.as_slice()));
        }
        parts
    }

    /// Total extent at `scale`.
    pub fn extent(&self, scale: f64) -> usize {
        self.warped_extent(scale, NO_WARP)
    }

    pub fn warped_extent(&self, scale: f64, warp: [f64; 3]) -> usize {
        self.warped_parts(scale, warp).iter().map(|&(o, d, _)| o + d).max().unwrap_or(0)
    }

    fn draw_warp(&self, rng: &mut Rng) -> [f64; 3] {
        if self.jitter <= 1.0 {
            return NO_WARP;
        }
        let l = self.jitter.ln();
        [(); 3].map(|_| rng.uniform(-l, l).exp())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub steps: usize,
    pub spatial: usize,
    pub channels: usize,
    pub noise: f64,
    pub min_motifs: usize,
    pub max_motifs: usize,
    /// Probability of adding a motif's order partner when it is missing.
    pub partner_prob: f64,
    pub frames_per_timestep: usize,
    pub motifs: Vec<MotifSpec>,
}

impl Default for SynthSpec {
    /// The desk task: 128 steps, 1x1 spatial grid, 64 channels, 10 classes.
    ///
    /// Channel blocks `S0..S7` hold 8 channels each. Classes 0-3 and 8-9 are
    /// ordered pairs of bumps over `S0..S3` (0: S0 then S1, 1: S1 then S0,
    /// 2: S2 then S3, 3: S3 then S2, 8: S0 then S2, 9: S2 then S0), so the
    /// channels present do not identify the class, only their order does.
    /// Classes 4-7 are single bumps on `S4..S7` of nominal length 8, 12, 16
    /// and 24. Every motif stretches by a scale in [0.5, 2] and each part and
    /// gap is jittered by up to a factor 1.6.
    fn default() -> Self {
        let block = |i: usize| (8 * i..8 * i + 8).collect::<Vec<_>>();
        let motif = |first: usize, duration: usize, follow: Option<(usize, usize, usize)>| MotifSpec {
            channels: block(first),
            duration,
            amplitude: 1.0,
            scale_min: 0.5,
            scale_max: 2.0,
            after: None,
            follow: follow.map(|(second, gap, duration)| FollowSpec {
                channels: block(second),
                gap,
                duration,
            }),
            jitter: 1.6,
        };
        SynthSpec {
            steps: 128,
            spatial: 1,
            channels: 64,
            noise: 0.1,
            min_motifs: 2,
            max_motifs: 5,
            partner_prob: 0.8,
            frames_per_timestep: 1,
            motifs: vec![
                motif(0, 4, Some((1, 4, 4))),
                motif(1, 4, Some((0, 4, 4))),
                motif(2, 6, Some((3, 4, 6))),
                motif(3, 6, Some((2, 4, 6))),
                motif(4, 8, None),
                motif(5, 12, None),
                motif(6, 16, None),
                motif(7, 24, None),
                motif(0, 4, Some((2, 8, 4))),
                motif(2, 4, Some((0, 8, 4))),
            ],
        }
    }
}

impl SynthSpec {
    pub fn classes(&self) -> usize {
        self.motifs.len()
    }

    pub fn dims(&self) -> FeatureDims {
        FeatureDims {
            steps: self.steps,
            spatial: self.spatial,
            channels: self.channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.spatial == 0 || self.channels == 0 {
            return Err(Error::InvalidSpec("dimensions must be positive".into()));
        }
        if self.motifs.is_empty() {
            return Err(Error::InvalidSpec("no motifs".into()));
        }
        if self.min_motifs == 0 || self.min_motifs > self.max_motifs {
            return Err(Error::InvalidSpec(format!(
                "motif count range [{}, {}] invalid",
                self.min_motifs, self.max_motifs
            )));
        }
        if !(0.0..=1.0).contains(&self.partner_prob) || self.noise < 0.0 {
            return Err(Error::InvalidSpec("partner_prob in [0,1] and noise >= 0 required".into()));
        }
        for (k, m) in self.motifs.iter().enumerate() {
            m.validate(k, self)?;
        }
        Ok(())
    }

    /// First 8 bytes (LE) of the SHA-256 of the JSON encoding.
    pub fn hash(&self) -> u64 {
        let json = serde_json::to_vec(self).expect("spec serializes");
        let digest = Sha256::digest(&json);
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }
}

/// Where one motif landed in a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placement {
    pub class: usize,
    pub scale: f64,
    pub warp: [f64; 3],
    pub start: usize,
    pub duration: usize,
}

impl Placement {
    pub fn center(&self) -> f64 {
        self.start as f64 + self.duration as f64 / 2.0
    }

    fn overlaps(&self, other: &Placement) -> bool {
        self.start < other.start + other.duration && other.start < self.start + self.duration
    }
}

/// Raised-cosine bump sampled at `duration` points, peak 1.
pub fn waveform(duration: usize) -> Vec<f64> {
    (0..duration)
        .map(|u| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * (u as f64 + 0.5) / duration as f64).cos()))
        .collect()
}

/// Adds a placed motif onto `[T, L, L, C]` data.
pub fn place_motif(data: &mut [f32], spec: &SynthSpec, placement: &Placement) {
    let motif = &spec.motifs[placement.class];
    let pix = spec.spatial * spec.spatial;
    let c = spec.channels;
    for (offset, duration, channels) in motif.warped_parts(placement.scale, placement.warp) {
        for (u, w) in waveform(duration).into_iter().enumerate() {
            let t = placement.start + offset + u;
            if t >= spec.steps {
                break;
            }
            let v = (motif.amplitude * w) as f32;
            for p in 0..pix {
                let base = (t * pix + p) * c;
                for &ch in channels {
                    data[base + ch] += v;
                }
            }
        }
    }
}

/// Labels implied by a set of placements.
pub fn labels_for(spec: &SynthSpec, placements: &[Placement]) -> Vec<u8> {
    let find = |k: usize| placements.iter().find(|p| p.class == k);
    (0..spec.classes())
        .map(|k| {
            let Some(p) = find(k) else { return 0 };
            match spec.motifs[k].after {
                None => 1,
                Some(a) => find(a).is_some_and(|q| q.center() < p.center()) as u8,
            }
        })
        .collect()
}

fn draw_placements(spec: &SynthSpec, rng: &mut Rng) -> Result<Vec<Placement>> {
    let k = spec.classes();
    let count = rng.int_inclusive(spec.min_motifs, spec.max_motifs).min(k);
    let mut order: Vec<usize> = (0..k).collect();
    rng.shuffle(&mut order);
    let mut chosen: Vec<usize> = order[..count].to_vec();
    for i in 0..count {
        if let Some(a) = spec.motifs[chosen[i]].after {
            if !chosen.contains(&a) && rng.bernoulli(spec.partner_prob) {
                chosen.push(a);
            }
        }
    }

    let mut placed: Vec<Placement> = Vec::with_capacity(chosen.len());
    for class in chosen {
        let m = &spec.motifs[class];
        let mut attempt = 0;
        let (scale, warp, duration) = loop {
            let s = rng.uniform(m.scale_min, m.scale_max);
            let w = m.draw_warp(rng);
            let d = m.warped_extent(s, w);
            if d <= spec.steps {
                break (s, w, d);
            }
            attempt += 1;
            if attempt >= MAX_SCALE_RETRIES {
                return Err(Error::InvalidSpec(format!(
                    "motif {class} of duration {} cannot fit in {} steps",
                    m.duration, spec.steps
                )));
            }
        };
        let mut candidate = Placement {
            class,
            scale,
            warp,
            start: 0,
            duration,
        };
        for _ in 0..PLACEMENT_TRIES {
            candidate.start = rng.int_inclusive(0, spec.steps - duration);
            if placed.iter().all(|p| !p.overlaps(&candidate)) {
                break;
            }
        }
        placed.push(candidate);
    }
    Ok(placed)
}

/// Generates `n_samples` labelled samples. Deterministic in `rng`'s seed.
pub fn synth_generate(spec: &SynthSpec, n_samples: usize, rng: &mut Rng) -> Result<FeatureDataset> {
    Ok(synth_generate_traced(spec, n_samples, rng)?.0)
}

/// As [`synth_generate`], also returning every sample's motif placements.
pub fn synth_generate_traced(
    spec: &SynthSpec,
    n_samples: usize,
    rng: &mut Rng,
) -> Result<(FeatureDataset, Vec<Vec<Placement>>)> {
    spec.validate()?;
    let dims = spec.dims();
    let mut dataset = FeatureDataset::new(dims, spec.classes());
    dataset.frames_per_timestep = spec.frames_per_timestep;
    dataset.spec_hash = spec.hash();
    let mut traces = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let placements = draw_placements(spec, rng)?;
        let mut data = vec![0f32; dims.len()];
        for p in &placements {
            place_motif(&mut data, spec, p);
        }
        if spec.noise > 0.0 {
            for v in data.iter_mut() {
                *v += (spec.noise * rng.normal()) as f32;
            }
        }
        let labels = labels_for(spec, &placements);
        dataset.push(Sample {
            features: Tensor::new(&dims.shape(), data)?,
            labels,
        })?;
        traces.push(placements);
    }
    Ok((dataset, traces))
}
