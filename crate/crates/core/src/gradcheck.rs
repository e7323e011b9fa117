//! Central finite-difference oracle for the backward rules.

use std::sync::Arc;

use crate::error::Result;
use crate::layer::{build_stack, timeception_layer, MultiScaleMode, TimeceptionConfig};
use crate::model::{build_model, ModelConfig, Task};
use crate::ops::{self, ConvSpec, Mode, NormState, PoolSpec};
use crate::params::{Bound, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::{Precision, Rng, Tensor};

/// Pass threshold of the suite.
pub const SUITE_TOLERANCE: f64 = 1e-4;

pub const DEFAULT_EPS: f64 = 1e-5;
/// Denominator floor of the relative error. Gradients that vanish exactly
/// (a bias followed by batch norm) would otherwise divide roundoff by ~0.
pub const REL_FLOOR: f64 = 1e-5;
/// Coordinates probed per input tensor; larger tensors are subsampled.
pub const DEFAULT_MAX_COORDS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(|analytic|, |numeric|, REL_FLOOR)`; NaN
    /// if any probe was NaN.
    pub max_rel_error: f64,
    /// (input index, flat coordinate) of the worst probe.
    pub worst: Option<(usize, usize)>,
    pub coords_checked: usize,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_error.is_finite() && self.max_rel_error < tol
    }
}

/// Checks the gradient of a scalar function of one tensor.
pub fn finite_diff_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape<f64>, Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    let report = finite_diff_check_many(
        |tape, vars| f(tape, vars[0]),
        std::slice::from_ref(x),
        eps,
        DEFAULT_MAX_COORDS,
    )?;
    Ok(report.max_rel_error)
}

/// Checks the gradients of a scalar function with respect to every input,
/// probing at most `max_coords` coordinates per input.
pub fn finite_diff_check_many<F>(
    f: F,
    inputs: &[Tensor<f64>],
    eps: f64,
    max_coords: usize,
) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.get_or_zeros(v)).collect();

    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::no_grad();
        let vars: Vec<_> = perturbed.iter().map(|t| tape.leaf(t.clone())).collect();
        f(&tape, &vars)?.value().item()
    };

    let mut rng = Rng::new(0x5eed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coords_checked: 0,
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let coords: Vec<usize> = if input.len() <= max_coords {
            (0..input.len()).collect()
        } else {
            let mut all: Vec<usize> = (0..input.len()).collect();
            rng.shuffle(&mut all);
            all.truncate(max_coords);
            all.sort_unstable();
            all
        };
        for coord in coords {
            let base = input.data()[coord];
            work[i].data_mut()[coord] = base + eps;
            let plus = eval(&work)?;
            work[i].data_mut()[coord] = base - eps;
            let minus = eval(&work)?;
            work[i].data_mut()[coord] = base;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[i].data()[coord];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.coords_checked += 1;
            if report.max_rel_error.is_nan() {
                continue;
            }
            if rel.is_nan() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((i, coord));
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct GradCase {
    pub name: String,
    pub report: GradCheckReport,
}

impl GradCase {
    pub fn passed(&self) -> bool {
        self.report.passed(SUITE_TOLERANCE)
    }
}

/// Weighted sum `Σ w·y` with fixed random weights, so every output
/// coordinate carries a distinct upstream gradient.
fn probe<'t>(tape: &'t Tape<f64>, y: Var<'t, f64>) -> Result<Var<'t, f64>> {
    let w = Tensor::randn(&y.shape(), &mut Rng::new(0xface), 1.0)?;
    Ok(ops::sum(ops::mul(y, tape.leaf(w))?))
}

fn randn(shape: &[usize], seed: u64) -> Result<Tensor<f64>> {
    Tensor::randn(shape, &mut Rng::new(seed), 1.0)
}

/// Finite-difference checks of every differentiable op, one Timeception
/// layer and a tiny end-to-end model, all at f64. `full` probes every
/// coordinate and every conv configuration.
pub fn gradient_suite(full: bool) -> Result<Vec<GradCase>> {
    let coords = if full { usize::MAX } else { DEFAULT_MAX_COORDS };
    let mut cases = Vec::new();
    let mut check = |name: String,
                     inputs: Vec<Tensor<f64>>,
                     f: &dyn for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>|
     -> Result<()> {
        let report = finite_diff_check_many(f, &inputs, DEFAULT_EPS, coords)?;
        cases.push(GradCase { name, report });
        Ok(())
    };

    let v = [2, 8, 2, 1, 6];
    check("add".into(), vec![randn(&v, 1)?, randn(&v, 2)?], &|t, x| {
        probe(t, ops::add(x[0], x[1])?)
    })?;
    check("mul".into(), vec![randn(&v, 3)?, randn(&v, 4)?], &|t, x| {
        probe(t, ops::mul(x[0], x[1])?)
    })?;
    check("scale".into(), vec![randn(&v, 5)?], &|t, x| probe(t, ops::scale(x[0], -1.7)))?;
    check("mean".into(), vec![randn(&v, 6)?], &|_, x| Ok(ops::mean(x[0])))?;
    check("reshape".into(), vec![randn(&v, 7)?], &|t, x| {
        probe(t, ops::reshape(x[0], &[16, 12])?)
    })?;
    check("relu".into(), vec![randn(&v, 8)?], &|t, x| probe(t, ops::relu(x[0])))?;

    let kernels: Vec<(usize, usize)> = if full {
        [3, 5, 7]
            .iter()
            .flat_map(|&k| [1, 2, 3].map(|d| (k, d)))
            .collect()
    } else {
        vec![(3, 1), (7, 1), (3, 3)]
    };
    for (k, d) in kernels {
        for spec in [ConvSpec::same(k, d), ConvSpec::valid(k, d)] {
            let t = 16.max((k - 1) * d + 4);
            check(
                format!("depthwise_temporal_conv k={k} d={d} {:?}", spec.padding),
                vec![randn(&[2, t, 2, 1, 3], 10)?, randn(&[k, 3], 11)?, randn(&[3], 12)?],
                &move |tp, x| probe(tp, ops::depthwise_temporal_conv(x[0], x[1], x[2], spec)?),
            )?;
        }
    }
    check(
        "pointwise_conv".into(),
        vec![randn(&v, 13)?, randn(&[6, 4], 14)?, randn(&[4], 15)?],
        &|t, x| probe(t, ops::pointwise_conv(x[0], x[1], x[2])?),
    )?;
    check(
        "dense".into(),
        vec![randn(&[5, 6], 16)?, randn(&[6, 3], 17)?, randn(&[3], 18)?],
        &|t, x| probe(t, ops::dense(x[0], x[1], x[2])?),
    )?;
    for spec in [PoolSpec::same(2, 1), PoolSpec::same(2, 2), PoolSpec::valid(3, 2)] {
        check(
            format!("temporal_max_pool k={} s={}", spec.kernel_size, spec.stride),
            vec![randn(&[2, 9, 2, 1, 3], 19)?],
            &move |t, x| probe(t, ops::temporal_max_pool(x[0], spec)?),
        )?;
    }
    check("spatial_avg_pool".into(), vec![randn(&[2, 4, 3, 3, 2], 20)?], &|t, x| {
        probe(t, ops::spatial_avg_pool(x[0])?)
    })?;
    check("channel_split_concat".into(), vec![randn(&v, 21)?], &|t, x| {
        let mut parts = ops::channel_split(x[0], 3)?;
        parts.reverse();
        probe(t, ops::channel_concat(&parts)?)
    })?;
    check("channel_slice".into(), vec![randn(&v, 22)?], &|t, x| {
        probe(t, ops::channel_slice(x[0], 1, 4)?)
    })?;
    check("channel_shuffle".into(), vec![randn(&v, 23)?], &|t, x| {
        probe(t, ops::channel_shuffle(x[0], 2)?)
    })?;
    let perm = Arc::new(ops::seeded_permutation(6, &mut Rng::new(24)));
    check("channel_permute".into(), vec![randn(&v, 25)?], &move |t, x| {
        probe(t, ops::channel_permute(x[0], Arc::clone(&perm))?)
    })?;
    check(
        "batch_norm".into(),
        vec![randn(&v, 26)?, randn(&[6], 27)?, randn(&[6], 28)?],
        &|t, x| {
            let mut state = NormState::new(6);
            probe(t, ops::batch_norm(x[0], x[1], x[2], &mut state, Mode::Train)?)
        },
    )?;
    let targets = Tensor::from_f64(&[3, 4], &[1., 0., 0., 1., 0., 1., 1., 0., 0., 0., 1., 1.])?;
    check("bce_with_logits".into(), vec![randn(&[3, 4], 29)?], &move |_, x| {
        ops::bce_with_logits(x[0], &targets)
    })?;
    check("softmax_ce".into(), vec![randn(&[3, 4], 30)?], &|_, x| {
        ops::softmax_ce(x[0], &[2, 0, 3])
    })?;

    for mode in MultiScaleMode::ALL {
        let cfg = TimeceptionConfig::new(8, 2, 1).with_mode(mode);
        let mut store = ParamStore::<f64>::new();
        let stack = build_stack(&cfg, &mut store, &mut Rng::new(31))?;
        let mut inputs = vec![randn(&[2, 8, 1, 1, 8], 32)?];
        inputs.extend(store.tensors().iter().cloned());
        check(format!("timeception_layer {}", mode.name()), inputs, &|t, x| {
            let bound = Bound(x[1..].to_vec());
            let mut norm = NormState::new(stack.layers[0].shape.out_channels);
            let y = timeception_layer(x[0], &stack.layers[0], &bound, &mut norm, Mode::Train)?;
            probe(t, y)
        })?;
    }

    let cfg = ModelConfig {
        time_steps: 8,
        spatial: 2,
        timeception: TimeceptionConfig::new(16, 4, 1),
        hidden: 6,
        classes: 3,
        task: Task::Multilabel,
        precision: Precision::F64,
    };
    let model = build_model::<f64>(&cfg, &mut Rng::new(33))?;
    let y = Tensor::from_f64(&[3, 3], &[1., 0., 1., 0., 1., 0., 1., 1., 0.])?;
    let mut inputs = vec![randn(&[3, 8, 2, 2, 16], 34)?];
    inputs.extend(model.store.tensors().iter().cloned());
    check("tiny_model".into(), inputs, &move |_, x| {
        let bound = Bound(x[1..].to_vec());
        let mut norms = model.norms.clone();
        let logits = model.forward(x[0], &bound, &mut norms, Mode::Train)?;
        ops::bce_with_logits(logits, &y)
    })?;
    Ok(cases)
}
