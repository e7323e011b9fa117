//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Criteria 7, 8 and 10 train the desk models and take
//! several minutes.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{ap_oracle, conv_oracle};
use timeception::config::CliConfig;
use timeception::gradcheck::gradient_suite;
use timeception::layer::{
    build_stack, count_params_variant, grouped_modules, stack_forward, MultiScaleMode,
    TemporalVariant, TimeceptionConfig,
};
use timeception::model::{build_model, ModelConfig, Task};
use timeception::ops::{self, ConvSpec, Mode};
use timeception::params::ParamStore;
use timeception::train::{average_precision, run_suite, train_cell, ExperimentData, SuiteResult};
use timeception::{Precision, Rng, Tape, Tensor};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn desk_config() -> CliConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.json");
    CliConfig::load(&path).expect("configs/desk.json loads")
}

fn reference_config(c0: usize, groups: usize, layers: usize) -> ModelConfig {
    ModelConfig {
        time_steps: 8 << layers,
        spatial: 7,
        timeception: TimeceptionConfig::new(c0, groups, layers),
        hidden: 512,
        classes: 157,
        task: Task::Multilabel,
        precision: Precision::F32,
    }
}

fn param_table() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, c0, n, l, published) in [
        ("ResNet+3TC", 2048, 16, 3, 3.82),
        ("ResNet+4TC", 2048, 16, 4, 5.58),
        ("I3D+3TC", 1024, 8, 3, 1.95),
        ("I3D+4TC", 1024, 8, 4, 2.83),
    ] {
        let m = reference_config(c0, n, l).param_report().map_err(|e| e.to_string())?.millions();
        let rel = (m - published) / published;
        ok &= rel.abs() <= 0.005;
        parts.push(format!("{name} {m:.4}M ({:+.2}%)", rel * 100.0));
    }
    check(ok, parts.join(", "))
}

fn shape_trajectory() -> Outcome {
    let cfg = reference_config(2048, 16, 4);
    let model = build_model::<f32>(&cfg, &mut Rng::new(0)).map_err(|e| e.to_string())?;
    let x = Tensor::<f32>::randn(&[1, 128, 7, 7, 2048], &mut Rng::new(1), 1.0).map_err(|e| e.to_string())?;
    let tape = Tape::no_grad();
    let bound = model.store.bind(&tape);
    let mut norms = model.norms.clone();
    let layers = model.stack.layers.len();
    let y = stack_forward(tape.leaf(x), &model.stack, &bound, &mut norms[..layers], Mode::Eval)
        .map_err(|e| e.to_string())?;
    let shape = y.shape().to_vec();
    check(shape == [1, 8, 7, 7, 4960], format!("[1,128,7,7,2048] -> {shape:?}"))
}

fn gradient_checks() -> Outcome {
    let cases = gradient_suite(true).map_err(|e| e.to_string())?;
    let worst = cases
        .iter()
        .map(|c| c.report.max_rel_error)
        .fold(0.0f64, |a, b| if b.is_nan() { f64::NAN } else { a.max(b) });
    let failed: Vec<&str> = cases.iter().filter(|c| !c.passed()).map(|c| c.name.as_str()).collect();
    check(
        failed.is_empty(),
        format!("{} cases, worst rel error {worst:.2e}, failed {failed:?}", cases.len()),
    )
}

fn conv_oracle_check() -> Outcome {
    let mut rng = Rng::new(4);
    let mut worst = 0.0f64;
    let mut combos = std::collections::BTreeSet::new();
    let mut instances = 0;
    while instances < 100 {
        // cycle through all 18 (k, d, padding) combinations, random sizes
        let combo = instances % 18;
        let (k, d, same) = ([3, 5, 7][combo / 6], 1 + (combo / 2) % 3, combo % 2 == 0);
        let span = (k - 1) * d;
        let t = if same { 1 + rng.below(30) } else { span + 1 + rng.below(20) };
        let (b, h, w, c) = (1 + rng.below(2), 1 + rng.below(2), 1 + rng.below(2), 1 + rng.below(5));
        let spec = if same { ConvSpec::same(k, d) } else { ConvSpec::valid(k, d) };
        let x = Tensor::<f64>::randn(&[b, t, h, w, c], &mut rng, 1.0).unwrap();
        let wt = Tensor::<f64>::randn(&[k, c], &mut rng, 1.0).unwrap();
        let bias = Tensor::<f64>::randn(&[c], &mut rng, 1.0).unwrap();
        let tape = Tape::no_grad();
        let y = ops::depthwise_temporal_conv(tape.leaf(x.clone()), tape.leaf(wt.clone()), tape.leaf(bias.clone()), spec)
            .map_err(|e| e.to_string())?
            .value();
        let (t_out, expect) = conv_oracle(x.data(), (b, t, h * w, c), wt.data(), bias.data(), k, d, same);
        if y.shape() != [b, t_out, h, w, c] {
            return Err(format!("shape {:?} for k={k} d={d} same={same}", y.shape()));
        }
        for (a, e) in y.data().iter().zip(&expect) {
            worst = worst.max((a - e).abs());
        }
        combos.insert((k, d, same));
        instances += 1;
    }
    check(
        worst <= 1e-12 && combos.len() == 18,
        format!("{instances} instances over {} combinations, max abs error {worst:.1e}", combos.len()),
    )
}

fn shuffle_invariants() -> Outcome {
    let mut rng = Rng::new(5);
    // shuffle: channel c holds c, output must be a permutation with the
    // interleaved layout
    for (c, g) in [(6, 2), (12, 3), (64, 8), (4960, 16), (7, 1)] {
        let data: Vec<f64> = (0..2 * c).map(|i| (i % c) as f64).collect();
        let x = Tensor::<f64>::from_f64(&[1, 2, 1, 1, c], &data).unwrap();
        let tape = Tape::no_grad();
        let y = ops::channel_shuffle(tape.leaf(x), g).map_err(|e| e.to_string())?.value();
        let row: Vec<usize> = y.data()[..c].iter().map(|&v| v as usize).collect();
        let mut sorted = row.clone();
        sorted.sort_unstable();
        if sorted != (0..c).collect::<Vec<_>>() {
            return Err(format!("shuffle C={c} N={g} is not a permutation"));
        }
        let width = c / g;
        if (0..width).any(|j| (0..g).any(|n| row[j * g + n] != n * width + j)) {
            return Err(format!("shuffle C={c} N={g} is not interleaved"));
        }
    }
    for _ in 0..50 {
        let (groups, width, t) = (1 + rng.below(6), 1 + rng.below(5), 1 + rng.below(6));
        let x = Tensor::<f64>::randn(&[2, t, 1, 2, groups * width], &mut rng, 1.0).unwrap();
        let tape = Tape::no_grad();
        let parts = ops::channel_split(tape.leaf(x.clone()), groups).map_err(|e| e.to_string())?;
        let y = ops::channel_concat(&parts).map_err(|e| e.to_string())?.value();
        if y != x {
            return Err(format!("concat(split(x, {groups})) != x"));
        }
    }
    // probing one input channel moves only its own group's output block
    let mut isolated = 0;
    for mode in MultiScaleMode::ALL {
        let cfg = TimeceptionConfig::new(16, 4, 1).with_mode(mode);
        let mut store = ParamStore::<f64>::new();
        let stack = build_stack(&cfg, &mut store, &mut Rng::new(6)).map_err(|e| e.to_string())?;
        let layer = &stack.layers[0];
        let block = layer.shape.out_channels / cfg.groups;
        let run = |x: &Tensor<f64>| {
            let tape = Tape::no_grad();
            let bound = store.bind(&tape);
            grouped_modules(tape.leaf(x.clone()), layer, &bound).unwrap().value()
        };
        let x = Tensor::<f64>::randn(&[1, 12, 1, 1, 16], &mut rng, 1.0).unwrap();
        let base = run(&x);
        let c_out = base.last_dim();
        for probe in 0..16 {
            let mut xp = x.clone();
            for t in 0..12 {
                xp.data_mut()[t * 16 + probe] += 0.5;
            }
            let moved = run(&xp);
            let changed: Vec<usize> = (0..moved.len())
                .filter(|&i| (moved.data()[i] - base.data()[i]).abs() > 1e-12)
                .map(|i| i % c_out)
                .collect();
            let group = probe / layer.shape.group_width;
            if changed.is_empty() || changed.iter().any(|&c| c / block != group) {
                return Err(format!("{}: channel {probe} leaks outside group {group}", mode.name()));
            }
            isolated += 1;
        }
    }
    Ok(format!("5 shuffle layouts, 50 split/concat round trips, {isolated} isolated probes"))
}

fn map_oracle() -> Outcome {
    let mut rng = Rng::new(6);
    let mut checked = 0;
    let mut worst = 0.0f64;
    while checked < 200 {
        let n = 1 + rng.below(20);
        let levels = 1 + rng.below(6);
        let scores: Vec<f64> = (0..n).map(|_| rng.below(levels) as f64 / levels as f64).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.bernoulli(0.4) as u8).collect();
        let Some(expect) = ap_oracle(&scores, &labels) else { continue };
        let got = average_precision(&scores, &labels).map_err(|e| e.to_string())?;
        worst = worst.max((got - expect).abs());
        checked += 1;
    }
    let example = average_precision(&[0.9, 0.8, 0.1], &[1, 0, 1]).map_err(|e| e.to_string())?;
    check(
        worst <= 1e-15 && (example - 5.0 / 6.0).abs() <= 1e-15,
        format!("{checked} instances, max deviation {worst:.1e}, worked example {example:.4}"),
    )
}

fn growth_ordering() -> Outcome {
    let tc = reference_config(1024, 8, 4).param_report().map_err(|e| e.to_string())?.stack_total();
    let total = |v| count_params_variant(v, 1024, 4, 3).map(|r| r.total).map_err(|e| e.to_string());
    let shuffle = total(TemporalVariant::GroupedShuffle { groups: 8 })?;
    let pointwise = total(TemporalVariant::GroupedPointwise)?;
    let separable = total(TemporalVariant::SeparableJoint)?;
    check(
        tc < shuffle && shuffle < pointwise && pointwise < separable,
        format!("timeception {tc} < grouped+shuffle {shuffle} < grouped+pointwise {pointwise} < separable {separable}"),
    )
}

fn multi_scale_benefit(suite: &SuiteResult) -> Outcome {
    let table = suite.scale_table();
    let get = |m| table.mean_of(m).ok_or_else(|| format!("no cells for {}", MultiScaleMode::name(m)));
    let (mk, md, fixed) = (
        get(MultiScaleMode::MultiKernel)?,
        get(MultiScaleMode::MultiDilation)?,
        get(MultiScaleMode::Fixed)?,
    );
    let spread: Vec<String> = table.rows.iter().map(|r| format!("{} {:.2}", r.mode.name(), r.std)).collect();
    check(
        mk - fixed >= 2.0 && (mk - md).abs() < 2.0,
        format!(
            "mAP multi_kernel {mk:.2}, multi_dilation {md:.2}, fixed {fixed:.2}; mk-fixed {:+.2}, |mk-md| {:.2}; seed std {}",
            mk - fixed,
            (mk - md).abs(),
            spread.join(", ")
        ),
    )
}

fn extent_tolerance(suite: &SuiteResult) -> Outcome {
    let table = suite
        .extent_table(MultiScaleMode::MultiKernel, MultiScaleMode::Fixed)
        .map_err(|e| e.to_string())?;
    let rows: Vec<String> = table
        .rows
        .iter()
        .map(|r| format!("{}: {:.2} vs {:.2}", r.granularity.name(), r.multi_mean, r.fixed_mean))
        .collect();
    let wins = table.multi_tolerates();
    check(
        wins >= 3,
        format!("% drop multi_kernel vs fixed {}; multi-scale at or below fixed on {wins}/4", rows.join(", ")),
    )
}

fn determinism(data: &ExperimentData) -> Outcome {
    let cfg = desk_config();
    let mut model = cfg.model_config().map_err(|e| e.to_string())?;
    model.timeception.mode = MultiScaleMode::Fixed;
    model.precision = Precision::F64;
    let mut hp = cfg.hparams.clone();
    hp.precision = Precision::F64;
    hp.seed = cfg.experiment.seeds[0];
    let run = || -> Result<String, String> {
        let mut cell = train_cell(&model, data, &hp).map_err(|e| e.to_string())?;
        cell.report = cell.report.without_timing();
        serde_json::to_string(&cell).map_err(|e| e.to_string())
    };
    let (a, b) = (run()?, run()?);
    check(a == b, format!("fixed seed {} at f64 rerun, {} report bytes identical: {}", hp.seed, a.len(), a == b))
}

fn main() -> ExitCode {
    let mut failures = 0;
    let mut report = |id: usize, name: &str, budget: Duration, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let (mut ok, mut detail) = match outcome {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        if elapsed > budget {
            ok = false;
            detail += &format!("; over the {}s budget", budget.as_secs());
        }
        failures += usize::from(!ok);
        println!(
            "{} criterion {id:>2} {name}: {detail} ({:.1}s)",
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
    };
    let secs = Duration::from_secs;

    report(1, "parameter table", secs(1), &mut param_table);
    report(2, "shape trajectory", secs(60), &mut shape_trajectory);
    report(3, "gradient suite", secs(60), &mut gradient_checks);
    report(4, "convolution oracle", secs(10), &mut conv_oracle_check);
    report(5, "shuffle/group invariants", secs(5), &mut shuffle_invariants);
    report(6, "mAP oracle", secs(5), &mut map_oracle);
    report(9, "parameter growth ordering", secs(1), &mut growth_ordering);

    let cfg = desk_config();
    let start = Instant::now();
    let trained = cfg.model_config().and_then(|model| {
        let data = cfg.experiment_data()?;
        let suite = run_suite(&model, &MultiScaleMode::ALL, &cfg.experiment.seeds, &data, &cfg.hparams)?;
        Ok((data, suite))
    });
    let train_time = start.elapsed();
    println!("     desk suite: {} modes x {} seeds trained in {:.0}s", MultiScaleMode::ALL.len(), cfg.experiment.seeds.len(), train_time.as_secs_f64());
    match trained {
        Ok((data, suite)) => {
            let rest = secs(30 * 60).saturating_sub(train_time);
            report(7, "multi-scale benefit", rest, &mut || multi_scale_benefit(&suite));
            report(8, "extent tolerance", secs(10 * 60), &mut || extent_tolerance(&suite));
            report(10, "determinism", secs(5 * 60), &mut || determinism(&data));
        }
        Err(e) => {
            for (id, name) in [(7, "multi-scale benefit"), (8, "extent tolerance"), (10, "determinism")] {
                report(id, name, secs(0), &mut || Err(format!("desk suite failed: {e}")));
            }
        }
    }

    if failures == 0 {
        println!("all acceptance criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("{failures} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
