//! Optimizer recurrences, training contracts and checkpoints.

use timeception::data::{synth_generate, MotifSpec, SynthSpec};
use timeception::layer::TimeceptionConfig;
use timeception::model::{build_model, load_checkpoint, save_checkpoint, Model, ModelConfig, Task};
use timeception::params::{ParamId, ParamKind, ParamStore};
use timeception::train::{decayed_params, evaluate, sgd_step, train, HParams, TrainOptions, Velocity};
use timeception::{Precision, Rng, Tensor};

#[test]
fn quadratic_bowl_converges() {
    let mut store = ParamStore::<f64>::new();
    store.add("p", ParamKind::Dense, Tensor::from_f64(&[3], &[1.0, -2.0, 0.5]).unwrap());
    let hp = HParams { lr: 0.1, momentum: 0.9, weight_decay: 0.0, ..HParams::default() };
    let mut v = Velocity::zeros_like(&store);
    let norm = |s: &ParamStore<f64>| s.get(ParamId(0)).data().iter().map(|x| x * x).sum::<f64>().sqrt();
    let initial = norm(&store);

    // independent scalar recurrence of the same update
    let (mut p, mut vel) = (1.0f64, 0.0f64);
    for _ in 0..200 {
        // gradient of ½‖p‖² is p
        let g = store.get(ParamId(0)).clone();
        sgd_step(&mut store, &[g], &mut v, &hp).unwrap();
        vel = 0.9 * vel + p;
        p -= 0.1 * vel;
    }
    let ratio = norm(&store) / initial;
    assert!(ratio < 1e-3, "{ratio}");
    assert!((ratio - p.abs()).abs() < 1e-12, "{ratio} vs scalar {p}");
}

#[test]
fn weight_decay_touches_only_weights() {
    let cfg = small_config(Precision::F64);
    let model = build_model::<f64>(&cfg, &mut Rng::new(0)).unwrap();
    let decayed = decayed_params(&model.store);
    for (id, meta, _) in model.store.iter() {
        let expected = matches!(meta.kind, ParamKind::Pointwise | ParamKind::Depthwise | ParamKind::Dense);
        assert_eq!(decayed.contains(&id), expected, "{}", meta.name);
    }
}

fn small_spec() -> SynthSpec {
    let motif = |first: usize, duration: usize, after: Option<usize>| MotifSpec {
        channels: (first..first + 4).collect(),
        duration,
        amplitude: 1.0,
        scale_min: 0.75,
        scale_max: 1.5,
        after,
        follow: None,
        jitter: 1.0,
    };
    SynthSpec {
        steps: 16,
        spatial: 1,
        channels: 16,
        noise: 0.05,
        min_motifs: 1,
        max_motifs: 2,
        partner_prob: 0.5,
        frames_per_timestep: 1,
        motifs: vec![motif(0, 3, None), motif(4, 4, None), motif(8, 3, None), motif(12, 3, Some(0))],
    }
}

fn small_config(precision: Precision) -> ModelConfig {
    ModelConfig {
        time_steps: 16,
        spatial: 1,
        timeception: TimeceptionConfig::new(16, 2, 2),
        hidden: 12,
        classes: 4,
        task: Task::Multilabel,
        precision,
    }
}

fn small_hp(seed: u64, precision: Precision) -> HParams {
    HParams {
        lr: 0.05,
        epochs: 6,
        batch_size: 16,
        seed,
        precision,
        ..HParams::default()
    }
}

#[test]
fn loss_decreases_on_every_seed() {
    let data = synth_generate(&small_spec(), 256, &mut Rng::new(40)).unwrap();
    for seed in 0..3 {
        let mut model = build_model::<f32>(&small_config(Precision::F32), &mut Rng::new(seed)).unwrap();
        let report = train(&mut model, &data, &small_hp(seed, Precision::F32), &TrainOptions::default()).unwrap();
        assert_eq!(report.epochs.len(), 6);
        let (first, last) = (report.epochs[0].loss, report.epochs[5].loss);
        assert!(last < first, "seed {seed}: {first} -> {last}");
    }
}

#[test]
fn zero_learning_rate_moves_only_norm_statistics() {
    let data = synth_generate(&small_spec(), 64, &mut Rng::new(41)).unwrap();
    let mut model = build_model::<f64>(&small_config(Precision::F64), &mut Rng::new(1)).unwrap();
    let before = model.store.clone();
    let norms_before = model.norms.clone();
    let mut hp = small_hp(1, Precision::F64);
    hp.lr = 1e-300;
    hp.epochs = 2;
    train(&mut model, &data, &hp, &TrainOptions::default()).unwrap();
    for (a, b) in before.tensors().iter().zip(model.store.tensors()) {
        assert!(a.max_abs_diff(b).unwrap() < 1e-200);
    }
    assert_ne!(norms_before, model.norms);
}

#[test]
fn oversized_batch_is_clamped() {
    let data = synth_generate(&small_spec(), 20, &mut Rng::new(42)).unwrap();
    let mut model = build_model::<f64>(&small_config(Precision::F64), &mut Rng::new(2)).unwrap();
    let mut hp = small_hp(2, Precision::F64);
    hp.batch_size = 500;
    hp.epochs = 1;
    let report = train(&mut model, &data, &hp, &TrainOptions::default()).unwrap();
    assert!(report.final_loss.is_finite());
}

fn run_once(seed: u64) -> (timeception::train::RunReport, Model<f64>) {
    let data = synth_generate(&small_spec(), 96, &mut Rng::new(43)).unwrap();
    let test = synth_generate(&small_spec(), 48, &mut Rng::new(44)).unwrap();
    let mut model = build_model::<f64>(&small_config(Precision::F64), &mut Rng::new(seed)).unwrap();
    let opts = TrainOptions { eval_set: Some(&test), checkpoint: None };
    let report = train(&mut model, &data, &small_hp(seed, Precision::F64), &opts).unwrap();
    (report, model)
}

#[test]
fn replay_is_bitwise_at_f64() {
    let (a, ma) = run_once(3);
    let (b, mb) = run_once(3);
    assert_eq!(a.without_timing(), b.without_timing());
    for (x, y) in ma.store.tensors().iter().zip(mb.store.tensors()) {
        assert_eq!(x, y);
    }
    let (c, _) = run_once(4);
    assert_ne!(a.final_loss, c.final_loss);
}

#[test]
fn f64_checkpoint_round_trips_exactly() {
    let (_, model) = run_once(5);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.tcpt");
    save_checkpoint(&model, &path).unwrap();
    let back: Model<f64> = load_checkpoint(&path).unwrap();
    assert_eq!(back.store.tensors(), model.store.tensors());
    assert_eq!(back.norms, model.norms);
    let test = synth_generate(&small_spec(), 48, &mut Rng::new(44)).unwrap();
    assert_eq!(evaluate(&back, &test).unwrap(), evaluate(&model, &test).unwrap());
}

#[test]
fn evaluation_does_not_depend_on_thread_count() {
    let model = build_model::<f64>(&small_config(Precision::F64), &mut Rng::new(4)).unwrap();
    // more samples than one evaluation chunk
    let data = synth_generate(&small_spec(), 150, &mut Rng::new(5)).unwrap();
    let on = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| evaluate(&model, &data).unwrap())
    };
    assert_eq!(on(1), on(3));
}
