//! Synthetic generator statistics, extent alteration and the feature format.

use proptest::prelude::*;
use timeception::data::{
    alter_extents, encode_features, read_features, synth_generate, synth_generate_traced,
    write_features, AlterationSpec, FeatureDataset, FeatureDims, Granularity, Sample, SegmentAction,
    SynthSpec,
};
use timeception::{Rng, Tensor};

#[test]
fn label_prevalence_is_moderate() {
    let spec = SynthSpec::default();
    let ds = synth_generate(&spec, 1000, &mut Rng::new(11)).unwrap();
    for k in 0..spec.classes() {
        let p = ds.samples.iter().filter(|s| s.labels[k] == 1).count() as f64 / 1000.0;
        assert!(p > 0.05 && p < 0.8, "class {k} prevalence {p}");
    }
}

/// Default task with two of the single-bump classes made order-dependent.
fn order_spec() -> SynthSpec {
    let mut spec = SynthSpec::default();
    spec.motifs[5].after = Some(4);
    spec.motifs[7].after = Some(6);
    spec.validate().unwrap();
    spec
}

#[test]
fn order_classes_have_both_polarities() {
    // among samples showing an ordered motif, the label must be off often enough
    // that the order, not the presence, decides it
    let spec = order_spec();
    let mut checked = 0;
    let (ds, traces) = synth_generate_traced(&spec, 1000, &mut Rng::new(12)).unwrap();
    for (k, m) in spec.motifs.iter().enumerate() {
        if m.after.is_none() {
            continue;
        }
        let shown: Vec<usize> = (0..ds.len())
            .filter(|&i| traces[i].iter().any(|p| p.class == k))
            .collect();
        let on = shown.iter().filter(|&&i| ds.samples[i].labels[k] == 1).count() as f64;
        let frac = on / shown.len() as f64;
        assert!(frac >= 0.1 && frac <= 0.9, "class {k}: {frac}");
        checked += 1;
    }
    assert_eq!(checked, 2);
}

#[test]
fn labels_follow_placements() {
    let spec = order_spec();
    let (ds, traces) = synth_generate_traced(&spec, 300, &mut Rng::new(13)).unwrap();
    for (s, placements) in ds.samples.iter().zip(&traces) {
        for (k, m) in spec.motifs.iter().enumerate() {
            let me = placements.iter().find(|p| p.class == k);
            let expect = match (me, m.after) {
                (None, _) => 0,
                (Some(_), None) => 1,
                (Some(p), Some(a)) => placements
                    .iter()
                    .find(|q| q.class == a)
                    .is_some_and(|q| q.center() < p.center()) as u8,
            };
            assert_eq!(s.labels[k], expect);
        }
    }
}

/// Kolmogorov-Smirnov statistic of samples against Uniform(lo, hi).
fn ks_uniform(mut xs: Vec<f64>, lo: f64, hi: f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = (x - lo) / (hi - lo);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn motif_scales_are_uniform() {
    let spec = SynthSpec::default();
    let (_, traces) = synth_generate_traced(&spec, 1000, &mut Rng::new(14)).unwrap();
    let scales: Vec<f64> = traces.iter().flatten().map(|p| p.scale).collect();
    assert!(scales.len() > 1000);
    let d = ks_uniform(scales.clone(), 0.5, 2.0);
    // 1% critical value
    let crit = 1.63 / (scales.len() as f64).sqrt();
    assert!(d < crit, "KS {d} >= {crit}");
}

#[test]
fn part_jitter_stays_in_range() {
    let spec = SynthSpec::default();
    let (_, traces) = synth_generate_traced(&spec, 300, &mut Rng::new(15)).unwrap();
    let mut warps = 0;
    for p in traces.iter().flatten() {
        let m = &spec.motifs[p.class];
        for w in p.warp {
            assert!(w >= 1.0 / m.jitter - 1e-12 && w <= m.jitter + 1e-12, "{w}");
            warps += 1;
        }
        assert_eq!(p.duration, m.warped_extent(p.scale, p.warp));
        assert!(p.start + p.duration <= spec.steps);
    }
    assert!(warps > 300);
}

#[test]
fn ordered_pairs_share_channels() {
    // classes 0 and 1 light the same channels; only the order differs
    let spec = SynthSpec::default();
    let channels = |k: usize| {
        let m = &spec.motifs[k];
        let mut c = m.channels.clone();
        c.extend(&m.follow.as_ref().unwrap().channels);
        c.sort_unstable();
        c
    };
    assert_eq!(channels(0), channels(1));
    assert_eq!(channels(2), channels(3));
    assert_eq!(channels(8), channels(9));
    assert_ne!(spec.motifs[0].channels, spec.motifs[1].channels);
}

#[test]
fn generation_is_reproducible() {
    let spec = SynthSpec::default();
    let a = synth_generate(&spec, 20, &mut Rng::new(5)).unwrap();
    let b = synth_generate(&spec, 20, &mut Rng::new(5)).unwrap();
    let c = synth_generate(&spec, 20, &mut Rng::new(6)).unwrap();
    assert_eq!(a.content_hash(), b.content_hash());
    assert_ne!(a.content_hash(), c.content_hash());
}

fn ramp(t: usize) -> Tensor<f64> {
    let data: Vec<f64> = (0..t).flat_map(|v| [v as f64, -(v as f64)]).collect();
    Tensor::from_f64(&[t, 1, 1, 2], &data).unwrap()
}

proptest! {
    #[test]
    fn alteration_keeps_length_and_segment_closure(gi in 0usize..4, seed in 0u64..10_000, mult in 1usize..4) {
        let g = Granularity::ALL[gi];
        let t = 16 * mult * 2;
        let seg = t / g.segments();
        let x = ramp(t);
        let mut rng = Rng::new(seed);
        let spec = AlterationSpec::seeded(g);
        let y = alter_extents(&x, &spec, &mut rng).unwrap();
        prop_assert_eq!(y.shape(), x.shape());
        let src: Vec<usize> = y.data().chunks(2).map(|f| f[0] as usize).collect();
        // frames are whole input frames, in order
        prop_assert!(y.data().chunks(2).all(|f| f[1] == -f[0]));
        prop_assert!(src.windows(2).all(|w| w[0] <= w[1]));
        // the segment layout matches the drawn budgets
        let actions = spec.draw_actions(&mut Rng::new(seed));
        let budgets = spec.budgets(t, &actions).unwrap();
        let mut at = 0;
        for (s, b) in budgets.iter().enumerate() {
            for &v in &src[at..at + b] {
                prop_assert!(v / seg == s);
            }
            at += b;
        }
    }

    #[test]
    fn feature_file_round_trips(n in 0usize..5, t in 1usize..6, l in 1usize..3, c in 1usize..4, k in 2usize..12, seed in 0u64..1000) {
        let dims = FeatureDims { steps: t, spatial: l, channels: c };
        let mut ds = FeatureDataset::new(dims, k);
        ds.seed = seed;
        let mut rng = Rng::new(seed);
        for _ in 0..n {
            ds.push(Sample {
                features: Tensor::randn(&dims.shape(), &mut rng, 1.0).unwrap(),
                labels: (0..k).map(|_| rng.bernoulli(0.3) as u8).collect(),
            }).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.tcft");
        write_features(&path, &ds).unwrap();
        let back = read_features(&path).unwrap();
        prop_assert_eq!(encode_features(&back), encode_features(&ds));
        prop_assert_eq!(back.samples, ds.samples);
    }
}

#[test]
fn keep_all_file_hash_is_unchanged() {
    let ds = synth_generate(&SynthSpec::default(), 10, &mut Rng::new(1)).unwrap();
    for g in Granularity::ALL {
        let out = timeception::data::alter_dataset(&ds, &AlterationSpec::keep_all(g), 3).unwrap();
        assert_eq!(out.content_hash(), ds.content_hash());
    }
}

#[test]
fn explicit_pattern_moves_frames_between_segments() {
    let spec = AlterationSpec {
        granularity: Granularity::Coarse,
        actions: Some(vec![
            SegmentAction::Shrink,
            SegmentAction::Expand,
            SegmentAction::Keep,
            SegmentAction::Keep,
        ]),
        amount: 0.5,
    };
    let y = alter_extents(&ramp(16), &spec, &mut Rng::new(0)).unwrap();
    let src: Vec<usize> = y.data().chunks(2).map(|f| f[0] as usize).collect();
    assert_eq!(src, vec![0, 2, 4, 4, 5, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15]);
}
