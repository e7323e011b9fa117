//! Parameter accounting against the allocated parameter stores.

use timeception::layer::{count_params_variant, MultiScaleMode, TemporalVariant, TimeceptionConfig};
use timeception::model::{build_model, ModelConfig, Task};
use timeception::{Precision, Rng};

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

#[test]
fn counted_weights_equal_allocated_weights() {
    for mode in MultiScaleMode::ALL {
        for (c0, n, l) in [(2048, 16, 3), (1024, 8, 4), (64, 4, 4), (40, 2, 2)] {
            let mut cfg = reference_config(c0, n, l);
            cfg.timeception.mode = mode;
            let model = build_model::<f32>(&cfg, &mut Rng::new(0)).unwrap();
            let report = cfg.param_report().unwrap();
            assert_eq!(model.store.weight_count(), report.total, "{} {c0}/{n}/{l}", mode.name());
        }
    }
}

#[test]
fn reference_table_within_half_percent() {
    for (c0, n, l, published) in [
        (2048, 16, 3, 3.82),
        (2048, 16, 4, 5.58),
        (1024, 8, 3, 1.95),
        (1024, 8, 4, 2.83),
    ] {
        let m = reference_config(c0, n, l).param_report().unwrap().millions();
        assert!(((m - published) / published).abs() <= 0.005, "{c0}/{l}: {m} vs {published}");
    }
}

#[test]
fn exact_totals_are_pinned() {
    let totals: Vec<usize> = [(2048, 16, 3), (2048, 16, 4), (1024, 8, 3), (1024, 8, 4)]
        .iter()
        .map(|&(c, n, l)| reference_config(c, n, l).param_report().unwrap().total)
        .collect();
    assert_eq!(totals, vec![3_829_344, 5_583_424, 1_954_864, 2_831_904]);
}

#[test]
fn four_layer_growth_ordering_at_1024() {
    let tc = reference_config(1024, 8, 4).param_report().unwrap().stack_total();
    let total = |v| count_params_variant(v, 1024, 4, 3).unwrap().total;
    let shuffle = total(TemporalVariant::GroupedShuffle { groups: 8 });
    let pointwise = total(TemporalVariant::GroupedPointwise);
    let separable = total(TemporalVariant::SeparableJoint);
    assert_eq!((tc, shuffle, pointwise, separable), (1_461_920, 1_572_864, 4_206_592, 12_582_912));
    assert!(tc < shuffle && shuffle < pointwise && pointwise < separable);
}
