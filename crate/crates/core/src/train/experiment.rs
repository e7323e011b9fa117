use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fit::{evaluate, train, RunReport, TrainOptions};
use super::sgd::HParams;
use crate::data::{alter_dataset, alter_extents, AlterationSpec, FeatureDataset, Granularity};
use crate::error::{Error, Result};
use crate::layer::{count_params_variant, BRANCHES, MultiScaleMode, TemporalVariant, TimeceptionConfig};
use crate::model::{build_model, Model, ModelConfig};
use crate::tensor::{Element, Precision, Rng};

/// Train split plus the evaluation splits shared by every cell.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub train: FeatureDataset,
    pub test: FeatureDataset,
    /// `test` altered at each granularity, in `Granularity::ALL` order.
    pub altered: Vec<(Granularity, FeatureDataset)>,
    /// `test` with a random granularity and pattern per sample.
    pub randomized: FeatureDataset,
}

impl ExperimentData {
    pub fn new(train: FeatureDataset, test: FeatureDataset, alter_seed: u64) -> Result<Self> {
        let altered = Granularity::ALL
            .iter()
            .enumerate()
            .map(|(i, &g)| {
                let spec = AlterationSpec::seeded(g);
                Ok((g, alter_dataset(&test, &spec, alter_seed.wrapping_add(i as u64))?))
            })
            .collect::<Result<Vec<_>>>()?;
        let randomized = extent_randomized(&test, alter_seed.wrapping_add(Granularity::ALL.len() as u64))?;
        Ok(ExperimentData {
            train,
            test,
            altered,
            randomized,
        })
    }
}

fn extent_randomized(test: &FeatureDataset, seed: u64) -> Result<FeatureDataset> {
    let mut rng = Rng::new(seed);
    let mut out = test.clone_meta();
    for s in &test.samples {
        let g = Granularity::ALL[rng.below(Granularity::ALL.len())];
        let mut sample = s.clone();
        sample.features = alter_extents(&s.features, &AlterationSpec::seeded(g), &mut rng)?;
        out.samples.push(sample);
    }
    Ok(out)
}

/// One trained model (mode, seed) and its scores on every split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub mode: MultiScaleMode,
    pub seed: u64,
    pub report: RunReport,
    pub original_map: f64,
    /// mAP per granularity, in `Granularity::ALL` order.
    pub altered_map: Vec<f64>,
    pub randomized_map: f64,
    pub original_ap: Vec<Option<f64>>,
    /// Per-class AP per granularity.
    pub altered_ap: Vec<Vec<Option<f64>>>,
}

/// `(original - altered) / original * 100`.
pub fn percentage_drop(original: f64, altered: f64) -> Result<f64> {
    if !(original > 0.0) {
        return Err(Error::UndefinedMetric(format!(
            "percentage drop from original mAP {original}"
        )));
    }
    Ok((original - altered) / original * 100.0)
}

fn run_cell<T: Element>(
    config: &ModelConfig,
    data: &ExperimentData,
    hp: &HParams,
) -> Result<CellResult> {
    let mut model: Model<T> = build_model(config, &mut Rng::new(hp.seed))?;
    let report = train(&mut model, &data.train, hp, &TrainOptions::default())?;
    let original = evaluate(&model, &data.test)?;
    let altered = data
        .altered
        .iter()
        .map(|(_, d)| evaluate(&model, d))
        .collect::<Result<Vec<_>>>()?;
    let randomized_map = evaluate(&model, &data.randomized)?.map;
    Ok(CellResult {
        mode: config.timeception.mode,
        seed: hp.seed,
        report,
        original_map: original.map,
        altered_map: altered.iter().map(|e| e.map).collect(),
        randomized_map,
        original_ap: original.per_class_ap,
        altered_ap: altered.into_iter().map(|e| e.per_class_ap).collect(),
    })
}

/// Trains and evaluates one model. Precision follows `hp.precision`.
pub fn train_cell(config: &ModelConfig, data: &ExperimentData, hp: &HParams) -> Result<CellResult> {
    let mut config = config.clone();
    config.precision = hp.precision;
    config.validate()?;
    log::info!("cell {} seed {}", config.timeception.mode.name(), hp.seed);
    match hp.precision {
        Precision::F32 => run_cell::<f32>(&config, data, hp),
        Precision::F64 => run_cell::<f64>(&config, data, hp),
    }
}

/// Every (mode, seed) cell, trained in parallel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub cells: Vec<CellResult>,
}

pub fn run_suite(
    base: &ModelConfig,
    modes: &[MultiScaleMode],
    seeds: &[u64],
    data: &ExperimentData,
    hp: &HParams,
) -> Result<SuiteResult> {
    if modes.is_empty() || seeds.is_empty() {
        return Err(Error::Config("experiment needs at least one mode and one seed".into()));
    }
    let jobs: Vec<(MultiScaleMode, u64)> = modes
        .iter()
        .flat_map(|&m| seeds.iter().map(move |&s| (m, s)))
        .collect();
    let cells = jobs
        .par_iter()
        .map(|&(mode, seed)| {
            let mut cfg = base.clone();
            cfg.timeception.mode = mode;
            let hp = HParams {
                seed,
                ..hp.clone()
            };
            train_cell(&cfg, data, &hp)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SuiteResult { cells })
}

impl SuiteResult {
    fn of_mode(&self, mode: MultiScaleMode) -> Vec<&CellResult> {
        self.cells.iter().filter(|c| c.mode == mode).collect()
    }

    pub fn scale_table(&self) -> ScaleTable {
        let mut modes: Vec<MultiScaleMode> = Vec::new();
        for c in &self.cells {
            if !modes.contains(&c.mode) {
                modes.push(c.mode);
            }
        }
        let rows = modes
            .into_iter()
            .map(|mode| {
                let cells = self.of_mode(mode);
                let maps: Vec<f64> = cells.iter().map(|c| c.randomized_map * 100.0).collect();
                let (mean, std) = mean_std(&maps);
                ScaleRow {
                    mode,
                    seeds: cells.iter().map(|c| c.seed).collect(),
                    map: maps,
                    mean,
                    std,
                }
            })
            .collect();
        ScaleTable { rows }
    }

    /// Drops of `multi` against `fixed`; both modes must be present.
    pub fn extent_table(&self, multi: MultiScaleMode, fixed: MultiScaleMode) -> Result<ExtentTable> {
        let (a, b) = (self.of_mode(multi), self.of_mode(fixed));
        if a.is_empty() || b.is_empty() {
            return Err(Error::Config(format!(
                "extent table needs cells for {} and {}",
                multi.name(),
                fixed.name()
            )));
        }
        let drops = |cells: &[&CellResult], gi: usize| -> Result<Vec<f64>> {
            cells
                .iter()
                .map(|c| percentage_drop(c.original_map, c.altered_map[gi]))
                .collect()
        };
        let rows = Granularity::ALL
            .iter()
            .enumerate()
            .map(|(gi, &granularity)| {
                let multi_drop = drops(&a, gi)?;
                let fixed_drop = drops(&b, gi)?;
                let (multi_mean, multi_std) = mean_std(&multi_drop);
                let (fixed_mean, fixed_std) = mean_std(&fixed_drop);
                Ok(ExtentRow {
                    granularity,
                    multi_drop,
                    fixed_drop,
                    multi_mean,
                    multi_std,
                    fixed_mean,
                    fixed_std,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ExtentTable {
            multi_mode: multi,
            fixed_mode: fixed,
            rows,
        })
    }
}

/// Mean and sample standard deviation (zero for a single value).
fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// mAP in points on the extent-randomized test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleRow {
    pub mode: MultiScaleMode,
    pub seeds: Vec<u64>,
    pub map: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleTable {
    pub rows: Vec<ScaleRow>,
}

impl ScaleTable {
    pub fn mean_of(&self, mode: MultiScaleMode) -> Option<f64> {
        self.rows.iter().find(|r| r.mode == mode).map(|r| r.mean)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("mode,seed,map\n");
        for r in &self.rows {
            for (s, m) in r.seeds.iter().zip(&r.map) {
                out += &format!("{},{s},{m}\n", r.mode.name());
            }
            out += &format!("{},mean,{}\n{},std,{}\n", r.mode.name(), r.mean, r.mode.name(), r.std);
        }
        out
    }
}

/// Percentage drops per seed at one granularity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtentRow {
    pub granularity: Granularity,
    pub multi_drop: Vec<f64>,
    pub fixed_drop: Vec<f64>,
    pub multi_mean: f64,
    pub multi_std: f64,
    pub fixed_mean: f64,
    pub fixed_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtentTable {
    pub multi_mode: MultiScaleMode,
    pub fixed_mode: MultiScaleMode,
    pub rows: Vec<ExtentRow>,
}

impl ExtentTable {
    /// Granularities where the multi-scale mean drop is at most the fixed one.
    pub fn multi_tolerates(&self) -> usize {
        self.rows.iter().filter(|r| r.multi_mean <= r.fixed_mean).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "granularity,{m}_mean,{m}_std,{f}_mean,{f}_std\n",
            m = self.multi_mode.name(),
            f = self.fixed_mode.name()
        );
        for r in &self.rows {
            out += &format!(
                "{},{},{},{},{}\n",
                r.granularity.name(),
                r.multi_mean,
                r.multi_std,
                r.fixed_mean,
                r.fixed_std
            );
        }
        out
    }
}

/// Trains `multi` and `fixed` (configs equal except mode) over `seeds` and
/// tabulates the percentage drop on each altered split.
pub fn run_extent_experiment(
    multi: &ModelConfig,
    fixed: &ModelConfig,
    data: &ExperimentData,
    hp: &HParams,
    seeds: &[u64],
) -> Result<ExtentTable> {
    let mut probe = fixed.clone();
    probe.timeception.mode = multi.timeception.mode;
    if probe != *multi {
        return Err(Error::Config(
            "extent experiment configs must differ only in mode".into(),
        ));
    }
    let (m, f) = (multi.timeception.mode, fixed.timeception.mode);
    let modes: Vec<MultiScaleMode> = if m == f { vec![m] } else { vec![m, f] };
    run_suite(multi, &modes, seeds, data, hp)?.extent_table(m, f)
}

pub fn run_scale_experiment(
    base: &ModelConfig,
    modes: &[MultiScaleMode],
    data: &ExperimentData,
    hp: &HParams,
    seeds: &[u64],
) -> Result<ScaleTable> {
    Ok(run_suite(base, modes, seeds, data, hp)?.scale_table())
}

/// Cumulative weights after `layers` layers for Timeception and the three
/// comparison designs at constant width `C0` and kernel size 3.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackingRow {
    pub layers: usize,
    pub timeception: usize,
    pub grouped_shuffle: usize,
    pub grouped_pointwise: usize,
    pub separable: usize,
}

pub fn run_stacking_experiment(config: &TimeceptionConfig) -> Result<Vec<StackingRow>> {
    let c = config.input_channels;
    let k = 3;
    (1..=config.num_layers)
        .map(|l| {
            let cfg = TimeceptionConfig {
                num_layers: l,
                ..config.clone()
            };
            let traj = cfg.trajectory()?;
            let ksum = cfg.mode.kernel_sum();
            let timeception = traj
                .iter()
                .map(|s| cfg.groups * s.reduced * (BRANCHES * s.group_width + ksum))
                .sum();
            Ok(StackingRow {
                layers: l,
                timeception,
                grouped_shuffle: count_params_variant(
                    TemporalVariant::GroupedShuffle {
                        groups: config.groups,
                    },
                    c,
                    l,
                    k,
                )?
                .total,
                grouped_pointwise: count_params_variant(TemporalVariant::GroupedPointwise, c, l, k)?
                    .total,
                separable: count_params_variant(TemporalVariant::SeparableJoint, c, l, k)?.total,
            })
        })
        .collect()
}

pub fn stacking_csv(rows: &[StackingRow]) -> String {
    let mut out = String::from("layers,timeception,grouped_shuffle,grouped_pointwise,separable\n");
    for r in rows {
        out += &format!(
            "{},{},{},{},{}\n",
            r.layers, r.timeception, r.grouped_shuffle, r.grouped_pointwise, r.separable
        );
    }
    out
}
