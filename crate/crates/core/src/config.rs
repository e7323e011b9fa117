//! JSON run configuration shared by the command-line tools.
//!
//! Every section and key is optional. Omitted model and data keys take the
//! desk-task values; omitted `hparams` keys take the full-scale recipe, so
//! desk configs spell out their learning rate and epoch count.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{synth_generate, AlterationSpec, FeatureDataset, SynthSpec};
use crate::error::{Error, Result};
use crate::layer::{MultiScaleMode, ShuffleKind, TimeceptionConfig};
use crate::model::{ModelConfig, Task};
use crate::tensor::Rng;
use crate::train::{ExperimentData, HParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub time_steps: usize,
    pub spatial: usize,
    pub input_channels: usize,
    pub groups: usize,
    pub reduction: usize,
    pub layers: usize,
    pub mode: MultiScaleMode,
    pub shuffle: ShuffleKind,
    pub hidden: usize,
    pub classes: usize,
    pub task: Task,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            time_steps: 128,
            spatial: 1,
            input_channels: 64,
            groups: 4,
            reduction: 4,
            layers: 4,
            mode: MultiScaleMode::MultiKernel,
            shuffle: ShuffleKind::Interleave,
            hidden: 64,
            classes: 10,
            task: Task::Multilabel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub n_train: usize,
    pub n_test: usize,
    /// Seed of the training split; the test split uses `seed + 1`.
    pub seed: u64,
    pub synth: SynthSpec,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            n_train: 2000,
            n_test: 500,
            seed: 0,
            synth: SynthSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub seeds: Vec<u64>,
    pub modes: Vec<MultiScaleMode>,
    /// Seed of the altered evaluation splits.
    pub alter_seed: u64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            seeds: vec![0, 1, 2],
            modes: MultiScaleMode::ALL.to_vec(),
            alter_seed: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    pub model: ModelSection,
    pub hparams: HParams,
    pub data: DataSection,
    pub alteration: Option<AlterationSpec>,
    pub experiment: ExperimentSection,
}

impl CliConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: CliConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config()?.validate()?;
        self.hparams.validate()?;
        self.data.synth.validate()?;
        if self.experiment.seeds.is_empty() || self.experiment.modes.is_empty() {
            return Err(Error::Config("experiment needs seeds and modes".into()));
        }
        Ok(())
    }

    /// Model configuration with precision taken from `hparams`.
    pub fn model_config(&self) -> Result<ModelConfig> {
        let m = &self.model;
        let cfg = ModelConfig {
            time_steps: m.time_steps,
            spatial: m.spatial,
            timeception: TimeceptionConfig {
                num_layers: m.layers,
                groups: m.groups,
                reduction: m.reduction,
                mode: m.mode,
                input_channels: m.input_channels,
                shuffle: m.shuffle,
            },
            hidden: m.hidden,
            classes: m.classes,
            task: m.task,
            precision: self.hparams.precision,
        };
        Ok(cfg)
    }

    /// Errors unless the synthetic data fits the model input.
    pub fn check_data_matches_model(&self) -> Result<()> {
        let (m, s) = (&self.model, &self.data.synth);
        if (m.time_steps, m.spatial, m.input_channels, m.classes)
            != (s.steps, s.spatial, s.channels, s.classes())
        {
            return Err(Error::Config(format!(
                "model expects T={} L={} C={} K={} but synth produces T={} L={} C={} K={}",
                m.time_steps,
                m.spatial,
                m.input_channels,
                m.classes,
                s.steps,
                s.spatial,
                s.channels,
                s.classes()
            )));
        }
        Ok(())
    }

    /// Synthetic training split, drawn from `data.seed`.
    pub fn train_split(&self) -> Result<FeatureDataset> {
        self.split(self.data.n_train, self.data.seed)
    }

    /// Synthetic test split, drawn from `data.seed + 1`.
    pub fn test_split(&self) -> Result<FeatureDataset> {
        self.split(self.data.n_test, self.data.seed.wrapping_add(1))
    }

    fn split(&self, n: usize, seed: u64) -> Result<FeatureDataset> {
        let mut ds = synth_generate(&self.data.synth, n, &mut Rng::new(seed))?;
        ds.seed = seed;
        Ok(ds)
    }

    /// Both splits plus the altered test sets used by the experiments.
    pub fn experiment_data(&self) -> Result<ExperimentData> {
        self.check_data_matches_model()?;
        ExperimentData::new(self.train_split()?, self.test_split()?, self.experiment.alter_seed)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
