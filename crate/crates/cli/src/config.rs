//! The single JSON document that parameterizes every subcommand.

use std::path::Path;

use molcom::channel::ChannelParams;
use molcom::demod::{CnnConfig, TrainConfig};
use molcom::exec::ExecMode;
use molcom::nn::AdamConfig;
use molcom::preprocess::PreprocessConfig;
use molcom::testbed::{unit_peak_scale, ModulationConfig, NoiseConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub channel: ChannelParams,
    pub modulation: ModulationSection,
    pub noise: NoiseConfig,
    pub preprocess: PreprocessConfig,
    pub cnn: CnnSection,
    pub training: TrainingSection,
    pub seeds: Seeds,
    pub corpus: CorpusSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModulationSection {
    pub alphabet_size: usize,
    pub symbol_rate: f64,
    /// `null` picks the scale at which a level-1 pulse peaks at 1.0.
    pub particles_scale: Option<f64>,
    pub sample_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CnnSection {
    pub fc_width: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub plateau_patience: usize,
    pub decay_factor: f64,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub improvement_tolerance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    /// Drives corpus generation, network initialization and training.
    pub master: u64,
    /// Drives the train/validation/test split.
    pub split: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub n_transmissions: usize,
    pub msg_len: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let adam = train.optimizer;
        RunConfig {
            channel: ChannelParams::default(),
            modulation: ModulationSection {
                alphabet_size: 8,
                symbol_rate: 4.0,
                particles_scale: None,
                sample_rate: 100.0,
            },
            noise: NoiseConfig::default(),
            preprocess: PreprocessConfig::default(),
            cnn: CnnSection {
                fc_width: CnnConfig::default().fc_width,
            },
            training: TrainingSection {
                batch_size: train.batch_size,
                learning_rate: adam.learning_rate,
                beta1: adam.beta1,
                beta2: adam.beta2,
                epsilon: adam.epsilon,
                plateau_patience: train.plateau_patience,
                decay_factor: train.decay_factor,
                early_stop_patience: train.early_stop_patience,
                max_epochs: train.max_epochs,
                improvement_tolerance: train.improvement_tolerance,
            },
            seeds: Seeds { master: 0, split: 0 },
            corpus: CorpusSection {
                n_transmissions: 100,
                msg_len: 40,
            },
        }
    }
}

/// Overlays `patch` onto `base`, recursing into objects.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl RunConfig {
    /// Parses a config document. Omitted fields keep their defaults; a saved
    /// `run.json` is accepted too (its `config` member is used).
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let mut doc: Value = serde_json::from_str(text).map_err(|e| CliError::Data(format!("config: {e}")))?;
        if let Some(inner) = doc.get_mut("config").map(Value::take) {
            doc = inner;
        }
        if !doc.is_object() {
            return Err(CliError::Data("config must be a JSON object".into()));
        }
        let mut merged = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
        merge(&mut merged, doc);
        serde_json::from_value(merged).map_err(|e| CliError::Data(format!("config: {e}")))
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Data(format!("cannot read config {}: {e}", p.display())))?;
                RunConfig::from_json(&text)
            }
        }
    }

    pub fn modulation(&self) -> Result<ModulationConfig, CliError> {
        let m = &self.modulation;
        let particles_scale = match m.particles_scale {
            Some(s) => s,
            None => unit_peak_scale(&self.channel)?,
        };
        let cfg = ModulationConfig {
            alphabet_size: m.alphabet_size,
            symbol_rate: m.symbol_rate,
            particles_scale,
            sample_rate: m.sample_rate,
        };
        cfg.validate()?;
        self.noise.validate(cfg.sample_rate)?;
        Ok(cfg)
    }

    pub fn cnn(&self, alphabet_size: usize) -> CnnConfig {
        CnnConfig::new(alphabet_size, self.cnn.fc_width)
    }

    pub fn train_config(&self, exec: ExecMode) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            batch_size: t.batch_size,
            optimizer: AdamConfig {
                learning_rate: t.learning_rate,
                beta1: t.beta1,
                beta2: t.beta2,
                epsilon: t.epsilon,
            },
            plateau_patience: t.plateau_patience,
            decay_factor: t.decay_factor,
            early_stop_patience: t.early_stop_patience,
            max_epochs: t.max_epochs,
            improvement_tolerance: t.improvement_tolerance,
            seed: self.seeds.master,
            exec,
        }
    }
}
