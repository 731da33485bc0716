//! The pipeline configuration file: TOML with one section per module.
//! Every key is optional and falls back to the desk defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datamodel::SourceTier;
use crate::detector::{DetectorConfig, TrainSchedule};
use crate::error::{Error, Result};
use crate::eval::{IOU_MIN, OPERATING_THRESHOLD};
use crate::linegroup::FlowGraphConfig;
use crate::mining::MiningConfig;
use crate::synth::{SceneSpec, TierFractions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub images: usize,
    pub fractions: TierFractions,
    pub scene: SceneSpec,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            images: TierFractions::DESK_IMAGES,
            fractions: TierFractions::DESK,
            scene: SceneSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub iou_min: f64,
    /// Score gate for character-level P/R/F.
    pub operating_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_min: IOU_MIN,
            operating_threshold: OPERATING_THRESHOLD,
        }
    }
}

/// Which weights a retraining round starts from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitFrom {
    /// The light model, every round.
    #[default]
    Light,
    /// The model produced by the previous round.
    Previous,
}

/// Schedules are replaced whole: a `[schedules.retrain]` table must list
/// every field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schedules {
    pub pretrain: TrainSchedule,
    pub retrain: TrainSchedule,
}

impl Default for Schedules {
    fn default() -> Self {
        Self {
            pretrain: TrainSchedule::desk_pretrain(),
            retrain: TrainSchedule::desk_retrain(),
        }
    }
}

/// The `[loop]` section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopSection {
    pub mode: SourceTier,
    pub rounds: u32,
    pub init_from: InitFrom,
}

impl Default for LoopSection {
    fn default() -> Self {
        Self {
            mode: SourceTier::Weak,
            rounds: 1,
            init_from: InitFrom::Light,
        }
    }
}

/// Settings of the self-training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub mode: SourceTier,
    pub mining: MiningConfig,
    pub rounds: u32,
    pub schedules: Schedules,
    pub init_from: InitFrom,
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::validation("rounds must be at least 1"));
        }
        self.mining.validate()?;
        self.schedules.pretrain.validate()?;
        self.schedules.retrain.validate()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Runtime(format!("serializing config: {e}")))
    }
}

/// The whole configuration file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub synth: SynthConfig,
    pub detector: DetectorConfig,
    pub mining: MiningConfig,
    pub linegroup: FlowGraphConfig,
    pub eval: EvalConfig,
    pub schedules: Schedules,
    #[serde(rename = "loop")]
    pub loop_: LoopSection,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::validation(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Validation(m) => Error::Validation(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Runtime(format!("serializing config: {e}")))
    }

    /// Writes the effective configuration as `config.toml` in `dir`.
    pub fn persist(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("config.toml");
        std::fs::write(&path, self.to_toml()?).map_err(|e| Error::io(&path, e))
    }

    /// Uses `seed` for scene generation and every training schedule.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.synth.scene.seed = seed;
        self.schedules.pretrain.seed = seed;
        self.schedules.retrain.seed = seed;
        self
    }

    pub fn loop_config(&self) -> LoopConfig {
        LoopConfig {
            mode: self.loop_.mode,
            mining: self.mining,
            rounds: self.loop_.rounds,
            schedules: self.schedules.clone(),
            init_from: self.loop_.init_from,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.scene.validate()?;
        self.detector.validate()?;
        self.loop_config().validate()?;
        if !(0.0..=1.0).contains(&self.eval.operating_threshold)
            || !(self.eval.iou_min > 0.0 && self.eval.iou_min <= 1.0)
        {
            return Err(Error::validation("eval thresholds must lie in [0, 1]"));
        }
        Ok(())
    }
}
