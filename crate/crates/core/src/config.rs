//! Pipeline configuration document.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::CodecConfig;
use crate::error::{Error, Result};
use crate::evalkit::ToyEmbedder;
use crate::guidance::GuidanceConfig;
use crate::imageio::Image;
use crate::pipeline::{DiffusionStylizer, PredictorSpec};
use crate::sampler::InversionConfig;
use crate::schedule::{BetaKind, NoiseSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub num_train_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub kind: BetaKind,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            num_train_steps: 1000,
            beta_start: 0.00085,
            beta_end: 0.012,
            kind: BetaKind::ScaledLinear,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::new(
            self.num_train_steps,
            self.beta_start,
            self.beta_end,
            self.kind,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub inference_steps: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            inference_steps: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MosaicConfig {
    pub tile_size: usize,
    pub feather: usize,
}

impl Default for MosaicConfig {
    fn default() -> Self {
        Self {
            tile_size: 64,
            feather: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbedderConfig {
    Toy { size: usize },
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig::Toy { size: 16 }
    }
}

impl EmbedderConfig {
    pub fn build(&self) -> Result<ToyEmbedder> {
        match *self {
            EmbedderConfig::Toy { size } if size >= 2 => Ok(ToyEmbedder { size }),
            EmbedderConfig::Toy { size } => {
                Err(Error::Config(format!("embedder size {size} too small")))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub schedule: ScheduleConfig,
    pub sampler: SamplerConfig,
    pub inversion: InversionConfig,
    pub guidance: GuidanceConfig,
    pub codec: CodecConfig,
    pub mosaic: MosaicConfig,
    pub predictor: PredictorSpec,
    pub embedder: EmbedderConfig,
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let schedule = self.schedule.build()?;
        if self.sampler.inference_steps == 0
            || self.sampler.inference_steps > schedule.num_train_steps()
        {
            return Err(Error::Config(format!(
                "inference_steps must be in 1..={}",
                schedule.num_train_steps()
            )));
        }
        if self.inversion.steps == 0 || self.inversion.steps > schedule.num_train_steps() {
            return Err(Error::Config("inversion steps out of range".into()));
        }
        self.guidance.validate()?;
        self.codec.validate()?;
        if self.mosaic.tile_size == 0 {
            return Err(Error::Config("mosaic tile_size must be positive".into()));
        }
        match self.predictor {
            PredictorSpec::StylePull { gamma } if !(0.0..=1.0).contains(&gamma) => {
                return Err(Error::Config(format!(
                    "style_pull gamma {gamma} not in [0, 1]"
                )))
            }
            PredictorSpec::GaussianPrior { sigma2 } if !(sigma2 > 0.0 && sigma2.is_finite()) => {
                return Err(Error::Config(format!(
                    "gaussian_prior sigma2 {sigma2} must be positive"
                )))
            }
            _ => {}
        }
        self.embedder.build()?;
        Ok(())
    }

    /// Fully resolved document, defaults included.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    pub fn stylizer(&self, style: Option<Image>) -> Result<DiffusionStylizer> {
        self.validate()?;
        Ok(DiffusionStylizer {
            schedule: self.schedule.build()?,
            codec: self.codec,
            inference_steps: self.sampler.inference_steps,
            inversion: self.inversion,
            guidance: self.guidance,
            predictor: self.predictor,
            style,
        })
    }
}
