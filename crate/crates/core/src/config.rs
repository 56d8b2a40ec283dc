//! The run configuration: one TOML document covering every command.
//!
//! Every section and key is optional and falls back to the documented
//! default; unknown keys are rejected. The fully resolved document is
//! written next to every command output.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::CodecConfig;
use crate::datapipe::DataConfig;
use crate::diffusion::{DenoiserSpec, SamplerConfig};
use crate::error::{Error, Result};
use crate::geom::Intrinsics;
use crate::model::ModelConfig;
use crate::motion::Style;
use crate::trainer::TrainConfig;

pub const SNAPSHOT_FILE: &str = "config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionSection {
    pub steps: usize,
    pub cfg: f64,
    pub eta: f64,
    pub sigma_floor: f64,
    pub x0_clip: f64,
    /// Condition dropout during finetuning.
    pub p_drop: f64,
}

impl Default for DiffusionSection {
    fn default() -> Self {
        let s = SamplerConfig::default();
        DiffusionSection {
            steps: s.steps,
            cfg: s.cfg,
            eta: s.eta,
            sigma_floor: s.sigma_floor,
            x0_clip: s.x0_clip,
            p_drop: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatapipeSection {
    /// Corpus size.
    pub num: usize,
    /// Styles assigned round-robin by sample id.
    pub styles: Vec<Style>,
    /// Fraction of highest-error samples removed by `filter`.
    pub filter_fraction: f64,
    pub world_seed: u64,
    pub exo: Intrinsics,
    pub eta_min: f64,
    pub eta_max: f64,
    pub outlier_factor: f64,
}

impl Default for DatapipeSection {
    fn default() -> Self {
        let d = DataConfig::default();
        DatapipeSection {
            num: 8,
            styles: Style::ALL.to_vec(),
            filter_fraction: 0.1,
            world_seed: d.world_seed,
            exo: d.exo,
            eta_min: d.eta_min,
            eta_max: d.eta_max,
            outlier_factor: d.outlier_factor,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every random draw derives from it by name.
    pub seed: u64,
    /// Egocentric camera intrinsics; fixes the image size.
    pub geometry: Intrinsics,
    pub codec: CodecConfig,
    pub denoiser: DenoiserSpec,
    pub diffusion: DiffusionSection,
    pub trainer: TrainConfig,
    pub datapipe: DatapipeSection,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Write the resolved document as `config.toml` under `dir`.
    pub fn write_snapshot(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(SNAPSHOT_FILE);
        std::fs::write(&path, self.to_toml()?).map_err(|e| Error::io(&path, e))
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            image: self.geometry,
            codec: self.codec.clone(),
            denoiser: self.denoiser.clone(),
            lora_rank: self.trainer.lora_rank,
            lora_alpha: self.trainer.lora_alpha,
        }
    }

    pub fn sampler(&self) -> SamplerConfig {
        let d = &self.diffusion;
        SamplerConfig {
            steps: d.steps,
            cfg: d.cfg,
            eta: d.eta,
            sigma_floor: d.sigma_floor,
            x0_clip: d.x0_clip,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            p_drop: self.diffusion.p_drop,
            ..self.trainer.clone()
        }
    }

    pub fn data(&self) -> DataConfig {
        let d = &self.datapipe;
        DataConfig {
            world_seed: d.world_seed,
            exo: d.exo,
            eta_min: d.eta_min,
            eta_max: d.eta_max,
            outlier_factor: d.outlier_factor,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model().validate()?;
        self.sampler().validate()?;
        self.train().validate(self.denoiser.depth)?;
        self.data().validate()?;
        if self.datapipe.num == 0 {
            return Err(Error::Config("datapipe.num must be positive".into()));
        }
        if self.datapipe.styles.is_empty() {
            return Err(Error::Config("datapipe.styles must not be empty".into()));
        }
        if !(0.0..1.0).contains(&self.datapipe.filter_fraction) {
            return Err(Error::Config("datapipe.filter_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}
