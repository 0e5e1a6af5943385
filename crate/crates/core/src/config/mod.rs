//! Run configuration, dataset manifests and structured run logs.

mod manifest;
mod runlog;

pub use manifest::{read_scores, split_manifest, Manifest, ManifestEntry};
pub use runlog::RunLog;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, FilterError};
use crate::filters::GaussianSpec;
use crate::labeler::LabelJobSpec;
use crate::model::{FfpnConfig, TrainSchedule};
use crate::sampling::SamplerConfig;

/// Everything a pipeline run reads. Every section is optional in the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Global seed; every random stream derives from it.
    pub seed: u64,
    pub workers: usize,
    pub log_path: Option<PathBuf>,
    pub fa_enabled: bool,
    /// Unsharp-mask low-pass.
    pub gaussian: GaussianSpec,
    /// Low-pass of the high-frequency mask fed to the network.
    pub mask_gaussian: GaussianSpec,
    pub sampler: SamplerConfig,
    pub model: FfpnConfig,
    pub train: TrainSchedule,
    pub label: LabelJobSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            workers: 4,
            log_path: None,
            fa_enabled: true,
            gaussian: GaussianSpec::default(),
            mask_gaussian: GaussianSpec::default(),
            sampler: SamplerConfig::default(),
            model: FfpnConfig::default(),
            train: TrainSchedule::default(),
            label: LabelJobSpec::default(),
        }
    }
}

/// `section.field`, taking the field from the first word of a validator message.
fn keyed(section: &str, message: String) -> ConfigError {
    let field: String = message
        .chars()
        .take_while(|c| c.is_ascii_alphanumeric() || *c == '_')
        .collect();
    ConfigError::invalid(&format!("{section}.{field}"), message)
}

fn check_gaussian(section: &str, g: &GaussianSpec) -> Result<(), ConfigError> {
    g.validate().map_err(|e| {
        let field = match e {
            FilterError::EvenOrSmallKernel(_) => "ksize",
            _ => "sigma",
        };
        ConfigError::invalid(&format!("{section}.{field}"), e.to_string())
    })
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.workers == 0 {
            return Err(ConfigError::invalid("workers", "must be positive"));
        }
        check_gaussian("gaussian", &self.gaussian)?;
        check_gaussian("mask_gaussian", &self.mask_gaussian)?;
        let s = &self.sampler;
        for (field, v) in [
            ("segments", s.segments),
            ("frames_per_segment", s.frames_per_segment),
            ("grid", s.grid),
            ("patch", s.patch),
        ] {
            if v == 0 {
                return Err(ConfigError::invalid(&format!("sampler.{field}"), "must be positive"));
            }
        }
        self.model.validate().map_err(|e| match e {
            crate::error::NnError::Config(m) => keyed("model", m),
            other => ConfigError::invalid("model", other.to_string()),
        })?;
        if s.fragment_side() != self.model.input_side {
            return Err(ConfigError::invalid(
                "sampler.patch",
                format!(
                    "grid {} × patch {} = {} must equal model.input_side {}",
                    s.grid,
                    s.patch,
                    s.fragment_side(),
                    self.model.input_side
                ),
            ));
        }
        if s.clip_len() != self.model.clip_len {
            return Err(ConfigError::invalid(
                "model.clip_len",
                format!(
                    "{} must equal sampler.segments × sampler.frames_per_segment = {}",
                    self.model.clip_len,
                    s.clip_len()
                ),
            ));
        }
        self.train.validate().map_err(|e| match e {
            crate::error::ModelError::Invalid(m) => keyed("train", m),
            other => ConfigError::invalid("train", other.to_string()),
        })?;
        let mut label = self.label.clone();
        label.workers = self.workers;
        label.validate().map_err(|e| match e {
            crate::error::LabelError::Spec(m) => keyed("label", m),
            other => ConfigError::invalid("label", other.to_string()),
        })
    }

    /// The label section with the run-level worker count applied.
    pub fn label_spec(&self) -> LabelJobSpec {
        LabelJobSpec {
            workers: self.workers,
            ..self.label.clone()
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes to TOML")
    }
}

/// Parses and validates config text. `origin` names the source in errors.
pub fn parse_config(text: &str, origin: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| {
        let line = e
            .span()
            .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
            .unwrap_or(0);
        ConfigError::Parse {
            path: origin.to_string(),
            line,
            message: e.message().to_string(),
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text, &path.display().to_string())
}
