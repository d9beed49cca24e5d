//! The JSON configuration document.

use std::path::{Path, PathBuf};

use nspgrade_core::baselines::BaselineParams;
use nspgrade_core::encoder::BackendConfig;
use nspgrade_core::eval::ExperimentPlan;
use nspgrade_core::fewshot::FineTuneConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Base for relative data paths; defaults to the config file's directory.
    pub data_dir: Option<PathBuf>,
    /// Default for `--output`.
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GlobalConfig {
    pub backend: BackendConfig,
    pub finetune: FineTuneConfig,
    pub baselines: BaselineParams,
    pub experiment: Option<ExperimentPlan>,
    pub paths: Paths,
}

impl GlobalConfig {
    /// Parses and validates; errors name the offending key path.
    pub fn parse(source: &str, text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: GlobalConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config(format!("{source}: at `{path}`: {}", e.into_inner()))
        })?;
        config
            .backend
            .validate()
            .and_then(|_| config.finetune.validate())
            .map_err(|e| CliError::Config(format!("{source}: {e}")))?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut config = Self::parse(&path.display().to_string(), &text)?;
        let base = match &config.paths.data_dir {
            Some(dir) => resolve(path.parent().unwrap_or(Path::new(".")), dir),
            None => path.parent().unwrap_or(Path::new(".")).to_path_buf(),
        };
        config.rebase(&base);
        Ok(config)
    }

    /// Makes every relative data path relative to `base`.
    fn rebase(&mut self, base: &Path) {
        if let Some(p) = self.backend.path.as_mut() {
            *p = resolve(base, p);
        }
        if let Some(plan) = self.experiment.as_mut() {
            for item in &mut plan.items {
                item.responses = resolve(base, &item.responses);
                item.exemplars = resolve(base, &item.exemplars);
                for p in item.manual_samples.values_mut() {
                    *p = resolve(base, p);
                }
            }
        }
        if let Some(p) = self.paths.output.as_mut() {
            *p = resolve(base, p);
        }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() || base.as_os_str().is_empty() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
