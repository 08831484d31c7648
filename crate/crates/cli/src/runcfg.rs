//! Flag/config-file resolution.
//!
//! A JSON config file can supply any of the shared data and nuisance
//! settings; explicitly passed flags win. The resolved configuration is
//! embedded in every output artifact so a run can be reproduced from its
//! report alone. Execution details (thread count, output paths) are not
//! part of the resolved analysis config.

use serde::{Deserialize, Serialize};

use causal_transport::error::{Error, Result};
use causal_transport::nuisance::glm::RegularizationConfig;
use causal_transport::nuisance::{NuisanceConfig, TrimBounds};
use causal_transport::ColumnSchema;

/// Optional overrides read from `--config <file.json>`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub covariates: Option<Vec<String>>,
    pub treatment: Option<String>,
    pub outcome: Option<String>,
    pub selection: Option<String>,
    pub delimiter: Option<char>,
    pub arms: Option<usize>,
    pub folds: Option<usize>,
    pub trim_lo: Option<f64>,
    pub trim_hi: Option<f64>,
    pub lambda_grid: Option<Vec<f64>>,
    pub cv_folds: Option<usize>,
    pub seed: Option<u64>,
}

impl FileConfig {
    pub fn load(path: Option<&std::path::Path>) -> Result<Self> {
        match path {
            None => Ok(FileConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                serde_json::from_str(&text).map_err(|e| Error::InvalidConfig {
                    reason: format!("config file {}: {e}", p.display()),
                })
            }
        }
    }
}

/// Fully resolved data-loading settings, embedded in artifacts.
#[derive(Debug, Clone, Serialize)]
pub struct DataConfig {
    pub input: String,
    pub covariates: Vec<String>,
    pub treatment: String,
    pub outcome: String,
    pub selection: String,
    pub delimiter: char,
    pub arms: Option<usize>,
}

impl DataConfig {
    pub fn schema(&self) -> ColumnSchema {
        ColumnSchema {
            covariates: self.covariates.clone(),
            treatment: self.treatment.clone(),
            outcome: self.outcome.clone(),
            selection: self.selection.clone(),
        }
    }
}

/// Fully resolved nuisance settings, embedded in artifacts.
#[derive(Debug, Clone, Serialize)]
pub struct NuisanceSettings {
    pub folds: usize,
    pub trim_lo: f64,
    pub trim_hi: f64,
    pub lambda_grid: Vec<f64>,
    pub cv_folds: usize,
    pub seed: u64,
}

impl NuisanceSettings {
    pub fn to_config(&self) -> Result<NuisanceConfig> {
        let trim = TrimBounds::new(self.trim_lo, self.trim_hi)?;
        let mut cfg = NuisanceConfig {
            folds: self.folds,
            trim,
            seed: self.seed,
            ..NuisanceConfig::default()
        };
        for reg in [&mut cfg.mu, &mut cfg.pi, &mut cfg.rho] {
            reg.lambda_grid = self.lambda_grid.clone();
            reg.cv_folds = self.cv_folds;
        }
        cfg.mu.validate()?;
        Ok(cfg)
    }
}

pub fn default_lambda_grid() -> Vec<f64> {
    RegularizationConfig::new(causal_transport::nuisance::glm::Family::Gaussian).lambda_grid
}

/// Merge precedence: explicit flag, then config file, then default.
pub fn pick<T: Clone>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

pub fn parse_comma_list(s: &str) -> Vec<String> {
    s.split(',')
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty())
        .collect()
}

pub fn parse_f64_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim().parse::<f64>().map_err(|_| Error::InvalidConfig {
                reason: format!("expected a comma-separated list of numbers, got `{s}`"),
            })
        })
        .collect()
}
