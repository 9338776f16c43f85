//! TOML run configuration.
//!
//! ```toml
//! seed = 2023
//!
//! [data]
//! swabs = "swabs.csv"
//! dbs = "dbs.csv"
//! covariates = "covariates.csv"
//!
//! [wiring]
//! x_vp = ["age", "sex", "arm", "symptoms"]
//! x_c = ["peak_vp"]
//!
//! [chains]
//! n_chains = 4
//! n_warmup = 2000
//! n_samples = 5000
//! ```
//!
//! Other tables: `[prior]` (with `[prior.assay]` and `[prior.alignment]`),
//! `[design]` and `[truth]` for `simulate`, `[cv]`, `[summary]`, `[impute]`.
//! Every table is optional and falls back to documented defaults; relative
//! paths are resolved against the directory holding the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vlsero::sampler::ChainConfig;
use vlsero::simulate::{reference_truth, StudyDesign};
use vlsero::{CovariateWiring, PopulationParams, PriorConfig};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub swabs: Option<PathBuf>,
    pub dbs: Option<PathBuf>,
    pub covariates: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    pub folds: usize,
    /// Folds whose largest global R-hat exceeds this are excluded from
    /// pooled scores.
    pub rhat_threshold: f64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self { folds: 10, rhat_threshold: 1.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SummaryConfig {
    /// Population band grid, in days from the latent peak.
    pub grid_start: f64,
    pub grid_end: f64,
    pub grid_step: f64,
    /// Persons that also get study-day bands.
    pub persons: Vec<String>,
    /// Allowed relative gap between recorded and re-evaluated log posterior.
    pub logpost_tolerance: f64,
}

impl Default for SummaryConfig {
    fn default() -> Self {
        Self { grid_start: -10.0, grid_end: 20.0, grid_step: 0.5, persons: Vec::new(), logpost_tolerance: 1e-9 }
    }
}

impl SummaryConfig {
    pub fn grid(&self) -> Vec<f64> {
        let n = ((self.grid_end - self.grid_start) / self.grid_step + 1e-9).floor() as usize;
        (0..=n).map(|k| self.grid_start + k as f64 * self.grid_step).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImputeConfig {
    /// Persons to impute; empty means every person without sgRNA data.
    pub persons: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    #[serde(default)]
    pub data: DataPaths,
    #[serde(default)]
    pub wiring: CovariateWiring,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default)]
    pub chains: ChainConfig,
    #[serde(default)]
    pub design: StudyDesign,
    /// Simulation truth: keys override the reference truth.
    pub truth: Option<toml::Table>,
    #[serde(default)]
    pub cv: CvConfig,
    #[serde(default)]
    pub summary: SummaryConfig,
    #[serde(default)]
    pub impute: ImputeConfig,
}

impl Config {
    /// Population parameters for `simulate`. Coefficient vectors left empty
    /// are zero-filled to the wiring's lengths.
    pub fn truth(&self) -> Result<PopulationParams, CliError> {
        let mut truth = reference_truth();
        if let Some(over) = &self.truth {
            let bad = |e: &dyn std::fmt::Display| CliError::Validation(format!("config: [truth]: {e}"));
            let mut table = toml::Table::try_from(&truth).map_err(|e| bad(&e))?;
            for (k, v) in over {
                if !table.contains_key(k) {
                    return Err(bad(&format!("unknown key `{k}`")));
                }
                table.insert(k.clone(), v.clone());
            }
            truth = toml::Value::Table(table).try_into().map_err(|e| bad(&e))?;
        }
        let w = &self.wiring;
        for (beta, n) in [
            (&mut truth.beta_vp, w.x_vp.len()),
            (&mut truth.beta_wa, w.x_wa.len()),
            (&mut truth.beta_wb, w.x_wb.len()),
            (&mut truth.beta_c, w.x_c.len()),
        ] {
            if beta.is_empty() {
                *beta = vec![0.0; n];
            }
        }
        Ok(truth)
    }
}

/// Keys each command cannot run without.
pub fn required_keys(command: &str) -> &'static [&'static str] {
    match command {
        "simulate" => &["seed", "design.n_participants"],
        "fit" | "cv" => &["seed", "data.swabs"],
        "validate" => &["data.swabs"],
        _ => &[],
    }
}

fn has_key(root: &toml::Table, dotted: &str) -> bool {
    let mut parts = dotted.split('.').peekable();
    let mut table = root;
    while let Some(part) = parts.next() {
        match table.get(part) {
            None => return false,
            Some(v) if parts.peek().is_none() => return !matches!(v, toml::Value::Table(_)),
            Some(toml::Value::Table(t)) => table = t,
            Some(_) => return false,
        }
    }
    false
}

/// A parsed config together with its source, for manifests.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: Config,
    pub path: PathBuf,
    pub text: String,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() { p.to_path_buf() } else { self.base_dir.join(p) }
    }

    pub fn swabs_path(&self) -> Option<PathBuf> {
        self.config.data.swabs.as_deref().map(|p| self.resolve(p))
    }

    pub fn dbs_path(&self) -> Option<PathBuf> {
        self.config.data.dbs.as_deref().map(|p| self.resolve(p))
    }

    pub fn covariates_path(&self) -> Option<PathBuf> {
        self.config.data.covariates.as_deref().map(|p| self.resolve(p))
    }
}

/// Parses config text. `seed_override` counts as providing `seed`. All
/// missing required keys are reported in one error.
pub fn parse(text: &str, command: &str, seed_override: Option<u64>) -> Result<Config, CliError> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Validation(format!("config: {e}")))?;
    let missing: Vec<&str> = required_keys(command)
        .iter()
        .copied()
        .filter(|k| !(*k == "seed" && seed_override.is_some()) && !has_key(&table, k))
        .collect();
    if !missing.is_empty() {
        return Err(CliError::Validation(format!("missing required config keys: {}", missing.join(", "))));
    }
    let mut config: Config = toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))?;
    if let Some(s) = seed_override {
        config.seed = Some(s);
    }
    if let Some(s) = config.seed {
        config.chains.seed = s;
    }
    config.prior.validate().map_err(|e| CliError::Validation(format!("config: {e}")))?;
    config.chains.validate().map_err(|e| CliError::Validation(format!("config: {e}")))?;
    Ok(config)
}

pub fn load(path: &Path, command: &str, seed_override: Option<u64>) -> Result<LoadedConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let config = parse(&text, command, seed_override)?;
    let path = std::path::absolute(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(LoadedConfig { config, path, text, base_dir })
}
