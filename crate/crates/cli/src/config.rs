//! Run configuration: a JSON document, overridden by flags and `PORTVAR_SEED`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use portvar::{CumulantMatrix, TrackerConfig, UtilityModel};
use serde::{Deserialize, Serialize};

pub const SEED_ENV: &str = "PORTVAR_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentConfig {
    pub direction: Vec<f64>,
    pub s_min: f64,
    pub s_max: f64,
    #[serde(default = "default_grid")]
    pub grid: usize,
}

fn default_grid() -> usize {
    21
}

/// Everything a run depends on. The resolved form is embedded in every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<String>,
    /// Inline model; takes precedence over `model_path` once loaded.
    pub model: Option<UtilityModel>,
    /// Cumulant matrix without weights, enough for the variety commands.
    pub cumulants: Option<CumulantMatrix>,
    pub model_path: Option<PathBuf>,
    pub returns_path: Option<PathBuf>,
    pub order: Option<usize>,
    pub tracker: TrackerConfig,
    pub seed: u64,
    pub threads: usize,
    pub output: Option<PathBuf>,
    pub format: Format,
    pub segment: Option<SegmentConfig>,
    pub dim_samples: usize,
    pub slice_seed: u64,
    pub resolution: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: None,
            model: None,
            cumulants: None,
            model_path: None,
            returns_path: None,
            order: None,
            tracker: TrackerConfig::default(),
            seed: 0,
            threads: 0,
            output: None,
            format: Format::Json,
            segment: None,
            dim_samples: 100,
            slice_seed: 0,
            resolution: 201,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Seed precedence: flag, then environment, then config file, then 0.
    pub fn resolve_seed(&mut self, flag: Option<u64>) -> Result<()> {
        if let Some(s) = flag {
            self.seed = s;
        } else if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .with_context(|| format!("{SEED_ENV}={v:?} is not an unsigned integer"))?;
        }
        self.tracker.seed = self.seed;
        Ok(())
    }

    /// Loads `model_path` into `model` or `cumulants`, so the embedded config
    /// is self-contained.
    pub fn load_model(&mut self) -> Result<()> {
        if self.model.is_some() || self.cumulants.is_some() {
            return Ok(());
        }
        let Some(path) = &self.model_path else {
            return Ok(());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading model {}", path.display()))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .with_context(|| format!("parsing model {}", path.display()))?;
        if value.get("w").is_some() {
            self.model = Some(UtilityModel::from_json(&text)?);
        } else if value.get("entries").is_some() {
            self.cumulants = Some(CumulantMatrix::from_json(&text)?);
        } else {
            bail!(
                "{} is neither a model {{k, w}} nor a cumulant matrix {{n, d, entries}}",
                path.display()
            );
        }
        Ok(())
    }

    pub fn utility_model(&self) -> Result<&UtilityModel> {
        match (&self.model, &self.cumulants) {
            (Some(m), _) => Ok(m),
            (None, Some(_)) => {
                bail!("this command needs weights; the model has a cumulant matrix only")
            }
            (None, None) => bail!("no model given; use --model or the config field `model`"),
        }
    }

    pub fn cumulant_matrix(&self) -> Result<&CumulantMatrix> {
        match (&self.model, &self.cumulants) {
            (Some(m), _) => Ok(m.k()),
            (None, Some(k)) => Ok(k),
            (None, None) => bail!("no model given; use --model or the config field `model`"),
        }
    }
}
