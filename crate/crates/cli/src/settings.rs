//! Resolved pipeline configuration with three-layer precedence:
//! built-in defaults, then a JSON config file, then command-line
//! flags. The resolved struct is embedded verbatim in every run
//! manifest.

use std::path::Path;

use serde::{Deserialize, Serialize};
use xrf_restore::init::DEFAULT_ATOMS;
use xrf_restore::objective::{
    DEFAULT_ALPHA, DEFAULT_BETA, DEFAULT_LAMBDA_EN, DEFAULT_LAMBDA_TV,
};
use xrf_restore::{Error, Result};

/// Default dwell-speedup grid for sweeps.
pub const DEFAULT_FACTORS: [f64; 5] = [5.0, 10.0, 20.0, 50.0, 100.0];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Settings {
    pub atoms: usize,
    pub lambda_tv: f64,
    pub lambda_en: f64,
    pub alpha: f64,
    pub beta: f64,
    pub patience: usize,
    pub max_iters: usize,
    pub lasso_tau: f64,
    pub prune_every: usize,
    pub alt_block: usize,
    pub mcr_max_outer: usize,
    pub mcr_tol: f64,
    pub factors: Vec<f64>,
    pub seed: u64,
    pub threads: Option<usize>,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            atoms: DEFAULT_ATOMS,
            lambda_tv: DEFAULT_LAMBDA_TV,
            lambda_en: DEFAULT_LAMBDA_EN,
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            patience: 100,
            max_iters: 2000,
            lasso_tau: 1e-3,
            prune_every: 200,
            alt_block: 10,
            mcr_max_outer: 200,
            mcr_tol: 1e-5,
            factors: DEFAULT_FACTORS.to_vec(),
            seed: 0,
            threads: None,
        }
    }
}

/// Partial settings: every field optional, used both for the config
/// file and for the collected command-line flags.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    pub atoms: Option<usize>,
    pub lambda_tv: Option<f64>,
    pub lambda_en: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub patience: Option<usize>,
    pub max_iters: Option<usize>,
    pub lasso_tau: Option<f64>,
    pub prune_every: Option<usize>,
    pub alt_block: Option<usize>,
    pub mcr_max_outer: Option<usize>,
    pub mcr_tol: Option<f64>,
    pub factors: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

impl Settings {
    /// Apply one override layer in place; later layers win.
    pub fn apply(&mut self, layer: &Overrides) {
        macro_rules! take {
            ($($field:ident),*) => {
                $(if let Some(v) = layer.$field.clone() { self.$field = v; })*
            };
        }
        take!(
            atoms, lambda_tv, lambda_en, alpha, beta, patience, max_iters, lasso_tau,
            prune_every, alt_block, mcr_max_outer, mcr_tol, factors, seed
        );
        if layer.threads.is_some() {
            self.threads = layer.threads;
        }
    }

    /// Defaults, then the optional JSON config file, then flags.
    pub fn resolve(config_path: Option<&Path>, flags: &Overrides) -> Result<Self> {
        let mut settings = Self::default();
        if let Some(path) = config_path {
            let text = std::fs::read_to_string(path)?;
            let from_file: Overrides = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("bad config file {path:?}: {e}")))?;
            settings.apply(&from_file);
        }
        settings.apply(flags);
        settings.validate()?;
        Ok(settings)
    }

    fn validate(&self) -> Result<()> {
        if self.atoms == 0 {
            return Err(Error::Config("atoms must be positive".into()));
        }
        if self.factors.is_empty() {
            return Err(Error::Config("factors must be non-empty".into()));
        }
        for &f in &self.factors {
            if !(f.is_finite() && f >= 1.0) {
                return Err(Error::Config(format!(
                    "speedup factors must be finite and at least 1, got {f}"
                )));
            }
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be positive".into()));
        }
        Ok(())
    }
}
