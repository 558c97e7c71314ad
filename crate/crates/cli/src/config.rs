//! Run configuration: a JSON file whose scalar fields can be overridden by
//! flags. Relative paths in the file resolve against the file's directory.

use std::path::{Path, PathBuf};

use mpse::data::MonotonePolicy;
use mpse::learners::LearnerSpec;
use mpse::simulation::{DrawRanges, Estimator, FeatureMode};
use mpse::{ColumnSchema, Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MethodChoice {
    Dml,
    Rwr,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub schema: Option<ColumnSchema>,
    pub method: MethodChoice,
    pub folds: usize,
    /// Quantiles for censoring inverse-probability factors; `null` disables.
    pub censor: Option<[f64; 2]>,
    pub learner: LearnerSpec,
    /// Model for residualizing intermediate confounders in the RWR fit.
    pub residualizer: LearnerSpec,
    pub bootstrap: usize,
    pub seed: u64,
    pub threads: Option<usize>,
    pub monotone_policy: MonotonePolicy,
    pub simulate: SimulateConfig,
    pub sensitivity: SensitivityConfig,
    pub oracle: OracleConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: None,
            output: None,
            schema: None,
            method: MethodChoice::Both,
            folds: 5,
            censor: Some([0.01, 0.99]),
            learner: LearnerSpec::default_stack(),
            residualizer: LearnerSpec::ols(),
            bootstrap: 1000,
            seed: 0,
            threads: None,
            monotone_policy: MonotonePolicy::Reject,
            simulate: SimulateConfig::default(),
            sensitivity: SensitivityConfig::default(),
            oracle: OracleConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub n_grid: Vec<usize>,
    pub reps: usize,
    pub modes: Vec<FeatureMode>,
    pub estimators: Vec<Estimator>,
    pub rwr_bootstrap: usize,
    pub mc_size: usize,
    pub ranges: DrawRanges,
    /// Also write every per-replication estimate to the JSON output.
    pub dump_replicates: bool,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            n_grid: vec![250, 500, 1000],
            reps: 200,
            modes: vec![FeatureMode::Correct, FeatureMode::Misspecified],
            estimators: vec![Estimator::Dml, Estimator::Rwr],
            rwr_bootstrap: 200,
            mc_size: 100_000,
            ranges: DrawRanges::default(),
            dump_replicates: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Tau,
    Delta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivityConfig {
    /// `tau` adjusts `τ_k`; `delta` adjusts `Δ_{k-1}`.
    pub target: TargetKind,
    /// Level of the confounded transition (`0` is treatment).
    pub k: usize,
    pub alpha_range: [f64; 2],
    pub beta_range: [f64; 2],
    pub resolution: [usize; 2],
    /// Use this estimate instead of estimating from `input`.
    pub estimate: Option<f64>,
    /// `π_k` for a `delta` target when `estimate` is given.
    pub pi: Option<f64>,
    /// Binary observed covariates to benchmark against.
    pub benchmarks: Vec<String>,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        SensitivityConfig {
            target: TargetKind::Tau,
            k: 0,
            alpha_range: [0.0, 1.0],
            beta_range: [0.0, 1.0],
            resolution: [10, 10],
            estimate: None,
            pi: None,
            benchmarks: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// Baseline draws for the simulated-law truth check.
    pub mc_size: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { mc_size: 100_000 }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Validation(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.input, &mut cfg.output].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn censor_pair(&self) -> Option<(f64, f64)> {
        self.censor.map(|[lo, hi]| (lo, hi))
    }

    pub fn require_input(&self) -> Result<&Path> {
        self.input
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument("no input file (use --input or the config's `input`)".into()))
    }

    pub fn require_schema(&self) -> Result<&ColumnSchema> {
        self.schema
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("the config must provide a `schema`".into()))
    }
}

/// Parses `--censor`: `lo,hi` or `none`.
pub fn parse_censor(s: &str) -> std::result::Result<Option<[f64; 2]>, String> {
    if s.eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(format!("expected `lo,hi` or `none`, got `{s}`"));
    }
    let lo = parts[0].trim().parse::<f64>().map_err(|e| e.to_string())?;
    let hi = parts[1].trim().parse::<f64>().map_err(|e| e.to_string())?;
    Ok(Some([lo, hi]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_empirical_settings() {
        let c = RunConfig::default();
        assert_eq!(c.folds, 5);
        assert_eq!(c.censor, Some([0.01, 0.99]));
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_config_fills_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"folds": 3, "censor": null}"#).unwrap();
        assert_eq!(c.folds, 3);
        assert_eq!(c.censor, None);
        assert_eq!(c.bootstrap, 1000);
        assert!(serde_json::from_str::<RunConfig>(r#"{"fold": 3}"#).is_err());
    }

    #[test]
    fn censor_flag() {
        assert_eq!(parse_censor("0.05,0.95").unwrap(), Some([0.05, 0.95]));
        assert_eq!(parse_censor("none").unwrap(), None);
        assert!(parse_censor("0.1").is_err());
    }
}
