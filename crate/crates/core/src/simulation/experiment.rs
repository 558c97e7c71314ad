//! Monte Carlo comparison of the estimators on the single-mediator design.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{misspecify, DgpSpec, DrawRanges};
use crate::eif::{crossfit_estimate, EifConfig};
use crate::error::{Error, Result};
use crate::rwr::{bootstrap_se, RwrConfig};
use crate::learners::LearnerSpec;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Dml,
    Rwr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    Correct,
    Misspecified,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Dml => "dml",
            Estimator::Rwr => "rwr",
        }
    }
}

impl FeatureMode {
    pub fn name(self) -> &'static str {
        match self {
            FeatureMode::Correct => "correct",
            FeatureMode::Misspecified => "misspecified",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub n_grid: Vec<usize>,
    pub reps: usize,
    pub modes: Vec<FeatureMode>,
    pub estimators: Vec<Estimator>,
    pub dml: EifConfig,
    pub rwr_bootstrap: usize,
    pub ranges: DrawRanges,
    /// Baseline draws per replication for the true `θ_1`.
    pub mc_size: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n_grid: vec![250, 500, 1000],
            reps: 200,
            modes: vec![FeatureMode::Correct, FeatureMode::Misspecified],
            estimators: vec![Estimator::Dml, Estimator::Rwr],
            dml: EifConfig::default(),
            rwr_bootstrap: 200,
            ranges: DrawRanges::default(),
            mc_size: 100_000,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn check(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::InvalidArgument("reps must be at least 1".into()));
        }
        if let Some(n) = self.n_grid.iter().find(|&&n| n < 50) {
            return Err(Error::InvalidArgument(format!("sample size {n} is below the minimum of 50")));
        }
        if self.n_grid.is_empty() || self.modes.is_empty() || self.estimators.is_empty() {
            return Err(Error::InvalidArgument("n_grid, modes and estimators must be non-empty".into()));
        }
        self.dml.check()
    }
}

/// One estimate of `θ_1` in one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replicate {
    pub rep: usize,
    pub n: usize,
    pub mode: FeatureMode,
    pub estimator: Estimator,
    pub truth: f64,
    pub estimate: Option<f64>,
    pub se: Option<f64>,
    pub ci95: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub estimator: Estimator,
    pub n: usize,
    pub mode: FeatureMode,
    pub bias: f64,
    pub rmse: f64,
    pub coverage: f64,
    pub mean_se: f64,
    /// Replications that produced an estimate.
    pub reps: usize,
    /// Replications whose estimator failed (excluded from the metrics).
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub replicates: Vec<Replicate>,
}

impl MetricsTable {
    pub fn row(&self, estimator: Estimator, n: usize, mode: FeatureMode) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.estimator == estimator && r.n == n && r.mode == mode)
    }

    pub fn from_replicates(replicates: Vec<Replicate>) -> MetricsTable {
        let mut keys: Vec<(Estimator, usize, FeatureMode)> =
            replicates.iter().map(|r| (r.estimator, r.n, r.mode)).collect();
        keys.sort();
        keys.dedup();
        let rows = keys
            .into_iter()
            .map(|(estimator, n, mode)| {
                let cell: Vec<&Replicate> = replicates
                    .iter()
                    .filter(|r| r.estimator == estimator && r.n == n && r.mode == mode)
                    .collect();
                let ok: Vec<&&Replicate> = cell.iter().filter(|r| r.estimate.is_some()).collect();
                let err: Vec<f64> = ok.iter().map(|r| r.estimate.unwrap() - r.truth).collect();
                let sq: Vec<f64> = err.iter().map(|e| e * e).collect();
                let covered: Vec<f64> = ok
                    .iter()
                    .map(|r| {
                        let [lo, hi] = r.ci95.unwrap();
                        f64::from(u8::from(lo <= r.truth && r.truth <= hi))
                    })
                    .collect();
                let ses: Vec<f64> = ok.iter().map(|r| r.se.unwrap()).collect();
                let nan_if_empty = |v: &[f64]| if v.is_empty() { f64::NAN } else { stats::mean(v) };
                MetricsRow {
                    estimator,
                    n,
                    mode,
                    bias: nan_if_empty(&err),
                    rmse: nan_if_empty(&sq).sqrt(),
                    coverage: nan_if_empty(&covered),
                    mean_se: nan_if_empty(&ses),
                    reps: ok.len(),
                    failures: cell.len() - ok.len(),
                }
            })
            .collect();
        MetricsTable { rows, replicates }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["estimator", "n", "features", "bias", "rmse", "coverage", "mean_se", "reps", "failures"])?;
        for r in &self.rows {
            out.write_record([
                r.estimator.name().into(),
                r.n.to_string(),
                r.mode.name().into(),
                r.bias.to_string(),
                r.rmse.to_string(),
                r.coverage.to_string(),
                r.mean_se.to_string(),
                r.reps.to_string(),
                r.failures.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Runs every (replication, n, feature mode, estimator) cell.
///
/// Replication `r` draws its coefficients and its true `θ_1` once and
/// reuses them across sample sizes and feature modes; both feature modes
/// see the same simulated sample. Estimator failures are recorded per cell.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MetricsTable> {
    cfg.check()?;
    let per_rep: Vec<Vec<Replicate>> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| {
            let r = rep as u64;
            let dgp = DgpSpec::draw(&cfg.ranges, stats::derive_seed(cfg.seed, &[r, 0]));
            let truth = dgp.truth(cfg.mc_size, stats::derive_seed(cfg.seed, &[r, 1]))?.paths.theta[1];
            let mut out = Vec::new();
            for &n in &cfg.n_grid {
                let base = dgp.generate(n, stats::derive_seed(cfg.seed, &[r, 2, n as u64]))?;
                for &mode in &cfg.modes {
                    let data = match mode {
                        FeatureMode::Correct => base.clone(),
                        FeatureMode::Misspecified => misspecify(&base)?,
                    };
                    for &estimator in &cfg.estimators {
                        let seed = stats::derive_seed(cfg.seed, &[r, 3, n as u64, mode as u64, estimator as u64]);
                        let result = match estimator {
                            Estimator::Dml => {
                                let c = EifConfig { seed, ..cfg.dml.clone() };
                                crossfit_estimate(&data, &c).map(|(e, _)| e)
                            }
                            Estimator::Rwr => bootstrap_se(
                                &data,
                                &RwrConfig { bootstrap: cfg.rwr_bootstrap, seed, residualizer: LearnerSpec::ols() },
                            ),
                        };
                        out.push(match result {
                            Ok(e) => Replicate {
                                rep,
                                n,
                                mode,
                                estimator,
                                truth,
                                estimate: Some(e.components.theta[1]),
                                se: Some(e.se.theta[1]),
                                ci95: Some(e.ci95.theta[1]),
                                error: None,
                            },
                            Err(err) => Replicate {
                                rep,
                                n,
                                mode,
                                estimator,
                                truth,
                                estimate: None,
                                se: None,
                                ci95: None,
                                error: Some(err.to_string()),
                            },
                        });
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(MetricsTable::from_replicates(per_rep.into_iter().flatten().collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> ExperimentConfig {
        ExperimentConfig {
            n_grid: vec![200],
            reps: 1,
            dml: EifConfig { folds: 2, learner: LearnerSpec::ols(), ..Default::default() },
            rwr_bootstrap: 100,
            mc_size: 2000,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn single_rep_metrics() {
        let t = run_experiment(&quick()).unwrap();
        assert_eq!(t.rows.len(), 4);
        for r in &t.rows {
            assert!((r.rmse - r.bias.abs()).abs() < 1e-12);
            assert!(r.coverage == 0.0 || r.coverage == 1.0);
        }
        assert_eq!(t, run_experiment(&quick()).unwrap());
    }

    #[test]
    fn small_n_rejected() {
        let cfg = ExperimentConfig { n_grid: vec![49], ..quick() };
        assert!(run_experiment(&cfg).is_err());
    }

    #[test]
    fn csv_has_one_line_per_cell() {
        let t = run_experiment(&quick()).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 5);
    }
}
