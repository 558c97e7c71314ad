//! Regression-with-residuals estimator.
//!
//! Baseline covariates are centred at their means and each intermediate
//! block is replaced by its residual given the prior history among units
//! that reached it. Linear models on these designs carry the decomposition
//! components as coefficients; standard errors come from a row bootstrap.

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::SequentialDataset;
use crate::decomposition::{compose_paths, ComponentSet};
use crate::error::{Error, Result};
use crate::estimate::{Components, DecompositionEstimate, Diagnostics, Method};
use crate::learners::{self, LearnerSpec};
use crate::stats;

/// `X − (weighted column mean)`.
pub fn residualize_baseline(x: ArrayView2<f64>, w: &[f64]) -> Array2<f64> {
    let mut out = x.to_owned();
    for mut col in out.axis_iter_mut(Axis(1)) {
        let v: Vec<f64> = col.to_vec();
        let m = stats::weighted_mean(&v, w);
        col.mapv_inplace(|a| a - m);
    }
    out
}

/// `Z_k⊥ = M_{k-1} [Z_k − E(Z_k | X, Z̄_{k-1}, M_{k-1} = 1)]` with the
/// regression fit by `model` (weighted least squares by default) among units
/// with `M_{k-1} = 1`. Rows of ineligible units are zero.
pub fn residualize_intermediate(data: &SequentialDataset, k: usize, model: &LearnerSpec) -> Result<Array2<f64>> {
    if k == 0 || k > data.k() {
        return Err(Error::InvalidArgument(format!("intermediate block {k} out of range 1..={}", data.k())));
    }
    let n = data.n();
    let z = &data.z_blocks[k - 1];
    let mut out = Array2::zeros((n, z.ncols()));
    if z.ncols() == 0 {
        return Ok(out);
    }
    let rows: Vec<usize> = (0..n).filter(|&i| data.level(i) >= k).collect();
    if rows.is_empty() {
        return Err(Error::Positivity(format!("no units with M_{} = 1 to residualize Z_{k}", k - 1)));
    }
    let x = data.features(k - 1, &rows);
    let w: Vec<f64> = rows.iter().map(|&i| data.weights[i]).collect();
    let spec = model.with_link(learners::Link::Identity);
    for c in 0..z.ncols() {
        let y: Vec<f64> = rows.iter().map(|&i| z[[i, c]]).collect();
        let fit = learners::fit(&spec, x.view(), &y, &w, c as u64)?;
        for ((&i, p), t) in rows.iter().zip(fit.predict(x.view())).zip(&y) {
            out[[i, c]] = t - p;
        }
    }
    Ok(out)
}

/// One fitted linear model with named columns (intercept first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub names: Vec<String>,
    pub coef: Vec<f64>,
    pub se: Vec<f64>,
    pub ridge_jitter: bool,
}

impl LinearModel {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.coef[i])
    }

    fn fit(names: Vec<String>, cols: Vec<Vec<f64>>, y: &[f64], w: &[f64]) -> Self {
        let n = y.len();
        let x = Array2::from_shape_fn((n, cols.len()), |(i, j)| cols[j][i]);
        let f = learners::ols(x.view(), y, w);
        let mut all = vec!["(intercept)".to_string()];
        all.extend(names);
        LinearModel { names: all, coef: f.coef, se: f.se, ridge_jitter: f.ridge_jitter }
    }
}

/// Coefficients read by [`extract_components`], plus the full fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RwrCoefficients {
    /// Treatment coefficient of the ATE model.
    pub lambda1: f64,
    /// `beta[k-1][j]`: coefficient on `M_j` (`M_0 = A`) in outcome model `k`.
    pub beta: Vec<Vec<f64>>,
    /// `theta0[k]`: intercept of the model for `M_{k+1}` among `1̄_{k+1}`.
    pub theta0: Vec<f64>,
    #[serde(default)]
    pub models: Vec<LinearModel>,
}

impl RwrCoefficients {
    pub fn ridge_jitter(&self) -> bool {
        self.models.iter().any(|m| m.ridge_jitter)
    }
}

fn xname(c: usize) -> String {
    format!("x{c}")
}

fn zname(j: usize, c: usize) -> String {
    format!("z{j}_{c}")
}

fn mname(j: usize) -> String {
    if j == 0 {
        "A".into()
    } else {
        format!("M{j}")
    }
}

/// Checks that every coefficient the estimator reads is identified.
fn check_contrasts(data: &SequentialDataset) -> Result<()> {
    let n = data.n();
    let treated = data.a.iter().filter(|&&a| a == 1).count();
    if treated == 0 || treated == n {
        return Err(Error::Positivity("no treatment contrast: A takes a single value".into()));
    }
    for k in 1..=data.k() {
        let reached = (0..n).filter(|&i| data.level(i) >= k).count();
        let took = (0..n).filter(|&i| data.level(i) > k).count();
        if took == 0 || took == reached {
            return Err(Error::Positivity(format!(
                "no contrast in M_{k} among units with A = 1, M_1..M_{} = 1",
                k - 1
            )));
        }
    }
    Ok(())
}

/// Fits the ATE model, the `K` outcome models and the `K` mediator models.
///
/// Outcome model `k` regresses `Y` on `A`, `M_1..M_k`, `X⊥`, `A·X⊥`,
/// `M_j·X⊥` (`j < k`), `Z_j⊥` (`j ≤ k`) and `M_j·Z_l⊥` (`l ≤ j < k`) on the
/// full sample. The model for `M_{k+1}` uses `X⊥, Z_1⊥..Z_k⊥` among units
/// with `1̄_{k+1}`.
pub fn fit_rwr(data: &SequentialDataset, residualizer: &LearnerSpec) -> Result<RwrCoefficients> {
    data.validate().into_result()?;
    check_contrasts(data)?;
    let n = data.n();
    let k_max = data.k();
    let w = &data.weights;
    let xp = residualize_baseline(data.x.view(), w);
    let zp: Vec<Array2<f64>> = (1..=k_max)
        .map(|k| residualize_intermediate(data, k, residualizer))
        .collect::<Result<_>>()?;
    let ind = |l: usize| -> Vec<f64> { (0..n).map(|i| f64::from(data.indicator(l, i))).collect() };
    let inds: Vec<Vec<f64>> = (0..=k_max).map(ind).collect();
    let xcols: Vec<Vec<f64>> = (0..xp.ncols()).map(|c| xp.column(c).to_vec()).collect();
    let times = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).collect::<Vec<f64>>();

    let mut names = vec!["A".to_string()];
    let mut cols = vec![inds[0].clone()];
    for (c, v) in xcols.iter().enumerate() {
        names.push(xname(c));
        cols.push(v.clone());
    }
    for (c, v) in xcols.iter().enumerate() {
        names.push(format!("A:{}", xname(c)));
        cols.push(times(&inds[0], v));
    }
    let ate = LinearModel::fit(names, cols, &data.y, w);
    let lambda1 = ate.get("A").expect("A column");
    let mut models = vec![ate];

    let mut beta = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let mut names = Vec::new();
        let mut cols = Vec::new();
        for j in 0..=k {
            names.push(mname(j));
            cols.push(inds[j].clone());
        }
        for (c, v) in xcols.iter().enumerate() {
            names.push(xname(c));
            cols.push(v.clone());
        }
        for j in 0..k {
            for (c, v) in xcols.iter().enumerate() {
                names.push(format!("{}:{}", mname(j), xname(c)));
                cols.push(times(&inds[j], v));
            }
        }
        for j in 1..=k {
            for c in 0..zp[j - 1].ncols() {
                names.push(zname(j, c));
                cols.push(zp[j - 1].column(c).to_vec());
            }
        }
        for j in 1..k {
            for l in 1..=j {
                for c in 0..zp[l - 1].ncols() {
                    names.push(format!("{}:{}", mname(j), zname(l, c)));
                    cols.push(times(&inds[j], &zp[l - 1].column(c).to_vec()));
                }
            }
        }
        let m = LinearModel::fit(names, cols, &data.y, w);
        beta.push((0..=k).map(|j| m.get(&mname(j)).expect("mediator column")).collect());
        models.push(m);
    }

    let mut theta0 = Vec::with_capacity(k_max);
    for k in 0..k_max {
        let rows: Vec<usize> = (0..n).filter(|&i| data.level(i) > k).collect();
        let pick = |v: &[f64]| rows.iter().map(|&i| v[i]).collect::<Vec<f64>>();
        let mut names = Vec::new();
        let mut cols = Vec::new();
        for (c, v) in xcols.iter().enumerate() {
            names.push(xname(c));
            cols.push(pick(v));
        }
        for j in 1..=k {
            for c in 0..zp[j - 1].ncols() {
                names.push(zname(j, c));
                cols.push(pick(&zp[j - 1].column(c).to_vec()));
            }
        }
        let t = pick(&inds[k + 1]);
        let wr = pick(w);
        let m = LinearModel::fit(names, cols, &t, &wr);
        theta0.push(m.coef[0]);
        models.push(m);
    }
    Ok(RwrCoefficients { lambda1, beta, theta0, models })
}

/// `τ_0 = λ_1`, `τ_k = β_{k,k}`, `Δ_{k-1} = β_{k,k-1}`, `Δ_K = τ_K`,
/// `π_{k+1} = θ_{k,0}` and residual `η`.
pub fn extract_components(coef: &RwrCoefficients) -> Result<ComponentSet> {
    let k = coef.beta.len();
    if coef.theta0.len() != k || coef.beta.iter().enumerate().any(|(j, b)| b.len() != j + 2) {
        return Err(Error::InvalidArgument("coefficient table has inconsistent levels".into()));
    }
    let mut tau = vec![coef.lambda1];
    tau.extend((1..=k).map(|j| coef.beta[j - 1][j]));
    let delta = (1..=k).map(|j| coef.beta[j - 1][j - 1]).collect();
    ComponentSet::from_parts(tau, delta, coef.theta0.clone())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RwrConfig {
    pub bootstrap: usize,
    pub seed: u64,
    pub residualizer: LearnerSpec,
}

impl Default for RwrConfig {
    fn default() -> Self {
        RwrConfig { bootstrap: 1000, seed: 0, residualizer: LearnerSpec::ols() }
    }
}

pub const MAX_REDRAWS: usize = 10;

fn flat_estimate(data: &SequentialDataset, residualizer: &LearnerSpec) -> Result<(Vec<f64>, bool)> {
    let coef = fit_rwr(data, residualizer)?;
    let c = extract_components(&coef)?;
    let p = compose_paths(&c);
    Ok((Components::from_sets(&c, &p).flat(), coef.ridge_jitter()))
}

/// Point estimates on the full sample, bootstrap standard errors
/// (replicate standard deviation) and percentile 95% intervals.
///
/// A resample whose strata leave a coefficient unidentified is redrawn, at
/// most [`MAX_REDRAWS`] times per replicate.
pub fn bootstrap_se(data: &SequentialDataset, cfg: &RwrConfig) -> Result<DecompositionEstimate> {
    if cfg.bootstrap < 100 {
        return Err(Error::InvalidArgument(format!("bootstrap needs B ≥ 100, got {}", cfg.bootstrap)));
    }
    let coef = fit_rwr(data, &cfg.residualizer)?;
    let comps = extract_components(&coef)?;
    let paths = compose_paths(&comps);
    let point = Components::from_sets(&comps, &paths);
    let k = data.k();
    let n = data.n();
    let reps: Vec<(Vec<f64>, usize, bool)> = (0..cfg.bootstrap)
        .into_par_iter()
        .map(|b| {
            use rand::Rng;
            for attempt in 0..=MAX_REDRAWS {
                let mut rng = stats::rng(stats::derive_seed(cfg.seed, &[b as u64, attempt as u64]));
                let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                match flat_estimate(&data.subset(&rows), &cfg.residualizer) {
                    Ok((v, jitter)) => return Ok((v, attempt, jitter)),
                    Err(Error::Positivity(_)) | Err(Error::Validation(_)) => continue,
                    Err(e) => return Err(e),
                }
            }
            Err(Error::Positivity(format!(
                "bootstrap replicate {b}: {} consecutive degenerate resamples",
                MAX_REDRAWS + 1
            )))
        })
        .collect::<Result<_>>()?;
    let dim = point.flat().len();
    let mut se = Vec::with_capacity(dim);
    let mut ci = Vec::with_capacity(dim);
    for d in 0..dim {
        let mut v: Vec<f64> = reps.iter().map(|r| r.0[d]).collect();
        se.push(stats::sample_sd(&v));
        v.sort_by(f64::total_cmp);
        ci.push([stats::quantile_sorted(&v, 0.025), stats::quantile_sorted(&v, 0.975)]);
    }
    let diagnostics = Diagnostics {
        seed: cfg.seed,
        bootstrap_reps: Some(cfg.bootstrap),
        bootstrap_redraws: Some(reps.iter().map(|r| r.1).sum()),
        ridge_jitter: coef.ridge_jitter() || reps.iter().any(|r| r.2),
        ..Default::default()
    };
    Ok(DecompositionEstimate {
        method: Method::Rwr,
        k,
        ate: comps.ate(),
        components: point,
        se: Components::from_flat(k, &se),
        ci95: Components::from_flat(k, &ci),
        diagnostics,
    })
}
