//! L1-penalised linear and logistic regression by cyclic coordinate descent
//! on standardised features, with a cross-validated penalty path.
//!
//! The Gaussian objective is `½ Σ v_i (y_i − b − x_iβ)² + λ‖β‖₁` with weights
//! `v` normalised to sum to 1; the logistic objective replaces the squared
//! loss by the mean negative log-likelihood and is minimised by proximal
//! Newton steps.

use ndarray::ArrayView2;

use super::{kfold_split, Link, LassoParams};
use crate::error::Result;
use crate::stats;

#[derive(Debug, Clone)]
pub struct LassoFit {
    pub intercept: f64,
    /// Slopes on the original feature scale.
    pub coef: Vec<f64>,
    pub lambda: f64,
    pub converged: bool,
    pub sweeps: usize,
}

struct Standardized {
    cols: Vec<Vec<f64>>,
    mean: Vec<f64>,
    sd: Vec<f64>,
    v: Vec<f64>,
}

impl Standardized {
    fn new(x: ArrayView2<f64>, rows: &[usize], w: &[f64]) -> Self {
        let sw: f64 = rows.iter().map(|&i| w[i]).sum();
        let v: Vec<f64> = rows.iter().map(|&i| w[i] / sw).collect();
        let p = x.ncols();
        let mut cols = Vec::with_capacity(p);
        let mut mean = Vec::with_capacity(p);
        let mut sd = Vec::with_capacity(p);
        for j in 0..p {
            let c: Vec<f64> = rows.iter().map(|&i| x[[i, j]]).collect();
            let m: f64 = c.iter().zip(&v).map(|(a, b)| a * b).sum();
            let var: f64 = c.iter().zip(&v).map(|(a, b)| b * (a - m).powi(2)).sum();
            let s = var.sqrt();
            let scale = if s > 1e-12 * (1.0 + m.abs()) { s } else { 0.0 };
            let col = if scale > 0.0 {
                c.iter().map(|a| (a - m) / scale).collect()
            } else {
                vec![0.0; c.len()]
            };
            cols.push(col);
            mean.push(m);
            sd.push(scale);
        }
        Standardized { cols, mean, sd, v }
    }

    fn active(&self, j: usize) -> bool {
        self.sd[j] > 0.0
    }

    /// Converts standardised slopes to `(intercept, slopes)` on the original
    /// scale, given the standardised-scale intercept `b`.
    fn unscale(&self, b: f64, beta: &[f64]) -> (f64, Vec<f64>) {
        let mut intercept = b;
        let coef: Vec<f64> = beta
            .iter()
            .enumerate()
            .map(|(j, &bj)| {
                if self.active(j) {
                    let c = bj / self.sd[j];
                    intercept -= c * self.mean[j];
                    c
                } else {
                    0.0
                }
            })
            .collect();
        (intercept, coef)
    }
}

fn soft(z: f64, l: f64) -> f64 {
    if z > l {
        z - l
    } else if z < -l {
        z + l
    } else {
        0.0
    }
}

fn gaussian_objective(st: &Standardized, resid: &[f64], beta: &[f64], lambda: f64) -> f64 {
    let loss: f64 = resid.iter().zip(&st.v).map(|(r, v)| v * r * r).sum();
    0.5 * loss + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
}

/// Coordinate descent at fixed `lambda`, warm-started from `beta`, with
/// `resid = yc − Xβ` kept in sync.
fn cd_gaussian(
    st: &Standardized,
    lambda: f64,
    beta: &mut [f64],
    resid: &mut [f64],
    tol: f64,
    max_sweeps: usize,
    mut trace: Option<&mut Vec<f64>>,
) -> (bool, usize) {
    for sweep in 1..=max_sweeps {
        let mut max_delta: f64 = 0.0;
        for j in 0..beta.len() {
            if !st.active(j) {
                continue;
            }
            let xj = &st.cols[j];
            let mut rho = beta[j];
            for i in 0..xj.len() {
                rho += st.v[i] * xj[i] * resid[i];
            }
            let new = soft(rho, lambda);
            let d = new - beta[j];
            if d != 0.0 {
                for i in 0..xj.len() {
                    resid[i] -= d * xj[i];
                }
                beta[j] = new;
                max_delta = max_delta.max(d.abs());
            }
        }
        if let Some(t) = trace.as_deref_mut() {
            t.push(gaussian_objective(st, resid, beta, lambda));
        }
        if max_delta < tol {
            return (true, sweep);
        }
    }
    (false, max_sweeps)
}

fn logistic_objective(st: &Standardized, y: &[f64], b0: f64, beta: &[f64], lambda: f64) -> f64 {
    let mut nll = 0.0;
    for i in 0..y.len() {
        let mut eta = b0;
        for (j, bj) in beta.iter().enumerate() {
            eta += st.cols[j][i] * bj;
        }
        let softplus = if eta > 0.0 { eta + (-eta).exp().ln_1p() } else { eta.exp().ln_1p() };
        nll += st.v[i] * (softplus - y[i] * eta);
    }
    nll + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
}

/// Proximal Newton iterations for the penalised logistic objective.
fn cd_logistic(
    st: &Standardized,
    y: &[f64],
    lambda: f64,
    b0: &mut f64,
    beta: &mut [f64],
    tol: f64,
    max_sweeps: usize,
) -> (bool, usize) {
    let n = y.len();
    let mut sweeps = 0;
    let mut obj = logistic_objective(st, y, *b0, beta, lambda);
    let mut u = vec![0.0; n];
    let mut r = vec![0.0; n];
    for _outer in 0..100 {
        for i in 0..n {
            let mut eta = *b0;
            for (j, bj) in beta.iter().enumerate() {
                eta += st.cols[j][i] * bj;
            }
            let p = stats::expit(eta).clamp(1e-5, 1.0 - 1e-5);
            let var = p * (1.0 - p);
            u[i] = st.v[i] * var;
            r[i] = (y[i] - p) / var;
        }
        let su: f64 = u.iter().sum();
        let old_b0 = *b0;
        let old_beta = beta.to_vec();
        let mut nb0 = *b0;
        let mut nbeta = beta.to_vec();
        for _ in 0..max_sweeps {
            sweeps += 1;
            let d0: f64 = u.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / su;
            nb0 += d0;
            for ri in r.iter_mut() {
                *ri -= d0;
            }
            let mut max_delta = d0.abs();
            for j in 0..nbeta.len() {
                if !st.active(j) {
                    continue;
                }
                let xj = &st.cols[j];
                let mut denom = 0.0;
                let mut rho = 0.0;
                for i in 0..n {
                    denom += u[i] * xj[i] * xj[i];
                    rho += u[i] * xj[i] * r[i];
                }
                if denom <= 0.0 {
                    continue;
                }
                let new = soft(rho + denom * nbeta[j], lambda) / denom;
                let d = new - nbeta[j];
                if d != 0.0 {
                    for i in 0..n {
                        r[i] -= d * xj[i];
                    }
                    nbeta[j] = new;
                    max_delta = max_delta.max(d.abs());
                }
            }
            if max_delta < tol {
                break;
            }
        }
        // Backtrack along the Newton direction if the objective rose.
        let mut t = 1.0;
        let (mut cb0, mut cbeta);
        loop {
            cb0 = old_b0 + t * (nb0 - old_b0);
            cbeta = old_beta
                .iter()
                .zip(&nbeta)
                .map(|(o, nv)| o + t * (nv - o))
                .collect::<Vec<_>>();
            let cand = logistic_objective(st, y, cb0, &cbeta, lambda);
            if cand <= obj + 1e-13 || t < 1e-6 {
                obj = cand;
                break;
            }
            t *= 0.5;
        }
        let change = (cb0 - old_b0)
            .abs()
            .max(cbeta.iter().zip(&old_beta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        *b0 = cb0;
        beta.copy_from_slice(&cbeta);
        if change < tol.max(1e-10) {
            return (true, sweeps);
        }
    }
    (false, sweeps)
}

/// Fits one penalty path on `rows`, returning original-scale fits at each
/// penalty in `lambdas` (descending).
fn path(
    x: ArrayView2<f64>,
    y: &[f64],
    w: &[f64],
    rows: &[usize],
    lambdas: &[f64],
    link: Link,
    p: &LassoParams,
) -> Vec<LassoFit> {
    let st = Standardized::new(x, rows, w);
    let yr: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
    let ybar: f64 = yr.iter().zip(&st.v).map(|(a, b)| a * b).sum();
    let k = x.ncols();
    let mut beta = vec![0.0; k];
    let mut out = Vec::with_capacity(lambdas.len());
    match link {
        Link::Identity => {
            let mut resid: Vec<f64> = yr.iter().map(|v| v - ybar).collect();
            for &l in lambdas {
                let (converged, sweeps) = cd_gaussian(&st, l, &mut beta, &mut resid, p.tol, p.max_sweeps, None);
                let (intercept, coef) = st.unscale(ybar, &beta);
                out.push(LassoFit { intercept, coef, lambda: l, converged, sweeps });
            }
        }
        Link::Logit => {
            let mut b0 = stats::logit(ybar.clamp(1e-6, 1.0 - 1e-6));
            for &l in lambdas {
                let (converged, sweeps) = cd_logistic(&st, &yr, l, &mut b0, &mut beta, p.tol.max(1e-8), p.max_sweeps);
                let (intercept, coef) = st.unscale(b0, &beta);
                out.push(LassoFit { intercept, coef, lambda: l, converged, sweeps });
            }
        }
    }
    out
}

fn lambda_max(x: ArrayView2<f64>, y: &[f64], w: &[f64]) -> f64 {
    let rows: Vec<usize> = (0..y.len()).collect();
    let st = Standardized::new(x, &rows, w);
    let ybar: f64 = y.iter().zip(&st.v).map(|(a, b)| a * b).sum();
    (0..x.ncols())
        .map(|j| {
            st.cols[j]
                .iter()
                .zip(y)
                .zip(&st.v)
                .map(|((xj, yi), v)| v * xj * (yi - ybar))
                .sum::<f64>()
                .abs()
        })
        .fold(0.0, f64::max)
}

fn loss(fit: &LassoFit, x: ArrayView2<f64>, y: &[f64], w: &[f64], rows: &[usize], link: Link) -> f64 {
    rows.iter()
        .map(|&i| {
            let eta = fit.intercept + (0..x.ncols()).map(|j| x[[i, j]] * fit.coef[j]).sum::<f64>();
            let l = match link {
                Link::Identity => (y[i] - eta).powi(2),
                Link::Logit => {
                    let p = stats::expit(eta).clamp(1e-10, 1.0 - 1e-10);
                    -(y[i] * p.ln() + (1.0 - y[i]) * (1.0 - p).ln())
                }
            };
            w[i] * l
        })
        .sum()
}

pub(crate) fn fit_lasso(
    x: ArrayView2<f64>,
    y: &[f64],
    w: &[f64],
    p: &LassoParams,
    link: Link,
    seed: u64,
) -> Result<LassoFit> {
    let n = y.len();
    let all: Vec<usize> = (0..n).collect();
    if let Some(l) = p.penalty {
        let lmax = lambda_max(x, y, w);
        // Approach a small fixed penalty along a short path for stability.
        let mut lambdas: Vec<f64> = if lmax > l && l > 0.0 {
            (0..10).map(|t| lmax * (l / lmax).powf(t as f64 / 9.0)).collect()
        } else {
            vec![]
        };
        if lmax > 0.0 && l == 0.0 {
            lambdas = (0..10).map(|t| lmax * 1e-4f64.powf(t as f64 / 9.0)).collect();
        }
        lambdas.push(l);
        return Ok(path(x, y, w, &all, &lambdas, link, p).pop().expect("non-empty path"));
    }
    let lmax = lambda_max(x, y, w);
    if lmax <= 0.0 {
        return Ok(path(x, y, w, &all, &[0.0], link, p).pop().expect("non-empty path"));
    }
    let t = p.n_lambda.max(1);
    let lambdas: Vec<f64> = (0..t)
        .map(|i| {
            if t == 1 {
                lmax
            } else {
                lmax * p.lambda_ratio.powf(i as f64 / (t - 1) as f64)
            }
        })
        .collect();
    let best = if n >= 2 * p.cv_folds {
        let folds = kfold_split(n, p.cv_folds, seed)?;
        let mut cv = vec![0.0; t];
        for f in 0..p.cv_folds {
            let train = folds.train(f);
            let test = folds.test(f);
            for (c, fit) in cv.iter_mut().zip(path(x, y, w, &train, &lambdas, link, p)) {
                *c += loss(&fit, x, y, w, &test, link);
            }
        }
        let mut best = 0;
        for i in 1..t {
            if cv[i] < cv[best] {
                best = i;
            }
        }
        best
    } else {
        0
    };
    Ok(path(x, y, w, &all, &lambdas[..=best], link, p).pop().expect("non-empty path"))
}

/// Gaussian lasso at a fixed penalty from a zero start, returning the fit,
/// the objective after each sweep, and the final KKT residual. Exposed for
/// solver diagnostics.
pub fn lasso_trace(
    x: ArrayView2<f64>,
    y: &[f64],
    w: &[f64],
    lambda: f64,
    tol: f64,
    max_sweeps: usize,
) -> (LassoFit, Vec<f64>, f64) {
    let rows: Vec<usize> = (0..y.len()).collect();
    let st = Standardized::new(x, &rows, w);
    let ybar: f64 = y.iter().zip(&st.v).map(|(a, b)| a * b).sum();
    let mut resid: Vec<f64> = y.iter().map(|v| v - ybar).collect();
    let mut beta = vec![0.0; x.ncols()];
    let mut trace = vec![gaussian_objective(&st, &resid, &beta, lambda)];
    let (converged, sweeps) = cd_gaussian(&st, lambda, &mut beta, &mut resid, tol, max_sweeps, Some(&mut trace));
    let mut kkt: f64 = 0.0;
    for j in 0..beta.len() {
        if !st.active(j) {
            continue;
        }
        let g: f64 = -st.cols[j].iter().zip(&resid).zip(&st.v).map(|((a, r), v)| v * a * r).sum::<f64>();
        let viol = if beta[j] != 0.0 {
            (g + lambda * beta[j].signum()).abs()
        } else {
            (g.abs() - lambda).max(0.0)
        };
        kkt = kkt.max(viol);
    }
    let (intercept, coef) = st.unscale(ybar, &beta);
    (LassoFit { intercept, coef, lambda, converged, sweeps }, trace, kkt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{fit, LearnerSpec};
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::Rng;

    fn design(n: usize, p: usize, seed: u64) -> (Array2<f64>, Vec<f64>) {
        let mut rng = stats::rng(seed);
        let x = Array2::from_shape_fn((n, p), |_| rng.random_range(-2.0..2.0));
        let y = (0..n)
            .map(|i| 1.5 * x[[i, 0]] - 0.7 * x[[i, p - 1]] + 0.3 + rng.random_range(-0.5..0.5))
            .collect();
        (x, y)
    }

    #[test]
    fn huge_penalty_gives_weighted_mean() {
        let (x, y) = design(40, 3, 1);
        let w: Vec<f64> = (0..40).map(|i| 1.0 + (i % 3) as f64).collect();
        let spec = LearnerSpec::lasso(LassoParams { penalty: Some(1e9), ..Default::default() });
        let m = fit(&spec, x.view(), &y, &w, 0).unwrap();
        let (b, coef) = m.linear_coefficients().unwrap();
        assert!(coef.iter().all(|c| *c == 0.0));
        assert!((b - stats::weighted_mean(&y, &w)).abs() < 1e-12);
    }

    #[test]
    fn zero_penalty_matches_ols() {
        let (x, y) = design(60, 3, 2);
        let w = vec![1.0; 60];
        let spec = LearnerSpec::lasso(LassoParams { penalty: Some(0.0), ..Default::default() });
        let m = fit(&spec, x.view(), &y, &w, 0).unwrap();
        let o = super::super::ols(x.view(), &y, &w);
        let (b, coef) = m.linear_coefficients().unwrap();
        assert!((b - o.coef[0]).abs() < 1e-7);
        for (c, d) in coef.iter().zip(&o.coef[1..]) {
            assert!((c - d).abs() < 1e-7);
        }
    }

    #[test]
    fn cv_recovers_sparse_signal() {
        let (x, y) = design(400, 6, 3);
        let spec = LearnerSpec::lasso(LassoParams::default());
        let m = fit(&spec, x.view(), &y, &[1.0; 400], 5).unwrap();
        let (_, coef) = m.linear_coefficients().unwrap();
        assert!((coef[0] - 1.5).abs() < 0.1);
        assert!((coef[5] + 0.7).abs() < 0.1);
    }

    #[test]
    fn logistic_lasso_large_penalty_is_logit_mean() {
        let (x, _) = design(50, 2, 4);
        let y: Vec<f64> = (0..50).map(|i| (i % 5 == 0) as u8 as f64).collect();
        let spec = LearnerSpec::lasso(LassoParams { penalty: Some(1e6), ..Default::default() })
            .with_link(Link::Logit);
        let m = fit(&spec, x.view(), &y, &[1.0; 50], 0).unwrap();
        for p in m.predict(x.view()) {
            assert!((p - 0.2).abs() < 1e-8);
        }
    }

    #[test]
    fn logistic_lasso_zero_penalty_matches_irls() {
        let mut rng = stats::rng(8);
        let x = Array2::from_shape_fn((300, 2), |_| rng.random_range(-2.0..2.0));
        let y: Vec<f64> = (0..300)
            .map(|i| (rng.random::<f64>() < stats::expit(0.4 + x[[i, 0]] - 0.5 * x[[i, 1]])) as u8 as f64)
            .collect();
        let spec = LearnerSpec::lasso(LassoParams { penalty: Some(0.0), ..Default::default() })
            .with_link(Link::Logit);
        let a = fit(&spec, x.view(), &y, &[1.0; 300], 0).unwrap().predict(x.view());
        let b = fit(&LearnerSpec::logistic(), x.view(), &y, &[1.0; 300], 0)
            .unwrap()
            .predict(x.view());
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-6);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn objective_non_increasing_and_kkt(seed in any::<u64>(), lam in 0.0f64..0.5, p in 1usize..6) {
            let (x, y) = design(50, p, seed);
            let (_, trace, kkt) = lasso_trace(x.view(), &y, &vec![1.0; 50], lam, 1e-12, 100_000);
            for t in trace.windows(2) {
                prop_assert!(t[1] <= t[0] + 1e-14 * t[0].abs().max(1.0));
            }
            prop_assert!(kkt < 1e-6, "kkt residual {}", kkt);
        }
    }
}
