use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use ndarray::ArrayView2;

use crate::stats;

/// Weighted least squares result. `coef[0]` is the intercept.
#[derive(Debug, Clone)]
pub struct OlsFit {
    pub coef: Vec<f64>,
    /// Classical standard errors `sqrt(diag(σ² (XᵀWX)⁻¹))`.
    pub se: Vec<f64>,
    pub ridge_jitter: bool,
}

/// Cross products `DᵀWD` and `DᵀWt` of the design `D = [1, x]`.
fn normal_equations(x: ArrayView2<f64>, t: &[f64], w: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
    let p = x.ncols() + 1;
    let mut a = DMatrix::<f64>::zeros(p, p);
    let mut b = DVector::<f64>::zeros(p);
    let mut row = vec![0.0; p];
    for (i, xr) in x.rows().into_iter().enumerate() {
        row[0] = 1.0;
        for (j, v) in xr.iter().enumerate() {
            row[j + 1] = *v;
        }
        let wi = w[i];
        if wi == 0.0 {
            continue;
        }
        for j in 0..p {
            let wj = wi * row[j];
            b[j] += wj * t[i];
            for l in j..p {
                a[(j, l)] += wj * row[l];
            }
        }
    }
    for j in 0..p {
        for l in 0..j {
            a[(j, l)] = a[(l, j)];
        }
    }
    (a, b)
}

/// Solves a symmetric positive semi-definite system, adding a growing ridge
/// until the Cholesky factor is well conditioned. Returns the solution, the
/// inverse, and whether a ridge was used.
pub(crate) fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>, bool) {
    let p = a.nrows();
    let scale = (0..p).map(|j| a[(j, j)].abs()).fold(0.0, f64::max).max(1e-300);
    let mut ridge = 0.0;
    for attempt in 0..40 {
        let mut m = a.clone();
        for j in 0..p {
            m[(j, j)] += ridge;
        }
        if let Some(ch) = m.clone().cholesky() {
            let l = ch.l_dirty();
            let diag: Vec<f64> = (0..p).map(|j| l[(j, j)] * l[(j, j)]).collect();
            let dmax = diag.iter().cloned().fold(0.0, f64::max);
            let dmin = diag.iter().cloned().fold(f64::INFINITY, f64::min);
            if dmin > 1e-12 * dmax {
                let sol = ch.solve(b);
                let inv = ch.inverse();
                return (sol, inv, attempt > 0);
            }
        }
        ridge = if ridge == 0.0 { 1e-10 * scale } else { ridge * 10.0 };
    }
    (DVector::zeros(p), DMatrix::zeros(p, p), true)
}

/// Weighted least squares with intercept.
pub fn ols(x: ArrayView2<f64>, y: &[f64], w: &[f64]) -> OlsFit {
    let (a, b) = normal_equations(x, y, w);
    let (beta, inv, ridge_jitter) = solve_spd(&a, &b);
    let p = beta.len();
    let mut rss = 0.0;
    let mut sw = 0.0;
    let mut n_pos = 0usize;
    for (i, xr) in x.rows().into_iter().enumerate() {
        let fitted = beta[0] + xr.iter().enumerate().map(|(j, v)| v * beta[j + 1]).sum::<f64>();
        rss += w[i] * (y[i] - fitted).powi(2);
        sw += w[i];
        n_pos += (w[i] > 0.0) as usize;
    }
    // Weights treated as frequency-like: σ² = RSS / (Σw · (n - p) / n).
    let dof = (n_pos as f64 - p as f64).max(1.0) * sw / n_pos.max(1) as f64;
    let sigma2 = rss / dof;
    let se = (0..p).map(|j| (sigma2 * inv[(j, j)]).max(0.0).sqrt()).collect();
    OlsFit {
        coef: beta.iter().copied().collect(),
        se,
        ridge_jitter,
    }
}

pub(crate) struct LogisticFit {
    pub coef: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub ridge_jitter: bool,
}

fn deviance(x: ArrayView2<f64>, y: &[f64], w: &[f64], beta: &DVector<f64>) -> f64 {
    let mut d = 0.0;
    for (i, xr) in x.rows().into_iter().enumerate() {
        let eta = beta[0] + xr.iter().enumerate().map(|(j, v)| v * beta[j + 1]).sum::<f64>();
        // log(1 + e^eta) - y * eta, computed stably.
        let softplus = if eta > 0.0 { eta + (-eta).exp().ln_1p() } else { eta.exp().ln_1p() };
        d += w[i] * (softplus - y[i] * eta);
    }
    d
}

/// Logistic regression by iteratively reweighted least squares with step
/// halving. Accepts fractional targets in `[0, 1]`.
pub(crate) fn logistic(x: ArrayView2<f64>, y: &[f64], w: &[f64]) -> LogisticFit {
    const TOL: f64 = 1e-8;
    const MAX_ITER: usize = 100;
    let p = x.ncols() + 1;
    let sw: f64 = w.iter().sum();
    let ybar = stats::weighted_mean(y, w).clamp(1e-6, 1.0 - 1e-6);
    let mut beta = DVector::<f64>::zeros(p);
    beta[0] = stats::logit(ybar);
    let mut dev = deviance(x, y, w, &beta);
    let mut ridge_jitter = false;
    let mut converged = false;
    let mut iterations = 0;
    let mut work = vec![0.0; x.nrows()];
    let mut resp = vec![0.0; x.nrows()];
    for it in 0..MAX_ITER {
        iterations = it + 1;
        let mut grad = DVector::<f64>::zeros(p);
        for (i, xr) in x.rows().into_iter().enumerate() {
            let eta = beta[0] + xr.iter().enumerate().map(|(j, v)| v * beta[j + 1]).sum::<f64>();
            let mu = stats::expit(eta);
            let v = (mu * (1.0 - mu)).max(1e-10);
            work[i] = w[i] * v;
            resp[i] = (y[i] - mu) / v;
            let r = w[i] * (y[i] - mu);
            grad[0] += r;
            for (j, xv) in xr.iter().enumerate() {
                grad[j + 1] += r * xv;
            }
        }
        if grad.norm() / sw < TOL {
            converged = true;
            break;
        }
        let (a, b) = normal_equations(x, &resp, &work);
        let (step, _, jit) = solve_spd(&a, &b);
        ridge_jitter |= jit;
        let mut t = 1.0;
        loop {
            let cand = &beta + &step * t;
            let d = deviance(x, y, w, &cand);
            if d <= dev + 1e-12 * dev.abs().max(1.0) || t < 1e-8 {
                beta = cand;
                dev = d;
                break;
            }
            t *= 0.5;
        }
    }
    LogisticFit {
        coef: beta.iter().copied().collect(),
        converged,
        iterations,
        ridge_jitter,
    }
}

/// Weighted mean of the target within each distinct feature vector. Unseen
/// cells fall back to the overall weighted mean.
#[derive(Debug, Clone)]
pub struct CellMeans {
    cells: HashMap<Vec<u64>, f64>,
    fallback: f64,
}

fn cell_key(row: impl Iterator<Item = f64>) -> Vec<u64> {
    row.map(|v| if v == 0.0 { 0u64 } else { v.to_bits() }).collect()
}

impl CellMeans {
    pub fn fit(x: ArrayView2<f64>, y: &[f64], w: &[f64]) -> Self {
        let mut acc: HashMap<Vec<u64>, (f64, f64)> = HashMap::new();
        for (i, row) in x.rows().into_iter().enumerate() {
            let e = acc.entry(cell_key(row.iter().copied())).or_insert((0.0, 0.0));
            e.0 += w[i] * y[i];
            e.1 += w[i];
        }
        let cells = acc
            .into_iter()
            .filter(|(_, (_, sw))| *sw > 0.0)
            .map(|(k, (swy, sw))| (k, swy / sw))
            .collect();
        CellMeans {
            cells,
            fallback: stats::weighted_mean(y, w),
        }
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Vec<f64> {
        x.rows()
            .into_iter()
            .map(|r| {
                *self
                    .cells
                    .get(&cell_key(r.iter().copied()))
                    .unwrap_or(&self.fallback)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;

    #[test]
    fn noiseless_line_is_exact() {
        let x = Array2::from_shape_fn((10, 1), |(i, _)| i as f64);
        let y: Vec<f64> = (0..10).map(|i| 2.0 * i as f64 + 1.0).collect();
        let f = ols(x.view(), &y, &[1.0; 10]);
        assert!((f.coef[0] - 1.0).abs() < 1e-10);
        assert!((f.coef[1] - 2.0).abs() < 1e-10);
        assert!(!f.ridge_jitter);
    }

    #[test]
    fn collinear_design_uses_jitter() {
        let x = Array2::from_shape_fn((20, 2), |(i, _)| i as f64);
        let y: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let f = ols(x.view(), &y, &[1.0; 20]);
        assert!(f.ridge_jitter);
        assert!(f.coef.iter().all(|c| c.is_finite()));
        assert!((f.coef[1] + f.coef[2] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn zero_column_gets_zero_coefficient() {
        let x = Array2::from_shape_fn((30, 2), |(i, j)| if j == 0 { (i as f64).sin() } else { 0.0 });
        let y: Vec<f64> = (0..30).map(|i| 3.0 * (i as f64).sin() - 1.0).collect();
        let f = ols(x.view(), &y, &[1.0; 30]);
        assert!((f.coef[1] - 3.0).abs() < 1e-6);
        assert!(f.coef[2].abs() < 1e-6);
    }

    #[test]
    fn logistic_fractional_target() {
        // Constant fractional target 0.3 is fit exactly.
        let x = Array2::from_shape_fn((50, 1), |(i, _)| (i as f64) / 10.0);
        let f = logistic(x.view(), &[0.3; 50], &[1.0; 50]);
        assert!(f.converged);
        assert!((stats::expit(f.coef[0]) - 0.3).abs() < 1e-8);
        assert!(f.coef[1].abs() < 1e-8);
    }

    #[test]
    fn cell_means_are_exact() {
        let x = ndarray::array![[0.0], [0.0], [1.0], [1.0], [1.0]];
        let y = [1.0, 3.0, 2.0, 4.0, 9.0];
        let w = [1.0, 1.0, 1.0, 1.0, 2.0];
        let c = CellMeans::fit(x.view(), &y, &w);
        let p = c.predict(ndarray::array![[0.0], [1.0], [-0.0], [5.0]].view());
        assert_eq!(p[0], 2.0);
        assert_eq!(p[1], 6.0);
        assert_eq!(p[2], 2.0);
        assert!((p[3] - 28.0 / 6.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn equal_weights_match_unweighted(
            data in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0), 8..40),
            c in 0.1f64..10.0,
        ) {
            let n = data.len();
            let x = Array2::from_shape_fn((n, 2), |(i, j)| if j == 0 { data[i].0 } else { data[i].1 });
            let y: Vec<f64> = data.iter().map(|d| d.2).collect();
            let a = ols(x.view(), &y, &vec![1.0; n]);
            let b = ols(x.view(), &y, &vec![c; n]);
            prop_assume!(!a.ridge_jitter);
            for (u, v) in a.coef.iter().zip(&b.coef) {
                prop_assert!((u - v).abs() < 1e-12, "{} vs {}", u, v);
            }
        }
    }
}
