//! Convex stacking of candidate learners.

use nalgebra::{DMatrix, DVector};
use ndarray::ArrayView2;

use super::linear::solve_spd;
use super::{fit, kfold_split, FittedModel, LearnerSpec, Link};
use crate::error::{Error, Result};
use crate::stats;

/// Non-negative least squares `min ‖Aα − b‖², α ≥ 0` in Gram form
/// (`g = AᵀA`, `h = Aᵀb`), by the Lawson–Hanson active-set method.
pub fn nnls(g: &DMatrix<f64>, h: &DVector<f64>) -> DVector<f64> {
    let c = h.len();
    let scale = (0..c).map(|j| g[(j, j)]).fold(0.0, f64::max).max(1e-300);
    let tol = 1e-12 * scale;
    let mut alpha = DVector::<f64>::zeros(c);
    let mut passive = vec![false; c];
    let solve_passive = |passive: &[bool]| -> DVector<f64> {
        let idx: Vec<usize> = (0..c).filter(|&j| passive[j]).collect();
        let gp = DMatrix::from_fn(idx.len(), idx.len(), |a, b| g[(idx[a], idx[b])]);
        let hp = DVector::from_fn(idx.len(), |a, _| h[idx[a]]);
        let (sp, _, _) = solve_spd(&gp, &hp);
        let mut s = DVector::zeros(c);
        for (a, &j) in idx.iter().enumerate() {
            s[j] = sp[a];
        }
        s
    };
    for _ in 0..3 * c + 10 {
        let grad = h - g * &alpha;
        let cand = (0..c)
            .filter(|&j| !passive[j] && grad[j] > tol)
            .max_by(|&a, &b| grad[a].total_cmp(&grad[b]));
        let Some(j) = cand else { break };
        passive[j] = true;
        loop {
            let s = solve_passive(&passive);
            if (0..c).filter(|&i| passive[i]).all(|i| s[i] > 0.0) {
                alpha = s;
                break;
            }
            let mut t = 1.0f64;
            for i in (0..c).filter(|&i| passive[i] && s[i] <= 0.0) {
                let denom = alpha[i] - s[i];
                if denom > 0.0 {
                    t = t.min(alpha[i] / denom);
                }
            }
            alpha = &alpha + (&s - &alpha) * t;
            for i in 0..c {
                if passive[i] && alpha[i] <= 1e-15 {
                    passive[i] = false;
                    alpha[i] = 0.0;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    alpha
}

/// Out-of-fold predictions for each candidate, NNLS stacking weights
/// normalised to sum to 1, and the candidates refit on all rows.
#[allow(clippy::type_complexity)]
pub(crate) fn fit_stack(
    candidates: &[LearnerSpec],
    folds: usize,
    x: ArrayView2<f64>,
    y: &[f64],
    w: &[f64],
    link: Link,
    seed: u64,
) -> Result<(Vec<f64>, Vec<Option<FittedModel>>, Vec<f64>)> {
    let n = y.len();
    let c = candidates.len();
    let specs: Vec<LearnerSpec> = candidates.iter().map(|s| s.with_link(link)).collect();
    let j = folds.min(n);
    let mut oof = vec![vec![f64::NAN; n]; c];
    let mut ok = vec![n >= 2; c];
    if n >= 2 {
        let assign = kfold_split(n, j.max(2), stats::derive_seed(seed, &[0xF01D]))?;
        for f in 0..assign.j {
            let train = assign.train(f);
            let test = assign.test(f);
            let xt = x.select(ndarray::Axis(0), &train);
            let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let wt: Vec<f64> = train.iter().map(|&i| w[i]).collect();
            let xs = x.select(ndarray::Axis(0), &test);
            for (ci, spec) in specs.iter().enumerate() {
                if !ok[ci] {
                    continue;
                }
                match fit(spec, xt.view(), &yt, &wt, stats::derive_seed(seed, &[f as u64, ci as u64])) {
                    Ok(m) => {
                        for (&i, p) in test.iter().zip(m.predict(xs.view())) {
                            oof[ci][i] = p;
                        }
                    }
                    Err(_) => ok[ci] = false,
                }
            }
        }
    }
    let risks: Vec<f64> = (0..c)
        .map(|ci| {
            if ok[ci] && oof[ci].iter().all(|v| v.is_finite()) {
                let sq: Vec<f64> = oof[ci].iter().zip(y).map(|(p, t)| (p - t).powi(2)).collect();
                stats::weighted_mean(&sq, w)
            } else {
                f64::INFINITY
            }
        })
        .collect();
    let valid: Vec<usize> = (0..c).filter(|&ci| risks[ci].is_finite()).collect();
    if valid.is_empty() && n >= 2 {
        return Err(Error::Learner("every stack candidate failed".into()));
    }
    let mut weights = vec![0.0; c];
    if n < 2 {
        weights[0] = 1.0;
    } else {
        let g = DMatrix::from_fn(valid.len(), valid.len(), |a, b| {
            (0..n).map(|i| w[i] * oof[valid[a]][i] * oof[valid[b]][i]).sum::<f64>()
        });
        let h = DVector::from_fn(valid.len(), |a, _| (0..n).map(|i| w[i] * oof[valid[a]][i] * y[i]).sum::<f64>());
        let alpha = nnls(&g, &h);
        let total: f64 = alpha.iter().sum();
        if total > 0.0 {
            for (a, &ci) in valid.iter().enumerate() {
                weights[ci] = alpha[a] / total;
            }
        } else {
            let best = valid
                .iter()
                .copied()
                .min_by(|&a, &b| risks[a].total_cmp(&risks[b]))
                .expect("non-empty");
            weights[best] = 1.0;
        }
    }
    let mut members = Vec::with_capacity(c);
    for (ci, spec) in specs.iter().enumerate() {
        if weights[ci] > 0.0 {
            members.push(Some(fit(spec, x, y, w, stats::derive_seed(seed, &[u64::MAX, ci as u64]))?));
        } else {
            members.push(None);
        }
    }
    Ok((weights, members, risks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{ForestParams, LassoParams};
    use ndarray::Array2;
    use rand::Rng;

    #[test]
    fn nnls_simple_cases() {
        // Unconstrained optimum already non-negative.
        let g = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        let h = DVector::from_row_slice(&[4.0, 3.0]);
        let a = nnls(&g, &h);
        assert!((a[0] - 2.0).abs() < 1e-12 && (a[1] - 3.0).abs() < 1e-12);
        // Negative unconstrained component is clamped.
        let h = DVector::from_row_slice(&[4.0, -3.0]);
        let a = nnls(&g, &h);
        assert!((a[0] - 2.0).abs() < 1e-12 && a[1] == 0.0);
    }

    #[test]
    fn identical_candidates_match_ols() {
        let mut rng = stats::rng(3);
        let n = 80;
        let x = Array2::from_shape_fn((n, 2), |_| rng.random_range(-1.0..1.0));
        let y: Vec<f64> = (0..n).map(|i| 1.0 + 2.0 * x[[i, 0]] - x[[i, 1]] + 0.2 * rng.random_range(-1.0..1.0)).collect();
        let w = vec![1.0; n];
        let spec = LearnerSpec::super_learner(
            vec![LearnerSpec::ols(), LearnerSpec::lasso(LassoParams { penalty: Some(0.0), ..Default::default() })],
            5,
        );
        let m = fit(&spec, x.view(), &y, &w, 1).unwrap();
        let o = fit(&LearnerSpec::ols(), x.view(), &y, &w, 1).unwrap();
        let mse = |p: Vec<f64>| p.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n as f64;
        let sw: f64 = m.diagnostics.stack_weights.iter().sum();
        assert!((sw - 1.0).abs() < 1e-10);
        assert!((mse(m.predict(x.view())) - mse(o.predict(x.view()))).abs() < 1e-8);
    }

    #[test]
    fn failing_candidate_gets_zero_weight() {
        // A logit-link lasso cannot fit a target outside [0, 1]... but links
        // are shared, so use a candidate that errors on this input instead:
        // a forest with zero trees fails validation.
        let mut rng = stats::rng(5);
        let n = 60;
        let x = Array2::from_shape_fn((n, 1), |_| rng.random_range(-1.0..1.0));
        let y: Vec<f64> = (0..n).map(|i| x[[i, 0]]).collect();
        let bad = LearnerSpec::random_forest(ForestParams { n_trees: 0, ..Default::default() });
        let (weights, _, risks) = fit_stack(&[LearnerSpec::ols(), bad], 5, x.view(), &y, &vec![1.0; n], Link::Identity, 0).unwrap();
        assert_eq!(weights[1], 0.0);
        assert!(risks[1].is_infinite());
        assert!((weights[0] - 1.0).abs() < 1e-12);
    }
}
