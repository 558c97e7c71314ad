//! Sensitivity of `τ_k` and `Δ_{k-1}` to a binary unobserved confounder.
//!
//! `α_k` is the outcome difference across `U` strata and `β_k` the
//! difference in `U` prevalence across mediator (or treatment) strata.

use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::SequentialDataset;
use crate::error::{Error, Result};
use crate::learners;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityParams {
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub alpha_se: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub beta_se: Option<f64>,
}

impl SensitivityParams {
    pub fn new(k: usize, alpha: f64, beta: f64) -> Result<Self> {
        if !alpha.is_finite() || !(-1.0..=1.0).contains(&beta) {
            return Err(Error::InvalidArgument(format!("need finite α and |β| ≤ 1, got ({alpha}, {beta})")));
        }
        Ok(SensitivityParams { k, alpha, beta, alpha_se: None, beta_se: None })
    }
}

/// `bias(τ_k) = α_k β_k`.
pub fn bias_tau(alpha: f64, beta: f64) -> f64 {
    alpha * beta
}

/// `bias(Δ_{k-1}) = −α_k β_k π_k`.
pub fn bias_delta(alpha: f64, beta: f64, pi: f64) -> f64 {
    -alpha * beta * pi
}

/// The estimate being adjusted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Target {
    /// `τ_k`, biased by `(α_k, β_k)`.
    Tau { k: usize },
    /// `Δ_{k-1}`, biased by `(α_k, β_k)` and scaled by `π_k`.
    Delta { k: usize, pi: f64 },
}

impl Target {
    pub fn bias(&self, alpha: f64, beta: f64) -> f64 {
        match *self {
            Target::Tau { .. } => bias_tau(alpha, beta),
            Target::Delta { pi, .. } => bias_delta(alpha, beta, pi),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            Target::Tau { k } => format!("tau{k}"),
            Target::Delta { k, .. } => format!("delta{}", k.saturating_sub(1)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub label: String,
    pub alpha: f64,
    pub beta: f64,
    pub adjusted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityGrid {
    pub target: Target,
    pub estimate: f64,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    /// `adjusted[i][j]` at `(alphas[i], betas[j])`.
    pub adjusted: Vec<Vec<f64>>,
    /// Point on the zero contour with `α = β`, when one exists.
    pub zero_symmetric: Option<(f64, f64)>,
    pub benchmarks: Vec<GridPoint>,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Bias-adjusted `estimate − bias(α, β)` over an evenly spaced grid.
pub fn make_grid(
    estimate: f64,
    target: Target,
    alpha_range: (f64, f64),
    beta_range: (f64, f64),
    resolution: (usize, usize),
) -> Result<SensitivityGrid> {
    if resolution.0 == 0 || resolution.1 == 0 {
        return Err(Error::InvalidArgument("grid resolution must be positive".into()));
    }
    if beta_range.0 < -1.0 || beta_range.1 > 1.0 || beta_range.0 > beta_range.1 || alpha_range.0 > alpha_range.1 {
        return Err(Error::InvalidArgument("ranges must be ordered and β within [-1, 1]".into()));
    }
    let alphas = linspace(alpha_range.0, alpha_range.1, resolution.0);
    let betas = linspace(beta_range.0, beta_range.1, resolution.1);
    let adjusted = alphas
        .iter()
        .map(|&a| betas.iter().map(|&b| estimate - target.bias(a, b)).collect())
        .collect();
    // Zero contour with α = β: α² = estimate (τ) or α² = −estimate / π (Δ).
    let sq = match target {
        Target::Tau { .. } => Some(estimate),
        Target::Delta { pi, .. } if pi != 0.0 => Some(-estimate / pi),
        Target::Delta { .. } => None,
    };
    let zero_symmetric = sq.filter(|v| *v >= 0.0).map(|v| (v.sqrt(), v.sqrt()));
    Ok(SensitivityGrid { target, estimate, alphas, betas, adjusted, zero_symmetric, benchmarks: Vec::new() })
}

impl SensitivityGrid {
    pub fn add_benchmark(&mut self, label: &str, p: &SensitivityParams) {
        self.benchmarks.push(GridPoint {
            label: label.to_string(),
            alpha: p.alpha,
            beta: p.beta,
            adjusted: self.estimate - self.target.bias(p.alpha, p.beta),
        });
    }

    /// Long-format CSV: `alpha,beta,adjusted,point` and, when any benchmark
    /// is present, a `benchmark` label column.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let with_bench = !self.benchmarks.is_empty();
        let mut header = vec!["alpha", "beta", "adjusted", "point"];
        if with_bench {
            header.push("benchmark");
        }
        out.write_record(&header)?;
        let mut row = |a: f64, b: f64, v: f64, kind: &str, label: &str| -> Result<()> {
            let mut r = vec![a.to_string(), b.to_string(), v.to_string(), kind.to_string()];
            if with_bench {
                r.push(label.to_string());
            }
            out.write_record(&r)?;
            Ok(())
        };
        for (i, &a) in self.alphas.iter().enumerate() {
            for (j, &b) in self.betas.iter().enumerate() {
                row(a, b, self.adjusted[i][j], "grid", "")?;
            }
        }
        if let Some((a, b)) = self.zero_symmetric {
            row(a, b, self.estimate - self.target.bias(a, b), "zero_symmetric", "")?;
        }
        for p in &self.benchmarks {
            row(p.alpha, p.beta, p.adjusted, "benchmark", &p.label)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// `(α̂_k, β̂_k)` for an observed binary covariate `u` treated as if it were
/// the unobserved confounder.
///
/// Among units with history `1̄_k`, `α̂` is the coefficient on `u` in a
/// weighted linear regression of `Y` on `[X, Z̄_k, M_k, u]` and `β̂` is the
/// coefficient on `M_k` in a regression of `u` on `[X, Z̄_k, M_k]`
/// (`M_0 = A`).
pub fn benchmark_confounder(data: &SequentialDataset, u: &[u8], k: usize) -> Result<SensitivityParams> {
    if u.len() != data.n() {
        return Err(Error::Validation(format!("benchmark has {} values for {} units", u.len(), data.n())));
    }
    if u.iter().any(|&v| v > 1) {
        return Err(Error::Validation("benchmark column must be binary".into()));
    }
    if k > data.k() {
        return Err(Error::InvalidArgument(format!("level {k} exceeds K = {}", data.k())));
    }
    let rows: Vec<usize> = (0..data.n()).filter(|&i| data.level(i) >= k).collect();
    let treated = rows.iter().filter(|&&i| data.indicator(k, i) == 1).count();
    if treated == 0 || treated == rows.len() {
        return Err(Error::Positivity(format!("no contrast in level-{k} indicator among eligible units")));
    }
    let f = data.features(k, &rows);
    let p = f.ncols();
    let w: Vec<f64> = rows.iter().map(|&i| data.weights[i]).collect();
    let mut x = Array2::zeros((rows.len(), p + 2));
    for (r, &i) in rows.iter().enumerate() {
        for c in 0..p {
            x[[r, c]] = f[[r, c]];
        }
        x[[r, p]] = f64::from(data.indicator(k, i));
        x[[r, p + 1]] = f64::from(u[i]);
    }
    let y: Vec<f64> = rows.iter().map(|&i| data.y[i]).collect();
    let out_fit = learners::ols(x.view(), &y, &w);
    let ut: Vec<f64> = rows.iter().map(|&i| f64::from(u[i])).collect();
    let u_fit = learners::ols(x.slice(ndarray::s![.., ..p + 1]), &ut, &w);
    // Coefficient vectors lead with the intercept.
    Ok(SensitivityParams {
        k,
        alpha: out_fit.coef[p + 2],
        beta: u_fit.coef[p + 1],
        alpha_se: Some(out_fit.se[p + 2]),
        beta_se: Some(u_fit.se[p + 1]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn bias_examples() {
        assert!((bias_tau(0.5, 0.3) - 0.15).abs() < 1e-15);
        assert_eq!(bias_tau(2.0, 0.0), 0.0);
        assert!((bias_delta(0.5, 0.3, 0.4) + 0.06).abs() < 1e-15);
        assert_eq!(bias_delta(0.5, 0.3, 0.0), 0.0);
    }

    #[test]
    fn delta_zero_contour_needs_opposite_signs() {
        let t = Target::Delta { k: 1, pi: 0.427 };
        let g = make_grid(0.46, t, (0.0, 1.0), (0.0, 1.0), (5, 5)).unwrap();
        assert!(g.zero_symmetric.is_none());
        // αβ = −0.46 / 0.427 zeroes the adjusted value.
        let ab: f64 = -0.46 / 0.427;
        assert!((ab + 1.0773).abs() < 1e-4);
        assert!((0.46 - t.bias(ab, 1.0)).abs() < 1e-12);
    }

    #[test]
    fn tau_symmetric_point() {
        let g = make_grid(0.67, Target::Tau { k: 0 }, (0.0, 1.0), (0.0, 1.0), (3, 3)).unwrap();
        let (a, b) = g.zero_symmetric.unwrap();
        assert!((a - 0.67f64.sqrt()).abs() < 1e-15 && a == b);
        assert!((a - 0.819).abs() < 1e-3);
    }

    #[test]
    fn grid_shape_origin_and_monotonicity() {
        let g = make_grid(0.67, Target::Tau { k: 0 }, (0.0, 1.0), (0.0, 1.0), (50, 50)).unwrap();
        assert_eq!(g.adjusted.iter().map(|r| r.len()).sum::<usize>(), 2500);
        assert_eq!(g.adjusted[0][0], 0.67);
        for i in 0..50 {
            for j in 1..50 {
                assert!(g.adjusted[i][j] <= g.adjusted[i][j - 1]);
                assert!(g.adjusted[j][i] <= g.adjusted[j - 1][i]);
            }
        }
    }

    #[test]
    fn csv_rows_and_columns() {
        let mut g = make_grid(0.5, Target::Tau { k: 1 }, (0.0, 1.0), (0.0, 1.0), (10, 10)).unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().filter(|l| l.ends_with(",grid")).count(), 100);
        assert!(text.starts_with("alpha,beta,adjusted,point\n"));
        g.add_benchmark("ability", &SensitivityParams::new(1, 0.2, 0.3).unwrap());
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("alpha,beta,adjusted,point,benchmark\n"));
        assert!(text.contains(",benchmark,ability"));
    }

    fn toy(n: usize, seed: u64) -> SequentialDataset {
        let mut rng = stats::rng(seed);
        let x = Array2::from_shape_fn((n, 1), |_| rng.random_range(-1.0..1.0));
        let a: Vec<u8> = (0..n).map(|_| rng.random_bool(0.5) as u8).collect();
        let m: Vec<u8> = a.iter().map(|&a| a & rng.random_bool(0.4) as u8).collect();
        let z = Array2::zeros((n, 0));
        let y = (0..n).map(|i| x[[i, 0]] + f64::from(a[i]) + rng.random_range(-1.0..1.0)).collect();
        SequentialDataset::new(x, a, vec![z], vec![m], y, None).unwrap()
    }

    #[test]
    fn null_and_treatment_benchmarks() {
        let d = toy(4000, 1);
        let mut rng = stats::rng(2);
        let u: Vec<u8> = (0..d.n()).map(|_| rng.random_bool(0.5) as u8).collect();
        let p = benchmark_confounder(&d, &u, 0).unwrap();
        assert!(p.alpha.abs() < 3.0 * p.alpha_se.unwrap());
        assert!(p.beta.abs() < 3.0 * p.beta_se.unwrap());
        let p = benchmark_confounder(&d, &d.a.clone(), 0).unwrap();
        assert!((p.beta - 1.0).abs() < 1e-10);
        assert!(benchmark_confounder(&d, &vec![2; d.n()], 0).is_err());
    }

    proptest! {
        #[test]
        fn bias_is_linear_in_alpha(a in -5.0f64..5.0, b in -1.0f64..1.0, pi in 0.0f64..1.0, c in -3.0f64..3.0) {
            prop_assert!((bias_tau(c * a, b) - c * bias_tau(a, b)).abs() < 1e-12);
            prop_assert!((bias_delta(c * a, b, pi) - c * bias_delta(a, b, pi)).abs() < 1e-12);
            // Positive αβ pushes the adjusted Δ up.
            if a * b > 0.0 && pi > 0.0 {
                prop_assert!(1.0 - bias_delta(a, b, pi) > 1.0);
            }
        }
    }
}
