//! Per-unit recentered influence-function signals and their composition.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::decomposition::{cumulative_transit, ComponentSet};
use crate::stats;

/// A named signal column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Column {
    /// `ψ_{k,m} = E[Y(1̄_k, m)]`; `ψ_{0,a} = E[Y(a)]`.
    Psi(usize, u8),
    /// `φ_k = E[M_{k+1}(1̄_{k+1})]`.
    Phi(usize),
    Tau(usize),
    Delta(usize),
    /// `π_k`, `k ≥ 1`.
    Pi(usize),
    /// `η_k`, `k ≥ 1`.
    Eta(usize),
    Theta(usize),
}

/// Signal columns over a common set of units.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalMatrix {
    pub k: usize,
    pub weights: Vec<f64>,
    cols: BTreeMap<Column, Vec<f64>>,
}

impl SignalMatrix {
    pub fn new(k: usize, weights: Vec<f64>) -> Self {
        SignalMatrix { k, weights, cols: BTreeMap::new() }
    }

    pub fn n(&self) -> usize {
        self.weights.len()
    }

    pub fn insert(&mut self, c: Column, values: Vec<f64>) {
        assert_eq!(values.len(), self.n(), "signal column length");
        self.cols.insert(c, values);
    }

    pub fn get(&self, c: Column) -> &[f64] {
        self.cols
            .get(&c)
            .unwrap_or_else(|| panic!("missing signal column {c:?}"))
    }

    pub fn contains(&self, c: Column) -> bool {
        self.cols.contains_key(&c)
    }

    pub fn columns(&self) -> impl Iterator<Item = (&Column, &Vec<f64>)> {
        self.cols.iter()
    }

    /// Weighted column mean, i.e. the point estimate of the functional.
    pub fn mean(&self, c: Column) -> f64 {
        stats::weighted_mean(self.get(c), &self.weights)
    }

    pub fn se(&self, c: Column) -> f64 {
        stats::signal_se(self.get(c), &self.weights)
    }

    /// The functionals every decomposition of `k` mediators needs.
    pub fn base_columns(k: usize) -> Vec<Column> {
        let mut v = Vec::new();
        for j in 0..=k {
            v.push(Column::Psi(j, 0));
            v.push(Column::Psi(j, 1));
        }
        for j in 0..k {
            v.push(Column::Phi(j));
        }
        v
    }
}

/// Point estimates of `τ`, `Δ`, `π` from the `ψ`/`φ` column means, with
/// residual `η`.
pub fn point_estimates(s: &SignalMatrix) -> ComponentSet {
    let k = s.k;
    let psi = |j: usize, m: u8| s.mean(Column::Psi(j, m));
    let tau: Vec<f64> = (0..=k).map(|j| psi(j, 1) - psi(j, 0)).collect();
    let delta: Vec<f64> = (0..k).map(|j| psi(j + 1, 0) - psi(j, 0)).collect();
    let pi: Vec<f64> = (0..k).map(|j| s.mean(Column::Phi(j))).collect();
    ComponentSet::from_parts(tau, delta, pi).expect("consistent lengths")
}

/// Adds `τ`, `Δ`, `π`, `η`, `θ` columns built from the `ψ`/`φ` columns.
///
/// `τ`, `Δ`, `π` signals are differences/copies of base signals. `η` and `θ`
/// use the product rule around the supplied point estimates, so each
/// composed column's mean equals the corresponding point estimate.
pub fn compose_prop1_signals(s: &SignalMatrix, est: &ComponentSet) -> SignalMatrix {
    let k = s.k;
    let n = s.n();
    let mut out = s.clone();
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<f64>>();
    for j in 0..=k {
        out.insert(Column::Tau(j), diff(s.get(Column::Psi(j, 1)), s.get(Column::Psi(j, 0))));
    }
    for j in 0..k {
        out.insert(Column::Delta(j), diff(s.get(Column::Psi(j + 1, 0)), s.get(Column::Psi(j, 0))));
    }
    out.insert(Column::Delta(k), out.get(Column::Tau(k)).to_vec());
    for j in 1..=k {
        out.insert(Column::Pi(j), s.get(Column::Phi(j - 1)).to_vec());
    }
    for j in 1..=k {
        let (tau_j, pi_j) = (est.tau[j], est.pi[j - 1]);
        let t_prev = out.get(Column::Tau(j - 1));
        let d_prev = out.get(Column::Delta(j - 1));
        let r_pi = out.get(Column::Pi(j));
        let r_tau = out.get(Column::Tau(j));
        let eta: Vec<f64> = (0..n)
            .map(|i| t_prev[i] - d_prev[i] - tau_j * r_pi[i] - pi_j * r_tau[i] + pi_j * tau_j)
            .collect();
        out.insert(Column::Eta(j), eta);
    }
    out.insert(Column::Theta(0), out.get(Column::Delta(0)).to_vec());
    for j in 1..=k {
        let p_k = cumulative_transit(&est.pi, j);
        let p_km1 = cumulative_transit(&est.pi, j - 1);
        // Π_{l≤m, l≠i} π̂_l, computed without division.
        let leave_one_out = |m: usize, i: usize| -> f64 {
            (1..=m).filter(|&l| l != i).map(|l| est.pi[l - 1]).product()
        };
        let (d_hat, e_hat) = (est.delta[j], est.eta[j - 1]);
        let r_delta = out.get(Column::Delta(j));
        let r_eta = out.get(Column::Eta(j));
        let mut theta = vec![0.0; n];
        for (i, t) in theta.iter_mut().enumerate() {
            let mut v = r_delta[i] * p_k + r_eta[i] * p_km1;
            for l in 1..=j {
                v += d_hat * out.get(Column::Pi(l))[i] * leave_one_out(j, l);
            }
            for l in 1..j {
                v += e_hat * out.get(Column::Pi(l))[i] * leave_one_out(j - 1, l);
            }
            v -= j as f64 * d_hat * p_k + (j as f64 - 1.0) * e_hat * p_km1;
            *t = v;
        }
        out.insert(Column::Theta(j), theta);
    }
    out
}

/// One signal split into its baseline regression term and weighted
/// residual terms: `value = base + Σ_t factor_t · residual_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalTerms {
    pub base: f64,
    pub factors: Vec<f64>,
    pub residuals: Vec<f64>,
}

impl SignalTerms {
    pub fn value(&self) -> f64 {
        self.base
            + self
                .factors
                .iter()
                .zip(&self.residuals)
                .map(|(f, r)| if *f == 0.0 { 0.0 } else { f * r })
                .sum::<f64>()
    }
}

/// Signal terms for the sequential target with top-level regression
/// `chain[k]` of `outcome` on units with `1̄_k, M_k = m`.
///
/// `ind` holds `(A, M_1, ..)`, `props[l]` is `P(M_l = 1 | ·, 1̄_l)` and
/// `chain[j]` the level-`j` nested regression; entries for levels the unit
/// never reached are ignored.
///
/// The increment factor for level `j ≥ 1` is `Π_{l<j} M_l / π_l`; the final
/// factor multiplies it by `1{M_k = m} / P(M_k = m)`.
pub fn signal_terms(ind: &[u8], outcome: f64, props: &[f64], chain: &[f64], k: usize, m: u8) -> SignalTerms {
    let mut factors = Vec::with_capacity(k + 1);
    let mut residuals = Vec::with_capacity(k + 1);
    let mut w = 1.0;
    for j in 1..=k {
        w = if w > 0.0 && ind[j - 1] == 1 { w / props[j - 1] } else { 0.0 };
        factors.push(w);
        residuals.push(if w > 0.0 { chain[j] - chain[j - 1] } else { 0.0 });
    }
    let reached = w > 0.0 && ind.get(k).is_some_and(|&v| v == m);
    let p_m = if m == 1 { props[k] } else { 1.0 - props[k] };
    let f = if reached { w / p_m } else { 0.0 };
    factors.push(f);
    residuals.push(if f > 0.0 { outcome - chain[k] } else { 0.0 });
    SignalTerms { base: chain[0], factors, residuals }
}

/// Censors positive factors at the `p_low`/`p_high` type-7 quantiles of the
/// positive entries. Zeros (ineligible units) are left alone. Returns the
/// censored vector and the number of entries changed.
pub fn censor_weights(raw: &[f64], p_low: f64, p_high: f64) -> (Vec<f64>, usize) {
    let mut pos: Vec<f64> = raw.iter().copied().filter(|v| *v > 0.0).collect();
    if pos.is_empty() {
        return (raw.to_vec(), 0);
    }
    pos.sort_by(f64::total_cmp);
    let lo = stats::quantile_sorted(&pos, p_low);
    let hi = stats::quantile_sorted(&pos, p_high);
    let mut changed = 0;
    let out = raw
        .iter()
        .map(|&v| {
            if v <= 0.0 {
                v
            } else {
                let c = v.clamp(lo, hi);
                changed += (c != v) as usize;
                c
            }
        })
        .collect();
    (out, changed)
}
