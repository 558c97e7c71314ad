//! Exact sequential g-formula values for finite discrete laws, plus Monte
//! Carlo truths for simulated laws.
//!
//! A [`DiscreteLaw`] indexes histories in mixed radix: `h_0` is the `X` cell
//! and `h_j = h_{j-1} · |Z_j| + z_j`. Conditional tables are keyed by these
//! indices.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::SequentialDataset;
use crate::decomposition::{compose_paths, ComponentSet, PathEffects};
use crate::eif::Functional;
use crate::error::{Error, Result};
use crate::stats;

/// Largest number of history cells an exact computation will enumerate.
pub const MAX_CELLS: usize = 10_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteLaw {
    /// Number of mediators.
    pub k: usize,
    /// Support points of `X` (each a vector of baseline values).
    pub x_support: Vec<Vec<f64>>,
    pub x_prob: Vec<f64>,
    /// `z_support[j]` lists the support points of `Z_{j+1}`; an empty block
    /// is a single empty vector.
    pub z_support: Vec<Vec<Vec<f64>>>,
    /// `P(A = 1 | x)`.
    pub a_prob: Vec<f64>,
    /// `z_prob[j][h_j][v] = P(Z_{j+1} = v | h_j, 1̄_{j+1})`.
    pub z_prob: Vec<Vec<Vec<f64>>>,
    /// `m_prob[j][h_{j+1}] = P(M_{j+1} = 1 | h_{j+1}, 1̄_{j+1})`.
    pub m_prob: Vec<Vec<f64>>,
    /// `y_mean[l][h]`: `E[Y | h, level = l]`, with history `h_{min(l, K)}`.
    pub y_mean: Vec<Vec<f64>>,
}

/// Exact `ψ_{k,m}` (`k = 0..=K`) and `φ_k` (`k < K`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalTable {
    pub psi: Vec<[f64; 2]>,
    pub phi: Vec<f64>,
}

impl FunctionalTable {
    pub fn k(&self) -> usize {
        self.phi.len()
    }

    pub fn get(&self, f: Functional) -> f64 {
        match f {
            Functional::Psi { k, m } => self.psi[k][m as usize],
            Functional::Phi { k } => self.phi[k],
        }
    }

    pub fn components(&self) -> ComponentSet {
        let k = self.k();
        let tau = (0..=k).map(|j| self.psi[j][1] - self.psi[j][0]).collect();
        let delta = (0..k).map(|j| self.psi[j + 1][0] - self.psi[j][0]).collect();
        ComponentSet::from_parts(tau, delta, self.phi.clone()).expect("consistent lengths")
    }

    pub fn paths(&self) -> PathEffects {
        compose_paths(&self.components())
    }
}

fn check_dist(p: &[f64], what: &str) -> Result<()> {
    if p.is_empty() {
        return Err(Error::Validation(format!("{what}: empty distribution")));
    }
    if let Some(v) = p.iter().find(|v| !v.is_finite() || **v <= 0.0) {
        return Err(Error::Positivity(format!("{what}: zero-probability conditioning cell ({v})")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::Validation(format!("{what}: probabilities sum to {s}")));
    }
    Ok(())
}

impl DiscreteLaw {
    /// Number of histories `h_j`.
    pub fn history_count(&self, j: usize) -> usize {
        self.x_support.len() * self.z_support[..j].iter().map(|s| s.len()).product::<usize>()
    }

    /// Decodes `h_j` into `(x index, z indices)`.
    pub fn decode(&self, j: usize, mut h: usize) -> (usize, Vec<usize>) {
        let mut z = vec![0; j];
        for l in (0..j).rev() {
            let c = self.z_support[l].len();
            z[l] = h % c;
            h /= c;
        }
        (h, z)
    }

    /// Checks shapes, normalisation and positivity: `P(A = 1 | x)` and every
    /// mediator probability must lie in `[eps, 1 − eps]` and every `X`/`Z`
    /// cell must have positive probability.
    pub fn validate(&self, eps: f64) -> Result<()> {
        let k = self.k;
        if self.z_support.len() != k || self.z_prob.len() != k || self.m_prob.len() != k || self.y_mean.len() != k + 2 {
            return Err(Error::Validation(format!("table counts do not match K = {k}")));
        }
        if self.x_support.len() != self.x_prob.len() {
            return Err(Error::Validation("x_support and x_prob differ in length".into()));
        }
        let xw = self.x_support.first().map_or(0, |v| v.len());
        if self.x_support.iter().any(|v| v.len() != xw) {
            return Err(Error::Validation("x support points differ in width".into()));
        }
        for (j, s) in self.z_support.iter().enumerate() {
            let w = s.first().map_or(0, |v| v.len());
            if s.is_empty() || s.iter().any(|v| v.len() != w) {
                return Err(Error::Validation(format!("z block {} support is empty or ragged", j + 1)));
            }
        }
        let cells = self.history_count(k).saturating_mul(k + 2);
        if cells > MAX_CELLS {
            return Err(Error::InvalidArgument(format!(
                "law has {cells} cells, above the exact-enumeration limit of {MAX_CELLS}"
            )));
        }
        check_dist(&self.x_prob, "x_prob")?;
        let in_range = |p: f64| p.is_finite() && p >= eps && p <= 1.0 - eps;
        if self.a_prob.len() != self.x_support.len() {
            return Err(Error::Validation("a_prob has wrong length".into()));
        }
        if let Some(p) = self.a_prob.iter().find(|p| !in_range(**p)) {
            return Err(Error::Positivity(format!("P(A = 1 | x) = {p} outside [{eps}, {}]", 1.0 - eps)));
        }
        for j in 0..k {
            if self.z_prob[j].len() != self.history_count(j) {
                return Err(Error::Validation(format!("z_prob[{j}] has wrong length")));
            }
            for (h, d) in self.z_prob[j].iter().enumerate() {
                if d.len() != self.z_support[j].len() {
                    return Err(Error::Validation(format!("z_prob[{j}][{h}] has wrong length")));
                }
                check_dist(d, &format!("z_prob[{j}][{h}]"))?;
            }
            if self.m_prob[j].len() != self.history_count(j + 1) {
                return Err(Error::Validation(format!("m_prob[{j}] has wrong length")));
            }
            if let Some(p) = self.m_prob[j].iter().find(|p| !in_range(**p)) {
                return Err(Error::Positivity(format!("P(M_{} = 1 | ·) = {p} outside [{eps}, {}]", j + 1, 1.0 - eps)));
            }
        }
        for l in 0..=k + 1 {
            if self.y_mean[l].len() != self.history_count(l.min(k)) {
                return Err(Error::Validation(format!("y_mean[{l}] has wrong length")));
            }
            if self.y_mean[l].iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("y_mean[{l}] has a non-finite entry")));
            }
        }
        Ok(())
    }

    /// A random law with scalar supports `0, 1, ..` of the given sizes.
    /// A block of size 0 is empty. Propensities lie in `[0.15, 0.85]`.
    pub fn random(k: usize, x_card: usize, z_cards: &[usize], seed: u64) -> Result<DiscreteLaw> {
        if z_cards.len() != k || x_card == 0 {
            return Err(Error::InvalidArgument("need x_card ≥ 1 and one z cardinality per mediator".into()));
        }
        let mut rng = stats::rng(seed);
        let dist = |c: usize, rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
            let raw: Vec<f64> = (0..c).map(|_| rng.random_range(0.2..1.0)).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / s).collect()
        };
        let x_support = (0..x_card).map(|v| vec![v as f64]).collect();
        let x_prob = dist(x_card, &mut rng);
        let z_support: Vec<Vec<Vec<f64>>> = z_cards
            .iter()
            .map(|&c| if c == 0 { vec![vec![]] } else { (0..c).map(|v| vec![v as f64]).collect() })
            .collect();
        let mut law = DiscreteLaw {
            k,
            x_support,
            x_prob,
            z_support,
            a_prob: Vec::new(),
            z_prob: Vec::new(),
            m_prob: Vec::new(),
            y_mean: Vec::new(),
        };
        law.a_prob = (0..x_card).map(|_| rng.random_range(0.15..0.85)).collect();
        for j in 0..k {
            let c = law.z_support[j].len();
            law.z_prob.push((0..law.history_count(j)).map(|_| dist(c, &mut rng)).collect());
            law.m_prob.push((0..law.history_count(j + 1)).map(|_| rng.random_range(0.15..0.85)).collect());
        }
        for l in 0..=k + 1 {
            let c = law.history_count(l.min(k));
            law.y_mean.push((0..c).map(|_| rng.random_range(-2.0..2.0)).collect());
        }
        law.validate(0.0)?;
        Ok(law)
    }

    /// `P(X, Z̄_j = h_j)` under any regime that sets `A = M_1 = .. = M_{j-1} = 1`.
    fn history_weights(&self, j: usize) -> Vec<f64> {
        let mut w = self.x_prob.clone();
        for l in 0..j {
            let c = self.z_support[l].len();
            let mut next = vec![0.0; w.len() * c];
            for (h, &p) in w.iter().enumerate() {
                for (v, q) in self.z_prob[l][h].iter().enumerate() {
                    next[h * c + v] = p * q;
                }
            }
            w = next;
        }
        w
    }

    /// Backward recursion: `V_K = y_mean[K+1]`,
    /// `V_j(h_j) = Σ_z P(z | h_j) [(1 − p_{j+1}) y_mean[j+1] + p_{j+1} V_{j+1}]`.
    fn continuation(&self, j: usize) -> Vec<f64> {
        let mut v = self.y_mean[self.k + 1].clone();
        for l in (j..self.k).rev() {
            let c = self.z_support[l].len();
            v = (0..self.history_count(l))
                .map(|h| {
                    self.z_prob[l][h]
                        .iter()
                        .enumerate()
                        .map(|(z, q)| {
                            let g = h * c + z;
                            let p = self.m_prob[l][g];
                            q * ((1.0 - p) * self.y_mean[l + 1][g] + p * v[g])
                        })
                        .sum()
                })
                .collect();
        }
        v
    }

    /// Observed-data population: one row per terminal cell of the natural
    /// regime, weighted by its probability, with `Y` at its conditional mean.
    /// `Z` blocks past a unit's stopping point hold placeholder zeros.
    pub fn population_dataset(&self) -> Result<SequentialDataset> {
        self.validate(0.0)?;
        let k = self.k;
        let xw = self.x_support[0].len();
        let zw: Vec<usize> = self.z_support.iter().map(|s| s[0].len()).collect();
        struct Row {
            x: usize,
            z: Vec<usize>,
            a: u8,
            m: Vec<u8>,
            y: f64,
            w: f64,
        }
        let mut rows = Vec::new();
        for x in 0..self.x_support.len() {
            let px = self.x_prob[x];
            let pa = self.a_prob[x];
            rows.push(Row { x, z: vec![], a: 0, m: vec![0; k], y: self.y_mean[0][x], w: px * (1.0 - pa) });
            // Depth-first over (z_1, m_1, ..) with all earlier indicators 1.
            let mut stack = vec![(x, Vec::<usize>::new(), px * pa)];
            while let Some((h, z, p)) = stack.pop() {
                let j = z.len();
                if j == k {
                    rows.push(Row { x, z, a: 1, m: vec![1; k], y: self.y_mean[k + 1][h], w: p });
                    continue;
                }
                let c = self.z_support[j].len();
                for (v, q) in self.z_prob[j][h].iter().enumerate() {
                    let g = h * c + v;
                    let pm = self.m_prob[j][g];
                    let mut zz = z.clone();
                    zz.push(v);
                    let mut m = vec![1u8; j];
                    m.resize(k, 0);
                    rows.push(Row { x, z: zz.clone(), a: 1, m, y: self.y_mean[j + 1][g], w: p * q * (1.0 - pm) });
                    stack.push((g, zz, p * q * pm));
                }
            }
        }
        let n = rows.len();
        let x = Array2::from_shape_fn((n, xw), |(r, c)| self.x_support[rows[r].x][c]);
        let z_blocks = (0..k)
            .map(|j| {
                Array2::from_shape_fn((n, zw[j]), |(r, c)| {
                    rows[r].z.get(j).map_or(0.0, |&v| self.z_support[j][v][c])
                })
            })
            .collect();
        let m = (0..k).map(|j| rows.iter().map(|r| r.m[j]).collect()).collect();
        SequentialDataset::new(
            x,
            rows.iter().map(|r| r.a).collect(),
            z_blocks,
            m,
            rows.iter().map(|r| r.y).collect(),
            Some(rows.iter().map(|r| r.w).collect()),
        )
    }
}

/// `ψ_{k,m}` by backward recursion over the law's tables.
pub fn exact_psi(law: &DiscreteLaw, k: usize, m: u8) -> Result<f64> {
    law.validate(0.0)?;
    if k > law.k || m > 1 {
        return Err(Error::InvalidArgument(format!("ψ({k}, {m}) undefined for K = {}", law.k)));
    }
    let w = law.history_weights(k);
    let v = if m == 0 { law.y_mean[k].clone() } else { law.continuation(k) };
    Ok(w.iter().zip(&v).map(|(a, b)| a * b).sum())
}

/// `φ_k = E[M_{k+1}(1̄_{k+1})]`.
pub fn exact_phi(law: &DiscreteLaw, k: usize) -> Result<f64> {
    law.validate(0.0)?;
    if k >= law.k {
        return Err(Error::InvalidArgument(format!("φ({k}) undefined for K = {}", law.k)));
    }
    let w = law.history_weights(k + 1);
    Ok(w.iter().zip(&law.m_prob[k]).map(|(a, b)| a * b).sum())
}

pub fn exact_table(law: &DiscreteLaw) -> Result<FunctionalTable> {
    let psi = (0..=law.k)
        .map(|j| Ok([exact_psi(law, j, 0)?, exact_psi(law, j, 1)?]))
        .collect::<Result<_>>()?;
    let phi = (0..law.k).map(|j| exact_phi(law, j)).collect::<Result<_>>()?;
    Ok(FunctionalTable { psi, phi })
}

/// One complete trajectory under an intervention regime.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub prob: f64,
    /// `(A, M_1, .., M_K)`; unreached mediators are 0.
    pub indicators: Vec<u8>,
    /// Expected target given the trajectory.
    pub value: f64,
}

/// Forward enumeration of every trajectory under the regime defining `f`:
/// `ψ_{k,m}` sets `A = M_1 = .. = M_{k-1} = 1` and `M_k = m` and lets later
/// mediators follow their natural law; `φ_k` sets the first `k + 1`
/// indicators to 1 and reads `M_{k+1}`.
pub fn enumerate_regime(law: &DiscreteLaw, f: Functional) -> Result<Vec<Trajectory>> {
    law.validate(0.0)?;
    let k = law.k;
    let (forced_upto, last) = match f {
        Functional::Psi { k: d, m } if d <= k && m <= 1 => (d, Some(m)),
        Functional::Phi { k: d } if d < k => (d + 1, None),
        _ => return Err(Error::InvalidArgument(format!("{f:?} undefined for K = {k}"))),
    };
    let forced = |l: usize| -> Option<u8> {
        match last {
            Some(_) if l < forced_upto => Some(1),
            Some(m) if l == forced_upto => Some(m),
            None if l < forced_upto => Some(1),
            _ => None,
        }
    };
    let mut out = Vec::new();
    // (history index, level l to decide next, indicators so far, prob)
    for x in 0..law.x_support.len() {
        let mut stack: Vec<(usize, Vec<u8>, f64)> = Vec::new();
        let pa = law.a_prob[x];
        match forced(0) {
            Some(a) => stack.push((x, vec![a], law.x_prob[x])),
            None => {
                stack.push((x, vec![1], law.x_prob[x] * pa));
                stack.push((x, vec![0], law.x_prob[x] * (1.0 - pa)));
            }
        }
        while let Some((h, ind, p)) = stack.pop() {
            let l = ind.len() - 1;
            let stopped = ind[l] == 0;
            if let (None, true) = (last, l == forced_upto) {
                let mut full = ind.clone();
                full.resize(k + 1, 0);
                out.push(Trajectory { prob: p, indicators: full, value: f64::from(ind[l]) });
                continue;
            }
            if stopped || l == k {
                let mut full = ind.clone();
                full.resize(k + 1, 0);
                let level = if stopped { l } else { k + 1 };
                out.push(Trajectory { prob: p, indicators: full, value: law.y_mean[level][h] });
                continue;
            }
            // Draw Z_{l+1}, then M_{l+1}.
            let c = law.z_support[l].len();
            for (v, q) in law.z_prob[l][h].iter().enumerate() {
                let g = h * c + v;
                let pm = law.m_prob[l][g];
                let mut branch = |mv: u8, pr: f64| {
                    let mut i2 = ind.clone();
                    i2.push(mv);
                    stack.push((g, i2, pr));
                };
                match forced(l + 1) {
                    Some(mv) => branch(mv, p * q),
                    None => {
                        branch(1, p * q * pm);
                        branch(0, p * q * (1.0 - pm));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Regime mean by forward enumeration (independent of [`exact_psi`]).
pub fn enumerate_value(law: &DiscreteLaw, f: Functional) -> Result<f64> {
    Ok(enumerate_regime(law, f)?.iter().map(|t| t.prob * t.value).sum())
}

/// Monte Carlo truth with a standard error per component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueComponents {
    pub components: ComponentSet,
    pub paths: PathEffects,
    /// Monte Carlo standard errors in [`crate::estimate::Components`] layout,
    /// absent for exact truths.
    pub mc_se: Option<crate::estimate::Components<f64>>,
}

/// Exact truths for a discrete law.
pub fn true_components_discrete(law: &DiscreteLaw) -> Result<TrueComponents> {
    let t = exact_table(law)?;
    Ok(TrueComponents {
        components: t.components(),
        paths: t.paths(),
        mc_se: None,
    })
}

/// Monte Carlo truths from per-unit counterfactual values: column `(k, m)`
/// of `psi` holds draws of `E[Y(1̄_k, m) | unit]` and `phi[k]` draws of
/// `M_{k+1}(1̄_{k+1})`. Standard errors reuse the signal composition.
pub fn true_components_from_draws(k: usize, psi: &[[Vec<f64>; 2]], phi: &[Vec<f64>]) -> Result<TrueComponents> {
    use crate::eif::{compose_prop1_signals, point_estimates, Column, SignalMatrix};
    if psi.len() != k + 1 || phi.len() != k {
        return Err(Error::InvalidArgument("draw tables do not match K".into()));
    }
    let n = psi[0][0].len();
    let mut s = SignalMatrix::new(k, vec![1.0; n]);
    for (j, pair) in psi.iter().enumerate() {
        s.insert(Column::Psi(j, 0), pair[0].clone());
        s.insert(Column::Psi(j, 1), pair[1].clone());
    }
    for (j, v) in phi.iter().enumerate() {
        s.insert(Column::Phi(j), v.clone());
    }
    let est = point_estimates(&s);
    let full = compose_prop1_signals(&s, &est);
    let se = |c: Column| full.se(c);
    let mc_se = crate::estimate::Components {
        tau: (0..=k).map(|j| se(Column::Tau(j))).collect(),
        delta: (0..=k).map(|j| se(Column::Delta(j))).collect(),
        pi: (1..=k).map(|j| se(Column::Pi(j))).collect(),
        eta: (1..=k).map(|j| se(Column::Eta(j))).collect(),
        theta: (0..=k).map(|j| se(Column::Theta(j))).collect(),
    };
    Ok(TrueComponents {
        paths: compose_paths(&est),
        components: est,
        mc_se: Some(mc_se),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_mediator_law() -> DiscreteLaw {
        // One binary X, no Z, K = 1.
        DiscreteLaw {
            k: 1,
            x_support: vec![vec![0.0], vec![1.0]],
            x_prob: vec![0.4, 0.6],
            z_support: vec![vec![vec![]]],
            a_prob: vec![0.3, 0.7],
            z_prob: vec![vec![vec![1.0], vec![1.0]]],
            m_prob: vec![vec![0.2, 0.5]],
            y_mean: vec![vec![1.0, 2.0], vec![3.0, 5.0], vec![4.0, 9.0]],
        }
    }

    #[test]
    fn hand_computed_single_mediator() {
        let law = one_mediator_law();
        let t = exact_table(&law).unwrap();
        // E[Y(0)] = .4·1 + .6·2.
        assert!((t.psi[0][0] - 1.6).abs() < 1e-15);
        // E[Y(1)] = .4(.8·3 + .2·4) + .6(.5·5 + .5·9).
        assert!((t.psi[0][1] - (0.4 * 3.2 + 0.6 * 7.0)).abs() < 1e-12);
        assert!((t.psi[1][0] - (0.4 * 3.0 + 0.6 * 5.0)).abs() < 1e-12);
        assert!((t.psi[1][1] - (0.4 * 4.0 + 0.6 * 9.0)).abs() < 1e-12);
        assert!((t.phi[0] - (0.4 * 0.2 + 0.6 * 0.5)).abs() < 1e-12);
    }

    #[test]
    fn enumeration_matches_recursion() {
        for seed in 0..5 {
            let law = DiscreteLaw::random(3, 2, &[2, 0, 3], seed).unwrap();
            let t = exact_table(&law).unwrap();
            for f in Functional::all(3) {
                let e = enumerate_value(&law, f).unwrap();
                assert!((e - t.get(f)).abs() < 1e-12, "{f:?}: {e} vs {}", t.get(f));
            }
        }
    }

    #[test]
    fn trajectories_are_monotone_and_sum_to_one() {
        let law = DiscreteLaw::random(2, 3, &[2, 2], 9).unwrap();
        for f in Functional::all(2) {
            let tr = enumerate_regime(&law, f).unwrap();
            let total: f64 = tr.iter().map(|t| t.prob).sum();
            assert!((total - 1.0).abs() < 1e-12);
            for t in &tr {
                let first_zero = t.indicators.iter().position(|&v| v == 0).unwrap_or(t.indicators.len());
                assert!(t.indicators[first_zero..].iter().all(|&v| v == 0));
            }
        }
    }

    #[test]
    fn population_weights_sum_to_one_and_are_monotone() {
        let law = DiscreteLaw::random(2, 2, &[3, 1], 4).unwrap();
        let d = law.population_dataset().unwrap();
        assert!((d.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(d.validate().is_empty());
    }

    #[test]
    fn validation_flags_positivity_and_size() {
        let mut law = one_mediator_law();
        law.a_prob[0] = 0.0;
        assert!(matches!(law.validate(1e-3), Err(Error::Positivity(_))));
        let mut law = one_mediator_law();
        law.x_prob = vec![1.0, 0.0];
        assert!(matches!(law.validate(0.0), Err(Error::Positivity(_))));
        let big = DiscreteLaw::random(1, 1, &[1], 0).unwrap();
        let mut big = big;
        big.x_support = vec![vec![0.0]; 6_000_000];
        big.x_prob = vec![1.0 / 6e6; 6_000_000];
        assert!(matches!(big.validate(0.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn zero_mediators() {
        let law = DiscreteLaw::random(0, 3, &[], 2).unwrap();
        let t = exact_table(&law).unwrap();
        let c = t.components();
        assert_eq!(c.tau.len(), 1);
        assert_eq!(t.paths().theta, vec![c.tau[0]]);
    }
}
