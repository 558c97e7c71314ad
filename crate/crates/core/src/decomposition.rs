//! Component algebra.
//!
//! For levels `k = 0..K`, `τ_k` is the gross effect of transition `k`
//! (`τ_0` is the ATE), `Δ_k` its direct part, `π_k` the counterfactual transit
//! probability and `η_k` the transit/effect covariance. They satisfy
//!
//! ```text
//! τ_{k-1} = Δ_{k-1} + π_k τ_k + η_k,     Δ_K = τ_K,
//! ```
//!
//! and the ATE splits into path effects
//! `θ_0 = Δ_0`, `θ_k = (Π_{j≤k} π_j) Δ_k + (Π_{j<k} π_j) η_k`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSet {
    /// `τ_0..τ_K`.
    pub tau: Vec<f64>,
    /// `Δ_0..Δ_K`, with `Δ_K = τ_K`.
    pub delta: Vec<f64>,
    /// `π_1..π_K`.
    pub pi: Vec<f64>,
    /// `η_1..η_K`.
    pub eta: Vec<f64>,
}

impl ComponentSet {
    /// Assembles a set with residual-constructed `η`. `delta` may have length
    /// `K` (then `Δ_K = τ_K` is appended) or `K + 1`.
    pub fn from_parts(tau: Vec<f64>, mut delta: Vec<f64>, pi: Vec<f64>) -> Result<Self> {
        if tau.is_empty() {
            return Err(Error::InvalidArgument("tau must have at least one entry".into()));
        }
        let k = tau.len() - 1;
        if delta.len() == k {
            delta.push(tau[k]);
        }
        let eta = residual_eta(&tau, &delta, &pi)?;
        Ok(ComponentSet { tau, delta, pi, eta })
    }

    /// Number of mediators.
    pub fn k(&self) -> usize {
        self.pi.len()
    }

    pub fn ate(&self) -> f64 {
        self.tau[0]
    }

    /// Flattened `(name, value)` pairs in report order.
    pub fn named_values(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        for (k, v) in self.tau.iter().enumerate() {
            out.push((format!("tau{k}"), *v));
        }
        for (k, v) in self.delta.iter().enumerate() {
            out.push((format!("delta{k}"), *v));
        }
        for (k, v) in self.pi.iter().enumerate() {
            out.push((format!("pi{}", k + 1), *v));
        }
        for (k, v) in self.eta.iter().enumerate() {
            out.push((format!("eta{}", k + 1), *v));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEffects {
    /// `θ_0..θ_K`; `θ_0` is the direct effect of treatment.
    pub theta: Vec<f64>,
    pub ate: f64,
}

/// `η_k = τ_{k-1} − Δ_{k-1} − π_k τ_k` for `k = 1..K`.
pub fn residual_eta(tau: &[f64], delta: &[f64], pi: &[f64]) -> Result<Vec<f64>> {
    let k = pi.len();
    if tau.len() != k + 1 || !(delta.len() == k || delta.len() == k + 1) {
        return Err(Error::InvalidArgument(format!(
            "lengths tau={}, delta={}, pi={} do not share a mediator count",
            tau.len(),
            delta.len(),
            pi.len()
        )));
    }
    Ok((1..=k)
        .map(|j| tau[j - 1] - delta[j - 1] - pi[j - 1] * tau[j])
        .collect())
}

/// `Π_{j=1}^{k} π_j`; the empty product is 1.
pub fn cumulative_transit(pi: &[f64], k: usize) -> f64 {
    pi[..k].iter().product()
}

pub fn compose_paths(c: &ComponentSet) -> PathEffects {
    let k = c.k();
    let mut theta = Vec::with_capacity(k + 1);
    theta.push(c.delta[0]);
    for j in 1..=k {
        theta.push(
            cumulative_transit(&c.pi, j) * c.delta[j] + cumulative_transit(&c.pi, j - 1) * c.eta[j - 1],
        );
    }
    PathEffects { theta, ate: c.tau[0] }
}

/// Single-mediator split from the five population functionals
/// `E[Y(1,1)]`, `E[Y(1,0)]`, `E[Y(0,0)]`, `E[M(1)]` and
/// `cov[M(1), Y(1,1) − Y(1,0)]`.
pub fn single_mediator_decompose(ey11: f64, ey10: f64, ey00: f64, em1: f64, cov: f64) -> PathEffects {
    let theta0 = ey10 - ey00;
    let theta1 = em1 * (ey11 - ey10) + cov;
    PathEffects {
        theta: vec![theta0, theta1],
        ate: theta0 + theta1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn panel_dml() -> ComponentSet {
        let delta = vec![0.462, 0.200, 0.463, 0.122];
        let pi = vec![0.427, 0.554, 0.315];
        let eta = vec![0.006, 0.005, -0.016];
        // τ from the recursion, backwards from τ_3 = Δ_3.
        let mut tau = vec![0.0; 4];
        tau[3] = delta[3];
        for k in (0..3).rev() {
            tau[k] = delta[k] + pi[k] * tau[k + 1] + eta[k];
        }
        ComponentSet { tau, delta, pi, eta }
    }

    #[test]
    fn panel_residual_eta() {
        let eta = residual_eta(
            &[0.670, 0.4739, 0.4854, 0.122],
            &[0.462, 0.200, 0.463, 0.122],
            &[0.427, 0.554, 0.315],
        )
        .unwrap();
        for (e, r) in eta.iter().zip([0.006, 0.005, -0.016]) {
            assert!((e - r).abs() < 0.001, "{e} vs {r}");
        }
    }

    #[test]
    fn panel_paths() {
        let p = compose_paths(&panel_dml());
        let expected = [0.462, 0.091_4, 0.111_661_354, 0.005_305_996];
        for (t, e) in p.theta.iter().zip(expected) {
            assert!((t - e).abs() < 1e-6, "{t} vs {e}");
        }
        let total: f64 = p.theta.iter().sum();
        assert!((total - p.ate).abs() < 1e-12);
        assert!((total - 0.67).abs() < 0.02);
        assert!((p.theta[0] / total - 0.69).abs() < 0.02);
    }

    #[test]
    fn zero_transit_kills_paths() {
        let c = ComponentSet::from_parts(vec![0.5, 0.0, 0.7], vec![0.5, 0.2], vec![0.0, 0.3]).unwrap();
        assert_eq!(c.eta[0], 0.0);
        let p = compose_paths(&c);
        assert_eq!(&p.theta[1..], &[0.0, 0.0]);
        assert_eq!(p.ate, c.delta[0]);
    }

    #[test]
    fn zero_covariance_construction() {
        let (t0, t1, p1) = (0.9, 0.4, 0.35);
        let eta = residual_eta(&[t0, t1], &[t0 - p1 * t1, t1], &[p1]).unwrap();
        assert!(eta[0].abs() < 1e-15);
    }

    #[test]
    fn single_mediator_examples() {
        let p = single_mediator_decompose(2.0, 2.0, 1.0, 0.4, 0.0);
        assert_eq!(p.theta[1], 0.0);
        let p = single_mediator_decompose(3.0, 2.0, 1.0, 1.0, 0.0);
        assert_eq!(p.theta[1], 1.0);
    }

    #[test]
    fn transit_examples() {
        assert!((cumulative_transit(&[0.427, 0.554], 2) - 0.236_558).abs() < 1e-9);
        assert_eq!(cumulative_transit(&[0.3, 0.2], 1), 0.3);
        assert_eq!(cumulative_transit(&[1.0, 1.0, 1.0], 3), 1.0);
    }

    #[test]
    fn length_mismatch_rejected() {
        assert!(residual_eta(&[1.0, 2.0], &[1.0, 2.0], &[0.1, 0.2]).is_err());
    }

    fn components(k: usize) -> impl Strategy<Value = ComponentSet> {
        (
            prop::collection::vec(-3.0f64..3.0, k + 1),
            prop::collection::vec(-3.0f64..3.0, k),
            prop::collection::vec(0.0f64..=1.0, k),
        )
            .prop_map(|(tau, delta, pi)| ComponentSet::from_parts(tau, delta, pi).unwrap())
    }

    proptest! {
        #[test]
        fn recursion_holds(c in (0usize..6).prop_flat_map(components)) {
            for k in 1..=c.k() {
                let rhs = c.delta[k - 1] + c.pi[k - 1] * c.tau[k] + c.eta[k - 1];
                prop_assert!((c.tau[k - 1] - rhs).abs() < 1e-12);
            }
            prop_assert_eq!(c.delta[c.k()], c.tau[c.k()]);
        }

        #[test]
        fn additivity(c in (0usize..6).prop_flat_map(components)) {
            let p = compose_paths(&c);
            let total: f64 = p.theta.iter().sum();
            prop_assert!((total - c.tau[0]).abs() < 1e-10);
        }

        #[test]
        fn single_mediator_equivalence(
            ey11 in -3.0f64..3.0, ey10 in -3.0f64..3.0, ey00 in -3.0f64..3.0,
            em1 in 0.0f64..=1.0, cov in -0.5f64..0.5,
        ) {
            let direct = single_mediator_decompose(ey11, ey10, ey00, em1, cov);
            let tau1 = ey11 - ey10;
            let tau0 = ey10 - ey00 + em1 * tau1 + cov;
            let c = ComponentSet::from_parts(vec![tau0, tau1], vec![ey10 - ey00], vec![em1]).unwrap();
            let composed = compose_paths(&c);
            for (a, b) in direct.theta.iter().zip(&composed.theta) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn transit_non_increasing(pi in prop::collection::vec(0.0f64..=1.0, 1..8)) {
            for k in 1..pi.len() {
                prop_assert!(cumulative_transit(&pi, k + 1) <= cumulative_transit(&pi, k));
            }
        }

        #[test]
        fn paths_linear_in_eta(c in (1usize..5).prop_flat_map(components), s in -2.0f64..2.0) {
            // θ_k is affine in η_k with slope Π_{j<k} π_j.
            let mut c2 = c.clone();
            c2.eta[0] += s;
            let d = compose_paths(&c2).theta[1] - compose_paths(&c).theta[1];
            prop_assert!((d - s).abs() < 1e-12);
        }
    }
}
