//! The report record shared by both estimators.

use serde::{Deserialize, Serialize};

use crate::decomposition::{ComponentSet, PathEffects};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Dml,
    Rwr,
}

/// One value (or interval, or standard error) per component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Components<T> {
    pub tau: Vec<T>,
    pub delta: Vec<T>,
    pub pi: Vec<T>,
    pub eta: Vec<T>,
    pub theta: Vec<T>,
}

impl<T: Copy> Components<T> {
    pub fn map<U>(&self, f: impl Fn(T) -> U) -> Components<U> {
        let m = |v: &Vec<T>| v.iter().map(|x| f(*x)).collect();
        Components {
            tau: m(&self.tau),
            delta: m(&self.delta),
            pi: m(&self.pi),
            eta: m(&self.eta),
            theta: m(&self.theta),
        }
    }

    /// Flattened `(name, value)` pairs: `tau0.., delta0.., pi1.., eta1.., theta0..`.
    pub fn named(&self) -> Vec<(String, T)> {
        let mut out = Vec::new();
        out.extend(self.tau.iter().enumerate().map(|(k, v)| (format!("tau{k}"), *v)));
        out.extend(self.delta.iter().enumerate().map(|(k, v)| (format!("delta{k}"), *v)));
        out.extend(self.pi.iter().enumerate().map(|(k, v)| (format!("pi{}", k + 1), *v)));
        out.extend(self.eta.iter().enumerate().map(|(k, v)| (format!("eta{}", k + 1), *v)));
        out.extend(self.theta.iter().enumerate().map(|(k, v)| (format!("theta{k}"), *v)));
        out
    }

    /// Inverse of [`Components::named`] given a component layout.
    pub fn from_flat(k: usize, flat: &[T]) -> Self {
        let mut it = flat.iter().copied();
        let mut take = |m: usize| (0..m).map(|_| it.next().expect("flat length")).collect();
        Components {
            tau: take(k + 1),
            delta: take(k + 1),
            pi: take(k),
            eta: take(k),
            theta: take(k + 1),
        }
    }

    pub fn flat(&self) -> Vec<T> {
        self.named().into_iter().map(|(_, v)| v).collect()
    }
}

impl Components<f64> {
    pub fn from_sets(c: &ComponentSet, p: &PathEffects) -> Self {
        Components {
            tau: c.tau.clone(),
            delta: c.delta.clone(),
            pi: c.pi.clone(),
            eta: c.eta.clone(),
            theta: p.theta.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub censored_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_propensity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub folds: Option<usize>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub censor: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub censor_scope: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bootstrap_reps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bootstrap_redraws: Option<usize>,
    pub ridge_jitter: bool,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionEstimate {
    pub method: Method,
    pub k: usize,
    pub components: Components<f64>,
    pub se: Components<f64>,
    pub ci95: Components<[f64; 2]>,
    pub ate: f64,
    pub diagnostics: Diagnostics,
}

impl DecompositionEstimate {
    pub fn component_set(&self) -> ComponentSet {
        ComponentSet {
            tau: self.components.tau.clone(),
            delta: self.components.delta.clone(),
            pi: self.components.pi.clone(),
            eta: self.components.eta.clone(),
        }
    }

    /// `|τ̂_0 − Σ_k θ̂_k|` (with `θ̂_0 = Δ̂_0`).
    pub fn additivity_gap(&self) -> f64 {
        let total: f64 = self.components.theta.iter().sum();
        (self.components.tau[0] - total).abs()
    }
}
