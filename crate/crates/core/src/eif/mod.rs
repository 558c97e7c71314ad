//! Cross-fitted influence-function estimator.
//!
//! Each `ψ_{k,m}` and `φ_k` is estimated by a sequentially doubly robust
//! signal built from nested outcome regressions and treatment/mediator
//! propensities. `τ`, `Δ`, `π` signals are differences of these; `η` and `θ`
//! signals come from [`compose_prop1_signals`].

mod signals;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use signals::{censor_weights, compose_prop1_signals, point_estimates, signal_terms, Column, SignalMatrix, SignalTerms};

use crate::data::SequentialDataset;
use crate::decomposition::compose_paths;
use crate::error::{Error, Result};
use crate::estimate::{Components, DecompositionEstimate, Diagnostics, Method};
use crate::learners::{self, FittedModel, LearnerSpec, Link};
use crate::stats;

/// A sequential target functional.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Functional {
    /// `E[Y(1̄_k, m)]`.
    Psi { k: usize, m: u8 },
    /// `E[M_{k+1}(1̄_{k+1})]`.
    Phi { k: usize },
}

impl Functional {
    pub fn column(self) -> Column {
        match self {
            Functional::Psi { k, m } => Column::Psi(k, m),
            Functional::Phi { k } => Column::Phi(k),
        }
    }

    /// Level of the top regression.
    pub fn depth(self) -> usize {
        match self {
            Functional::Psi { k, .. } | Functional::Phi { k } => k,
        }
    }

    /// Every functional a `k`-mediator decomposition needs.
    pub fn all(k: usize) -> Vec<Functional> {
        let mut v = Vec::new();
        for j in 0..=k {
            v.push(Functional::Psi { k: j, m: 0 });
            v.push(Functional::Psi { k: j, m: 1 });
        }
        v.extend((0..k).map(|j| Functional::Phi { k: j }));
        v
    }
}

/// Nuisance models fitted on one training sample.
#[derive(Debug, Clone)]
pub struct NuisanceStack {
    /// `propensity[l]` models `P(M_l = 1 | X, Z̄_l, 1̄_l)`, with `M_0 = A`.
    pub propensity: Vec<FittedModel>,
    /// Nested regressions per target, level `0..=depth`.
    pub chains: BTreeMap<Functional, Vec<FittedModel>>,
    /// Range of each chain's top-level training target. Every regression in
    /// the chain estimates a conditional mean of that target, so predictions
    /// are clamped to it.
    pub bounds: BTreeMap<Functional, (f64, f64)>,
    pub ridge_jitter: bool,
}

/// Rows of `rows` whose level is at least `j`.
fn reaching(data: &SequentialDataset, rows: &[usize], j: usize) -> Vec<usize> {
    rows.iter().copied().filter(|&i| data.level(i) >= j).collect()
}

fn history(j: usize) -> String {
    if j == 0 {
        "all units".into()
    } else {
        format!("A = 1, M_1..M_{} = 1", j - 1)
    }
}

fn fit_on(
    spec: &LearnerSpec,
    data: &SequentialDataset,
    j: usize,
    rows: &[usize],
    target: &[f64],
    seed: u64,
) -> Result<FittedModel> {
    let x = data.features(j, rows);
    let w: Vec<f64> = rows.iter().map(|&i| data.weights[i]).collect();
    learners::fit(spec, x.view(), target, &w, seed)
}

fn predict_on(model: &FittedModel, data: &SequentialDataset, j: usize, rows: &[usize]) -> Vec<f64> {
    if rows.is_empty() {
        return Vec::new();
    }
    model.predict(data.features(j, rows).view())
}

/// Fits propensities for levels `0..=K` and the nested regression chain of
/// every target on the `train` rows.
///
/// The top regression of `ψ_{k,m}` uses units with `1̄_k, M_k = m` and target
/// `Y`; that of `φ_k` uses units with `1̄_{k+1}` and target `M_{k+1}`. Lower
/// levels `j` regress the level-`j+1` predictions on `[X, Z̄_j]` among units
/// with `1̄_{j+1}`. `φ` chains use the logit link on fractional targets.
pub fn fit_nuisances(
    data: &SequentialDataset,
    targets: &[Functional],
    learner: &LearnerSpec,
    train: &[usize],
    seed: u64,
) -> Result<NuisanceStack> {
    let k_max = data.k();
    let ident = learner.with_link(Link::Identity);
    let logit = learner.with_link(Link::Logit);
    let mut propensity = Vec::with_capacity(k_max + 1);
    for l in 0..=k_max {
        let rows = reaching(data, train, l);
        if rows.is_empty() {
            return Err(Error::Positivity(format!("no training units with {}", history(l))));
        }
        let t: Vec<f64> = rows.iter().map(|&i| f64::from(data.indicator(l, i))).collect();
        propensity.push(fit_on(&logit, data, l, &rows, &t, stats::derive_seed(seed, &[1, l as u64]))?);
    }
    let chains: Vec<(Functional, Vec<FittedModel>, (f64, f64))> = targets
        .par_iter()
        .enumerate()
        .map(|(ti, &f)| {
            let s = |j: usize| stats::derive_seed(seed, &[2, ti as u64, j as u64]);
            let (spec, top_rows, top_target): (&LearnerSpec, Vec<usize>, Vec<f64>) = match f {
                Functional::Psi { k, m } => {
                    if k > k_max {
                        return Err(Error::InvalidArgument(format!("ψ level {k} exceeds K = {k_max}")));
                    }
                    let rows: Vec<usize> = reaching(data, train, k)
                        .into_iter()
                        .filter(|&i| data.indicator(k, i) == m)
                        .collect();
                    if rows.is_empty() {
                        let name = if k == 0 { "A".to_string() } else { format!("M_{k}") };
                        return Err(Error::Positivity(format!(
                            "no training units with {} and {name} = {m}",
                            history(k)
                        )));
                    }
                    let y = rows.iter().map(|&i| data.y[i]).collect();
                    (&ident, rows, y)
                }
                Functional::Phi { k } => {
                    if k >= k_max {
                        return Err(Error::InvalidArgument(format!("φ level {k} needs K > {k}")));
                    }
                    let rows = reaching(data, train, k + 1);
                    if rows.is_empty() {
                        return Err(Error::Positivity(format!("no training units with {}", history(k + 1))));
                    }
                    let t = rows.iter().map(|&i| f64::from(data.indicator(k + 1, i))).collect();
                    (&logit, rows, t)
                }
            };
            let depth = f.depth();
            let bounds = top_target
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            let mut chain = vec![fit_on(spec, data, depth, &top_rows, &top_target, s(depth))?];
            for j in (0..depth).rev() {
                let rows = reaching(data, train, j + 1);
                let t = clamp_all(predict_on(chain.last().expect("non-empty"), data, j + 1, &rows), bounds);
                chain.push(fit_on(spec, data, j, &rows, &t, s(j))?);
            }
            chain.reverse();
            Ok((f, chain, bounds))
        })
        .collect::<Result<_>>()?;
    let ridge_jitter = propensity
        .iter()
        .chain(chains.iter().flat_map(|(_, c, _)| c.iter()))
        .any(|m| m.diagnostics.ridge_jitter);
    Ok(NuisanceStack {
        propensity,
        bounds: chains.iter().map(|(f, _, b)| (*f, *b)).collect(),
        chains: chains.into_iter().map(|(f, c, _)| (f, c)).collect(),
        ridge_jitter,
    })
}

/// Nuisance values for one unit: propensities and chain predictions at the
/// levels the unit reached (NaN elsewhere).
fn unit_values(data: &SequentialDataset, stack: &NuisanceStack, f: Functional, i: usize) -> (Vec<f64>, Vec<f64>) {
    let level = data.level(i);
    let one = [i];
    let props = stack
        .propensity
        .iter()
        .enumerate()
        .map(|(l, m)| if level >= l { predict_on(m, data, l, &one)[0] } else { f64::NAN })
        .collect();
    let (lo, hi) = stack.bounds[&f];
    let chain = stack.chains[&f]
        .iter()
        .enumerate()
        .map(|(j, m)| if level >= j { predict_on(m, data, j, &one)[0].clamp(lo, hi) } else { f64::NAN })
        .collect();
    (props, chain)
}

fn clamp_all(mut v: Vec<f64>, (lo, hi): (f64, f64)) -> Vec<f64> {
    for x in &mut v {
        *x = x.clamp(lo, hi);
    }
    v
}

fn indicators(data: &SequentialDataset, i: usize) -> Vec<u8> {
    (0..=data.k()).map(|l| data.indicator(l, i)).collect()
}

/// Uncensored `ψ_{k,m}` signal for unit `i`.
pub fn psi_signal(data: &SequentialDataset, i: usize, stack: &NuisanceStack, k: usize, m: u8) -> f64 {
    let f = Functional::Psi { k, m };
    let (props, chain) = unit_values(data, stack, f, i);
    signal_terms(&indicators(data, i), data.y[i], &props, &chain, k, m).value()
}

/// Uncensored `φ_k` signal for unit `i`.
pub fn phi_signal(data: &SequentialDataset, i: usize, stack: &NuisanceStack, k: usize) -> f64 {
    let f = Functional::Phi { k };
    let (props, chain) = unit_values(data, stack, f, i);
    let ind = indicators(data, i);
    let outcome = if data.level(i) > k { f64::from(ind[k + 1]) } else { 0.0 };
    signal_terms(&ind, outcome, &props, &chain, k, 1).value()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EifConfig {
    /// Number of cross-fitting folds. `1` fits and evaluates on the full
    /// sample (no sample splitting).
    pub folds: usize,
    /// Lower/upper quantiles for censoring the inverse-probability factors.
    pub censor: Option<(f64, f64)>,
    pub learner: LearnerSpec,
    pub seed: u64,
}

impl Default for EifConfig {
    fn default() -> Self {
        EifConfig {
            folds: 5,
            censor: Some((0.01, 0.99)),
            learner: LearnerSpec::default_stack(),
            seed: 0,
        }
    }
}

impl EifConfig {
    pub fn check(&self) -> Result<()> {
        if self.folds == 0 {
            return Err(Error::InvalidArgument("folds must be at least 1".into()));
        }
        if let Some((lo, hi)) = self.censor {
            if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
                return Err(Error::InvalidArgument(format!("censoring quantiles ({lo}, {hi}) must satisfy 0 ≤ lo ≤ hi ≤ 1")));
            }
        }
        self.learner.check()
    }
}

struct FoldOutput {
    rows: Vec<usize>,
    signals: Vec<Vec<f64>>,
    censored: usize,
    positive: usize,
    min_prop: f64,
    ridge_jitter: bool,
}

fn evaluate_fold(
    data: &SequentialDataset,
    stack: &NuisanceStack,
    targets: &[Functional],
    rows: Vec<usize>,
    censor: Option<(f64, f64)>,
) -> FoldOutput {
    let k_max = data.k();
    let n = rows.len();
    let levels: Vec<usize> = rows.iter().map(|&i| data.level(i)).collect();
    // Prediction of `model` (fit at level j) on the rows that reached j.
    let at_level = |model: &FittedModel, j: usize| -> Vec<f64> {
        let idx: Vec<usize> = (0..n).filter(|&r| levels[r] >= j).collect();
        let sel: Vec<usize> = idx.iter().map(|&r| rows[r]).collect();
        let mut out = vec![f64::NAN; n];
        for (r, p) in idx.into_iter().zip(predict_on(model, data, j, &sel)) {
            out[r] = p;
        }
        out
    };
    let props: Vec<Vec<f64>> = stack.propensity.iter().enumerate().map(|(l, m)| at_level(m, l)).collect();
    let mut min_prop = f64::INFINITY;
    for p in props.iter().flatten().filter(|p| p.is_finite()) {
        min_prop = min_prop.min(p.min(1.0 - p));
    }
    let ind: Vec<Vec<u8>> = rows
        .iter()
        .map(|&i| (0..=k_max).map(|l| data.indicator(l, i)).collect())
        .collect();
    let mut censored = 0;
    let mut positive = 0;
    let mut signals = Vec::with_capacity(targets.len());
    for &f in targets {
        let chain_models = &stack.chains[&f];
        let chain: Vec<Vec<f64>> = chain_models.iter().enumerate().map(|(j, m)| at_level(m, j)).collect();
        let (k, m) = match f {
            Functional::Psi { k, m } => (k, m),
            Functional::Phi { k } => (k, 1),
        };
        let terms: Vec<SignalTerms> = (0..n)
            .map(|r| {
                let p: Vec<f64> = props.iter().map(|v| v[r]).collect();
                let c: Vec<f64> = chain.iter().map(|v| v[r]).collect();
                let outcome = match f {
                    Functional::Psi { .. } => data.y[rows[r]],
                    Functional::Phi { k } => {
                        if levels[r] > k {
                            f64::from(ind[r][k + 1])
                        } else {
                            0.0
                        }
                    }
                };
                signal_terms(&ind[r], outcome, &p, &c, k, m)
            })
            .collect();
        let n_terms = k + 1;
        let mut factors: Vec<Vec<f64>> = (0..n_terms).map(|t| terms.iter().map(|s| s.factors[t]).collect()).collect();
        for col in factors.iter_mut() {
            positive += col.iter().filter(|v| **v > 0.0).count();
            if let Some((lo, hi)) = censor {
                let (c, changed) = censor_weights(col, lo, hi);
                *col = c;
                censored += changed;
            }
        }
        let values = (0..n)
            .map(|r| {
                let mut s = terms[r].clone();
                for (t, col) in factors.iter().enumerate() {
                    s.factors[t] = col[r];
                }
                s.value()
            })
            .collect();
        signals.push(values);
    }
    FoldOutput {
        rows,
        signals,
        censored,
        positive,
        min_prop,
        ridge_jitter: stack.ridge_jitter,
    }
}

/// Cross-fitted base signals (`ψ` and `φ` columns) plus diagnostics.
pub fn crossfit_signals(data: &SequentialDataset, cfg: &EifConfig) -> Result<(SignalMatrix, Diagnostics)> {
    cfg.check()?;
    data.validate().into_result()?;
    let n = data.n();
    let k = data.k();
    let targets = Functional::all(k);
    let folds: Vec<(Vec<usize>, Vec<usize>)> = if cfg.folds == 1 {
        vec![((0..n).collect(), (0..n).collect())]
    } else {
        let assign = learners::kfold_split(n, cfg.folds, stats::derive_seed(cfg.seed, &[0xC0FF]))?;
        (0..assign.j).map(|f| (assign.train(f), assign.test(f))).collect()
    };
    let outputs: Vec<FoldOutput> = folds
        .into_par_iter()
        .enumerate()
        .map(|(f, (train, test))| {
            let stack = fit_nuisances(data, &targets, &cfg.learner, &train, stats::derive_seed(cfg.seed, &[0xF0, f as u64]))
                .map_err(|e| match e {
                    Error::Positivity(msg) => Error::Positivity(format!("fold {f}: {msg}")),
                    other => other,
                })?;
            Ok(evaluate_fold(data, &stack, &targets, test, cfg.censor))
        })
        .collect::<Result<_>>()?;
    let mut cols = vec![vec![f64::NAN; n]; targets.len()];
    let (mut censored, mut positive, mut min_prop, mut jitter) = (0, 0, f64::INFINITY, false);
    for o in &outputs {
        for (t, values) in o.signals.iter().enumerate() {
            for (&i, v) in o.rows.iter().zip(values) {
                cols[t][i] = *v;
            }
        }
        censored += o.censored;
        positive += o.positive;
        min_prop = min_prop.min(o.min_prop);
        jitter |= o.ridge_jitter;
    }
    let mut s = SignalMatrix::new(k, data.weights.clone());
    for (f, c) in targets.iter().zip(cols) {
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::Learner(format!("non-finite signal for {f:?}")));
        }
        s.insert(f.column(), c);
    }
    let diagnostics = Diagnostics {
        censored_fraction: Some(if positive > 0 { censored as f64 / positive as f64 } else { 0.0 }),
        min_propensity: Some(min_prop),
        folds: Some(cfg.folds),
        seed: cfg.seed,
        censor: cfg.censor.map(|(a, b)| [a, b]),
        censor_scope: cfg.censor.map(|_| "per_fold".to_string()),
        ridge_jitter: jitter,
        ..Default::default()
    };
    Ok((s, diagnostics))
}

/// Assembles a report from composed signals.
pub fn estimate_from_signals(s: &SignalMatrix, diagnostics: Diagnostics) -> (DecompositionEstimate, SignalMatrix) {
    let est = point_estimates(s);
    let full = compose_prop1_signals(s, &est);
    let paths = compose_paths(&est);
    let k = s.k;
    let components = Components::from_sets(&est, &paths);
    let col_se = |c: Column| full.se(c);
    let se = Components {
        tau: (0..=k).map(|j| col_se(Column::Tau(j))).collect(),
        delta: (0..=k).map(|j| col_se(Column::Delta(j))).collect(),
        pi: (1..=k).map(|j| col_se(Column::Pi(j))).collect(),
        eta: (1..=k).map(|j| col_se(Column::Eta(j))).collect(),
        theta: (0..=k).map(|j| col_se(Column::Theta(j))).collect(),
    };
    let flat_est = components.flat();
    let flat_se = se.flat();
    let ci: Vec<[f64; 2]> = flat_est
        .iter()
        .zip(&flat_se)
        .map(|(e, s)| [e - stats::Z_975 * s, e + stats::Z_975 * s])
        .collect();
    let report = DecompositionEstimate {
        method: Method::Dml,
        k,
        ate: est.ate(),
        components,
        se,
        ci95: Components::from_flat(k, &ci),
        diagnostics,
    };
    (report, full)
}

/// Largest `|mean(signal) − estimate|` over every reported component.
pub fn signal_mean_gap(est: &DecompositionEstimate, full: &SignalMatrix) -> f64 {
    let c = &est.components;
    let k = est.k;
    let pairs = (0..=k)
        .flat_map(|j| [(Column::Tau(j), c.tau[j]), (Column::Delta(j), c.delta[j]), (Column::Theta(j), c.theta[j])])
        .chain((1..=k).flat_map(|j| [(Column::Pi(j), c.pi[j - 1]), (Column::Eta(j), c.eta[j - 1])]));
    pairs.map(|(col, v)| (full.mean(col) - v).abs()).fold(0.0, f64::max)
}

/// Cross-fitted estimate of every component, with signal-based standard
/// errors and normal 95% intervals.
pub fn crossfit_estimate(data: &SequentialDataset, cfg: &EifConfig) -> Result<(DecompositionEstimate, SignalMatrix)> {
    let (s, d) = crossfit_signals(data, cfg)?;
    Ok(estimate_from_signals(&s, d))
}
