//! Supervised learners used as nuisance estimators.
//!
//! Every learner minimises a weighted empirical risk and returns a
//! [`FittedModel`] whose predictions are in the outcome scale. With the logit
//! link, predictions are probabilities clipped to `[EPS_P, 1 - EPS_P]`.

mod forest;
mod lasso;
mod linear;
mod stack;

use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

pub use forest::Forest;
pub use lasso::{lasso_trace, LassoFit};
pub use linear::{ols, OlsFit};
pub use stack::nnls;

/// Clipping floor for probability predictions.
pub const EPS_P: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    #[default]
    Identity,
    Logit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    #[default]
    Linear,
    /// Adds squares and pairwise products of the inputs.
    Quadratic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LassoParams {
    /// Fixed penalty; `None` selects one from the path by cross-validation.
    pub penalty: Option<f64>,
    pub n_lambda: usize,
    pub lambda_ratio: f64,
    pub cv_folds: usize,
    pub tol: f64,
    pub max_sweeps: usize,
    pub basis: Basis,
}

impl Default for LassoParams {
    fn default() -> Self {
        LassoParams {
            penalty: None,
            n_lambda: 20,
            lambda_ratio: 1e-3,
            cv_folds: 3,
            tol: 1e-9,
            max_sweeps: 10_000,
            basis: Basis::Linear,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub min_leaf: usize,
    /// Features tried per split; `None` means `ceil(sqrt(p))`.
    pub mtry: Option<usize>,
    pub max_depth: Option<usize>,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 200,
            min_leaf: 5,
            mtry: None,
            max_depth: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackParams {
    pub candidates: Vec<LearnerSpec>,
    #[serde(default = "default_stack_folds")]
    pub folds: usize,
}

fn default_stack_folds() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerKind {
    Ols,
    Logistic,
    Lasso(LassoParams),
    RandomForest(ForestParams),
    SuperLearner(StackParams),
    /// Weighted cell means over distinct feature vectors.
    Saturated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerSpec {
    #[serde(flatten)]
    pub kind: LearnerKind,
    #[serde(default)]
    pub link: Link,
}

impl LearnerSpec {
    pub fn ols() -> Self {
        LearnerSpec { kind: LearnerKind::Ols, link: Link::Identity }
    }

    pub fn logistic() -> Self {
        LearnerSpec { kind: LearnerKind::Logistic, link: Link::Logit }
    }

    pub fn lasso(params: LassoParams) -> Self {
        LearnerSpec { kind: LearnerKind::Lasso(params), link: Link::Identity }
    }

    pub fn random_forest(params: ForestParams) -> Self {
        LearnerSpec { kind: LearnerKind::RandomForest(params), link: Link::Identity }
    }

    pub fn super_learner(candidates: Vec<LearnerSpec>, folds: usize) -> Self {
        LearnerSpec {
            kind: LearnerKind::SuperLearner(StackParams { candidates, folds }),
            link: Link::Identity,
        }
    }

    pub fn saturated() -> Self {
        LearnerSpec { kind: LearnerKind::Saturated, link: Link::Identity }
    }

    /// Default nuisance learner: a stack of a cross-validated lasso and a
    /// random forest.
    pub fn default_stack() -> Self {
        Self::super_learner(
            vec![
                Self::lasso(LassoParams::default()),
                Self::random_forest(ForestParams::default()),
            ],
            5,
        )
    }

    /// The same recipe with `link`, applied recursively to stack members.
    /// `ols` and `logistic` swap into each other.
    pub fn with_link(&self, link: Link) -> Self {
        let kind = match (&self.kind, link) {
            (LearnerKind::Ols, Link::Logit) => LearnerKind::Logistic,
            (LearnerKind::Logistic, Link::Identity) => LearnerKind::Ols,
            (LearnerKind::SuperLearner(p), _) => LearnerKind::SuperLearner(StackParams {
                candidates: p.candidates.iter().map(|c| c.with_link(link)).collect(),
                folds: p.folds,
            }),
            (k, _) => k.clone(),
        };
        LearnerSpec { kind, link }
    }

    pub fn check(&self) -> Result<()> {
        match &self.kind {
            LearnerKind::Lasso(p) => {
                if p.penalty.is_some_and(|l| !(l >= 0.0)) {
                    return Err(Error::InvalidArgument("lasso penalty must be >= 0".into()));
                }
                if p.n_lambda == 0 || p.cv_folds < 2 {
                    return Err(Error::InvalidArgument("lasso needs n_lambda >= 1 and cv_folds >= 2".into()));
                }
            }
            LearnerKind::RandomForest(p) => {
                if p.n_trees == 0 || p.min_leaf == 0 {
                    return Err(Error::InvalidArgument("forest needs n_trees >= 1 and min_leaf >= 1".into()));
                }
            }
            LearnerKind::SuperLearner(p) => {
                if p.candidates.len() < 2 {
                    return Err(Error::InvalidArgument("super learner needs at least 2 candidates".into()));
                }
                if p.folds < 2 {
                    return Err(Error::InvalidArgument("super learner needs at least 2 folds".into()));
                }
                for c in &p.candidates {
                    c.check()?;
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn is_logit(&self) -> bool {
        self.link == Link::Logit || matches!(self.kind, LearnerKind::Logistic)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// A ridge jitter was needed to solve a rank-deficient system.
    pub ridge_jitter: bool,
    /// Iterative solvers reached their tolerance.
    pub converged: bool,
    pub iterations: usize,
    /// Stacking weights, for super learners.
    pub stack_weights: Vec<f64>,
    /// Out-of-fold risk per stack candidate (infinite when it failed).
    pub stack_risks: Vec<f64>,
    pub penalty: Option<f64>,
}

#[derive(Debug, Clone)]
enum Model {
    Constant(f64),
    Linear {
        intercept: f64,
        coef: Vec<f64>,
        basis: Basis,
    },
    Forest(Forest),
    Stack {
        weights: Vec<f64>,
        members: Vec<Option<FittedModel>>,
    },
    Cells(linear::CellMeans),
}

#[derive(Debug, Clone)]
pub struct FittedModel {
    model: Model,
    link: Link,
    pub diagnostics: FitDiagnostics,
}

impl FittedModel {
    pub fn link(&self) -> Link {
        self.link
    }

    /// Linear coefficients `(intercept, slopes)` on the expanded basis, if any.
    pub fn linear_coefficients(&self) -> Option<(f64, &[f64])> {
        match &self.model {
            Model::Linear { intercept, coef, .. } => Some((*intercept, coef)),
            Model::Constant(c) if self.link == Link::Identity => Some((*c, &[])),
            _ => None,
        }
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Vec<f64> {
        let raw = match &self.model {
            Model::Constant(c) => {
                let v = match self.link {
                    Link::Identity => *c,
                    Link::Logit => stats::expit(*c),
                };
                vec![v; x.nrows()]
            }
            Model::Linear { intercept, coef, basis } => {
                let xe = expand(x, *basis);
                let mut out = Vec::with_capacity(xe.nrows());
                for row in xe.rows() {
                    let eta = intercept + row.iter().zip(coef).map(|(a, b)| a * b).sum::<f64>();
                    out.push(match self.link {
                        Link::Identity => eta,
                        Link::Logit => stats::expit(eta),
                    });
                }
                out
            }
            Model::Forest(f) => f.predict(x),
            Model::Stack { weights, members } => {
                let mut out = vec![0.0; x.nrows()];
                for (w, m) in weights.iter().zip(members) {
                    if let (true, Some(m)) = (*w > 0.0, m) {
                        for (o, p) in out.iter_mut().zip(m.predict(x)) {
                            *o += w * p;
                        }
                    }
                }
                out
            }
            Model::Cells(c) => c.predict(x),
        };
        match self.link {
            Link::Identity => raw,
            Link::Logit => raw.into_iter().map(clip_prob).collect(),
        }
    }
}

pub fn clip_prob(p: f64) -> f64 {
    p.clamp(EPS_P, 1.0 - EPS_P)
}

/// Fits `spec` by weighted empirical risk minimisation. `seed` drives all
/// randomness (bootstrap rows, feature draws, internal folds).
pub fn fit(
    spec: &LearnerSpec,
    x: ArrayView2<f64>,
    y: &[f64],
    w: &[f64],
    seed: u64,
) -> Result<FittedModel> {
    spec.check()?;
    let n = x.nrows();
    if n == 0 || y.len() != n || w.len() != n {
        return Err(Error::InvalidArgument(format!(
            "fit needs matching non-empty inputs (rows={n}, target={}, weights={})",
            y.len(),
            w.len()
        )));
    }
    if x.iter().chain(y).chain(w).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite value in learner input".into()));
    }
    let sw: f64 = w.iter().sum();
    if !(sw > 0.0) {
        return Err(Error::InvalidArgument("weights sum to zero".into()));
    }
    let link = if spec.is_logit() { Link::Logit } else { Link::Identity };
    if link == Link::Logit && y.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::InvalidArgument("logit-link target outside [0, 1]".into()));
    }
    let mut diagnostics = FitDiagnostics { converged: true, ..Default::default() };
    let model = match &spec.kind {
        LearnerKind::Ols | LearnerKind::Logistic => {
            if link == Link::Logit {
                let f = linear::logistic(x, y, w);
                diagnostics.converged = f.converged;
                diagnostics.iterations = f.iterations;
                diagnostics.ridge_jitter = f.ridge_jitter;
                Model::Linear { intercept: f.coef[0], coef: f.coef[1..].to_vec(), basis: Basis::Linear }
            } else {
                let f = linear::ols(x, y, w);
                diagnostics.ridge_jitter = f.ridge_jitter;
                Model::Linear { intercept: f.coef[0], coef: f.coef[1..].to_vec(), basis: Basis::Linear }
            }
        }
        LearnerKind::Lasso(p) => {
            let xe = expand(x, p.basis);
            let f = lasso::fit_lasso(xe.view(), y, w, p, link, seed)?;
            diagnostics.converged = f.converged;
            diagnostics.iterations = f.sweeps;
            diagnostics.penalty = Some(f.lambda);
            Model::Linear { intercept: f.intercept, coef: f.coef, basis: p.basis }
        }
        LearnerKind::RandomForest(p) => Model::Forest(Forest::fit(x, y, w, p, seed)),
        LearnerKind::SuperLearner(p) => {
            let (weights, members, risks) = stack::fit_stack(&p.candidates, p.folds, x, y, w, link, seed)?;
            diagnostics.stack_weights = weights.clone();
            diagnostics.stack_risks = risks;
            Model::Stack { weights, members }
        }
        LearnerKind::Saturated => Model::Cells(linear::CellMeans::fit(x, y, w)),
    };
    Ok(FittedModel { model, link, diagnostics })
}

/// Constant model predicting `value` in the outcome scale.
pub fn constant(value: f64, link: Link) -> FittedModel {
    let stored = match link {
        Link::Identity => value,
        Link::Logit => stats::logit(clip_prob(value)),
    };
    FittedModel {
        model: Model::Constant(stored),
        link,
        diagnostics: FitDiagnostics { converged: true, ..Default::default() },
    }
}

pub(crate) fn expand(x: ArrayView2<f64>, basis: Basis) -> ndarray::Array2<f64> {
    match basis {
        Basis::Linear => x.to_owned(),
        Basis::Quadratic => {
            let p = x.ncols();
            let width = p + p * (p + 1) / 2;
            let mut out = ndarray::Array2::zeros((x.nrows(), width));
            for (r, row) in x.rows().into_iter().enumerate() {
                let mut c = 0;
                for j in 0..p {
                    out[[r, c]] = row[j];
                    c += 1;
                }
                for j in 0..p {
                    for l in j..p {
                        out[[r, c]] = row[j] * row[l];
                        c += 1;
                    }
                }
            }
            out
        }
    }
}

/// Fold label per unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub fold: Vec<usize>,
    pub j: usize,
    pub seed: u64,
}

impl FoldAssignment {
    /// Indices in fold `f`, ascending.
    pub fn test(&self, f: usize) -> Vec<usize> {
        (0..self.fold.len()).filter(|&i| self.fold[i] == f).collect()
    }

    /// Indices outside fold `f`, ascending.
    pub fn train(&self, f: usize) -> Vec<usize> {
        (0..self.fold.len()).filter(|&i| self.fold[i] != f).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.j];
        for &f in &self.fold {
            s[f] += 1;
        }
        s
    }
}

/// Random partition of `0..n` into `j` folds whose sizes differ by at most 1.
pub fn kfold_split(n: usize, j: usize, seed: u64) -> Result<FoldAssignment> {
    if j < 2 || j > n {
        return Err(Error::InvalidArgument(format!("need 2 <= J <= n, got J={j}, n={n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stats::rng(seed));
    let mut fold = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % j;
    }
    Ok(FoldAssignment { fold, j, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    #[test]
    fn kfold_examples() {
        let f = kfold_split(10, 5, 1).unwrap();
        assert_eq!(f.sizes(), vec![2; 5]);
        let f = kfold_split(7, 3, 1).unwrap();
        let mut s = f.sizes();
        s.sort();
        assert_eq!(s, vec![2, 2, 3]);
        assert_eq!(kfold_split(50, 4, 9).unwrap(), kfold_split(50, 4, 9).unwrap());
        assert!(kfold_split(5, 1, 0).is_err());
        assert!(kfold_split(5, 6, 0).is_err());
    }

    proptest! {
        #[test]
        fn kfold_partitions(n in 2usize..300, j in 2usize..12, seed in any::<u64>()) {
            prop_assume!(j <= n);
            let f = kfold_split(n, j, seed).unwrap();
            let sizes = f.sizes();
            prop_assert_eq!(sizes.iter().sum::<usize>(), n);
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            let mut all: Vec<usize> = (0..j).flat_map(|g| f.test(g)).collect();
            all.sort();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn spec_round_trips_through_json() {
        let spec = LearnerSpec::default_stack().with_link(Link::Logit);
        let s = serde_json::to_string(&spec).unwrap();
        let back: LearnerSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(spec, back);
        let parsed: LearnerSpec =
            serde_json::from_str(r#"{"kind":"random_forest","n_trees":10}"#).unwrap();
        assert_eq!(
            parsed.kind,
            LearnerKind::RandomForest(ForestParams { n_trees: 10, ..Default::default() })
        );
    }

    #[test]
    fn super_learner_needs_two_candidates() {
        let spec = LearnerSpec::super_learner(vec![LearnerSpec::ols()], 5);
        let x = Array2::zeros((10, 1));
        assert!(fit(&spec, x.view(), &[0.0; 10], &[1.0; 10], 0).is_err());
    }

    #[test]
    fn negative_penalty_rejected() {
        let spec = LearnerSpec::lasso(LassoParams { penalty: Some(-1.0), ..Default::default() });
        assert!(spec.check().is_err());
    }

    #[test]
    fn logistic_coin_is_half() {
        let x = Array2::ones((100, 1));
        let y: Vec<f64> = (0..100).map(|i| (i % 2) as f64).collect();
        let m = fit(&LearnerSpec::logistic(), x.view(), &y, &[1.0; 100], 0).unwrap();
        for p in m.predict(x.view()) {
            assert!((p - 0.5).abs() < 1e-6);
        }
    }

    #[test]
    fn quadratic_expansion_layout() {
        let e = expand(array![[2.0, 3.0]].view(), Basis::Quadratic);
        assert_eq!(e, array![[2.0, 3.0, 4.0, 6.0, 9.0]]);
    }

    #[test]
    fn logit_predictions_clipped() {
        let x = array![[0.0], [1.0], [2.0], [3.0]];
        let y = [0.0, 0.0, 1.0, 1.0];
        let m = fit(&LearnerSpec::logistic(), x.view(), &y, &[1.0; 4], 0).unwrap();
        for p in m.predict(x.view()) {
            assert!((EPS_P..=1.0 - EPS_P).contains(&p));
        }
    }
}
