//! Data-generating processes and the Monte Carlo harness.

mod experiment;
mod systems;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use experiment::{run_experiment, Estimator, ExperimentConfig, FeatureMode, MetricsRow, MetricsTable, Replicate};
pub use systems::{nlsy_like, nlsy_schema, LinearSystem};

use crate::data::{ColumnSchema, SequentialDataset};
use crate::error::{Error, Result};
use crate::oracle::{true_components_from_draws, TrueComponents};
use crate::stats::{self, expit};

/// Uniform half-widths for drawing the structural coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrawRanges {
    pub x: f64,
    pub a: f64,
    pub z: f64,
    pub m: f64,
    pub y: f64,
}

impl Default for DrawRanges {
    fn default() -> Self {
        DrawRanges { x: 1.0, a: 0.5, z: 1.0, m: 1.0, y: 1.0 }
    }
}

/// Coefficients of the single-mediator structural model
///
/// ```text
/// L ~ N(0, I_4);  X_j ~ N(L β_Xj, 1)
/// A ~ Bern(expit((1, X) β_A))
/// Z | A=1 ~ Bern(expit((1, X) β_Z))
/// M | A=1 ~ Bern(expit((1, X, Z) β_M)),  M | A=0 = 0
/// Y ~ N((1, A, X, AZ, AM) β_Y, σ²)
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub beta_x1: [f64; 4],
    pub beta_x2: [f64; 4],
    pub beta_a: [f64; 3],
    pub beta_z: [f64; 3],
    pub beta_m: [f64; 4],
    /// Intercept, A, X1, X2, AZ, AM.
    pub beta_y: [f64; 6],
    pub noise_sd: f64,
}

/// An unobserved binary confounder added to the outcome as `α U`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlantedConfounder {
    /// `U | A ~ Bern(p0 + β A)`: confounds treatment and outcome.
    Treatment { alpha: f64, beta: f64, p0: f64 },
    /// `U | M(1) ~ Bern(p0 + β M(1))`: confounds mediator and outcome.
    Mediator { alpha: f64, beta: f64, p0: f64 },
}

fn uniform<const N: usize>(rng: &mut impl Rng, h: f64) -> [f64; N] {
    std::array::from_fn(|_| rng.random_range(-h..=h))
}

/// Per-unit latent draws, shared by the observed and counterfactual views.
struct Unit {
    x: [f64; 2],
    a: u8,
    z1: u8,
    m1: u8,
    y_noise: f64,
}

impl DgpSpec {
    /// Draws every coefficient uniformly on `[-h, h]` with the half-widths
    /// in `r`; the noise scale is 1.
    pub fn draw(r: &DrawRanges, seed: u64) -> DgpSpec {
        let mut rng = stats::rng(seed);
        DgpSpec {
            beta_x1: uniform(&mut rng, r.x),
            beta_x2: uniform(&mut rng, r.x),
            beta_a: uniform(&mut rng, r.a),
            beta_z: uniform(&mut rng, r.z),
            beta_m: uniform(&mut rng, r.m),
            beta_y: uniform(&mut rng, r.y),
            noise_sd: 1.0,
        }
    }

    fn draw_x(&self, rng: &mut impl Rng) -> [f64; 2] {
        let l: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let dot = |b: &[f64; 4]| l.iter().zip(b).map(|(u, c)| u * c).sum::<f64>();
        let e1: f64 = rng.sample(StandardNormal);
        let e2: f64 = rng.sample(StandardNormal);
        [dot(&self.beta_x1) + e1, dot(&self.beta_x2) + e2]
    }

    fn p_a(&self, x: &[f64; 2]) -> f64 {
        expit(self.beta_a[0] + self.beta_a[1] * x[0] + self.beta_a[2] * x[1])
    }

    fn p_z(&self, x: &[f64; 2]) -> f64 {
        expit(self.beta_z[0] + self.beta_z[1] * x[0] + self.beta_z[2] * x[1])
    }

    fn p_m(&self, x: &[f64; 2], z: f64) -> f64 {
        expit(self.beta_m[0] + self.beta_m[1] * x[0] + self.beta_m[2] * x[1] + self.beta_m[3] * z)
    }

    /// Outcome mean for the given treatment, intermediate and mediator values.
    pub fn y_mean(&self, x: &[f64; 2], a: f64, z: f64, m: f64) -> f64 {
        let b = &self.beta_y;
        b[0] + b[1] * a + b[2] * x[0] + b[3] * x[1] + b[4] * a * z + b[5] * a * m
    }

    fn draw_unit(&self, rng: &mut impl Rng) -> (Unit, u8, u8) {
        let x = self.draw_x(rng);
        let a = rng.random_bool(self.p_a(&x)) as u8;
        // Latent values under treatment, drawn for every unit.
        let z1 = rng.random_bool(self.p_z(&x)) as u8;
        let m1 = rng.random_bool(self.p_m(&x, f64::from(z1))) as u8;
        let y_noise: f64 = rng.sample::<f64, _>(StandardNormal) * self.noise_sd;
        (Unit { x, a, z1: a * z1, m1: a * m1, y_noise }, z1, m1)
    }

    /// `n` observed units. `Z` is 0 (a placeholder) for untreated units.
    pub fn generate(&self, n: usize, seed: u64) -> Result<SequentialDataset> {
        Ok(self.generate_with(n, seed, None)?.0)
    }

    /// As [`DgpSpec::generate`], optionally adding a planted binary
    /// confounder `U`; returns `U` alongside the data.
    pub fn generate_with(
        &self,
        n: usize,
        seed: u64,
        planted: Option<PlantedConfounder>,
    ) -> Result<(SequentialDataset, Vec<u8>)> {
        if n == 0 {
            return Err(Error::InvalidArgument("n must be at least 1".into()));
        }
        let mut rng = stats::rng(seed);
        let mut x = Array2::zeros((n, 2));
        let mut z = Array2::zeros((n, 1));
        let (mut a, mut m, mut y, mut u) = (vec![0u8; n], vec![0u8; n], vec![0.0; n], vec![0u8; n]);
        for i in 0..n {
            let (unit, _z_latent, m_latent) = self.draw_unit(&mut rng);
            let extra = match planted {
                None => 0.0,
                Some(PlantedConfounder::Treatment { alpha, beta, p0 }) => {
                    u[i] = rng.random_bool((p0 + beta * f64::from(unit.a)).clamp(0.0, 1.0)) as u8;
                    alpha * f64::from(u[i])
                }
                Some(PlantedConfounder::Mediator { alpha, beta, p0 }) => {
                    u[i] = rng.random_bool((p0 + beta * f64::from(m_latent)).clamp(0.0, 1.0)) as u8;
                    alpha * f64::from(u[i])
                }
            };
            x[[i, 0]] = unit.x[0];
            x[[i, 1]] = unit.x[1];
            z[[i, 0]] = f64::from(unit.z1);
            a[i] = unit.a;
            m[i] = unit.m1;
            let af = f64::from(unit.a);
            y[i] = self.y_mean(&unit.x, af, f64::from(unit.z1), f64::from(unit.m1)) + unit.y_noise + extra;
        }
        let data = SequentialDataset::new(x, a, vec![z], vec![m], y, None)?.with_schema(dgp_schema())?;
        Ok((data, u))
    }

    /// Monte Carlo truths from `mc_size` baseline draws, with the `Z` and
    /// `M` laws and the outcome noise integrated out analytically given `X`.
    pub fn truth(&self, mc_size: usize, seed: u64) -> Result<TrueComponents> {
        if mc_size < 1000 {
            return Err(Error::InvalidArgument(format!("mc_size must be at least 1000, got {mc_size}")));
        }
        let mut rng = stats::rng(seed);
        let mut psi = [[Vec::with_capacity(mc_size), Vec::with_capacity(mc_size)], [Vec::with_capacity(mc_size), Vec::with_capacity(mc_size)]];
        let mut phi = Vec::with_capacity(mc_size);
        for _ in 0..mc_size {
            let x = self.draw_x(&mut rng);
            let pz = self.p_z(&x);
            let em = pz * self.p_m(&x, 1.0) + (1.0 - pz) * self.p_m(&x, 0.0);
            let y0 = self.y_mean(&x, 0.0, 0.0, 0.0);
            let y10 = self.y_mean(&x, 1.0, pz, 0.0);
            let y11 = self.y_mean(&x, 1.0, pz, 1.0);
            psi[0][0].push(y0);
            psi[0][1].push(y10 + em * (y11 - y10));
            psi[1][0].push(y10);
            psi[1][1].push(y11);
            phi.push(em);
        }
        let [p0, p1] = psi;
        true_components_from_draws(1, &[p0, p1], &[phi])
    }
}

/// Column names of simulated single-mediator data.
pub fn dgp_schema() -> ColumnSchema {
    ColumnSchema {
        treatment_column: "a".into(),
        mediator_columns: vec!["m".into()],
        baseline_columns: vec!["x1".into(), "x2".into()],
        z_block_columns: vec![vec!["z".into()]],
        outcome_column: "y".into(),
        weight_column: None,
    }
}

/// Replaces `(X1, X2, Z)` with `((e^{X1/2} − 1)², X2 / (1 + e^{X2}) + 10,
/// (X1 Z / 25 + 0.6)³)`. `Z*` uses the untransformed `X1` and is only
/// defined for treated units; untreated units keep the placeholder 0.
pub fn misspecify(data: &SequentialDataset) -> Result<SequentialDataset> {
    if data.x.ncols() != 2 || data.k() != 1 || data.z_blocks[0].ncols() != 1 {
        return Err(Error::InvalidArgument("misspecify expects (x1, x2) baseline and one scalar z block".into()));
    }
    let mut out = data.clone();
    for i in 0..data.n() {
        let (x1, x2) = (data.x[[i, 0]], data.x[[i, 1]]);
        out.x[[i, 0]] = ((x1 / 2.0).exp() - 1.0).powi(2);
        out.x[[i, 1]] = x2 / (1.0 + x2.exp()) + 10.0;
        out.z_blocks[0][[i, 0]] = if data.a[i] == 1 {
            (x1 * data.z_blocks[0][[i, 0]] / 25.0 + 0.6).powi(3)
        } else {
            0.0
        };
    }
    Ok(out)
}
