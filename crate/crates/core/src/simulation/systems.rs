//! Other generators: an exactly linear two-mediator system and a synthetic
//! educational-attainment panel.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{ColumnSchema, SequentialDataset};
use crate::decomposition::ComponentSet;
use crate::error::Result;
use crate::stats::{self, expit};

/// Two mediators with linear conditional means throughout, so every
/// regression-with-residuals model is correctly specified.
///
/// `X ~ U(−1, 1)`, `A ~ Bern(expit(a0 + a1 X))`. Among `A = 1`:
/// `Z1 = z1_0 + z1_x X + e1` and `P(M1 = 1) = m1_0 + m1_x X + m1_z e1`.
/// Among `M1 = 1`: `Z2 = z2_0 + z2_x X + z2_z1 Z1 + e2` and
/// `P(M2 = 1) = m2_0 + m2_x X + m2_z1 e1 + m2_z2 e2`, with `e1, e2 ~ U(−1, 1)`.
/// The outcome is linear in `A, M1, M2, X, AX, M1X, Z1⊥, Z2⊥, M1 Z1⊥` with
/// unit normal noise; the `M1X` and `M1 Z1⊥` slopes are set to
/// `−b_m2 m2_x` and `−b_m2 m2_z1` so that the one-mediator outcome model is
/// also exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSystem {
    pub a0: f64,
    pub a1: f64,
    pub z1_0: f64,
    pub z1_x: f64,
    pub m1_0: f64,
    pub m1_x: f64,
    pub m1_z: f64,
    pub z2_0: f64,
    pub z2_x: f64,
    pub z2_z1: f64,
    pub m2_0: f64,
    pub m2_x: f64,
    pub m2_z1: f64,
    pub m2_z2: f64,
    pub b0: f64,
    pub b_a: f64,
    pub b_m1: f64,
    pub b_m2: f64,
    pub g_x: f64,
    pub h_ax: f64,
    pub g_z1: f64,
    pub g_z2: f64,
}

impl Default for LinearSystem {
    fn default() -> Self {
        LinearSystem {
            a0: 0.2,
            a1: 0.5,
            z1_0: 0.2,
            z1_x: 0.5,
            m1_0: 0.5,
            m1_x: 0.15,
            m1_z: 0.15,
            z2_0: 0.1,
            z2_x: 0.3,
            z2_z1: 0.4,
            m2_0: 0.4,
            m2_x: 0.1,
            m2_z1: 0.1,
            m2_z2: 0.1,
            b0: 1.0,
            b_a: 0.5,
            b_m1: 0.4,
            b_m2: 0.3,
            g_x: 0.5,
            h_ax: 0.2,
            g_z1: 0.3,
            g_z2: -0.2,
        }
    }
}

impl LinearSystem {
    pub fn generate(&self, n: usize, seed: u64) -> Result<SequentialDataset> {
        let mut rng = stats::rng(seed);
        let mut x = Array2::zeros((n, 1));
        let mut z1 = Array2::zeros((n, 1));
        let mut z2 = Array2::zeros((n, 1));
        let (mut a, mut m1, mut m2, mut y) = (vec![0u8; n], vec![0u8; n], vec![0u8; n], vec![0.0; n]);
        let h_m1x = -self.b_m2 * self.m2_x;
        let xi = -self.b_m2 * self.m2_z1;
        for i in 0..n {
            let xi_ = rng.random_range(-1.0..1.0);
            let e1: f64 = rng.random_range(-1.0..1.0);
            let e2: f64 = rng.random_range(-1.0..1.0);
            let ai = rng.random_bool(expit(self.a0 + self.a1 * xi_)) as u8;
            let p1 = self.m1_0 + self.m1_x * xi_ + self.m1_z * e1;
            let mi1 = ai & rng.random_bool(p1) as u8;
            let p2 = self.m2_0 + self.m2_x * xi_ + self.m2_z1 * e1 + self.m2_z2 * e2;
            let mi2 = mi1 & rng.random_bool(p2) as u8;
            let noise: f64 = rng.sample(StandardNormal);
            let (af, f1, f2) = (f64::from(ai), f64::from(mi1), f64::from(mi2));
            let z1v = af * (self.z1_0 + self.z1_x * xi_ + e1);
            let z2v = f1 * (self.z2_0 + self.z2_x * xi_ + self.z2_z1 * z1v + e2);
            let (z1p, z2p) = (af * e1, f1 * e2);
            x[[i, 0]] = xi_;
            z1[[i, 0]] = z1v;
            z2[[i, 0]] = z2v;
            a[i] = ai;
            m1[i] = mi1;
            m2[i] = mi2;
            y[i] = self.b0
                + self.b_a * af
                + self.b_m1 * f1
                + self.b_m2 * f2
                + self.g_x * xi_
                + self.h_ax * af * xi_
                + h_m1x * f1 * xi_
                + self.g_z1 * z1p
                + self.g_z2 * z2p
                + xi * f1 * z1p
                + noise;
        }
        SequentialDataset::new(x, a, vec![z1, z2], vec![m1, m2], y, None)
    }

    /// Generating values of every component.
    pub fn truth(&self) -> ComponentSet {
        let tau1 = self.b_m1 + self.b_m2 * self.m2_0;
        let tau0 = self.b_a + self.m1_0 * tau1;
        ComponentSet::from_parts(
            vec![tau0, tau1, self.b_m2],
            vec![self.b_a, self.b_m1],
            vec![self.m1_0, self.m2_0],
        )
        .expect("two mediators")
    }
}

/// Column layout of [`nlsy_like`].
pub fn nlsy_schema() -> ColumnSchema {
    ColumnSchema {
        treatment_column: "hs_grad".into(),
        mediator_columns: vec!["college_enroll".into(), "ba_complete".into(), "grad_school".into()],
        baseline_columns: ["female", "black", "hispanic", "parent_educ", "family_income", "ability"]
            .map(String::from)
            .to_vec(),
        z_block_columns: vec![vec![], vec!["college_gpa".into(), "work_hours".into()], vec![]],
        outcome_column: "log_earnings".into(),
        weight_column: None,
    }
}

/// A synthetic panel shaped like a schooling-transitions study: high
/// school completion, college enrollment, degree completion and graduate
/// school, with two intermediate covariates observed after enrollment.
/// `ability` is a binary baseline covariate suited for benchmarking.
pub fn nlsy_like(n: usize, seed: u64) -> Result<SequentialDataset> {
    let mut rng = stats::rng(seed);
    let mut x = Array2::zeros((n, 6));
    let mut z2 = Array2::zeros((n, 2));
    let (mut a, mut m1, mut m2, mut m3, mut y) = (vec![0u8; n], vec![0u8; n], vec![0u8; n], vec![0u8; n], vec![0.0; n]);
    let normal = |rng: &mut rand_chacha::ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
    for i in 0..n {
        let female = f64::from(rng.random_bool(0.5) as u8);
        let black = f64::from(rng.random_bool(0.15) as u8);
        let hisp = if black == 1.0 { 0.0 } else { f64::from(rng.random_bool(0.14) as u8) };
        let pe = normal(&mut rng);
        let inc = 0.4 * pe + 0.9 * normal(&mut rng);
        let ab = f64::from(rng.random_bool(expit(0.6 * pe + 0.3 * inc)) as u8);
        let ai = rng.random_bool(expit(1.4 + 0.5 * pe + 0.4 * inc + 0.9 * ab - 0.2 * black)) as u8;
        let c1 = ai & rng.random_bool(expit(-0.2 + 0.5 * pe + 0.4 * inc + 0.8 * ab + 0.2 * female)) as u8;
        let (gpa, work) = if c1 == 1 {
            (0.3 * ab + 0.2 * pe + normal(&mut rng), -0.2 * inc + normal(&mut rng))
        } else {
            (0.0, 0.0)
        };
        let c2 = c1 & rng.random_bool(expit(-0.1 + 0.6 * gpa - 0.3 * work + 0.5 * ab)) as u8;
        let c3 = c2 & rng.random_bool(expit(-1.0 + 0.4 * gpa + 0.4 * ab)) as u8;
        let (af, f1, f2, f3) = (f64::from(ai), f64::from(c1), f64::from(c2), f64::from(c3));
        y[i] = 9.6 + 0.45 * af + 0.15 * f1 + 0.35 * f2 + 0.15 * f3 + 0.1 * pe + 0.1 * inc + 0.15 * ab - 0.2 * female
            - 0.05 * black
            + 0.05 * gpa * f1
            + 0.8 * normal(&mut rng);
        for (c, v) in [female, black, hisp, pe, inc, ab].into_iter().enumerate() {
            x[[i, c]] = v;
        }
        z2[[i, 0]] = gpa;
        z2[[i, 1]] = work;
        a[i] = ai;
        m1[i] = c1;
        m2[i] = c2;
        m3[i] = c3;
    }
    SequentialDataset::new(
        x,
        a,
        vec![Array2::zeros((n, 0)), z2, Array2::zeros((n, 0))],
        vec![m1, m2, m3],
        y,
        None,
    )?
    .with_schema(nlsy_schema())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomposition::compose_paths;

    #[test]
    fn linear_truth_has_zero_covariances() {
        let s = LinearSystem::default();
        let t = s.truth();
        assert!(t.eta.iter().all(|e| e.abs() < 1e-15));
        let p = compose_paths(&t);
        assert!((p.theta.iter().sum::<f64>() - t.tau[0]).abs() < 1e-15);
        let d = s.generate(1000, 1).unwrap();
        assert!(d.validate().is_empty());
    }

    #[test]
    fn synthetic_panel_is_valid() {
        let d = nlsy_like(2000, 7).unwrap();
        assert!(d.validate().is_empty());
        for l in 0..=3 {
            let took = (0..d.n()).filter(|&i| d.level(i) > l).count();
            let reached = (0..d.n()).filter(|&i| d.level(i) >= l).count();
            assert!(took > 50 && reached - took > 50, "level {l}: {took}/{reached}");
        }
    }
}
