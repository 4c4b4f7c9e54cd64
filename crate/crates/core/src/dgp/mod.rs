//! Synthetic data-generating processes.
//!
//! All six designs share the Friedman control response, a Beta(2, 4)
//! propensity built on `sin(pi x1 x2 x3 x4)`, standard normal outcome noise
//! and `p = 100` correlated uniform covariates. They differ in the treatment
//! share (via `alpha`) and the CATE function.

pub mod copula;
pub mod semisynth;

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{ObservedDataset, SimulatedDataset};
use crate::error::{CateError, Result};
use crate::seed::{stream, Stream};

pub use copula::{draw_covariates, random_correlation_matrix};
pub use semisynth::{
    load_semisynthetic, semisynthetic_cate, ColumnMap, SemiSyntheticOptions, SemiSyntheticSampler,
};

/// Upper limit on whole-sample redraws under the treated-share guard.
pub const MAX_REDRAWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CateKind {
    /// tau = 0
    Zero,
    /// mu1 = 1, so tau = 1 - mu0
    Disjoint,
    /// tau = 1
    Constant,
    /// tau = 1 + 1(x1 > 0.5)
    Indicator,
    /// tau = 1 + x1/2 + x2/2
    Linear,
    /// tau = 1 + (4/3) sum_{j<=3} (logistic(12 (xj - 0.5)) - 1/2)
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationDesign {
    pub design_id: u8,
    pub alpha: f64,
    pub p: usize,
    pub p_mu: usize,
    pub p_e: usize,
    pub p_tau: usize,
    pub cate_kind: CateKind,
    pub noise_sd: f64,
    /// Redraw the whole sample until the treated share reaches this value.
    pub min_treated_share: Option<f64>,
}

impl SimulationDesign {
    pub fn new(design_id: u8) -> Result<Self> {
        let (alpha, p_tau, cate_kind, guard) = match design_id {
            1 => (1.0 / 4.0, 0, CateKind::Zero, None),
            2 => (1.0 / 4.0, 5, CateKind::Disjoint, None),
            3 => (1.0 / 12.0, 0, CateKind::Constant, Some(0.15)),
            4 => (1.0 / 8.0, 1, CateKind::Indicator, None),
            5 => (1.0 / 8.0, 2, CateKind::Linear, None),
            6 => (1.0 / 8.0, 3, CateKind::Sigmoid, None),
            other => {
                return Err(CateError::invalid(format!(
                    "unknown design {other}; expected 1..=6"
                )))
            }
        };
        Ok(Self {
            design_id,
            alpha,
            p: 100,
            p_mu: 5,
            p_e: 4,
            p_tau,
            cate_kind,
            noise_sd: 1.0,
            min_treated_share: guard,
        })
    }

    /// The design without an a-priori favourite learner (design 6).
    pub fn main() -> Self {
        Self::new(6).expect("design 6 exists")
    }

    pub fn mu0(&self, x: &[f64]) -> f64 {
        mu0_friedman(x)
    }

    pub fn tau(&self, x: &[f64]) -> f64 {
        cate_for_kind(self.cate_kind, x)
    }

    pub fn mu1(&self, x: &[f64]) -> f64 {
        match self.cate_kind {
            CateKind::Disjoint => 1.0,
            _ => self.mu0(x) + self.tau(x),
        }
    }

    pub fn propensity(&self, x: &[f64]) -> f64 {
        propensity(x, self.alpha)
    }

    pub fn draw_sigma(&self, rng: &mut Stream) -> DMatrix<f64> {
        random_correlation_matrix(self.p, rng)
    }
}

/// Friedman function on the first five coordinates.
pub fn mu0_friedman(x: &[f64]) -> f64 {
    (PI * x[0] * x[1]).sin() + 2.0 * (x[2] - 0.5).powi(2) + x[3] + 0.5 * x[4]
}

/// Beta(2, 4) density.
#[inline]
pub fn beta_2_4_density(u: f64) -> f64 {
    20.0 * u * (1.0 - u).powi(3)
}

/// `alpha * (1 + g(sin(pi x1 x2 x3 x4)))` with `g` the Beta(2, 4) density.
pub fn propensity(x: &[f64], alpha: f64) -> f64 {
    let u = (PI * x[0] * x[1] * x[2] * x[3]).sin();
    alpha * (1.0 + beta_2_4_density(u))
}

#[inline]
fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub fn cate_for_kind(kind: CateKind, x: &[f64]) -> f64 {
    match kind {
        CateKind::Zero => 0.0,
        CateKind::Disjoint => 1.0 - mu0_friedman(x),
        CateKind::Constant => 1.0,
        CateKind::Indicator => 1.0 + if x[0] > 0.5 { 1.0 } else { 0.0 },
        CateKind::Linear => 1.0 + 0.5 * x[0] + 0.5 * x[1],
        CateKind::Sigmoid => {
            let sum: f64 = x[..3].iter().map(|&v| logistic(12.0 * (v - 0.5)) - 0.5).sum();
            1.0 + 4.0 / 3.0 * sum
        }
    }
}

/// True CATE of design `design_id` at `x`.
pub fn cate_true(design_id: u8, x: &[f64]) -> Result<f64> {
    Ok(SimulationDesign::new(design_id)?.tau(x))
}

/// Draws a sample with a fresh correlation matrix taken from `rng`.
pub fn generate_dataset(
    design: &SimulationDesign,
    n: usize,
    rng: &mut Stream,
) -> Result<SimulatedDataset> {
    let sigma = design.draw_sigma(rng);
    generate_with_sigma(design, n, &sigma, rng)
}

/// Convenience wrapper seeding the stream from `seed`.
pub fn generate_dataset_seeded(
    design: &SimulationDesign,
    n: usize,
    seed: u64,
) -> Result<SimulatedDataset> {
    generate_dataset(design, n, &mut stream(seed))
}

/// Draws a sample whose covariates have correlation matrix `sigma`,
/// applying the design's treated-share guard.
pub fn generate_with_sigma(
    design: &SimulationDesign,
    n: usize,
    sigma: &DMatrix<f64>,
    rng: &mut Stream,
) -> Result<SimulatedDataset> {
    if n == 0 {
        return Err(CateError::InsufficientData {
            context: "data generation".into(),
            needed: 1,
            got: 0,
        });
    }
    if sigma.nrows() != design.p || sigma.ncols() != design.p {
        return Err(CateError::invalid(format!(
            "correlation matrix is {}x{}, design needs {}x{}",
            sigma.nrows(),
            sigma.ncols(),
            design.p,
            design.p
        )));
    }
    let factor = copula::copula_factor(sigma);
    let mut redraws = 0;
    loop {
        let mut sample = draw_once(design, n, &factor, rng)?;
        let share = sample.observed.treated_share();
        match design.min_treated_share {
            Some(min_share) if share < min_share => {
                redraws += 1;
                if redraws >= MAX_REDRAWS {
                    return Err(CateError::GenerationStalled {
                        attempts: redraws,
                        reason: format!(
                            "treated share stayed below {min_share} (last draw {share:.4})"
                        ),
                    });
                }
            }
            _ => {
                sample.redraws = redraws;
                return Ok(sample);
            }
        }
    }
}

fn draw_once(
    design: &SimulationDesign,
    n: usize,
    factor: &DMatrix<f64>,
    rng: &mut Stream,
) -> Result<SimulatedDataset> {
    let x = copula::draw_with_factor(n, factor, rng);
    let mut mu0 = Vec::with_capacity(n);
    let mut tau = Vec::with_capacity(n);
    let mut e = Vec::with_capacity(n);
    let mut y0 = Vec::with_capacity(n);
    let mut y1 = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for row in x.rows() {
        let m0 = design.mu0(row);
        let m1 = design.mu1(row);
        let eps0: f64 = rng.sample(StandardNormal);
        let eps1: f64 = rng.sample(StandardNormal);
        let e_i = design.propensity(row);
        let treated = rng.random::<f64>() < e_i;
        let y0_i = m0 + design.noise_sd * eps0;
        let y1_i = m1 + design.noise_sd * eps1;
        let wf = if treated { 1.0 } else { 0.0 };
        mu0.push(m0);
        tau.push(design.tau(row));
        e.push(e_i);
        y0.push(y0_i);
        y1.push(y1_i);
        w.push(treated);
        y.push(wf * y1_i + (1.0 - wf) * y0_i);
    }
    Ok(SimulatedDataset {
        observed: ObservedDataset::new(x, w, y)?,
        y0: Some(y0),
        y1: Some(y1),
        tau,
        e_true: Some(e),
        mu0: Some(mu0),
        redraws: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream;

    fn half(p: usize) -> Vec<f64> {
        vec![0.5; p]
    }

    #[test]
    fn friedman_closed_forms() {
        assert_eq!(mu0_friedman(&[0.0; 5]), 0.5);
        let expected = (PI / 4.0).sin() + 0.5 + 0.25;
        assert!((mu0_friedman(&half(5)) - expected).abs() < 1e-15);
        assert!((mu0_friedman(&half(5)) - 1.45711).abs() < 1e-5);
        let x = [1.0, 0.5, 0.5, 0.0, 0.0];
        assert!((mu0_friedman(&x) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn propensity_closed_forms() {
        assert_eq!(propensity(&[0.0, 0.3, 0.9, 0.2], 0.25), 0.25);
        // u = 1/4 maximises the density at 20 * 1/4 * (3/4)^3 = 2.109375
        assert_eq!(beta_2_4_density(0.25), 2.109375);
        assert!((0.25 * (1.0 + beta_2_4_density(0.25)) - 0.77734).abs() < 1e-5);
        assert!((1.0 / 12.0 * (1.0 + beta_2_4_density(0.25)) - 0.25911).abs() < 1e-5);
        // sin(pi * prod) = 1/4 when prod = asin(1/4) / pi
        let prod = 0.25f64.asin() / PI;
        let x = [prod, 1.0, 1.0, 1.0];
        assert!((propensity(&x, 0.25) - 0.777_343_75).abs() < 1e-12);
    }

    #[test]
    fn propensity_bounds() {
        let mut rng = stream(1);
        for _ in 0..10_000 {
            let x: Vec<f64> = (0..4).map(|_| rng.random::<f64>()).collect();
            let e = propensity(&x, 0.125);
            assert!(e >= 0.125 && e <= 0.125 * (1.0 + 2.109375));
        }
    }

    #[test]
    fn cate_closed_forms() {
        assert_eq!(cate_true(6, &half(100)).unwrap(), 1.0);
        let mut x = half(100);
        x[0] = 0.6;
        assert_eq!(cate_true(4, &x).unwrap(), 2.0);
        x[0] = 0.5;
        assert_eq!(cate_true(4, &x).unwrap(), 1.0);
        assert_eq!(cate_true(5, &[1.0, 1.0, 0.0]).unwrap(), 2.0);
        assert_eq!(cate_true(1, &x).unwrap(), 0.0);
        assert_eq!(cate_true(3, &x).unwrap(), 1.0);
        assert!(matches!(cate_true(7, &x), Err(CateError::InvalidInput(_))));
    }

    #[test]
    fn sigmoid_cate_range() {
        for corner in [[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]] {
            let t = cate_true(6, &corner).unwrap();
            assert!(t > -1.0 && t < 3.0);
        }
        let lo = cate_true(6, &[0.0; 3]).unwrap();
        assert!((lo - (1.0 + 4.0 * (logistic(-6.0) - 0.5))).abs() < 1e-12);
    }

    #[test]
    fn disjoint_design_identity() {
        let d = SimulationDesign::new(2).unwrap();
        let mut rng = stream(2);
        for _ in 0..100 {
            let x: Vec<f64> = (0..100).map(|_| rng.random::<f64>()).collect();
            assert!((d.tau(&x) + d.mu0(&x) - 1.0).abs() < 1e-15);
            assert_eq!(d.mu1(&x), 1.0);
        }
    }

    #[test]
    fn covariate_nesting() {
        let mut rng = stream(3);
        for id in 1..=6 {
            let d = SimulationDesign::new(id).unwrap();
            for _ in 0..50 {
                let x: Vec<f64> = (0..100).map(|_| rng.random::<f64>()).collect();
                let mut x2 = x.clone();
                for v in x2.iter_mut().skip(d.p_tau.max(1)) {
                    *v = rng.random();
                }
                if d.p_tau > 0 || d.cate_kind != CateKind::Zero {
                    let keep_tau = if d.p_tau == 0 { 0 } else { d.p_tau };
                    let mut x3 = x.clone();
                    for v in x3.iter_mut().skip(keep_tau) {
                        *v = rng.random();
                    }
                    assert_eq!(d.tau(&x), d.tau(&x3), "design {id} tau");
                }
                let mut xe = x.clone();
                for v in xe.iter_mut().skip(d.p_e) {
                    *v = rng.random();
                }
                assert_eq!(d.propensity(&x), d.propensity(&xe));
                let mut xm = x.clone();
                for v in xm.iter_mut().skip(d.p_mu) {
                    *v = rng.random();
                }
                assert_eq!(d.mu0(&x), d.mu0(&xm));
            }
        }
    }

    #[test]
    fn observational_rule_holds_exactly() {
        for id in 1..=6 {
            let d = SimulationDesign::new(id).unwrap();
            let s = generate_dataset(&d, 300, &mut stream(u64::from(id))).unwrap();
            let (y0, y1) = (s.y0.as_ref().unwrap(), s.y1.as_ref().unwrap());
            for i in 0..s.len() {
                let wf = s.observed.w_f64(i);
                assert_eq!(s.observed.y()[i], wf * y1[i] + (1.0 - wf) * y0[i]);
                let e = s.e_true.as_ref().unwrap()[i];
                assert!(e > 0.0 && e < 1.0);
            }
            assert_eq!(s.observed.n_features(), 100);
        }
    }

    #[test]
    fn treated_shares() {
        let d1 = SimulationDesign::new(1).unwrap();
        let s1 = generate_dataset(&d1, 10_000, &mut stream(10)).unwrap();
        let share1 = s1.observed.treated_share();
        assert!(share1 > 0.40 && share1 < 0.60, "{share1}");

        let d3 = SimulationDesign::new(3).unwrap();
        let s3 = generate_dataset(&d3, 10_000, &mut stream(11)).unwrap();
        let share3 = s3.observed.treated_share();
        assert!(share3 > 0.12 && share3 < 0.22, "{share3}");
        assert!(share3 >= 0.15);
    }

    #[test]
    fn small_design3_samples_satisfy_guard() {
        let d3 = SimulationDesign::new(3).unwrap();
        let mut total_redraws = 0;
        for s in 0..30 {
            let sample = generate_dataset(&d3, 100, &mut stream(s)).unwrap();
            assert!(sample.observed.treated_share() >= 0.15);
            total_redraws += sample.redraws;
        }
        assert!(total_redraws > 0, "n = 100 should trigger the guard at least once");
    }

    #[test]
    fn impossible_guard_stalls() {
        let mut d = SimulationDesign::new(3).unwrap();
        d.min_treated_share = Some(0.99);
        let err = generate_dataset(&d, 50, &mut stream(0)).unwrap_err();
        assert!(matches!(err, CateError::GenerationStalled { attempts: MAX_REDRAWS, .. }));
    }

    #[test]
    fn noise_independent_of_covariates() {
        let d = SimulationDesign::new(6).unwrap();
        let s = generate_dataset(&d, 10_000, &mut stream(12)).unwrap();
        let y0 = s.y0.as_ref().unwrap();
        let mu0 = s.mu0.as_ref().unwrap();
        let eps: Vec<f64> = y0.iter().zip(mu0).map(|(a, b)| a - b).collect();
        for j in [0, 1, 4, 50, 99] {
            let xj = s.observed.x().column(j);
            let n = eps.len() as f64;
            let me = eps.iter().sum::<f64>() / n;
            let mx = xj.iter().sum::<f64>() / n;
            let cov: f64 = eps.iter().zip(&xj).map(|(a, b)| (a - me) * (b - mx)).sum();
            let ve: f64 = eps.iter().map(|a| (a - me).powi(2)).sum();
            let vx: f64 = xj.iter().map(|b| (b - mx).powi(2)).sum();
            let r = cov / (ve * vx).sqrt();
            assert!(r.abs() < 0.03, "corr(eps, x{j}) = {r}");
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let d = SimulationDesign::new(5).unwrap();
        let a = generate_dataset_seeded(&d, 50, 99).unwrap();
        let b = generate_dataset_seeded(&d, 50, 99).unwrap();
        assert_eq!(a, b);
    }
}
