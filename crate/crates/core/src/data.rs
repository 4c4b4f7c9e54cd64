//! Observed and simulated datasets.

use serde::{Deserialize, Serialize};

use crate::error::{CateError, Result};
use crate::matrix::Matrix;

/// The observable triple: covariates, binary treatment and outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedDataset {
    x: Matrix,
    w: Vec<bool>,
    y: Vec<f64>,
}

impl ObservedDataset {
    pub fn new(x: Matrix, w: Vec<bool>, y: Vec<f64>) -> Result<Self> {
        let n = x.n_rows();
        if w.len() != n || y.len() != n {
            return Err(CateError::invalid(format!(
                "dataset with {n} covariate rows, {} treatments and {} outcomes",
                w.len(),
                y.len()
            )));
        }
        if !x.all_finite() || y.iter().any(|v| !v.is_finite()) {
            return Err(CateError::invalid("covariates and outcomes must be finite"));
        }
        Ok(Self { x, w, y })
    }

    /// Builds a dataset from a 0/1 coded treatment vector.
    pub fn from_numeric_treatment(x: Matrix, w: &[f64], y: Vec<f64>) -> Result<Self> {
        let w = w
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                if v == 0.0 {
                    Ok(false)
                } else if v == 1.0 {
                    Ok(true)
                } else {
                    Err(CateError::invalid(format!("treatment at row {i} is {v}, not 0 or 1")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(x, w, y)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.x.n_cols()
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn w(&self) -> &[bool] {
        &self.w
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Treatment of row `i` as 0.0 or 1.0.
    #[inline]
    pub fn w_f64(&self, i: usize) -> f64 {
        if self.w[i] {
            1.0
        } else {
            0.0
        }
    }

    pub fn w_numeric(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.w_f64(i)).collect()
    }

    pub fn n_treated(&self) -> usize {
        self.w.iter().filter(|&&t| t).count()
    }

    pub fn treated_share(&self) -> f64 {
        self.n_treated() as f64 / self.len() as f64
    }

    /// Rows of `rows` whose treatment equals `treated`, in order.
    pub fn arm_rows(&self, rows: &[usize], treated: bool) -> Vec<usize> {
        rows.iter().copied().filter(|&i| self.w[i] == treated).collect()
    }

    pub fn subset(&self, rows: &[usize]) -> ObservedDataset {
        ObservedDataset {
            x: self.x.select_rows(rows),
            w: rows.iter().map(|&i| self.w[i]).collect(),
            y: rows.iter().map(|&i| self.y[i]).collect(),
        }
    }

    /// FNV-1a digest of the full contents, used to check that every learner
    /// in a replication sees identical data.
    pub fn fingerprint(&self) -> u64 {
        const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h = OFFSET;
        let mut eat = |bits: u64| {
            for byte in bits.to_le_bytes() {
                h ^= u64::from(byte);
                h = h.wrapping_mul(PRIME);
            }
        };
        eat(self.x.n_rows() as u64);
        eat(self.x.n_cols() as u64);
        self.x.as_slice().iter().for_each(|v| eat(v.to_bits()));
        self.w.iter().for_each(|&t| eat(u64::from(t)));
        self.y.iter().for_each(|v| eat(v.to_bits()));
        h
    }
}

/// An observed dataset together with the ground truth that generated it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedDataset {
    pub observed: ObservedDataset,
    /// Potential outcomes; absent for semi-synthetic data.
    pub y0: Option<Vec<f64>>,
    pub y1: Option<Vec<f64>>,
    pub tau: Vec<f64>,
    /// True propensity; absent for semi-synthetic data.
    pub e_true: Option<Vec<f64>>,
    /// True control response; absent for semi-synthetic data.
    pub mu0: Option<Vec<f64>>,
    /// Number of times the sample was redrawn to satisfy a design guard.
    pub redraws: usize,
}

impl SimulatedDataset {
    pub fn len(&self) -> usize {
        self.observed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed.is_empty()
    }

    pub fn subset(&self, rows: &[usize]) -> SimulatedDataset {
        let pick = |v: &Vec<f64>| rows.iter().map(|&i| v[i]).collect::<Vec<_>>();
        SimulatedDataset {
            observed: self.observed.subset(rows),
            y0: self.y0.as_ref().map(pick),
            y1: self.y1.as_ref().map(pick),
            tau: pick(&self.tau),
            e_true: self.e_true.as_ref().map(pick),
            mu0: self.mu0.as_ref().map(pick),
            redraws: self.redraws,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numeric_treatment_must_be_binary() {
        let x = Matrix::zeros(2, 1);
        assert!(ObservedDataset::from_numeric_treatment(x.clone(), &[0.0, 1.0], vec![0.0; 2]).is_ok());
        assert!(ObservedDataset::from_numeric_treatment(x, &[0.0, 0.5], vec![0.0; 2]).is_err());
    }

    #[test]
    fn fingerprint_sensitive_to_contents() {
        let x = Matrix::zeros(3, 1);
        let a = ObservedDataset::new(x.clone(), vec![true, false, true], vec![1.0, 2.0, 3.0]).unwrap();
        let b = ObservedDataset::new(x, vec![true, false, false], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(a.fingerprint(), a.clone().fingerprint());
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
