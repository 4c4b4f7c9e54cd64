//! Pseudo-outcome constructions of the X-, DR- and R-learners.

use crate::error::{CateError, Result};

/// Threshold below which `|W - e(x)|` counts as zero.
pub const RESIDUAL_TREATMENT_FLOOR: f64 = 1e-12;

fn check_lengths(n: usize, others: &[(&str, usize)]) -> Result<()> {
    for (name, len) in others {
        if *len != n {
            return Err(CateError::invalid(format!("{name} has {len} entries, expected {n}")));
        }
    }
    Ok(())
}

#[inline]
fn wf(w: bool) -> f64 {
    if w {
        1.0
    } else {
        0.0
    }
}

/// Imputed individual effects: `Y - mu0(x)` on treated rows and
/// `mu1(x) - Y` on control rows.
pub fn impute_x_effects(y: &[f64], w: &[bool], mu1_hat: &[f64], mu0_hat: &[f64]) -> Result<Vec<f64>> {
    check_lengths(
        y.len(),
        &[("W", w.len()), ("mu1_hat", mu1_hat.len()), ("mu0_hat", mu0_hat.len())],
    )?;
    Ok((0..y.len())
        .map(|i| if w[i] { y[i] - mu0_hat[i] } else { mu1_hat[i] - y[i] })
        .collect())
}

/// Doubly robust score
/// `W (Y - mu1) / e - (1 - W) (Y - mu0) / (1 - e) + mu1 - mu0`.
pub fn compute_dr_pseudo_outcome(
    y: &[f64],
    w: &[bool],
    mu1_hat: &[f64],
    mu0_hat: &[f64],
    e_hat: &[f64],
) -> Result<Vec<f64>> {
    check_lengths(
        y.len(),
        &[
            ("W", w.len()),
            ("mu1_hat", mu1_hat.len()),
            ("mu0_hat", mu0_hat.len()),
            ("e_hat", e_hat.len()),
        ],
    )?;
    (0..y.len())
        .map(|i| {
            let e = e_hat[i];
            if !(e > 0.0 && e < 1.0) {
                return Err(CateError::ExtremePropensity { row: i, value: e });
            }
            let t = wf(w[i]);
            Ok(t * (y[i] - mu1_hat[i]) / e - (1.0 - t) * (y[i] - mu0_hat[i]) / (1.0 - e)
                + mu1_hat[i]
                - mu0_hat[i])
        })
        .collect()
}

/// Modified outcome `(Y - mu) / (W - e)` and weights `(W - e)^2`.
pub fn compute_r_modified_outcome(
    y: &[f64],
    w: &[bool],
    mu_hat: &[f64],
    e_hat: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_lengths(
        y.len(),
        &[("W", w.len()), ("mu_hat", mu_hat.len()), ("e_hat", e_hat.len())],
    )?;
    let mut phi = Vec::with_capacity(y.len());
    let mut weights = Vec::with_capacity(y.len());
    for i in 0..y.len() {
        let residual = wf(w[i]) - e_hat[i];
        if !(residual.abs() > RESIDUAL_TREATMENT_FLOOR) {
            return Err(CateError::DegenerateResidualTreatment { row: i, residual });
        }
        phi.push((y[i] - mu_hat[i]) / residual);
        weights.push(residual * residual);
    }
    Ok((phi, weights))
}

/// `min(max(e, eps), 1 - eps)` elementwise.
pub fn clip_propensity(e_hat: &mut [f64], eps: f64) {
    for e in e_hat {
        *e = e.max(eps).min(1.0 - eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn x_imputation_by_hand() {
        let xi = impute_x_effects(&[0.3, 2.0], &[false, true], &[1.0, 9.0], &[9.0, 2.0]).unwrap();
        assert!((xi[0] - 0.7).abs() < 1e-15);
        assert_eq!(xi[1], 0.0);
        assert!(impute_x_effects(&[0.3], &[false, true], &[1.0], &[1.0]).is_err());
    }

    #[test]
    fn dr_score_by_hand() {
        let psi = compute_dr_pseudo_outcome(&[2.0], &[true], &[1.5], &[0.5], &[0.5]).unwrap();
        assert_eq!(psi, vec![2.0]);
        // Y on the fitted response leaves only mu1 - mu0
        let psi = compute_dr_pseudo_outcome(&[1.5, 0.2], &[true, false], &[1.5, 0.9], &[0.4, 0.2], &[0.3, 0.6])
            .unwrap();
        assert!((psi[0] - 1.1).abs() < 1e-15 && (psi[1] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn dr_rejects_boundary_propensity() {
        for e in [0.0, 1.0, -0.1, f64::NAN] {
            let err = compute_dr_pseudo_outcome(&[1.0], &[true], &[1.0], &[0.0], &[e]).unwrap_err();
            assert!(matches!(err, CateError::ExtremePropensity { row: 0, .. }));
        }
    }

    #[test]
    fn r_outcome_by_hand() {
        let (phi, wt) = compute_r_modified_outcome(&[1.5], &[true], &[1.0], &[0.5]).unwrap();
        assert_eq!((phi[0], wt[0]), (1.0, 0.25));
        let err = compute_r_modified_outcome(&[1.0], &[true], &[0.0], &[1.0]).unwrap_err();
        assert!(matches!(err, CateError::DegenerateResidualTreatment { row: 0, .. }));
    }

    #[test]
    fn clipping() {
        let mut e = vec![0.0, 0.5, 1.0];
        clip_propensity(&mut e, 0.01);
        assert_eq!(e, vec![0.01, 0.5, 0.99]);
    }
}
