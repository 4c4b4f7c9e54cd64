//! Random correlation matrices and correlated uniform covariates.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use statrs::function::erf::erfc;

use crate::matrix::Matrix;

/// Smallest eigenvalue kept when projecting onto the positive-definite cone.
const PD_FLOOR: f64 = 1e-8;

/// Draws a `p x p` correlation matrix uniformly over the set of correlation
/// matrices with the extended onion construction.
pub fn random_correlation_matrix<R: Rng + ?Sized>(p: usize, rng: &mut R) -> DMatrix<f64> {
    assert!(p >= 1, "dimension must be positive");
    let mut corr = DMatrix::identity(p, p);
    if p == 1 {
        return corr;
    }
    // eta = 1 gives the uniform distribution over the elliptope.
    let eta = 1.0;
    let mut beta = eta + (p as f64 - 2.0) / 2.0;
    let u: f64 = Beta::new(beta, beta).expect("positive shape").sample(rng);
    let r12 = 2.0 * u - 1.0;
    corr[(0, 1)] = r12;
    corr[(1, 0)] = r12;

    for k in 2..p {
        beta -= 0.5;
        let y: f64 = Beta::new(k as f64 / 2.0, beta)
            .expect("positive shape")
            .sample(rng);
        let mut direction = DVector::<f64>::from_fn(k, |_, _| rng.sample(StandardNormal));
        let norm = direction.norm();
        direction /= norm;
        let w = direction * y.sqrt();
        let leading = corr.view((0, 0), (k, k)).clone_owned();
        let chol = leading
            .cholesky()
            .expect("leading block of an onion draw is positive definite");
        let z = chol.l() * w;
        for i in 0..k {
            corr[(i, k)] = z[i];
            corr[(k, i)] = z[i];
        }
    }
    corr
}

/// Pearson correlation of the normal scores that yields Pearson correlation
/// `r` between their uniform transforms.
#[inline]
pub fn normal_score_correlation(r: f64) -> f64 {
    2.0 * (std::f64::consts::PI * r / 6.0).sin()
}

#[inline]
pub fn standard_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Nearest positive-definite correlation matrix by eigenvalue flooring and
/// rescaling to a unit diagonal.
pub fn nearest_positive_definite(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let floored = eig.eigenvalues.map(|v| v.max(PD_FLOOR));
    let rebuilt =
        &eig.eigenvectors * DMatrix::from_diagonal(&floored) * eig.eigenvectors.transpose();
    let scale = rebuilt.diagonal().map(|d| 1.0 / d.sqrt());
    let mut out = DMatrix::from_diagonal(&scale) * rebuilt * DMatrix::from_diagonal(&scale);
    for i in 0..out.nrows() {
        out[(i, i)] = 1.0;
    }
    out
}

/// Lower Cholesky factor of the normal-score correlation matrix implied by
/// the target uniform correlation matrix `sigma`.
pub fn copula_factor(sigma: &DMatrix<f64>) -> DMatrix<f64> {
    let p = sigma.nrows();
    let scores = DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            1.0
        } else {
            normal_score_correlation(sigma[(i, j)])
        }
    });
    match scores.clone().cholesky() {
        Some(chol) => chol.l(),
        None => {
            log::info!(
                "normal-score correlation matrix is not positive definite; \
                 projecting onto the nearest positive-definite matrix"
            );
            nearest_positive_definite(&scores)
                .cholesky()
                .expect("projection is positive definite")
                .l()
        }
    }
}

/// Draws `n` rows of uniform covariates whose Pearson correlation matrix is
/// `sigma`, using a Gaussian copula with the `2 sin(pi r / 6)` correction.
pub fn draw_covariates<R: Rng + ?Sized>(n: usize, sigma: &DMatrix<f64>, rng: &mut R) -> Matrix {
    let factor = copula_factor(sigma);
    draw_with_factor(n, &factor, rng)
}

pub(crate) fn draw_with_factor<R: Rng + ?Sized>(
    n: usize,
    factor: &DMatrix<f64>,
    rng: &mut R,
) -> Matrix {
    let p = factor.nrows();
    let mut out = Matrix::zeros(n, p);
    let mut g = vec![0.0; p];
    for i in 0..n {
        for v in g.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let row = out.row_mut(i);
        for (a, slot) in row.iter_mut().enumerate() {
            let mut z = 0.0;
            for (b, gb) in g.iter().enumerate().take(a + 1) {
                z += factor[(a, b)] * gb;
            }
            *slot = standard_normal_cdf(z);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream;

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn one_by_one_is_unit() {
        let m = random_correlation_matrix(1, &mut stream(0));
        assert_eq!(m, DMatrix::identity(1, 1));
    }

    #[test]
    fn two_by_two_off_diagonal_inside() {
        for s in 0..50 {
            let m = random_correlation_matrix(2, &mut stream(s));
            assert!(m[(0, 1)] > -1.0 && m[(0, 1)] < 1.0);
            assert_eq!(m[(0, 1)], m[(1, 0)]);
        }
    }

    #[test]
    fn hundred_dim_draws_are_positive_definite() {
        for s in 0..20 {
            let m = random_correlation_matrix(100, &mut stream(s));
            for i in 0..100 {
                assert!((m[(i, i)] - 1.0).abs() < 1e-12);
                for j in 0..100 {
                    assert_eq!(m[(i, j)], m[(j, i)]);
                }
            }
            let eig = m.clone().symmetric_eigen();
            assert!(eig.eigenvalues.min() > 0.0);
        }
    }

    #[test]
    fn off_diagonal_marginals_match_uniform_elliptope() {
        // Under the uniform distribution over d x d correlation matrices every
        // off-diagonal entry is (2B - 1) with B ~ Beta(d/2, d/2): mean 0 and
        // variance 1 / (d + 1). Entries produced by the first step and by a
        // later onion step must share that law.
        let d = 4;
        let draws: Vec<DMatrix<f64>> = (0..4000)
            .map(|s| random_correlation_matrix(d, &mut stream(s)))
            .collect();
        for (i, j) in [(0, 1), (0, 3), (2, 3)] {
            let v: Vec<f64> = draws.iter().map(|m| m[(i, j)]).collect();
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
            assert!(mean.abs() < 0.03, "({i},{j}) mean {mean}");
            assert!((var - 1.0 / (d as f64 + 1.0)).abs() < 0.02, "({i},{j}) var {var}");
        }
    }

    #[test]
    fn identity_gives_independent_uniforms() {
        let x = draw_covariates(10_000, &DMatrix::identity(3, 3), &mut stream(1));
        let cols: Vec<Vec<f64>> = (0..3).map(|j| x.column(j)).collect();
        for j in 0..3 {
            assert!(cols[j].iter().all(|v| (0.0..=1.0).contains(v)));
            let mean = cols[j].iter().sum::<f64>() / 10_000.0;
            assert!((mean - 0.5).abs() < 0.02);
        }
        assert!(pearson(&cols[0], &cols[1]).abs() < 0.05);
        assert!(pearson(&cols[1], &cols[2]).abs() < 0.05);
    }

    #[test]
    fn target_correlation_reproduced() {
        let mut sigma = DMatrix::identity(2, 2);
        sigma[(0, 1)] = 0.5;
        sigma[(1, 0)] = 0.5;
        let x = draw_covariates(10_000, &sigma, &mut stream(3));
        let r = pearson(&x.column(0), &x.column(1));
        assert!((r - 0.5).abs() < 0.05, "{r}");
    }

    #[test]
    fn cdf_reference_values() {
        assert!((standard_normal_cdf(0.0) - 0.5).abs() < 1e-15);
        let q = standard_normal_cdf(1.959_963_984_540_054);
        assert!((q - 0.975).abs() < 1e-10, "{q}");
        let lo = standard_normal_cdf(-1.0);
        assert!((lo - 0.158_655_253_931_457_05).abs() < 1e-10, "{lo:e}");
    }

    #[test]
    fn projection_repairs_indefinite_matrix() {
        let bad = DMatrix::from_row_slice(3, 3, &[1.0, 0.9, -0.9, 0.9, 1.0, 0.9, -0.9, 0.9, 1.0]);
        assert!(bad.clone().cholesky().is_none());
        let fixed = nearest_positive_definite(&bad);
        assert!(fixed.clone().cholesky().is_some());
        for i in 0..3 {
            assert_eq!(fixed[(i, i)], 1.0);
        }
    }
}
