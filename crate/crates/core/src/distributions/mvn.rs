use std::f64::consts::PI;

use super::special::{ln_gamma, LN_2PI};
use super::{check_positive, DistError, GammaDist, Rng};
use crate::linalg::{Cholesky3, Mat3};

/// Trivariate normal, evaluated through the Cholesky factor of its covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MvNormal3 {
    mean: [f64; 3],
    chol: Cholesky3,
    log_det: f64,
}

impl MvNormal3 {
    pub fn new(mean: [f64; 3], cov: &Mat3) -> Result<Self, DistError> {
        let chol = cov.cholesky().ok_or(DistError::NotPositiveDefinite)?;
        Ok(Self::from_cholesky(mean, chol))
    }

    pub fn from_cholesky(mean: [f64; 3], chol: Cholesky3) -> Self {
        Self { mean, chol, log_det: chol.log_det() }
    }

    pub fn log_pdf(&self, x: [f64; 3]) -> f64 {
        mvn3_log_pdf(x, self.mean, &self.chol, self.log_det)
    }

    pub fn sample(&self, rng: &mut Rng) -> [f64; 3] {
        let z = [rng.std_normal(), rng.std_normal(), rng.std_normal()];
        let lz = self.chol.mul_lower(z);
        [self.mean[0] + lz[0], self.mean[1] + lz[1], self.mean[2] + lz[2]]
    }
}

/// Log density with a precomputed factor and log-determinant.
#[inline]
pub(crate) fn mvn3_log_pdf(x: [f64; 3], mean: [f64; 3], chol: &Cholesky3, log_det: f64) -> f64 {
    let r = [x[0] - mean[0], x[1] - mean[1], x[2] - mean[2]];
    -1.5 * LN_2PI - 0.5 * log_det - 0.5 * chol.quad_form_inv(r)
}

/// Inverse-Wishart(ν, Ψ) on 3×3 covariance matrices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverseWishart3 {
    nu: f64,
    scale: Mat3,
    scale_chol: Cholesky3,
}

fn ln_multigamma3(a: f64) -> f64 {
    1.5 * PI.ln() + ln_gamma(a) + ln_gamma(a - 0.5) + ln_gamma(a - 1.0)
}

impl InverseWishart3 {
    /// Requires `nu > 2` (proper density) and a positive-definite scale.
    pub fn new(nu: f64, scale: Mat3) -> Result<Self, DistError> {
        check_positive("nu", nu - 2.0)?;
        let scale_chol = scale.cholesky().ok_or(DistError::NotPositiveDefinite)?;
        Ok(Self { nu, scale, scale_chol })
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn scale(&self) -> &Mat3 {
        &self.scale
    }

    /// `Ψ / (ν - 4)`, defined for `ν > 4`.
    pub fn mean(&self) -> Mat3 {
        self.scale.scale(1.0 / (self.nu - 4.0))
    }

    pub fn log_pdf(&self, sigma: &Mat3) -> f64 {
        let Some(chol) = sigma.cholesky() else {
            return f64::NEG_INFINITY;
        };
        if !sigma.is_symmetric(1e-12 * (1.0 + sigma.trace().abs())) {
            return f64::NEG_INFINITY;
        }
        let p = 3.0;
        let tr = self.scale.mul(&chol.inverse()).trace();
        0.5 * self.nu * self.scale_chol.log_det()
            - 0.5 * self.nu * p * std::f64::consts::LN_2
            - ln_multigamma3(0.5 * self.nu)
            - 0.5 * (self.nu + p + 1.0) * chol.log_det()
            - 0.5 * tr
    }

    /// Bartlett draw of `W ~ Wishart(ν, Ψ⁻¹)`, returned as `W⁻¹`.
    pub fn sample(&self, rng: &mut Rng) -> Mat3 {
        let v = self.scale_chol.inverse();
        let l = v.cholesky().expect("inverse of a PD matrix is PD").factor();
        let mut a = Mat3::ZERO;
        for i in 0..3 {
            let shape = 0.5 * (self.nu - i as f64);
            let chi2 = 2.0 * GammaDist::new(shape, 1.0).unwrap().sample(rng);
            a.0[i][i] = chi2.sqrt();
            for j in 0..i {
                a.0[i][j] = rng.std_normal();
            }
        }
        let la = l.mul(&a);
        let w = la.mul(&la.transpose()).symmetrized();
        match w.cholesky() {
            Some(c) => c.inverse(),
            // unreachable for finite draws; keep the prior mean as a safe value
            None => self.mean(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_mvn_at_origin() {
        let m = MvNormal3::new([0.0; 3], &Mat3::identity()).unwrap();
        assert!((m.log_pdf([0.0; 3]) - (-1.5 * LN_2PI)).abs() < 1e-15);
    }

    #[test]
    fn mvn_diagonal_factorizes() {
        let cov = Mat3::diag([0.04, 0.09, 0.25]);
        let m = MvNormal3::new([1.0, 2.0, 3.0], &cov).unwrap();
        let x = [1.1, 1.7, 3.4];
        let sds = [0.2, 0.3, 0.5];
        let means = [1.0, 2.0, 3.0];
        let expected: f64 = (0..3)
            .map(|i| super::super::normal_log_pdf(x[i], means[i], sds[i]))
            .sum();
        assert!((m.log_pdf(x) - expected).abs() < 1e-13);
    }

    #[test]
    fn non_pd_covariance_is_error() {
        let bad = Mat3([[1.0, 2.0, 0.0], [2.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        assert_eq!(MvNormal3::new([0.0; 3], &bad), Err(DistError::NotPositiveDefinite));
        assert!(InverseWishart3::new(5.0, bad).is_err());
    }

    #[test]
    fn inverse_wishart_isotropic_closed_form() {
        // For Ψ = s·I and Σ = c·I the density reduces to closed form.
        let s = 0.1;
        let c: f64 = 0.3;
        let nu = 5.0;
        let iw = InverseWishart3::new(nu, Mat3::diag([s; 3])).unwrap();
        let p = 3.0;
        let expected = 0.5 * nu * p * s.ln()
            - 0.5 * nu * p * std::f64::consts::LN_2
            - ln_multigamma3(0.5 * nu)
            - 0.5 * (nu + p + 1.0) * p * c.ln()
            - 0.5 * p * s / c;
        assert!((iw.log_pdf(&Mat3::diag([c; 3])) - expected).abs() < 1e-12);
    }

    #[test]
    fn inverse_wishart_draws_are_pd() {
        let iw = InverseWishart3::new(5.0, Mat3::diag([0.1; 3])).unwrap();
        let mut rng = Rng::new(5, 0);
        for _ in 0..10_000 {
            let s = iw.sample(&mut rng);
            assert!(s.is_symmetric(0.0));
            assert!(s.cholesky().is_some());
        }
    }
}
