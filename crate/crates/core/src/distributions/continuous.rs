use rand_distr::{Distribution, Gamma};

use super::special::{gamma_p, ln_beta, ln_gamma, HALF_LN_2PI, LN_PI};
use super::{check_finite, check_positive, DistError, Rng};

#[inline]
pub fn normal_log_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -HALF_LN_2PI - sd.ln() - 0.5 * z * z
}

#[inline]
pub fn bernoulli_log_pmf(outcome: bool, p: f64) -> f64 {
    if outcome {
        p.ln()
    } else {
        (-p).ln_1p()
    }
}

/// Normal(mean, sd).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalDist {
    pub mean: f64,
    pub sd: f64,
}

impl NormalDist {
    pub fn new(mean: f64, sd: f64) -> Result<Self, DistError> {
        check_finite("mean", mean)?;
        check_positive("sd", sd)?;
        Ok(Self { mean, sd })
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        normal_log_pdf(x, self.mean, self.sd)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        super::special::norm_cdf((x - self.mean) / self.sd)
    }

    pub fn sample(&self, rng: &mut Rng) -> f64 {
        rng.normal(self.mean, self.sd)
    }
}

/// Gamma with shape `k1` and rate `k2`; mean `k1 / k2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaDist {
    shape: f64,
    rate: f64,
    ln_norm: f64,
}

impl GammaDist {
    pub fn new(shape: f64, rate: f64) -> Result<Self, DistError> {
        check_positive("shape", shape)?;
        check_positive("rate", rate)?;
        Ok(Self { shape, rate, ln_norm: shape * rate.ln() - ln_gamma(shape) })
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        if x < 0.0 || x.is_nan() {
            return f64::NEG_INFINITY;
        }
        if x == 0.0 {
            return match self.shape.partial_cmp(&1.0) {
                Some(std::cmp::Ordering::Equal) => self.rate.ln(),
                Some(std::cmp::Ordering::Less) => f64::INFINITY,
                _ => f64::NEG_INFINITY,
            };
        }
        if x == f64::INFINITY {
            return f64::NEG_INFINITY;
        }
        self.ln_norm + (self.shape - 1.0) * x.ln() - self.rate * x
    }

    /// `F(x)` via the regularized lower incomplete gamma function.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        gamma_p(self.shape, self.rate * x)
    }

    pub fn sample(&self, rng: &mut Rng) -> f64 {
        Gamma::new(self.shape, 1.0 / self.rate)
            .expect("validated gamma parameters")
            .sample(rng)
    }
}

/// Beta(a, b) on (0, 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaDist {
    a: f64,
    b: f64,
    ln_b: f64,
}

impl BetaDist {
    pub fn new(a: f64, b: f64) -> Result<Self, DistError> {
        check_positive("a", a)?;
        check_positive("b", b)?;
        Ok(Self { a, b, ln_b: ln_beta(a, b) })
    }

    pub fn mean(&self) -> f64 {
        self.a / (self.a + self.b)
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        if !(x > 0.0 && x < 1.0) {
            return f64::NEG_INFINITY;
        }
        (self.a - 1.0) * x.ln() + (self.b - 1.0) * (-x).ln_1p() - self.ln_b
    }

    pub fn sample(&self, rng: &mut Rng) -> f64 {
        let x = GammaDist::new(self.a, 1.0).unwrap().sample(rng);
        let y = GammaDist::new(self.b, 1.0).unwrap().sample(rng);
        let s = x + y;
        if s > 0.0 {
            (x / s).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
        } else {
            // both shapes tiny: fall back to the Bernoulli limit
            if rng.bernoulli(self.mean()) {
                1.0 - f64::EPSILON / 2.0
            } else {
                f64::MIN_POSITIVE
            }
        }
    }
}

/// Cauchy(0, scale) truncated to the positive half-line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfCauchy {
    scale: f64,
}

impl HalfCauchy {
    pub fn new(scale: f64) -> Result<Self, DistError> {
        check_positive("scale", scale)?;
        Ok(Self { scale })
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        if x < 0.0 || x.is_nan() || x.is_infinite() {
            return f64::NEG_INFINITY;
        }
        let z = x / self.scale;
        std::f64::consts::LN_2 - LN_PI - self.scale.ln() - (z * z).ln_1p()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        2.0 / std::f64::consts::PI * (x / self.scale).atan()
    }

    pub fn sample(&self, rng: &mut Rng) -> f64 {
        self.scale * (0.5 * std::f64::consts::PI * rng.uniform()).tan()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_mean_identity() {
        let g = GammaDist::new(14.4, 1.0).unwrap();
        assert_eq!(g.mean(), 14.4);
        let g = GammaDist::new(2.3, 0.16).unwrap();
        assert!((g.mean() - 14.375).abs() < 1e-12);
    }

    #[test]
    fn gamma_cdf_limits_and_support() {
        let g = GammaDist::new(2.3, 0.16).unwrap();
        assert_eq!(g.cdf(0.0), 0.0);
        assert_eq!(g.cdf(-3.0), 0.0);
        assert_eq!(g.cdf(f64::INFINITY), 1.0);
        assert_eq!(g.log_pdf(-1.0), f64::NEG_INFINITY);
        assert!(g.log_pdf(3.0).is_finite());
    }

    #[test]
    fn gamma_log_pdf_matches_statrs() {
        use statrs::distribution::{Continuous, ContinuousCDF, Gamma as SGamma};
        let s = SGamma::new(2.3, 0.16).unwrap();
        let g = GammaDist::new(2.3, 0.16).unwrap();
        for &x in &[0.5, 4.0, 14.0, 30.0, 80.0] {
            assert!((g.log_pdf(x) - s.ln_pdf(x)).abs() < 1e-12);
            assert!((g.cdf(x) - s.cdf(x)).abs() < 1e-13);
        }
    }

    #[test]
    fn beta_uniform_is_flat() {
        let b = BetaDist::new(1.0, 1.0).unwrap();
        for &x in &[0.01, 0.3, 0.5, 0.99] {
            assert!(b.log_pdf(x).abs() < 1e-15);
        }
        assert_eq!(b.log_pdf(0.0), f64::NEG_INFINITY);
        assert_eq!(b.log_pdf(1.0), f64::NEG_INFINITY);
    }

    #[test]
    fn half_cauchy_normalization() {
        let h = HalfCauchy::new(0.5).unwrap();
        // density at zero = 2 / (π s)
        assert!((h.log_pdf(0.0) - (2.0 / (std::f64::consts::PI * 0.5)).ln()).abs() < 1e-15);
        assert_eq!(h.log_pdf(-0.1), f64::NEG_INFINITY);
        assert!((h.cdf(0.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(GammaDist::new(0.0, 1.0).is_err());
        assert!(BetaDist::new(1.0, -1.0).is_err());
        assert!(NormalDist::new(0.0, 0.0).is_err());
        assert!(HalfCauchy::new(f64::NAN).is_err());
    }

    #[test]
    fn bernoulli_pmf() {
        assert!((bernoulli_log_pmf(true, 0.25) - 0.25f64.ln()).abs() < 1e-16);
        assert!((bernoulli_log_pmf(false, 0.25) - 0.75f64.ln()).abs() < 1e-16);
        assert_eq!(bernoulli_log_pmf(true, 0.0), f64::NEG_INFINITY);
    }
}
