use super::special::{log_norm_interval, norm_cdf, norm_quantile, norm_sf, HALF_LN_2PI};
use super::{check_finite, check_positive, DistError, Rng};

/// Normal(mu, sigma) restricted to `[lo, hi]`; either bound may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedNormal {
    mu: f64,
    sigma: f64,
    lo: f64,
    hi: f64,
    log_z: f64,
}

/// Log density of a truncated normal; `-inf` outside `[lo, hi]` or when the
/// interval is empty.
#[inline]
pub fn truncnorm_log_pdf(x: f64, mu: f64, sigma: f64, lo: f64, hi: f64) -> f64 {
    if !(lo < hi) || x < lo || x > hi || x.is_nan() || !(sigma > 0.0) {
        return f64::NEG_INFINITY;
    }
    let z = (x - mu) / sigma;
    let log_z = log_norm_interval((lo - mu) / sigma, (hi - mu) / sigma);
    -HALF_LN_2PI - sigma.ln() - 0.5 * z * z - log_z
}

impl TruncatedNormal {
    pub fn new(mu: f64, sigma: f64, lo: f64, hi: f64) -> Result<Self, DistError> {
        check_finite("mu", mu)?;
        check_positive("sigma", sigma)?;
        if !(lo < hi) {
            return Err(DistError::EmptyInterval { lo, hi });
        }
        let log_z = log_norm_interval((lo - mu) / sigma, (hi - mu) / sigma);
        if log_z == f64::NEG_INFINITY {
            return Err(DistError::EmptyInterval { lo, hi });
        }
        Ok(Self { mu, sigma, lo, hi, log_z })
    }

    pub fn lower(&self) -> f64 {
        self.lo
    }

    pub fn upper(&self) -> f64 {
        self.hi
    }

    pub fn log_normalizer(&self) -> f64 {
        self.log_z
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        if x < self.lo || x > self.hi || x.is_nan() {
            return f64::NEG_INFINITY;
        }
        let z = (x - self.mu) / self.sigma;
        -HALF_LN_2PI - self.sigma.ln() - 0.5 * z * z - self.log_z
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.lo {
            return 0.0;
        }
        if x >= self.hi {
            return 1.0;
        }
        let a = (self.lo - self.mu) / self.sigma;
        let z = (x - self.mu) / self.sigma;
        (log_norm_interval(a, z) - self.log_z).exp().min(1.0)
    }

    /// Inverse-CDF draw, switching to exponential rejection when the interval
    /// sits so far in a tail that the CDF underflows.
    pub fn sample(&self, rng: &mut Rng) -> f64 {
        let a = (self.lo - self.mu) / self.sigma;
        let b = (self.hi - self.mu) / self.sigma;
        let z = if a >= 0.0 {
            upper_tail_draw(a, b, rng)
        } else if b <= 0.0 {
            -upper_tail_draw(-b, -a, rng)
        } else {
            let pa = norm_cdf(a);
            let pb = norm_cdf(b);
            norm_quantile(pa + rng.uniform() * (pb - pa))
        };
        (self.mu + self.sigma * z).clamp(self.lo, self.hi)
    }
}

/// Standard normal restricted to `[a, b]` with `0 <= a < b`.
fn upper_tail_draw(a: f64, b: f64, rng: &mut Rng) -> f64 {
    let qa = norm_sf(a);
    let qb = norm_sf(b);
    if qa > 1e-290 && qa - qb > 0.0 {
        let p = qa - rng.uniform() * (qa - qb);
        return -norm_quantile(p);
    }
    // Robert (1995) translated-exponential proposal.
    let alpha = 0.5 * (a + (a * a + 4.0).sqrt());
    loop {
        let z = a - rng.uniform().ln() / alpha;
        if z > b {
            continue;
        }
        let d = z - alpha;
        if rng.uniform().ln() <= -0.5 * d * d {
            return z;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_normal_at_mode() {
        let t = TruncatedNormal::new(0.0, 1.0, f64::NEG_INFINITY, f64::INFINITY).unwrap();
        assert!((t.log_pdf(0.0) - (-0.918_938_533_204_672_7)).abs() < 1e-15);
    }

    #[test]
    fn half_normal_normalization() {
        let t = TruncatedNormal::new(0.0, 1.0, 0.0, f64::INFINITY).unwrap();
        let expected = -0.918_938_533_204_672_7 - 0.125 + std::f64::consts::LN_2;
        assert!((t.log_pdf(0.5) - expected).abs() < 1e-15);
        assert_eq!(t.log_pdf(-0.1), f64::NEG_INFINITY);
    }

    #[test]
    fn empty_interval_is_error() {
        assert!(matches!(
            TruncatedNormal::new(0.0, 1.0, 1.0, 1.0),
            Err(DistError::EmptyInterval { .. })
        ));
        assert!(TruncatedNormal::new(0.0, 1.0, 2.0, -1.0).is_err());
        assert_eq!(truncnorm_log_pdf(0.0, 0.0, 1.0, 1.0, 0.0), f64::NEG_INFINITY);
    }

    #[test]
    fn free_function_matches_struct() {
        let t = TruncatedNormal::new(2.0, 3.0, -1.0, 4.0).unwrap();
        for &x in &[-1.0, 0.0, 1.5, 4.0] {
            assert_eq!(t.log_pdf(x), truncnorm_log_pdf(x, 2.0, 3.0, -1.0, 4.0));
        }
    }

    #[test]
    fn samples_respect_bounds_in_every_regime() {
        let mut rng = Rng::new(11, 0);
        let cases = [
            (0.0, 1.0, -0.5, 0.5),
            (0.0, 1.0, 3.0, f64::INFINITY),
            (0.0, 1.0, f64::NEG_INFINITY, -4.0),
            (0.0, 1.0, 40.0, 41.0),
            (0.0, 1.0, -60.0, -59.5),
            (1.4, 0.2, 0.0, 2.3),
        ];
        for (mu, s, lo, hi) in cases {
            let t = TruncatedNormal::new(mu, s, lo, hi).unwrap();
            for _ in 0..2000 {
                let x = t.sample(&mut rng);
                assert!(x >= lo && x <= hi, "{x} outside [{lo}, {hi}]");
            }
        }
    }

    #[test]
    fn cdf_endpoints() {
        let t = TruncatedNormal::new(2.0, 3.0, -1.0, 4.0).unwrap();
        assert_eq!(t.cdf(-1.0), 0.0);
        assert_eq!(t.cdf(4.0), 1.0);
        let mid = t.cdf(1.0);
        assert!(mid > 0.0 && mid < 1.0);
    }
}
