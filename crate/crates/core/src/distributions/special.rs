//! Special functions: normal CDF/quantile in log space, log-gamma and the
//! regularized incomplete gamma function.

use std::f64::consts::FRAC_1_SQRT_2;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

const MAX_ITER: usize = 500;

#[inline]
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

#[inline]
pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Standard normal CDF.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal survival function `1 - Φ(x)`, accurate in the upper tail.
#[inline]
pub fn norm_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

/// `ln Φ(x)`, finite for every finite `x`.
pub fn log_norm_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x == f64::INFINITY {
        return 0.0;
    }
    if x == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if x > 0.0 {
        (-norm_sf(x)).ln_1p()
    } else if x > -37.0 {
        norm_cdf(x).ln()
    } else {
        // asymptotic expansion of the Mills ratio
        let x2 = x * x;
        let inv = 1.0 / x2;
        let series = 1.0 - inv * (1.0 - 3.0 * inv * (1.0 - 5.0 * inv * (1.0 - 7.0 * inv)));
        -0.5 * x2 - (-x).ln() - HALF_LN_2PI + series.ln()
    }
}

/// `ln(Φ(b) - Φ(a))` for `a < b`, stable in both tails.
pub fn log_norm_interval(a: f64, b: f64) -> f64 {
    if !(a < b) {
        return f64::NEG_INFINITY;
    }
    if a >= 0.0 {
        // both in upper tail: Q(a) - Q(b)
        let la = log_norm_cdf(-a);
        let lb = log_norm_cdf(-b);
        la + (-(lb - la).exp()).ln_1p()
    } else if b <= 0.0 {
        let la = log_norm_cdf(a);
        let lb = log_norm_cdf(b);
        lb + (-(la - lb).exp()).ln_1p()
    } else {
        (-norm_sf(b) - norm_cdf(a)).ln_1p()
    }
}

/// Inverse standard normal CDF (Wichura's AS 241, PPND16).
pub fn norm_quantile(p: f64) -> f64 {
    if p.is_nan() || !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = ((((((r * 2509.080_928_730_122_7 + 33430.575_583_588_13) * r
            + 67265.770_927_008_7)
            * r
            + 45921.953_931_549_87)
            * r
            + 13731.693_765_509_46)
            * r
            + 1971.590_950_306_551_4)
            * r
            + 133.141_667_891_784_38)
            * r
            + 3.387_132_872_796_366_5;
        let den = ((((((r * 5226.495_278_852_545 + 28729.085_735_721_943) * r
            + 39307.895_800_092_71)
            * r
            + 21213.794_301_586_597)
            * r
            + 5394.196_021_424_751)
            * r
            + 687.187_007_492_057_9)
            * r
            + 42.313_330_701_600_91)
            * r
            + 1.0;
        return q * num / den;
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((r * 7.745_450_142_783_414e-4 + 0.022_723_844_989_269_184) * r
            + 0.241_780_725_177_450_6)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_546)
            * r
            + 1.423_437_110_749_683_5;
        let den = ((((((r * 1.050_750_071_644_416_9e-9 + 5.475_938_084_995_345e-4) * r
            + 0.015_198_666_563_616_457)
            * r
            + 0.148_103_976_427_480_07)
            * r
            + 0.689_767_334_985_1)
            * r
            + 1.676_384_830_183_803_8)
            * r
            + 2.053_191_626_637_759)
            * r
            + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((r * 2.010_334_399_292_288_1e-7 + 2.711_555_568_743_487_6e-5) * r
            + 0.001_242_660_947_388_078_4)
            * r
            + 0.026_532_189_526_576_124)
            * r
            + 0.296_560_571_828_504_9)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103;
        let den = ((((((r * 2.044_263_103_389_939_7e-15 + 1.421_511_758_316_446e-7) * r
            + 1.846_318_317_510_054_8e-5)
            * r
            + 7.868_691_311_456_133e-4)
            * r
            + 0.014_875_361_290_850_615)
            * r
            + 0.136_929_880_922_735_8)
            * r
            + 0.599_832_206_555_888)
            * r
            + 1.0;
        num / den
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// Regularized lower incomplete gamma `P(a, x)`.
///
/// Series for `x < a + 1`, Lentz continued fraction for `Q` otherwise.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    gamma_pq(a, x).0
}

/// Regularized upper incomplete gamma `Q(a, x) = 1 - P(a, x)`.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    gamma_pq(a, x).1
}

pub fn gamma_pq(a: f64, x: f64) -> (f64, f64) {
    if !(a > 0.0) || x.is_nan() {
        return (f64::NAN, f64::NAN);
    }
    if x <= 0.0 {
        return (0.0, 1.0);
    }
    if x == f64::INFINITY {
        return (1.0, 0.0);
    }
    let log_prefactor = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        let p = gamma_series(a, x, log_prefactor);
        (p, 1.0 - p)
    } else {
        let q = gamma_cont_frac(a, x, log_prefactor);
        (1.0 - q, q)
    }
}

fn gamma_series(a: f64, x: f64, log_prefactor: f64) -> f64 {
    let mut ap = a;
    let mut term = 1.0 / a;
    let mut sum = term;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * f64::EPSILON {
            break;
        }
    }
    (sum.ln() + log_prefactor).exp().min(1.0)
}

fn gamma_cont_frac(a: f64, x: f64, log_prefactor: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < f64::EPSILON {
            break;
        }
    }
    (h.ln() + log_prefactor).exp().min(1.0)
}

#[inline]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `ln expit(x)` without overflow.
#[inline]
pub fn log_expit(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// `ln(1 - expit(x))`.
#[inline]
pub fn log1m_expit(x: f64) -> f64 {
    log_expit(-x)
}

pub(crate) const LN_PI: f64 = 1.144_729_885_849_400_2;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_cdf_reference_values() {
        assert!((norm_cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((norm_cdf(1.96) - 0.975_002_104_851_780).abs() < 1e-14);
        assert!((norm_sf(5.0) - 2.866_515_718_791_939e-7).abs() < 1e-20);
    }

    #[test]
    fn log_norm_cdf_tails() {
        // ln Φ(-40) from the exact asymptotic value (mpmath)
        assert!((log_norm_cdf(-40.0) - (-804.608_442_013_753_8)).abs() < 1e-9);
        assert!((log_norm_cdf(-36.9) - norm_cdf(-36.9).ln()).abs() < 1e-10);
        // continuity across the switch point
        let a = log_norm_cdf(-37.0 + 1e-9);
        let b = log_norm_cdf(-37.0 - 1e-9);
        assert!((a - b).abs() < 1e-6);
        assert!(log_norm_cdf(10.0) < 0.0 && log_norm_cdf(10.0) > -1e-22);
    }

    #[test]
    fn log_norm_interval_regimes() {
        let direct = (norm_cdf(1.0) - norm_cdf(-0.5)).ln();
        assert!((log_norm_interval(-0.5, 1.0) - direct).abs() < 1e-14);
        let upper = (norm_sf(2.0) - norm_sf(3.0)).ln();
        assert!((log_norm_interval(2.0, 3.0) - upper).abs() < 1e-13);
        let lower = (norm_cdf(-2.0) - norm_cdf(-3.0)).ln();
        assert!((log_norm_interval(-3.0, -2.0) - lower).abs() < 1e-13);
        assert!(log_norm_interval(45.0, 46.0).is_finite());
        assert_eq!(log_norm_interval(1.0, 1.0), f64::NEG_INFINITY);
        assert!((log_norm_interval(f64::NEG_INFINITY, f64::INFINITY)).abs() < 1e-300);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for &x in &[-8.0, -5.2, -3.0, -1.0, -0.1, 0.0, 0.3, 1.7, 4.0, 5.0] {
            let p = norm_cdf(x);
            let back = norm_quantile(p);
            assert!((back - x).abs() < 1e-9 * (1.0 + x.abs()), "{x} -> {back}");
        }
        assert!((norm_quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-14);
    }

    #[test]
    fn incomplete_gamma_closed_forms() {
        // P(1, x) = 1 - e^{-x}
        for &x in &[0.1, 1.0, 2.5, 10.0, 40.0] {
            assert!((gamma_p(1.0, x) - (1.0 - (-x as f64).exp())).abs() < 1e-15);
        }
        // P(2, x) = 1 - (1 + x) e^{-x}
        for &x in &[0.5, 3.0, 3.5, 12.0] {
            let exact = 1.0 - (1.0 + x) * (-x as f64).exp();
            assert!((gamma_p(2.0, x) - exact).abs() < 1e-15);
        }
        assert_eq!(gamma_pq(2.3, 0.0), (0.0, 1.0));
        assert_eq!(gamma_pq(2.3, -1.0), (0.0, 1.0));
        assert_eq!(gamma_pq(2.3, f64::INFINITY), (1.0, 0.0));
        assert!(gamma_p(-1.0, 1.0).is_nan());
    }

    #[test]
    fn expit_helpers() {
        assert_eq!(expit(0.0), 0.5);
        assert!((log_expit(-800.0) + 800.0).abs() < 1e-12);
        assert!(log1m_expit(800.0).is_finite());
        assert!((logit(expit(1.3)) - 1.3).abs() < 1e-14);
    }
}
