//! Goodness-of-fit checks of the samplers against reference CDFs from
//! `statrs`, and of the gamma CDF against numerical quadrature.

use statrs::distribution::{Beta, ChiSquared, ContinuousCDF, Gamma, Normal};
use statrs::function::gamma::ln_gamma;
use vlsero::distributions::{BetaDist, GammaDist, MvNormal3, Rng, TruncatedNormal};
use vlsero::linalg::Mat3;

pub const N_DRAWS: usize = 100_000;

/// Asymptotic one-sample KS critical value at level 0.001.
pub fn ks_critical_001(n: usize) -> f64 {
    (-(0.0005f64).ln() / 2.0).sqrt() / (n as f64).sqrt()
}

pub fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in xs.iter().enumerate() {
        let f = cdf(*x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    d
}

fn verdict(label: String, d: f64) -> Result<String, String> {
    let crit = ks_critical_001(N_DRAWS);
    let line = format!("{label}: D = {d:.5} (critical {crit:.5})");
    if d < crit { Ok(line) } else { Err(line) }
}

/// Reference truncated-normal CDF, using upper-tail differences when the
/// interval sits right of the mean.
fn truncnorm_cdf(mu: f64, sd: f64, lo: f64, hi: f64) -> impl Fn(f64) -> f64 {
    let n = Normal::new(mu, sd).unwrap();
    move |x: f64| {
        if lo > mu {
            (n.sf(lo) - n.sf(x)) / (n.sf(lo) - n.sf(hi))
        } else {
            (n.cdf(x) - n.cdf(lo)) / (n.cdf(hi) - n.cdf(lo))
        }
    }
}

pub const TRUNCNORM_CASES: [(f64, f64, f64, f64); 5] = [
    (0.0, 1.0, -1.0, 2.0),
    (-0.5, 1.0, f64::NEG_INFINITY, 1.0),
    (0.5, 2.0, -3.5, 9.0),
    (1.4, 0.2, 0.0, 1.1),
    (0.0, 1.0, 4.0, f64::INFINITY),
];

pub fn ks_truncnorm() -> Vec<Result<String, String>> {
    TRUNCNORM_CASES
        .iter()
        .enumerate()
        .map(|(k, &(mu, sd, lo, hi))| {
            let tn = TruncatedNormal::new(mu, sd, lo, hi).unwrap();
            let mut rng = Rng::new(71, k as u64);
            let xs: Vec<f64> = (0..N_DRAWS).map(|_| tn.sample(&mut rng)).collect();
            if let Some(x) = xs.iter().find(|x| !(lo <= **x && **x <= hi)) {
                return Err(format!("truncnorm{:?}: draw {x} outside support", (mu, sd, lo, hi)));
            }
            verdict(format!("truncnorm{:?}", (mu, sd, lo, hi)), ks_statistic(xs, truncnorm_cdf(mu, sd, lo, hi)))
        })
        .collect()
}

pub const GAMMA_CASES: [(f64, f64); 5] = [(0.5, 1.0), (1.0, 3.0), (2.3, 0.16), (4.0, 10.0), (40.0, 2.0)];

pub fn ks_gamma() -> Vec<Result<String, String>> {
    GAMMA_CASES
        .iter()
        .enumerate()
        .map(|(k, &(shape, rate))| {
            let g = GammaDist::new(shape, rate).unwrap();
            let reference = Gamma::new(shape, rate).unwrap();
            let mut rng = Rng::new(72, k as u64);
            let xs: Vec<f64> = (0..N_DRAWS).map(|_| g.sample(&mut rng)).collect();
            verdict(format!("gamma(shape {shape}, rate {rate})"), ks_statistic(xs, |x| reference.cdf(x)))
        })
        .collect()
}

pub const BETA_CASES: [(f64, f64); 5] = [(2.0, 6.0), (0.5, 0.5), (2.7, 1.5), (1.0, 1.0), (30.0, 4.0)];

pub fn ks_beta() -> Vec<Result<String, String>> {
    BETA_CASES
        .iter()
        .enumerate()
        .map(|(k, &(a, b))| {
            let d = BetaDist::new(a, b).unwrap();
            let reference = Beta::new(a, b).unwrap();
            let mut rng = Rng::new(73, k as u64);
            let xs: Vec<f64> = (0..N_DRAWS).map(|_| d.sample(&mut rng)).collect();
            verdict(format!("beta({a}, {b})"), ks_statistic(xs, |x| reference.cdf(x)))
        })
        .collect()
}

/// Marginals, a correlated projection and the squared Mahalanobis distance
/// (chi-square with 3 df) of MVN3 draws.
pub fn ks_mvn3() -> Vec<Result<String, String>> {
    let mean = [1.7, 1.3, 2.3];
    let cov = Mat3([[0.02, 0.005, 0.003], [0.005, 0.09, 0.01], [0.003, 0.01, 0.04]]);
    let mvn = MvNormal3::new(mean, &cov).unwrap();
    let mut rng = Rng::new(74, 0);
    let xs: Vec<[f64; 3]> = (0..N_DRAWS).map(|_| mvn.sample(&mut rng)).collect();
    let mut out = Vec::new();
    for j in 0..3 {
        let n = Normal::new(mean[j], cov.0[j][j].sqrt()).unwrap();
        let col: Vec<f64> = xs.iter().map(|x| x[j]).collect();
        out.push(verdict(format!("mvn3 marginal {j}"), ks_statistic(col, |x| n.cdf(x))));
    }
    let w = [1.0, -1.0, 1.0];
    let pm: f64 = (0..3).map(|i| w[i] * mean[i]).sum();
    let pv: f64 = (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| w[i] * w[j] * cov.0[i][j]).sum();
    let n = Normal::new(pm, pv.sqrt()).unwrap();
    let proj: Vec<f64> = xs.iter().map(|x| (0..3).map(|i| w[i] * x[i]).sum()).collect();
    out.push(verdict("mvn3 projection (1,-1,1)".into(), ks_statistic(proj, |x| n.cdf(x))));
    let inv = invert3(&cov.0);
    let m2: Vec<f64> = xs
        .iter()
        .map(|x| {
            let d = [x[0] - mean[0], x[1] - mean[1], x[2] - mean[2]];
            (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| d[i] * inv[i][j] * d[j]).sum()
        })
        .collect();
    let chi = ChiSquared::new(3.0).unwrap();
    out.push(verdict("mvn3 mahalanobis^2 vs chi2(3)".into(), ks_statistic(m2, |x| chi.cdf(x))));
    out
}

/// Cofactor inverse, independent of the crate's Cholesky routines.
fn invert3(a: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let c = |r0: usize, r1: usize, c0: usize, c1: usize| a[r0][c0] * a[r1][c1] - a[r0][c1] * a[r1][c0];
    let cof = [
        [c(1, 2, 1, 2), -c(1, 2, 0, 2), c(1, 2, 0, 1)],
        [-c(0, 2, 1, 2), c(0, 2, 0, 2), -c(0, 2, 0, 1)],
        [c(0, 1, 1, 2), -c(0, 1, 0, 2), c(0, 1, 0, 1)],
    ];
    let det: f64 = (0..3).map(|j| a[0][j] * cof[0][j]).sum();
    let mut inv = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            inv[i][j] = cof[j][i] / det;
        }
    }
    inv
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    // fixed panels first so narrow peaks are not missed by the first estimate
    let panels = 64;
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|k| {
            let (lo, hi) = (a + k as f64 * h, a + (k + 1) as f64 * h);
            let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
            let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
            simpson(f, lo, hi, fa, fm, fb, whole, tol / panels as f64, 40)
        })
        .sum()
}

/// Regularized lower incomplete gamma by quadrature of the density. For
/// shape below one, `u = t^a` removes the singularity at zero.
pub fn gamma_cdf_quadrature(shape: f64, rate: f64, x: f64) -> f64 {
    let z = rate * x;
    if z <= 0.0 {
        return 0.0;
    }
    let lg = ln_gamma(shape);
    if shape < 1.0 {
        let f = |u: f64| (-u.powf(1.0 / shape)).exp();
        integrate(&f, 0.0, z.powf(shape), 1e-14) / (shape * lg.exp())
    } else {
        let f = |t: f64| if t == 0.0 { if shape == 1.0 { 1.0 } else { 0.0 } } else { ((shape - 1.0) * t.ln() - t - lg).exp() };
        integrate(&f, 0.0, z, 1e-14)
    }
}

pub const GAMMA_CDF_SHAPES: [(f64, f64); 6] = [(0.5, 1.0), (1.0, 2.0), (2.3, 0.16), (4.0, 10.0), (9.5, 1.0), (40.0, 2.0)];

/// Largest absolute difference between the crate's gamma CDF and
/// quadrature over a grid from the 0.1% to the 99.9% quantile.
pub fn gamma_cdf_max_error() -> (f64, String) {
    let mut worst = (0.0, String::new());
    for &(shape, rate) in &GAMMA_CDF_SHAPES {
        let g = GammaDist::new(shape, rate).unwrap();
        let reference = Gamma::new(shape, rate).unwrap();
        let (lo, hi) = (reference.inverse_cdf(1e-3), reference.inverse_cdf(1.0 - 1e-3));
        for k in 0..=24 {
            let x = lo + (hi - lo) * k as f64 / 24.0;
            let err = (g.cdf(x) - gamma_cdf_quadrature(shape, rate, x)).abs();
            if err > worst.0 {
                worst = (err, format!("shape {shape}, rate {rate}, x {x:.4}"));
            }
        }
    }
    worst
}

/// Every kernel check, labelled.
pub fn all_checks() -> Vec<Result<String, String>> {
    let mut out = ks_truncnorm();
    out.extend(ks_gamma());
    out.extend(ks_beta());
    out.extend(ks_mvn3());
    let (err, at) = gamma_cdf_max_error();
    let line = format!("gamma cdf vs quadrature: max |diff| = {err:.2e} at {at}");
    out.push(if err <= 1e-10 { Ok(line) } else { Err(line) });
    out
}
