//! Random-walk proposal scales with Robbins–Monro adaptation.

use serde::Serialize;

use crate::distributions::Rng;

/// Robbins–Monro gain for the `t`-th adaptation step.
#[inline]
fn gain(t: u64) -> f64 {
    (t as f64 + 1.0).powf(-0.6)
}

const LOG_SCALE_BOUNDS: (f64, f64) = (-20.0, 5.0);

/// Metropolis acceptance given a log target difference. NaN differences
/// are rejected.
#[inline]
pub fn metropolis_accept(log_ratio: f64, rng: &mut Rng) -> bool {
    if log_ratio >= 0.0 {
        return true;
    }
    if !(log_ratio > f64::NEG_INFINITY) {
        return false;
    }
    rng.uniform().ln() < log_ratio
}

/// Acceptance counters split by phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct AcceptCounts {
    pub tried: u64,
    pub accepted: u64,
}

impl AcceptCounts {
    pub fn record(&mut self, accepted: bool) {
        self.tried += 1;
        self.accepted += u64::from(accepted);
    }

    pub fn rate(&self) -> f64 {
        if self.tried == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.tried as f64
        }
    }

    pub fn merge(&mut self, o: &AcceptCounts) {
        self.tried += o.tried;
        self.accepted += o.accepted;
    }
}

/// One-dimensional random-walk scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarAdapter {
    pub log_scale: f64,
    target: f64,
    steps: u64,
    pub counts: AcceptCounts,
}

impl ScalarAdapter {
    pub fn new(initial_scale: f64, target: f64) -> Self {
        Self { log_scale: initial_scale.ln(), target, steps: 0, counts: AcceptCounts::default() }
    }

    pub fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    pub fn propose(&self, x: f64, rng: &mut Rng) -> f64 {
        x + self.scale() * rng.std_normal()
    }

    /// Records the outcome and, when `adapt`, moves the log scale towards the
    /// target acceptance rate.
    pub fn update(&mut self, accepted: bool, adapt: bool) {
        self.counts.record(accepted);
        if adapt {
            let a = if accepted { 1.0 } else { 0.0 };
            self.log_scale = (self.log_scale + gain(self.steps) * (a - self.target))
                .clamp(LOG_SCALE_BOUNDS.0, LOG_SCALE_BOUNDS.1);
            self.steps += 1;
        }
    }
}

/// Multivariate random walk whose shape follows the empirical covariance
/// of the warmup draws.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockAdapter {
    dim: usize,
    pub log_scale: f64,
    target: f64,
    steps: u64,
    /// Row-major lower-triangular factor of the proposal shape.
    chol: Vec<f64>,
    mean: Vec<f64>,
    m2: Vec<f64>,
    n_obs: u64,
    pub counts: AcceptCounts,
}

impl BlockAdapter {
    pub fn new(dim: usize, initial_scale: f64, target: f64) -> Self {
        let mut chol = vec![0.0; dim * dim];
        for i in 0..dim {
            chol[i * dim + i] = initial_scale;
        }
        Self {
            dim,
            log_scale: 0.0,
            target,
            steps: 0,
            chol,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim * dim],
            n_obs: 0,
            counts: AcceptCounts::default(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn propose(&self, x: &[f64], rng: &mut Rng) -> Vec<f64> {
        let d = self.dim;
        let z: Vec<f64> = (0..d).map(|_| rng.std_normal()).collect();
        let s = self.log_scale.exp();
        (0..d)
            .map(|i| x[i] + s * (0..=i).map(|j| self.chol[i * d + j] * z[j]).sum::<f64>())
            .collect()
    }

    pub fn update(&mut self, accepted: bool, adapt: bool) {
        self.counts.record(accepted);
        if adapt {
            let a = if accepted { 1.0 } else { 0.0 };
            self.log_scale = (self.log_scale + gain(self.steps) * (a - self.target))
                .clamp(LOG_SCALE_BOUNDS.0, LOG_SCALE_BOUNDS.1);
            self.steps += 1;
        }
    }

    /// Adds a warmup draw to the running covariance (Welford).
    pub fn observe(&mut self, x: &[f64]) {
        let d = self.dim;
        self.n_obs += 1;
        let n = self.n_obs as f64;
        let delta: Vec<f64> = (0..d).map(|i| x[i] - self.mean[i]).collect();
        for i in 0..d {
            self.mean[i] += delta[i] / n;
        }
        for i in 0..d {
            for j in 0..d {
                self.m2[i * d + j] += delta[i] * (x[j] - self.mean[j]);
            }
        }
    }

    pub fn n_observed(&self) -> u64 {
        self.n_obs
    }

    /// Replaces the proposal shape by `2.38² / d` times the empirical
    /// covariance. Keeps the old shape if the estimate is not positive
    /// definite or there are too few draws.
    pub fn refresh(&mut self) {
        let d = self.dim;
        if self.n_obs < 2 * d as u64 + 2 {
            return;
        }
        let factor = 2.38 * 2.38 / d as f64 / (self.n_obs as f64 - 1.0);
        let mut cov: Vec<f64> = self.m2.iter().map(|v| v * factor).collect();
        for i in 0..d {
            for j in 0..i {
                let s = 0.5 * (cov[i * d + j] + cov[j * d + i]);
                cov[i * d + j] = s;
                cov[j * d + i] = s;
            }
            cov[i * d + i] += 1e-10;
        }
        if let Some(l) = cholesky(&cov, d) {
            self.chol = l;
            // the shape now carries the scale; restart the multiplier
            self.log_scale = 0.0;
        }
    }

    pub fn proposal_chol(&self) -> &[f64] {
        &self.chol
    }
}

/// Row-major Cholesky factor of a `d × d` symmetric matrix.
pub fn cholesky(a: &[f64], d: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * d + k] * l[j * d + k]).sum();
            if i == j {
                let v = a[i * d + i] - s;
                if !(v > 0.0) || !v.is_finite() {
                    return None;
                }
                l[i * d + i] = v.sqrt();
            } else {
                l[i * d + j] = (a[i * d + j] - s) / l[j * d + j];
            }
        }
    }
    Some(l)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_log_ratio_always_accepted() {
        let mut rng = Rng::new(1, 0);
        assert!((0..1000).all(|_| metropolis_accept(0.0, &mut rng)));
        assert!(!(0..1000).any(|_| metropolis_accept(f64::NEG_INFINITY, &mut rng)));
        assert!(!metropolis_accept(f64::NAN, &mut rng));
    }

    #[test]
    fn scalar_adaptation_reaches_target_on_quadratic() {
        // standard normal target
        let mut rng = Rng::new(5, 0);
        let mut ad = ScalarAdapter::new(10.0, 0.44);
        let mut x = 0.0;
        for _ in 0..20_000 {
            let y = ad.propose(x, &mut rng);
            let acc = metropolis_accept(-0.5 * (y * y - x * x), &mut rng);
            if acc {
                x = y;
            }
            ad.update(acc, true);
        }
        let frozen = ad.log_scale;
        ad.counts = AcceptCounts::default();
        for _ in 0..20_000 {
            let y = ad.propose(x, &mut rng);
            let acc = metropolis_accept(-0.5 * (y * y - x * x), &mut rng);
            if acc {
                x = y;
            }
            ad.update(acc, false);
        }
        assert_eq!(ad.log_scale, frozen);
        assert!((ad.counts.rate() - 0.44).abs() < 0.05, "rate {}", ad.counts.rate());
    }

    #[test]
    fn block_learns_covariance_shape() {
        let mut ad = BlockAdapter::new(2, 0.1, 0.23);
        let mut rng = Rng::new(9, 0);
        for _ in 0..5000 {
            let a = rng.std_normal();
            let b = rng.std_normal();
            ad.observe(&[2.0 * a, a + 0.5 * b]);
        }
        ad.refresh();
        let l = ad.proposal_chol();
        let k = 2.38 / 2f64.sqrt();
        assert!((l[0] / k - 2.0).abs() < 0.1);
        assert!((l[2] / k - 1.0).abs() < 0.1);
        assert!((l[3] / k - 0.5).abs() < 0.05);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        assert!(cholesky(&[1.0, 2.0, 2.0, 1.0], 2).is_none());
        let l = cholesky(&[4.0, 2.0, 2.0, 5.0], 2).unwrap();
        assert_eq!(l, vec![2.0, 0.0, 1.0, 2.0]);
    }
}
