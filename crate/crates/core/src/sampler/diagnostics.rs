//! Split R-hat and bulk effective sample size.

use serde::Serialize;

use crate::distributions::special::norm_quantile;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamDiagnostic {
    pub name: String,
    /// Larger of the classic and the rank-normalized split R-hat.
    pub rhat: f64,
    pub rhat_classic: f64,
    pub rhat_rank: f64,
    pub ess_bulk: f64,
    /// All draws identical: R-hat is reported as 1.
    pub degenerate: bool,
}

/// Splits each chain into two halves, dropping the middle draw of odd
/// lengths.
fn split(chains: &[&[f64]]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let half = c.len() / 2;
        out.push(c[..half].to_vec());
        out.push(c[c.len() - half..].to_vec());
    }
    out
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Potential scale reduction over already-split chains of equal length.
fn rhat_of(chains: &[Vec<f64>]) -> f64 {
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = mean(&chains.iter().map(|c| var(c)).collect::<Vec<_>>());
    let b = n * var(&means);
    let var_plus = (n - 1.0) / n * w + b / n;
    if w == 0.0 {
        return if b == 0.0 { 1.0 } else { f64::INFINITY };
    }
    (var_plus / w).sqrt()
}

/// Normal scores of the pooled ranks (average ranks for ties).
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let total: usize = chains.iter().map(Vec::len).sum();
    let mut idx: Vec<(f64, usize, usize)> = Vec::with_capacity(total);
    for (c, chain) in chains.iter().enumerate() {
        for (k, v) in chain.iter().enumerate() {
            idx.push((*v, c, k));
        }
    }
    idx.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<Vec<f64>> = chains.iter().map(|c| vec![0.0; c.len()]).collect();
    let s = total as f64;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && idx[j + 1].0 == idx[i].0 {
            j += 1;
        }
        let rank = 0.5 * ((i + 1) + (j + 1)) as f64;
        let z = norm_quantile((rank - 0.375) / (s + 0.25));
        for e in &idx[i..=j] {
            out[e.1][e.2] = z;
        }
        i = j + 1;
    }
    out
}

fn autocov(x: &[f64], lag: usize) -> f64 {
    let n = x.len();
    let m = mean(x);
    (0..n - lag).map(|t| (x[t] - m) * (x[t + lag] - m)).sum::<f64>() / n as f64
}

/// Multi-chain ESS with Geyer's initial monotone positive-sequence
/// truncation.
fn ess_of(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains[0].len();
    if n < 4 {
        return f64::NAN;
    }
    let nf = n as f64;
    let w = mean(&chains.iter().map(|c| var(c)).collect::<Vec<_>>());
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let b_over_n = if m > 1 { var(&means) } else { 0.0 };
    let var_plus = (nf - 1.0) / nf * w + b_over_n;
    if !(var_plus > 0.0) {
        return f64::NAN;
    }
    let rho = |t: usize| {
        let acov = chains.iter().map(|c| autocov(c, t)).sum::<f64>() / m as f64;
        1.0 - (w - acov) / var_plus
    };
    let mut tau = -1.0;
    let mut prev_pair = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let mut pair = rho(t) + rho(t + 1);
        if pair < 0.0 {
            break;
        }
        if pair > prev_pair {
            pair = prev_pair;
        }
        tau += 2.0 * pair;
        prev_pair = pair;
        t += 2;
    }
    let total = (m * n) as f64;
    let tau = tau.max(1.0 / total.log10());
    total / tau
}

/// Diagnostics for one parameter across chains. Chains are truncated to a
/// common length.
pub fn param_diagnostic(name: &str, chains: &[&[f64]]) -> ParamDiagnostic {
    let len = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    let trimmed: Vec<&[f64]> = chains.iter().map(|c| &c[..len]).collect();
    let first = trimmed.first().and_then(|c| c.first()).copied();
    let degenerate = first.is_some_and(|f| trimmed.iter().all(|c| c.iter().all(|v| *v == f)));
    if len < 4 || degenerate {
        return ParamDiagnostic {
            name: name.to_string(),
            rhat: if degenerate { 1.0 } else { f64::NAN },
            rhat_classic: if degenerate { 1.0 } else { f64::NAN },
            rhat_rank: if degenerate { 1.0 } else { f64::NAN },
            ess_bulk: f64::NAN,
            degenerate,
        };
    }
    let halves = split(&trimmed);
    let ranked = rank_normalize(&halves);
    let rhat_classic = rhat_of(&halves);
    let rhat_rank = rhat_of(&ranked);
    ParamDiagnostic {
        name: name.to_string(),
        rhat: rhat_classic.max(rhat_rank),
        rhat_classic,
        rhat_rank,
        ess_bulk: ess_of(&ranked),
        degenerate,
    }
}
