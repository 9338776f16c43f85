//! Adaptive Metropolis-within-Gibbs sampler.
//!
//! One sweep updates, in a fixed order:
//!
//! 1. every person: seven scalar random walks on transformed coordinates
//!    `(ln v_p, ln w_a, ln w_b, t_p, t_d, ln w_d, logit q)` followed by one
//!    joint adaptive-covariance move of all seven;
//! 2. `Sigma_log` by its conjugate inverse-Wishart full conditional;
//! 3. every other population parameter by scalar random walk, then the
//!    correlated groups by adaptive-covariance block moves.
//!
//! Proposal scales adapt during warmup only and are frozen afterwards.

pub mod adapt;
pub mod diagnostics;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adapt::{metropolis_accept, AcceptCounts, BlockAdapter, ScalarAdapter};
pub use diagnostics::{param_diagnostic, ParamDiagnostic};

use crate::distributions::special::{expit, logit};
use crate::distributions::{InverseWishart3, Rng};
use crate::likelihood::{LikelihoodError, Model, PopCache, SwabStats};
use crate::linalg::Mat3;
use crate::model::{PeakRegime, PopulationParams};
use crate::state::{ParameterState, PersonState, StateLayout};

/// Chains draw from stream `CHAIN_STREAM_BASE + chain id`.
pub const CHAIN_STREAM_BASE: u64 = 1 << 40;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("invalid chain configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] LikelihoodError),
    #[error("chain {chain}: log posterior not finite at initialisation\n{dump}")]
    NonFiniteInit { chain: usize, dump: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    pub n_chains: usize,
    pub n_warmup: usize,
    pub n_samples: usize,
    pub thin: usize,
    pub seed: u64,
    /// Iterations between refreshes of the block proposal covariances
    /// and between adaptation trace rows.
    pub adapt_window: usize,
    pub target_scalar: f64,
    pub target_block: f64,
    /// Initial random-walk s.d. on the transformed scale.
    pub initial_step: f64,
    /// s.d. of the multiplicative jitter applied to the initial state.
    pub init_jitter: f64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            n_chains: 4,
            n_warmup: 2000,
            n_samples: 5000,
            thin: 5,
            seed: 1,
            adapt_window: 100,
            target_scalar: 0.44,
            target_block: 0.23,
            initial_step: 0.1,
            init_jitter: 0.05,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        let bad = |m: &str| Err(SamplerError::Config(m.to_string()));
        if self.n_chains == 0 {
            return bad("n_chains must be positive");
        }
        if self.thin == 0 {
            return bad("thin must be positive");
        }
        if self.adapt_window == 0 {
            return bad("adapt_window must be positive");
        }
        for t in [self.target_scalar, self.target_block] {
            if !(t > 0.0 && t < 1.0) {
                return bad("target acceptance rates must lie in (0, 1)");
            }
        }
        if !(self.initial_step > 0.0) || !(self.init_jitter >= 0.0) {
            return bad("initial_step must be positive and init_jitter non-negative");
        }
        Ok(())
    }

    pub fn n_draws(&self) -> usize {
        self.n_samples / self.thin
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptTraceRow {
    pub iteration: usize,
    pub group: String,
    pub log_scale: f64,
    pub acceptance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainOutput {
    pub chain_id: usize,
    pub seed: u64,
    pub stream: u64,
    pub names: Vec<String>,
    /// One row per retained iteration.
    pub draws: Vec<Vec<f64>>,
    pub logpost: Vec<f64>,
    /// Post-warmup acceptance rate per update group.
    pub acceptance: BTreeMap<String, f64>,
    pub adaptation: Vec<AdaptTraceRow>,
    /// Log proposal scales at the end of warmup, per update group.
    pub frozen_log_scales: BTreeMap<String, f64>,
}

impl ChainOutput {
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.draws.iter().map(|r| r[j]).collect()
    }

    pub fn column_by_name(&self, name: &str) -> Option<Vec<f64>> {
        self.names.iter().position(|n| n == name).map(|j| self.column(j))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Transform {
    Identity,
    Log,
    Logit,
}

impl Transform {
    fn forward(self, x: f64) -> f64 {
        match self {
            Transform::Identity => x,
            Transform::Log => x.ln(),
            Transform::Logit => logit(x),
        }
    }

    fn inverse(self, u: f64) -> f64 {
        match self {
            Transform::Identity => u,
            Transform::Log => u.exp(),
            Transform::Logit => expit(u),
        }
    }

    /// `ln |dx/du|` at `x`.
    fn log_jacobian(self, x: f64) -> f64 {
        match self {
            Transform::Identity => 0.0,
            Transform::Log => x.ln(),
            Transform::Logit => x.ln() + (-x).ln_1p(),
        }
    }
}

const SCOPE_PRIOR: u8 = 1;
const SCOPE_SWAB: u8 = 2;
const SCOPE_SERO: u8 = 4;

/// A population parameter updated by random walk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlobalParam {
    MuLvp,
    MuLwa,
    MuLwb,
    BetaVp(usize),
    BetaWa(usize),
    BetaWb(usize),
    Alpha0,
    Alpha1,
    Alpha0Sg,
    Alpha1Sg,
    SigmaYy,
    DeltaQ,
    SigmaYSg,
    MuTd,
    MuLwd,
    SigmaLwd,
    Gamma1,
    Gamma2,
    BetaC0,
    BetaC(usize),
    Kappa1,
    Kappa2,
}

impl GlobalParam {
    pub fn get(self, p: &PopulationParams) -> f64 {
        use GlobalParam::*;
        match self {
            MuLvp => p.mu_lvp,
            MuLwa => p.mu_lwa,
            MuLwb => p.mu_lwb,
            BetaVp(k) => p.beta_vp[k],
            BetaWa(k) => p.beta_wa[k],
            BetaWb(k) => p.beta_wb[k],
            Alpha0 => p.alpha0,
            Alpha1 => p.alpha1,
            Alpha0Sg => p.alpha0_sg,
            Alpha1Sg => p.alpha1_sg,
            SigmaYy => p.sigma_yy,
            DeltaQ => p.delta_q,
            SigmaYSg => p.sigma_y_sg,
            MuTd => p.mu_td,
            MuLwd => p.mu_lwd,
            SigmaLwd => p.sigma_lwd,
            Gamma1 => p.gamma1,
            Gamma2 => p.gamma2,
            BetaC0 => p.beta_c0,
            BetaC(k) => p.beta_c[k],
            Kappa1 => p.kappa1,
            Kappa2 => p.kappa2,
        }
    }

    pub fn set(self, p: &mut PopulationParams, v: f64) {
        use GlobalParam::*;
        let slot = match self {
            MuLvp => &mut p.mu_lvp,
            MuLwa => &mut p.mu_lwa,
            MuLwb => &mut p.mu_lwb,
            BetaVp(k) => &mut p.beta_vp[k],
            BetaWa(k) => &mut p.beta_wa[k],
            BetaWb(k) => &mut p.beta_wb[k],
            Alpha0 => &mut p.alpha0,
            Alpha1 => &mut p.alpha1,
            Alpha0Sg => &mut p.alpha0_sg,
            Alpha1Sg => &mut p.alpha1_sg,
            SigmaYy => &mut p.sigma_yy,
            DeltaQ => &mut p.delta_q,
            SigmaYSg => &mut p.sigma_y_sg,
            MuTd => &mut p.mu_td,
            MuLwd => &mut p.mu_lwd,
            SigmaLwd => &mut p.sigma_lwd,
            Gamma1 => &mut p.gamma1,
            Gamma2 => &mut p.gamma2,
            BetaC0 => &mut p.beta_c0,
            BetaC(k) => &mut p.beta_c[k],
            Kappa1 => &mut p.kappa1,
            Kappa2 => &mut p.kappa2,
        };
        *slot = v;
    }

    fn transform(self) -> Transform {
        use GlobalParam::*;
        match self {
            SigmaYy | SigmaYSg | SigmaLwd | Gamma1 | Gamma2 | Kappa1 | Kappa2 => Transform::Log,
            DeltaQ => Transform::Logit,
            _ => Transform::Identity,
        }
    }

    fn scope(self) -> u8 {
        use GlobalParam::*;
        match self {
            MuLvp | MuLwa | MuLwb | BetaVp(_) | BetaWa(_) | BetaWb(_) | MuTd | MuLwd | SigmaLwd
            | Gamma1 | Gamma2 => SCOPE_PRIOR,
            Alpha0 | Alpha1 | Alpha0Sg | Alpha1Sg | SigmaYy | DeltaQ | SigmaYSg => SCOPE_SWAB,
            BetaC0 | BetaC(_) | Kappa1 | Kappa2 => SCOPE_SERO,
        }
    }

    pub fn name(self, layout: &StateLayout) -> String {
        use GlobalParam::*;
        match self {
            MuLvp => "mu_lvp".into(),
            MuLwa => "mu_lwa".into(),
            MuLwb => "mu_lwb".into(),
            BetaVp(k) => format!("beta_vp[{}]", layout.x_vp[k]),
            BetaWa(k) => format!("beta_wa[{}]", layout.x_wa[k]),
            BetaWb(k) => format!("beta_wb[{}]", layout.x_wb[k]),
            Alpha0 => "alpha0".into(),
            Alpha1 => "alpha1".into(),
            Alpha0Sg => "alpha0_sg".into(),
            Alpha1Sg => "alpha1_sg".into(),
            SigmaYy => "sigma_yy".into(),
            DeltaQ => "delta_q".into(),
            SigmaYSg => "sigma_y_sg".into(),
            MuTd => "mu_td".into(),
            MuLwd => "mu_lwd".into(),
            SigmaLwd => "sigma_lwd".into(),
            Gamma1 => "gamma1".into(),
            Gamma2 => "gamma2".into(),
            BetaC0 => "beta_c0".into(),
            BetaC(k) => format!("beta_c[{}]", layout.x_c[k]),
            Kappa1 => "kappa1".into(),
            Kappa2 => "kappa2".into(),
        }
    }

    /// Every random-walk global for the given layout, in sweep order.
    pub fn all(layout: &StateLayout) -> Vec<GlobalParam> {
        use GlobalParam::*;
        let mut out = vec![MuLvp, MuLwa, MuLwb];
        out.extend((0..layout.x_vp.len()).map(BetaVp));
        out.extend((0..layout.x_wa.len()).map(BetaWa));
        out.extend((0..layout.x_wb.len()).map(BetaWb));
        out.extend([
            Alpha0, Alpha1, Alpha0Sg, Alpha1Sg, SigmaYy, DeltaQ, SigmaYSg, MuTd, MuLwd, SigmaLwd, Gamma1, Gamma2,
            BetaC0,
        ]);
        out.extend((0..layout.x_c.len()).map(BetaC));
        out.extend([Kappa1, Kappa2]);
        out
    }

    /// Groups with strong posterior correlation, moved jointly.
    fn blocks(layout: &StateLayout) -> Vec<Vec<GlobalParam>> {
        use GlobalParam::*;
        let mut out = vec![
            vec![Alpha0, Alpha1],
            vec![Alpha0Sg, Alpha1Sg],
            vec![SigmaYy, DeltaQ],
            vec![MuLwd, SigmaLwd],
            vec![Gamma1, Gamma2],
            vec![Kappa1, Kappa2],
        ];
        let mut sero = vec![BetaC0];
        sero.extend((0..layout.x_c.len()).map(BetaC));
        if sero.len() > 1 {
            out.push(sero);
        }
        for (mu, betas) in [
            (MuLvp, (0..layout.x_vp.len()).map(BetaVp).collect::<Vec<_>>()),
            (MuLwa, (0..layout.x_wa.len()).map(BetaWa).collect()),
            (MuLwb, (0..layout.x_wb.len()).map(BetaWb).collect()),
        ] {
            if !betas.is_empty() {
                let mut b = vec![mu];
                b.extend(betas);
                out.push(b);
            }
        }
        out
    }
}

const PERSON_TRANSFORMS: [Transform; 7] = [
    Transform::Log,
    Transform::Log,
    Transform::Log,
    Transform::Identity,
    Transform::Identity,
    Transform::Log,
    Transform::Logit,
];

const PERSON_GROUPS: [&str; 7] = [
    "person.ln_v_p",
    "person.ln_w_a",
    "person.ln_w_b",
    "person.t_p",
    "person.t_d",
    "person.ln_w_d",
    "person.logit_q",
];

fn person_to_u(p: &PersonState) -> [f64; 7] {
    let a = p.to_array();
    let mut u = [0.0; 7];
    for k in 0..7 {
        u[k] = PERSON_TRANSFORMS[k].forward(a[k]);
    }
    u
}

fn person_from_u(u: &[f64]) -> PersonState {
    let mut a = [0.0; 7];
    for k in 0..7 {
        a[k] = PERSON_TRANSFORMS[k].inverse(u[k]);
    }
    PersonState::from_array(a)
}

fn person_log_jacobian(p: &PersonState) -> f64 {
    p.to_array().iter().zip(PERSON_TRANSFORMS).map(|(x, t)| t.log_jacobian(*x)).sum()
}

/// Initial state: person trajectories read off the observed positive swabs,
/// population parameters at prior centres, then a small seeded jitter.
pub fn init_state(model: &Model, config: &ChainConfig, rng: &mut Rng) -> Result<ParameterState, SamplerError> {
    let prior = &model.prior;
    let lod = prior.assay.lod_diag;
    let layout = model.layout();
    let pop = PopulationParams {
        mu_lvp: prior.mu_lvp.mean,
        mu_lwa: prior.mu_lwa.mean,
        mu_lwb: prior.mu_lwb.mean,
        sigma_log: prior.sigma_log_scale.scale(1.0 / (prior.sigma_log_nu - 4.0)),
        beta_vp: vec![0.0; layout.x_vp.len()],
        beta_wa: vec![0.0; layout.x_wa.len()],
        beta_wb: vec![0.0; layout.x_wb.len()],
        alpha0: prior.alpha0.mean,
        alpha1: prior.alpha1.mean,
        alpha0_sg: prior.alpha0_sg.mean,
        alpha1_sg: prior.alpha1_sg.mean,
        sigma_yy: prior.sigma_yy_scale,
        delta_q: prior.delta_q.a / (prior.delta_q.a + prior.delta_q.b),
        sigma_y_sg: prior.sigma_y_sg_scale,
        mu_td: prior.mu_td.mean,
        mu_lwd: prior.mu_lwd.mean,
        sigma_lwd: prior.sigma_lwd_scale,
        gamma1: prior.gamma1.shape / prior.gamma1.rate,
        gamma2: prior.gamma2.shape / prior.gamma2.rate,
        beta_c0: prior.beta_c0.mean,
        beta_c: vec![0.0; layout.x_c.len()],
        kappa1: prior.kappa1.shape / prior.kappa1.rate,
        kappa2: prior.kappa2.shape / prior.kappa2.rate,
    };
    let cache = PopCache::new(&pop).ok_or_else(|| SamplerError::Config("prior centres give an invalid state".into()))?;
    let mut persons = Vec::with_capacity(model.n_persons());
    for (i, person) in model.data.persons.iter().enumerate() {
        let ctx = model.context(i);
        let positives: Vec<_> = person.swabs.iter().filter(|s| s.b_diag).collect();
        if positives.is_empty() {
            return Err(LikelihoodError::NoPositiveSwabs(person.id.clone()).into());
        }
        let peak_day = ctx.ref_peak_day;
        let peak_y = positives.iter().map(|s| s.y_diag).fold(f64::NEG_INFINITY, f64::max);
        let first = positives.first().map(|s| s.day as f64).unwrap_or(peak_day);
        let last = positives.last().map(|s| s.day as f64).unwrap_or(peak_day);
        let t_p = match ctx.regime {
            PeakRegime::Early => -0.5,
            PeakRegime::Central => 0.0,
            PeakRegime::Late => 0.5,
        };
        let jit = |rng: &mut Rng| (config.init_jitter * rng.std_normal()).exp();
        let v_p = (peak_y - lod).max(0.1) * jit(rng);
        let w_a = ((peak_day - first).max(0.5) + 0.5) * jit(rng);
        let mut w_b = ((last - peak_day).max(0.5) + 0.5) * jit(rng);
        let t_p = t_p + config.init_jitter * rng.std_normal();
        let t_d = 0.5 + config.init_jitter * rng.std_normal();
        let w_d = 2.0 * jit(rng);
        // sgRNA support needs w_b - t_d > w_d >= 1
        if w_b - t_d <= w_d + 0.5 {
            w_b = t_d + w_d + 0.5;
        }
        let q = expit(logit(0.6) + config.init_jitter * rng.std_normal());
        let mut p = PersonState { v_p, w_a, w_b, t_p, t_d, w_d, q };
        // move onset earlier until the antibody results are possible
        for _ in 0..60 {
            if model.person_sero(i, &p, &pop, &cache).is_finite() {
                break;
            }
            p.w_a += 1.0;
        }
        persons.push(p);
    }
    Ok(ParameterState { pop, persons })
}

fn dump_state(model: &Model, state: &ParameterState) -> String {
    let mut out = String::new();
    let Some(cache) = PopCache::new(&state.pop) else {
        return "population parameters invalid (covariance or shape parameters)".into();
    };
    out.push_str(&format!("hyperprior: {}\n", model.prior.log_hyperprior(&state.pop)));
    for (i, p) in state.persons.iter().enumerate() {
        let prior = model.person_prior(i, p, &state.pop, &cache);
        let swab = model.person_swab_stats(i, p).log_lik(&state.pop);
        let sero = model.person_sero(i, p, &state.pop, &cache);
        if !(prior + swab + sero).is_finite() {
            out.push_str(&format!(
                "person {}: prior {prior}, swabs {swab}, sero {sero}, state {p:?}\n",
                model.data.persons[i].id
            ));
        }
    }
    out
}

/// One MCMC chain with its cached likelihood terms.
pub struct Chain<'m> {
    model: &'m Model,
    layout: StateLayout,
    config: ChainConfig,
    pub state: ParameterState,
    cache: PopCache,
    hyper: f64,
    prior: Vec<f64>,
    stats: Vec<SwabStats>,
    sero: Vec<f64>,
    rng: Rng,
    globals: Vec<(GlobalParam, ScalarAdapter)>,
    global_blocks: Vec<(Vec<GlobalParam>, BlockAdapter)>,
    person_scalars: Vec<[ScalarAdapter; 7]>,
    person_blocks: Vec<BlockAdapter>,
    sigma_log_draws: u64,
    chain_id: usize,
}

impl<'m> Chain<'m> {
    pub fn new(model: &'m Model, config: &ChainConfig, chain_id: usize) -> Result<Self, SamplerError> {
        config.validate()?;
        let mut rng = Rng::new(config.seed, CHAIN_STREAM_BASE + chain_id as u64);
        let state = init_state(model, config, &mut rng)?;
        Self::from_state(model, config, chain_id, state, rng)
    }

    /// Starts a chain from a given state with a fresh stream.
    pub fn from_state(
        model: &'m Model,
        config: &ChainConfig,
        chain_id: usize,
        state: ParameterState,
        rng: Rng,
    ) -> Result<Self, SamplerError> {
        config.validate()?;
        let layout = model.layout();
        let lp = model.log_posterior(&state)?;
        if !lp.is_finite() {
            return Err(SamplerError::NonFiniteInit { chain: chain_id, dump: dump_state(model, &state) });
        }
        let cache = PopCache::new(&state.pop).expect("finite log posterior implies valid population");
        let n = model.n_persons();
        let step = config.initial_step;
        let globals = GlobalParam::all(&layout)
            .into_iter()
            .map(|g| (g, ScalarAdapter::new(step, config.target_scalar)))
            .collect();
        let global_blocks = GlobalParam::blocks(&layout)
            .into_iter()
            .map(|b| {
                let d = b.len();
                (b, BlockAdapter::new(d, step, config.target_block))
            })
            .collect();
        let mut chain = Self {
            model,
            layout,
            config: config.clone(),
            hyper: model.prior.log_hyperprior(&state.pop),
            prior: vec![0.0; n],
            stats: vec![SwabStats::default(); n],
            sero: vec![0.0; n],
            state,
            cache,
            rng,
            globals,
            global_blocks,
            person_scalars: (0..n)
                .map(|_| std::array::from_fn(|_| ScalarAdapter::new(step, config.target_scalar)))
                .collect(),
            person_blocks: (0..n).map(|_| BlockAdapter::new(7, step, config.target_block)).collect(),
            sigma_log_draws: 0,
            chain_id,
        };
        for i in 0..n {
            let p = chain.state.persons[i];
            chain.prior[i] = model.person_prior(i, &p, &chain.state.pop, &chain.cache);
            chain.stats[i] = model.person_swab_stats(i, &p);
            chain.sero[i] = model.person_sero(i, &p, &chain.state.pop, &chain.cache);
        }
        Ok(chain)
    }

    fn merged_stats(&self) -> SwabStats {
        let mut total = SwabStats::default();
        for s in &self.stats {
            total.merge(s);
        }
        total
    }

    /// Log posterior of the current state from the cached terms.
    pub fn log_posterior(&self) -> f64 {
        self.hyper
            + self.prior.iter().sum::<f64>()
            + self.merged_stats().log_lik(&self.state.pop)
            + self.sero.iter().sum::<f64>()
    }

    fn person_terms(&self, i: usize, p: &PersonState) -> Option<(f64, SwabStats, f64, f64)> {
        let pop = &self.state.pop;
        let prior = self.model.person_prior(i, p, pop, &self.cache);
        if !prior.is_finite() {
            return None;
        }
        let stats = self.model.person_swab_stats(i, p);
        let sero = self.model.person_sero(i, p, pop, &self.cache);
        let total = prior + stats.log_lik(pop) + sero + person_log_jacobian(p);
        total.is_finite().then_some((prior, stats, sero, total))
    }

    fn current_person_target(&self, i: usize) -> f64 {
        let p = &self.state.persons[i];
        self.prior[i] + self.stats[i].log_lik(&self.state.pop) + self.sero[i] + person_log_jacobian(p)
    }

    fn try_person(&mut self, i: usize, proposal: PersonState) -> bool {
        let current = self.current_person_target(i);
        let Some((prior, stats, sero, total)) = self.person_terms(i, &proposal) else {
            return false;
        };
        if metropolis_accept(total - current, &mut self.rng) {
            self.state.persons[i] = proposal;
            self.prior[i] = prior;
            self.stats[i] = stats;
            self.sero[i] = sero;
            true
        } else {
            false
        }
    }

    fn update_person(&mut self, i: usize, adapt: bool, observe: bool) {
        for k in 0..7 {
            let u = person_to_u(&self.state.persons[i]);
            let mut v = u;
            v[k] = self.person_scalars[i][k].propose(u[k], &mut self.rng);
            let accepted = self.try_person(i, person_from_u(&v));
            self.person_scalars[i][k].update(accepted, adapt);
        }
        let u = person_to_u(&self.state.persons[i]);
        let v = self.person_blocks[i].propose(&u, &mut self.rng);
        let accepted = self.try_person(i, person_from_u(&v));
        self.person_blocks[i].update(accepted, adapt);
        if observe {
            let u = person_to_u(&self.state.persons[i]);
            self.person_blocks[i].observe(&u);
        }
    }

    /// Evaluates a population proposal restricted to the scoped terms.
    /// Returns the new cached terms and the log target difference.
    fn global_delta(&self, pop: &PopulationParams, scope: u8) -> Option<(PopCache, f64, Vec<f64>, Vec<f64>, f64)> {
        let cache = PopCache::new(pop)?;
        let hyper = self.model.prior.log_hyperprior(pop);
        if !hyper.is_finite() {
            return None;
        }
        let mut delta = hyper - self.hyper;
        let mut prior = Vec::new();
        let mut sero = Vec::new();
        if scope & SCOPE_PRIOR != 0 {
            prior = (0..self.prior.len())
                .map(|i| self.model.person_prior(i, &self.state.persons[i], pop, &cache))
                .collect();
            delta += prior.iter().sum::<f64>() - self.prior.iter().sum::<f64>();
        }
        if scope & SCOPE_SWAB != 0 {
            let merged = self.merged_stats();
            delta += merged.log_lik(pop) - merged.log_lik(&self.state.pop);
        }
        if scope & SCOPE_SERO != 0 {
            sero = (0..self.sero.len())
                .map(|i| self.model.person_sero(i, &self.state.persons[i], pop, &cache))
                .collect();
            delta += sero.iter().sum::<f64>() - self.sero.iter().sum::<f64>();
        }
        delta.is_finite().then_some((cache, hyper, prior, sero, delta))
    }

    fn try_global(&mut self, params: &[GlobalParam], values: &[f64]) -> bool {
        let mut pop = self.state.pop.clone();
        let mut scope = 0;
        let mut jac = 0.0;
        for (g, v) in params.iter().zip(values) {
            if !v.is_finite() {
                return false;
            }
            let t = g.transform();
            jac += t.log_jacobian(*v) - t.log_jacobian(g.get(&self.state.pop));
            g.set(&mut pop, *v);
            scope |= g.scope();
        }
        let Some((cache, hyper, prior, sero, delta)) = self.global_delta(&pop, scope) else {
            return false;
        };
        if metropolis_accept(delta + jac, &mut self.rng) {
            self.state.pop = pop;
            self.cache = cache;
            self.hyper = hyper;
            if !prior.is_empty() {
                self.prior = prior;
            }
            if !sero.is_empty() {
                self.sero = sero;
            }
            true
        } else {
            false
        }
    }

    /// Random-walk update of a single population parameter.
    pub fn step_scalar(&mut self, index: usize, adapt: bool) -> bool {
        let (g, ad) = &self.globals[index];
        let (g, ad) = (*g, ad.clone());
        let t = g.transform();
        let u = t.forward(g.get(&self.state.pop));
        let v = t.inverse(ad.propose(u, &mut self.rng));
        let accepted = self.try_global(&[g], &[v]);
        self.globals[index].1.update(accepted, adapt);
        accepted
    }

    fn step_global_block(&mut self, index: usize, adapt: bool, observe: bool) {
        let params = self.global_blocks[index].0.clone();
        let u: Vec<f64> = params.iter().map(|g| g.transform().forward(g.get(&self.state.pop))).collect();
        let prop = self.global_blocks[index].1.propose(&u, &mut self.rng);
        let values: Vec<f64> = params.iter().zip(&prop).map(|(g, v)| g.transform().inverse(*v)).collect();
        let accepted = self.try_global(&params, &values);
        let ad = &mut self.global_blocks[index].1;
        ad.update(accepted, adapt);
        if observe {
            let u: Vec<f64> = params.iter().map(|g| g.transform().forward(g.get(&self.state.pop))).collect();
            self.global_blocks[index].1.observe(&u);
        }
    }

    /// Conjugate draw of `Sigma_log` given the person log effects.
    pub fn step_sigma_log(&mut self) {
        let pop = &self.state.pop;
        let mut scatter = Mat3::ZERO;
        for (i, p) in self.state.persons.iter().enumerate() {
            let m = self.model.log_effect_mean(i, pop);
            let l = p.log_effects();
            let r = [l[0] - m[0], l[1] - m[1], l[2] - m[2]];
            scatter = scatter.add(&Mat3::outer(r, r));
        }
        let prior = &self.model.prior;
        let nu = prior.sigma_log_nu + self.state.persons.len() as f64;
        let scale = prior.sigma_log_scale.add(&scatter).symmetrized();
        let iw = InverseWishart3::new(nu, scale).expect("scale stays positive definite");
        let draw = iw.sample(&mut self.rng);
        let mut new_pop = self.state.pop.clone();
        new_pop.sigma_log = draw;
        let Some(cache) = PopCache::new(&new_pop) else {
            return;
        };
        let prior_terms: Vec<f64> = (0..self.prior.len())
            .map(|i| self.model.person_prior(i, &self.state.persons[i], &new_pop, &cache))
            .collect();
        self.hyper = self.model.prior.log_hyperprior(&new_pop);
        self.state.pop = new_pop;
        self.cache = cache;
        self.prior = prior_terms;
        self.sigma_log_draws += 1;
    }

    /// One full sweep.
    pub fn sweep(&mut self, adapt: bool, observe: bool) {
        for i in 0..self.state.persons.len() {
            self.update_person(i, adapt, observe);
        }
        self.step_sigma_log();
        for k in 0..self.globals.len() {
            self.step_scalar(k, adapt);
        }
        for b in 0..self.global_blocks.len() {
            self.step_global_block(b, adapt, observe);
        }
    }

    fn refresh_blocks(&mut self) {
        self.person_blocks.iter_mut().for_each(BlockAdapter::refresh);
        self.global_blocks.iter_mut().for_each(|(_, b)| b.refresh());
    }

    fn group_summaries(&self) -> BTreeMap<String, (AcceptCounts, f64)> {
        let mut out: BTreeMap<String, (AcceptCounts, f64)> = BTreeMap::new();
        for (g, ad) in &self.globals {
            out.insert(g.name(&self.layout), (ad.counts, ad.log_scale));
        }
        for (params, ad) in &self.global_blocks {
            let name = format!("block[{}]", params.iter().map(|g| g.name(&self.layout)).collect::<Vec<_>>().join(","));
            out.insert(name, (ad.counts, ad.log_scale));
        }
        let n = self.person_scalars.len().max(1) as f64;
        for (k, group) in PERSON_GROUPS.iter().enumerate() {
            let mut c = AcceptCounts::default();
            let mut ls = 0.0;
            for ads in &self.person_scalars {
                c.merge(&ads[k].counts);
                ls += ads[k].log_scale / n;
            }
            out.insert(group.to_string(), (c, ls));
        }
        let mut c = AcceptCounts::default();
        let mut ls = 0.0;
        for b in &self.person_blocks {
            c.merge(&b.counts);
            ls += b.log_scale / n;
        }
        out.insert("person.block".into(), (c, ls));
        out
    }

    fn reset_counts(&mut self) {
        self.globals.iter_mut().for_each(|(_, a)| a.counts = AcceptCounts::default());
        self.global_blocks.iter_mut().for_each(|(_, a)| a.counts = AcceptCounts::default());
        for ads in &mut self.person_scalars {
            ads.iter_mut().for_each(|a| a.counts = AcceptCounts::default());
        }
        self.person_blocks.iter_mut().for_each(|a| a.counts = AcceptCounts::default());
    }

    /// Runs warmup and sampling.
    pub fn run(mut self) -> ChainOutput {
        let cfg = self.config.clone();
        let observe_from = cfg.n_warmup / 4;
        let mut adaptation = Vec::new();
        for it in 0..cfg.n_warmup {
            self.sweep(true, it >= observe_from);
            if (it + 1) % cfg.adapt_window == 0 {
                if it >= observe_from {
                    self.refresh_blocks();
                }
                for (group, (counts, ls)) in self.group_summaries() {
                    adaptation.push(AdaptTraceRow { iteration: it + 1, group, log_scale: ls, acceptance: counts.rate() });
                }
                self.reset_counts();
            }
        }
        let frozen_log_scales = self.group_summaries().into_iter().map(|(k, (_, ls))| (k, ls)).collect();
        self.reset_counts();
        let mut draws = Vec::with_capacity(cfg.n_draws());
        let mut logpost = Vec::with_capacity(cfg.n_draws());
        for it in 0..cfg.n_samples {
            self.sweep(false, false);
            if (it + 1) % cfg.thin == 0 {
                draws.push(self.layout.flatten(&self.state));
                logpost.push(self.log_posterior());
            }
        }
        let acceptance = self.group_summaries().into_iter().map(|(k, (c, _))| (k, c.rate())).collect();
        ChainOutput {
            chain_id: self.chain_id,
            seed: cfg.seed,
            stream: CHAIN_STREAM_BASE + self.chain_id as u64,
            names: self.layout.names(),
            draws,
            logpost,
            acceptance,
            adaptation,
            frozen_log_scales,
        }
    }
}

pub fn run_chain(model: &Model, config: &ChainConfig, chain_id: usize) -> Result<ChainOutput, SamplerError> {
    Ok(Chain::new(model, config, chain_id)?.run())
}

/// Runs all chains in parallel; output order follows chain id.
pub fn run(model: &Model, config: &ChainConfig) -> Result<Vec<ChainOutput>, SamplerError> {
    config.validate()?;
    (0..config.n_chains).into_par_iter().map(|c| run_chain(model, config, c)).collect()
}

/// R-hat and bulk ESS for every column.
pub fn diagnostics(outputs: &[ChainOutput]) -> Vec<ParamDiagnostic> {
    let Some(first) = outputs.first() else {
        return Vec::new();
    };
    let cols: Vec<usize> = (0..first.names.len()).collect();
    cols.par_iter()
        .map(|&j| {
            let chains: Vec<Vec<f64>> = outputs.iter().map(|o| o.column(j)).collect();
            let refs: Vec<&[f64]> = chains.iter().map(Vec::as_slice).collect();
            param_diagnostic(&first.names[j], &refs)
        })
        .collect()
}
