//! Priors and the joint log posterior.
//!
//! The posterior is a density over the natural-scale parameters. Person-level
//! random effects are normal on the log scale, so their density carries the
//! `-ln v_p - ln w_a - ln w_b` change of variables; likewise `w_d` carries
//! `-ln w_d`. Seroconversion indicators and times are integrated out.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, SeroRecord, SgObservation, SwabRecord};
use crate::distributions::special::{gamma_pq, ln_beta, log1m_expit, log_expit, HALF_LN_2PI};
use crate::distributions::{
    normal_log_pdf, truncnorm_log_pdf, BetaDist, GammaDist, HalfCauchy, InverseWishart3,
};
use crate::linalg::{Cholesky3, Mat3};
use crate::model::{
    derive_sg_geometry, detection_prob, sg_geometry_unchecked, shedding_indicator,
    swab_time_offset, tent, AssayConstants, PeakAlignmentConfig, PeakRegime, PopulationParams,
};
use crate::state::{ParameterState, PersonState, StateLayout};

/// Seroconversion covariate name bound to each person's latent peak `v_p`.
pub const PEAK_VP_COVARIATE: &str = "peak_vp";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LikelihoodError {
    #[error("state has {found} persons, dataset has {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("coefficient vector `{name}` has length {found}, wiring expects {expected}")]
    CoefficientMismatch { name: &'static str, expected: usize, found: usize },
    #[error("person `{0}` has no positive diagnostic swab")]
    NoPositiveSwabs(String),
    #[error("unknown covariate `{0}`")]
    UnknownCovariate(String),
    #[error("`{PEAK_VP_COVARIATE}` may only be used as a seroconversion covariate")]
    MisplacedPeakCovariate,
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
    #[error("inconsistent dataset: {0}")]
    Data(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalPrior {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaPrior {
    pub a: f64,
    pub b: f64,
}

impl NormalPrior {
    pub const fn new(mean: f64, sd: f64) -> Self {
        Self { mean, sd }
    }

    fn log_pdf(&self, x: f64) -> f64 {
        normal_log_pdf(x, self.mean, self.sd)
    }
}

impl GammaPrior {
    fn log_pdf(&self, x: f64) -> f64 {
        GammaDist::new(self.shape, self.rate).map_or(f64::NEG_INFINITY, |g| g.log_pdf(x))
    }
}

/// Prior hyperparameters and fixed constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub mu_lvp: NormalPrior,
    pub mu_lwa: NormalPrior,
    pub mu_lwb: NormalPrior,
    pub mu_lwd: NormalPrior,
    pub mu_td: NormalPrior,
    pub sigma_log_nu: f64,
    pub sigma_log_scale: Mat3,
    /// Prior s.d. of every covariate coefficient.
    pub beta_sd: f64,
    pub beta_c0: NormalPrior,
    pub alpha0: NormalPrior,
    pub alpha1: NormalPrior,
    pub alpha0_sg: NormalPrior,
    pub alpha1_sg: NormalPrior,
    pub delta_q: BetaPrior,
    pub gamma1: GammaPrior,
    pub gamma2: GammaPrior,
    pub kappa1: GammaPrior,
    pub kappa2: GammaPrior,
    pub sigma_yy_scale: f64,
    pub sigma_y_sg_scale: f64,
    pub sigma_lwd_scale: f64,
    /// Fixed s.d. of the `t_d` distribution.
    pub td_sd: f64,
    pub assay: AssayConstants,
    pub alignment: PeakAlignmentConfig,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            mu_lvp: NormalPrior::new(5.5f64.ln(), 0.5),
            mu_lwa: NormalPrior::new(4.0f64.ln(), 0.5),
            mu_lwb: NormalPrior::new(10.0f64.ln(), 0.5),
            mu_lwd: NormalPrior::new(4.0f64.ln(), 0.5),
            mu_td: NormalPrior::new(0.5, 1.0),
            sigma_log_nu: 5.0,
            sigma_log_scale: Mat3::diag([0.1, 0.1, 0.1]),
            beta_sd: 1.0,
            beta_c0: NormalPrior::new(0.0, 1.5),
            alpha0: NormalPrior::new(-5.3, 0.5),
            alpha1: NormalPrior::new(7.7, 1.0),
            alpha0_sg: NormalPrior::new(-5.3, 0.5),
            alpha1_sg: NormalPrior::new(7.7, 1.0),
            delta_q: BetaPrior { a: 2.0, b: 6.0 },
            gamma1: GammaPrior { shape: 2.0, rate: 1.0 },
            gamma2: GammaPrior { shape: 2.0, rate: 1.0 },
            kappa1: GammaPrior { shape: 4.0, rate: 1.0 },
            kappa2: GammaPrior { shape: 4.0, rate: 10.0 },
            sigma_yy_scale: 1.0,
            sigma_y_sg_scale: 1.0,
            sigma_lwd_scale: 0.5,
            td_sd: 2.0,
            assay: AssayConstants::default(),
            alignment: PeakAlignmentConfig::default(),
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<(), LikelihoodError> {
        let bad = |m: &str| Err(LikelihoodError::InvalidPrior(m.to_string()));
        let normals = [
            ("mu_lvp", self.mu_lvp),
            ("mu_lwa", self.mu_lwa),
            ("mu_lwb", self.mu_lwb),
            ("mu_lwd", self.mu_lwd),
            ("mu_td", self.mu_td),
            ("beta_c0", self.beta_c0),
            ("alpha0", self.alpha0),
            ("alpha1", self.alpha1),
            ("alpha0_sg", self.alpha0_sg),
            ("alpha1_sg", self.alpha1_sg),
        ];
        for (name, p) in normals {
            if !(p.sd > 0.0 && p.mean.is_finite()) {
                return bad(&format!("{name}: sd must be positive and mean finite"));
            }
        }
        let gammas = [
            ("gamma1", self.gamma1),
            ("gamma2", self.gamma2),
            ("kappa1", self.kappa1),
            ("kappa2", self.kappa2),
        ];
        for (name, g) in gammas {
            if !(g.shape > 0.0 && g.rate > 0.0) {
                return bad(&format!("{name}: shape and rate must be positive"));
            }
        }
        if !(self.delta_q.a > 0.0 && self.delta_q.b > 0.0) {
            return bad("delta_q: beta parameters must be positive");
        }
        let scales = [
            ("beta_sd", self.beta_sd),
            ("sigma_yy_scale", self.sigma_yy_scale),
            ("sigma_y_sg_scale", self.sigma_y_sg_scale),
            ("sigma_lwd_scale", self.sigma_lwd_scale),
            ("td_sd", self.td_sd),
        ];
        for (name, v) in scales {
            if !(v > 0.0 && v.is_finite()) {
                return bad(&format!("{name} must be positive"));
            }
        }
        if !(self.sigma_log_nu > 4.0) {
            return bad("sigma_log_nu must exceed 4");
        }
        if !self.sigma_log_scale.is_symmetric(1e-12) || self.sigma_log_scale.cholesky().is_none() {
            return bad("sigma_log_scale must be symmetric positive-definite");
        }
        self.assay.validate().map_err(|e| LikelihoodError::InvalidPrior(e.to_string()))?;
        self.alignment.validate().map_err(|e| LikelihoodError::InvalidPrior(e.to_string()))
    }

    /// Sum of all population-level prior densities.
    pub fn log_hyperprior(&self, pop: &PopulationParams) -> f64 {
        let Ok(iw) = InverseWishart3::new(self.sigma_log_nu, self.sigma_log_scale) else {
            return f64::NEG_INFINITY;
        };
        let half_cauchy = |scale: f64, x: f64| HalfCauchy::new(scale).map_or(f64::NEG_INFINITY, |h| h.log_pdf(x));
        let beta_terms: f64 = pop
            .beta_vp
            .iter()
            .chain(&pop.beta_wa)
            .chain(&pop.beta_wb)
            .chain(&pop.beta_c)
            .map(|b| normal_log_pdf(*b, 0.0, self.beta_sd))
            .sum();
        let delta = BetaDist::new(self.delta_q.a, self.delta_q.b).map_or(f64::NEG_INFINITY, |d| d.log_pdf(pop.delta_q));
        let lp = self.mu_lvp.log_pdf(pop.mu_lvp)
            + self.mu_lwa.log_pdf(pop.mu_lwa)
            + self.mu_lwb.log_pdf(pop.mu_lwb)
            + self.mu_lwd.log_pdf(pop.mu_lwd)
            + self.mu_td.log_pdf(pop.mu_td)
            + iw.log_pdf(&pop.sigma_log)
            + beta_terms
            + self.beta_c0.log_pdf(pop.beta_c0)
            + self.alpha0.log_pdf(pop.alpha0)
            + self.alpha1.log_pdf(pop.alpha1)
            + self.alpha0_sg.log_pdf(pop.alpha0_sg)
            + self.alpha1_sg.log_pdf(pop.alpha1_sg)
            + delta
            + self.gamma1.log_pdf(pop.gamma1)
            + self.gamma2.log_pdf(pop.gamma2)
            + self.kappa1.log_pdf(pop.kappa1)
            + self.kappa2.log_pdf(pop.kappa2)
            + half_cauchy(self.sigma_yy_scale, pop.sigma_yy)
            + half_cauchy(self.sigma_y_sg_scale, pop.sigma_y_sg)
            + half_cauchy(self.sigma_lwd_scale, pop.sigma_lwd);
        if lp.is_nan() {
            f64::NEG_INFINITY
        } else {
            lp
        }
    }
}

/// Covariate selections for each linear predictor.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CovariateWiring {
    pub x_vp: Vec<String>,
    pub x_wa: Vec<String>,
    pub x_wb: Vec<String>,
    pub x_c: Vec<String>,
}

impl CovariateWiring {
    /// Every distinct name referenced, in first-use order.
    pub fn referenced(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for n in self.x_vp.iter().chain(&self.x_wa).chain(&self.x_wb).chain(&self.x_c) {
            if !out.contains(n) {
                out.push(n.clone());
            }
        }
        out
    }
}

/// Sufficient statistics of one person's swab likelihood. They depend on
/// person parameters and data only, so detection and observation-scale
/// parameters can be updated without revisiting individual swabs.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SwabStats {
    /// `[S][B]` counts for the diagnostic assay.
    pub diag_counts: [[u32; 2]; 2],
    /// Summed false-positive log densities.
    pub diag_fp: f64,
    pub n_tp: u32,
    pub ssr_tp: f64,
    /// True positives below the LoQ.
    pub n_tp_q: u32,
    pub ssr_tp_q: f64,
    pub sg_counts: [[u32; 2]; 2],
    pub sg_fp: f64,
    pub sg_n_tp: u32,
    pub sg_ssr: f64,
    /// Set when the sgRNA geometry is infeasible for assayed swabs.
    pub infeasible: bool,
}

impl SwabStats {
    pub fn merge(&mut self, o: &SwabStats) {
        for s in 0..2 {
            for b in 0..2 {
                self.diag_counts[s][b] += o.diag_counts[s][b];
                self.sg_counts[s][b] += o.sg_counts[s][b];
            }
        }
        self.diag_fp += o.diag_fp;
        self.n_tp += o.n_tp;
        self.ssr_tp += o.ssr_tp;
        self.n_tp_q += o.n_tp_q;
        self.ssr_tp_q += o.ssr_tp_q;
        self.sg_fp += o.sg_fp;
        self.sg_n_tp += o.sg_n_tp;
        self.sg_ssr += o.sg_ssr;
        self.infeasible |= o.infeasible;
    }

    pub fn log_lik_diag(&self, pop: &PopulationParams) -> f64 {
        let bern = bernoulli_counts(&self.diag_counts, pop.alpha0, pop.alpha1);
        let var = pop.sigma_yy * pop.sigma_yy;
        let var_q = var * (1.0 + pop.delta_q);
        let n = self.n_tp as f64;
        let nq = self.n_tp_q as f64;
        let tp = -(n + nq) * HALF_LN_2PI - 0.5 * n * var.ln() - self.ssr_tp / (2.0 * var) - 0.5 * nq * var_q.ln()
            - self.ssr_tp_q / (2.0 * var_q);
        bern + self.diag_fp + tp
    }

    pub fn log_lik_sg(&self, pop: &PopulationParams) -> f64 {
        if self.infeasible {
            return f64::NEG_INFINITY;
        }
        let bern = bernoulli_counts(&self.sg_counts, pop.alpha0_sg, pop.alpha1_sg);
        let n = self.sg_n_tp as f64;
        let var = pop.sigma_y_sg * pop.sigma_y_sg;
        bern + self.sg_fp - n * HALF_LN_2PI - 0.5 * n * var.ln() - self.sg_ssr / (2.0 * var)
    }

    pub fn log_lik(&self, pop: &PopulationParams) -> f64 {
        self.log_lik_diag(pop) + self.log_lik_sg(pop)
    }
}

fn bernoulli_counts(counts: &[[u32; 2]; 2], a0: f64, a1: f64) -> f64 {
    let mut total = 0.0;
    for (s, row) in counts.iter().enumerate() {
        let eta = a0 + if s == 1 { a1 } else { 0.0 };
        if row[1] > 0 {
            total += row[1] as f64 * log_expit(eta);
        }
        if row[0] > 0 {
            total += row[0] as f64 * log1m_expit(eta);
        }
    }
    total
}

/// Log likelihood of one diagnostic swab.
pub fn loglik_diag_swab(
    swab: &SwabRecord,
    ref_peak_day: f64,
    person: &PersonState,
    pop: &PopulationParams,
    c: &AssayConstants,
) -> f64 {
    let s = swab_time_offset(swab.day as f64, ref_peak_day, person.t_p);
    let shedding = shedding_indicator(person.w_a, person.w_b, s);
    let p = detection_prob(pop.alpha0, pop.alpha1, shedding);
    let bern = if swab.b_diag { p.ln() } else { (-p).ln_1p() };
    if !swab.b_diag {
        return bern;
    }
    if !shedding {
        return bern + normal_log_pdf(swab.y_diag, c.false_pos_center_diag(), c.false_pos_sd);
    }
    let mu = tent(c.lod_diag, person.v_p, person.w_a, person.w_b, s);
    let var = pop.sigma_yy * pop.sigma_yy * if swab.q_flag { 1.0 + pop.delta_q } else { 1.0 };
    bern + normal_log_pdf(swab.y_diag, mu, var.sqrt())
}

/// Log likelihood of one sgRNA result; zero when not assayed.
pub fn loglik_sg_swab(
    swab: &SwabRecord,
    ref_peak_day: f64,
    person: &PersonState,
    pop: &PopulationParams,
    c: &AssayConstants,
) -> f64 {
    if !swab.sg.is_assayed() {
        return 0.0;
    }
    if !swab.b_diag {
        // sgRNA is never detected on a diagnostic-negative swab
        return if swab.sg.detected() { f64::NEG_INFINITY } else { 0.0 };
    }
    let Ok(g) = derive_sg_geometry(&person.diag(), &person.sg()) else {
        return f64::NEG_INFINITY;
    };
    let s = swab_time_offset(swab.day as f64, ref_peak_day, person.t_p) - person.t_d;
    let shedding = shedding_indicator(g.w_a, g.w_b, s);
    let p = detection_prob(pop.alpha0_sg, pop.alpha1_sg, shedding);
    match swab.sg {
        SgObservation::NotAssayed => 0.0,
        SgObservation::Negative => (-p).ln_1p(),
        SgObservation::Positive(y) if shedding => {
            p.ln() + normal_log_pdf(y, tent(c.lod_sg, g.v_p, g.w_a, g.w_b, s), pop.sigma_y_sg)
        }
        SgObservation::Positive(y) => {
            p.ln() + normal_log_pdf(y, c.false_pos_center_sg(), c.false_pos_sd)
        }
    }
}

/// Seroconversion probability on the log scale: `(ln p, ln(1 - p))`.
fn log_sero_prob(eta: f64) -> (f64, f64) {
    (log_expit(eta), log1m_expit(eta))
}

/// Marginal log likelihood of the DBS results given the onset day, with
/// seroconversion probability `expit(eta)` and Gamma onset-to-conversion law.
pub fn loglik_sero(sero: &SeroRecord, onset_day: f64, eta: f64, gamma: &GammaDist) -> f64 {
    let cdf_pair = |day: f64| {
        let t = (day - onset_day).max(0.0);
        gamma_pq(gamma.shape(), t * gamma.rate())
    };
    let (log_p, log_1mp) = log_sero_prob(eta);
    match *sero {
        SeroRecord::None => 0.0,
        SeroRecord::Right { last_negative } => {
            // ln[(1 - p) + p (1 - F)]
            let (f, sf) = cdf_pair(last_negative);
            if f < 0.5 {
                (-log_p.exp() * f).ln_1p()
            } else {
                log_add(log_1mp, log_p + sf.ln())
            }
        }
        SeroRecord::Left { first_positive } => log_p + cdf_pair(first_positive).0.ln(),
        SeroRecord::Interval { last_negative, first_positive } => {
            let (f_lo, sf_lo) = cdf_pair(last_negative);
            let (f_hi, sf_hi) = cdf_pair(first_positive);
            let mass = if f_lo > 0.5 { sf_lo - sf_hi } else { f_hi - f_lo };
            if mass > 0.0 {
                log_p + mass.ln()
            } else {
                f64::NEG_INFINITY
            }
        }
    }
}

/// Posterior probability that the person seroconverts, given the DBS results.
pub fn sero_indicator_posterior(sero: &SeroRecord, onset_day: f64, eta: f64, gamma: &GammaDist) -> f64 {
    match *sero {
        SeroRecord::None => crate::model::expit(eta),
        SeroRecord::Left { .. } | SeroRecord::Interval { .. } => 1.0,
        SeroRecord::Right { last_negative } => {
            let t = (last_negative - onset_day).max(0.0);
            let sf = gamma_pq(gamma.shape(), t * gamma.rate()).1;
            let (log_p, log_1mp) = log_sero_prob(eta);
            let num = log_p + sf.ln();
            (num - log_add(log_1mp, num)).exp()
        }
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Per-person data and covariates resolved against the wiring.
#[derive(Debug, Clone)]
pub struct PersonContext {
    pub ref_peak_day: f64,
    pub regime: PeakRegime,
    pub x_vp: Vec<f64>,
    pub x_wa: Vec<f64>,
    pub x_wb: Vec<f64>,
    /// Seroconversion covariates; the `peak_vp` slot holds 0 and is filled
    /// from the state.
    pub x_c: Vec<f64>,
    pub peak_slot: Option<usize>,
    /// Per-swab false-positive log densities (diagnostic, sgRNA).
    fp_diag: Vec<f64>,
    fp_sg: Vec<f64>,
}

/// Population quantities reused across all persons for one parameter value.
#[derive(Debug, Clone)]
pub struct PopCache {
    chol: Cholesky3,
    log_det: f64,
    gamma: GammaDist,
    ln_beta_q: f64,
}

impl PopCache {
    pub fn new(pop: &PopulationParams) -> Option<Self> {
        let chol = pop.sigma_log.cholesky()?;
        let gamma = GammaDist::new(pop.kappa1, pop.kappa2).ok()?;
        if !(pop.gamma1 > 0.0 && pop.gamma2 > 0.0 && pop.sigma_lwd > 0.0) {
            return None;
        }
        Some(Self { log_det: chol.log_det(), chol, gamma, ln_beta_q: ln_beta(pop.gamma1, pop.gamma2) })
    }

    pub fn gamma(&self) -> &GammaDist {
        &self.gamma
    }
}

/// Counts of likelihood contributions, for masking audits.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct TermCounts {
    pub diag_swab_terms: usize,
    pub sg_swab_terms: usize,
    pub sero_terms: usize,
}

/// Log posterior split into its additive components.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LogPosteriorTerms {
    pub hyperprior: f64,
    pub person_prior: f64,
    pub diag_swabs: f64,
    pub sg_swabs: f64,
    pub sero: f64,
    pub total: f64,
}

/// A dataset bound to priors and covariate wiring.
#[derive(Debug, Clone)]
pub struct Model {
    pub data: Dataset,
    pub prior: PriorConfig,
    pub wiring: CovariateWiring,
    persons: Vec<PersonContext>,
}

fn dot(beta: &[f64], x: &[f64]) -> f64 {
    beta.iter().zip(x).map(|(b, x)| b * x).sum()
}

impl Model {
    pub fn new(data: Dataset, prior: PriorConfig, wiring: CovariateWiring) -> Result<Self, LikelihoodError> {
        prior.validate()?;
        data.check().map_err(|e| LikelihoodError::Data(e.to_string()))?;
        if data.assay != prior.assay {
            return Err(LikelihoodError::Data("dataset and prior use different assay constants".into()));
        }
        for name in wiring.x_vp.iter().chain(&wiring.x_wa).chain(&wiring.x_wb) {
            if name == PEAK_VP_COVARIATE {
                return Err(LikelihoodError::MisplacedPeakCovariate);
            }
        }
        let resolve = |names: &[String]| -> Result<Vec<Option<usize>>, LikelihoodError> {
            names
                .iter()
                .map(|n| {
                    if n == PEAK_VP_COVARIATE {
                        Ok(None)
                    } else {
                        data.covariate_index(n).map(Some).ok_or_else(|| LikelihoodError::UnknownCovariate(n.clone()))
                    }
                })
                .collect()
        };
        let idx_vp = resolve(&wiring.x_vp)?;
        let idx_wa = resolve(&wiring.x_wa)?;
        let idx_wb = resolve(&wiring.x_wb)?;
        let idx_c = resolve(&wiring.x_c)?;
        let peak_slot = idx_c.iter().position(Option::is_none);
        let c = &prior.assay;
        let mut persons = Vec::with_capacity(data.len());
        for p in &data.persons {
            let ref_peak = p.ref_peak_day().ok_or_else(|| LikelihoodError::NoPositiveSwabs(p.id.clone()))?;
            let regime = prior.alignment.regime(
                ref_peak,
                p.first_day().expect("positive swab exists"),
                p.last_day().expect("positive swab exists"),
            );
            let pick = |idx: &[Option<usize>]| idx.iter().map(|i| i.map_or(0.0, |i| p.covariates[i])).collect();
            persons.push(PersonContext {
                ref_peak_day: ref_peak as f64,
                regime,
                x_vp: pick(&idx_vp),
                x_wa: pick(&idx_wa),
                x_wb: pick(&idx_wb),
                x_c: pick(&idx_c),
                peak_slot,
                fp_diag: p
                    .swabs
                    .iter()
                    .map(|s| normal_log_pdf(s.y_diag, c.false_pos_center_diag(), c.false_pos_sd))
                    .collect(),
                fp_sg: p
                    .swabs
                    .iter()
                    .map(|s| match s.sg {
                        SgObservation::Positive(y) => normal_log_pdf(y, c.false_pos_center_sg(), c.false_pos_sd),
                        _ => 0.0,
                    })
                    .collect(),
            });
        }
        Ok(Self { data, prior, wiring, persons })
    }

    pub fn n_persons(&self) -> usize {
        self.persons.len()
    }

    pub fn context(&self, i: usize) -> &PersonContext {
        &self.persons[i]
    }

    pub fn assay(&self) -> &AssayConstants {
        &self.prior.assay
    }

    pub fn layout(&self) -> StateLayout {
        StateLayout {
            x_vp: self.wiring.x_vp.clone(),
            x_wa: self.wiring.x_wa.clone(),
            x_wb: self.wiring.x_wb.clone(),
            x_c: self.wiring.x_c.clone(),
            person_ids: self.data.persons.iter().map(|p| p.id.clone()).collect(),
        }
    }

    pub fn term_counts(&self) -> TermCounts {
        let mut t = TermCounts::default();
        for p in &self.data.persons {
            t.diag_swab_terms += p.swabs.len();
            t.sg_swab_terms += p.swabs.iter().filter(|s| s.sg.is_assayed()).count();
            t.sero_terms += usize::from(p.sero.has_data());
        }
        t
    }

    /// Mean of `(ln v_p, ln w_a, ln w_b)` for person `i`.
    pub fn log_effect_mean(&self, i: usize, pop: &PopulationParams) -> [f64; 3] {
        let ctx = &self.persons[i];
        [
            pop.mu_lvp + dot(&pop.beta_vp, &ctx.x_vp),
            pop.mu_lwa + dot(&pop.beta_wa, &ctx.x_wa),
            pop.mu_lwb + dot(&pop.beta_wb, &ctx.x_wb),
        ]
    }

    /// Linear predictor of the seroconversion logit for person `i`.
    pub fn sero_eta(&self, i: usize, person: &PersonState, pop: &PopulationParams) -> f64 {
        let ctx = &self.persons[i];
        let mut eta = pop.beta_c0;
        for (k, (b, x)) in pop.beta_c.iter().zip(&ctx.x_c).enumerate() {
            eta += b * if Some(k) == ctx.peak_slot { person.v_p } else { *x };
        }
        eta
    }

    pub fn onset_day(&self, i: usize, person: &PersonState) -> f64 {
        self.persons[i].ref_peak_day + person.t_p - person.w_a
    }

    /// Person-level prior: log-normal random effects, `t_p`, `t_d`, `w_d`, `q`.
    pub fn person_prior(&self, i: usize, person: &PersonState, pop: &PopulationParams, cache: &PopCache) -> f64 {
        let ctx = &self.persons[i];
        let PersonState { v_p, w_a, w_b, t_p, t_d, w_d, q } = *person;
        if !(v_p > 0.0 && w_a > 0.0 && w_b > 0.0 && w_d > 0.0 && q > 0.0 && q < 1.0) {
            return f64::NEG_INFINITY;
        }
        let logs = [v_p.ln(), w_a.ln(), w_b.ln()];
        let mean = self.log_effect_mean(i, pop);
        let mvn = crate::distributions::mvn3_log_pdf(logs, mean, &cache.chol, cache.log_det) - logs.iter().sum::<f64>();
        let (m, sd, lo, hi) = self.prior.alignment.tp_prior(ctx.regime);
        let tp = truncnorm_log_pdf(t_p, m, sd, lo, hi);
        // t_d on [-w_a, w_b]; w'_a > 0 additionally excludes the left endpoint
        if t_d <= -w_a {
            return f64::NEG_INFINITY;
        }
        let td = truncnorm_log_pdf(t_d, pop.mu_td, self.prior.td_sd, -w_a, w_b);
        let room = w_b - t_d;
        if !(room > 1.0) || !(w_d < room) {
            return f64::NEG_INFINITY;
        }
        let lwd = w_d.ln();
        let wd = truncnorm_log_pdf(lwd, pop.mu_lwd, pop.sigma_lwd, 0.0, room.ln()) - lwd;
        let qd = (pop.gamma1 - 1.0) * q.ln() + (pop.gamma2 - 1.0) * (-q).ln_1p() - cache.ln_beta_q;
        let total = mvn + tp + td + wd + qd;
        if total.is_nan() {
            f64::NEG_INFINITY
        } else {
            total
        }
    }

    /// Swab sufficient statistics for person `i`.
    pub fn person_swab_stats(&self, i: usize, person: &PersonState) -> SwabStats {
        let ctx = &self.persons[i];
        let c = &self.prior.assay;
        let swabs = &self.data.persons[i].swabs;
        let mut st = SwabStats::default();
        let geom = sg_geometry_unchecked(&person.diag(), &person.sg());
        let sg_ok = geom.w_a > 0.0 && geom.w_b > 0.0;
        for (k, sw) in swabs.iter().enumerate() {
            let s = swab_time_offset(sw.day as f64, ctx.ref_peak_day, person.t_p);
            let shed = shedding_indicator(person.w_a, person.w_b, s);
            st.diag_counts[usize::from(shed)][usize::from(sw.b_diag)] += 1;
            if sw.b_diag {
                if shed {
                    let r = sw.y_diag - tent(c.lod_diag, person.v_p, person.w_a, person.w_b, s);
                    if sw.q_flag {
                        st.n_tp_q += 1;
                        st.ssr_tp_q += r * r;
                    } else {
                        st.n_tp += 1;
                        st.ssr_tp += r * r;
                    }
                } else {
                    st.diag_fp += ctx.fp_diag[k];
                }
            }
            if !sw.sg.is_assayed() || !sw.b_diag {
                continue;
            }
            if !sg_ok {
                st.infeasible = true;
                continue;
            }
            let s2 = s - person.t_d;
            let shed2 = shedding_indicator(geom.w_a, geom.w_b, s2);
            st.sg_counts[usize::from(shed2)][usize::from(sw.sg.detected())] += 1;
            if let SgObservation::Positive(y) = sw.sg {
                if shed2 {
                    let r = y - tent(c.lod_sg, geom.v_p, geom.w_a, geom.w_b, s2);
                    st.sg_n_tp += 1;
                    st.sg_ssr += r * r;
                } else {
                    st.sg_fp += ctx.fp_sg[k];
                }
            }
        }
        st
    }

    pub fn person_sero(&self, i: usize, person: &PersonState, pop: &PopulationParams, cache: &PopCache) -> f64 {
        let sero = &self.data.persons[i].sero;
        if !sero.has_data() {
            return 0.0;
        }
        loglik_sero(sero, self.onset_day(i, person), self.sero_eta(i, person, pop), &cache.gamma)
    }

    fn check_dims(&self, state: &ParameterState) -> Result<(), LikelihoodError> {
        if state.persons.len() != self.persons.len() {
            return Err(LikelihoodError::DimensionMismatch { expected: self.persons.len(), found: state.persons.len() });
        }
        let checks = [
            ("beta_vp", self.wiring.x_vp.len(), state.pop.beta_vp.len()),
            ("beta_wa", self.wiring.x_wa.len(), state.pop.beta_wa.len()),
            ("beta_wb", self.wiring.x_wb.len(), state.pop.beta_wb.len()),
            ("beta_c", self.wiring.x_c.len(), state.pop.beta_c.len()),
        ];
        for (name, expected, found) in checks {
            if expected != found {
                return Err(LikelihoodError::CoefficientMismatch { name, expected, found });
            }
        }
        Ok(())
    }

    pub fn log_prior(&self, state: &ParameterState) -> Result<f64, LikelihoodError> {
        let t = self.log_posterior_terms(state)?;
        Ok(t.hyperprior + t.person_prior)
    }

    pub fn log_posterior(&self, state: &ParameterState) -> Result<f64, LikelihoodError> {
        Ok(self.log_posterior_terms(state)?.total)
    }

    pub fn log_posterior_terms(&self, state: &ParameterState) -> Result<LogPosteriorTerms, LikelihoodError> {
        self.check_dims(state)?;
        let pop = &state.pop;
        let mut t = LogPosteriorTerms { hyperprior: self.prior.log_hyperprior(pop), ..Default::default() };
        let Some(cache) = PopCache::new(pop) else {
            t.total = f64::NEG_INFINITY;
            t.person_prior = f64::NEG_INFINITY;
            return Ok(t);
        };
        let mut stats = SwabStats::default();
        for (i, person) in state.persons.iter().enumerate() {
            t.person_prior += self.person_prior(i, person, pop, &cache);
            stats.merge(&self.person_swab_stats(i, person));
            t.sero += self.person_sero(i, person, pop, &cache);
        }
        t.diag_swabs = stats.log_lik_diag(pop);
        t.sg_swabs = stats.log_lik_sg(pop);
        let parts = [t.hyperprior, t.person_prior, t.diag_swabs, t.sg_swabs, t.sero];
        t.total = if parts.iter().any(|v| v.is_nan() || *v == f64::NEG_INFINITY) {
            f64::NEG_INFINITY
        } else {
            parts.iter().sum()
        };
        Ok(t)
    }

    /// Direct per-swab evaluation of the likelihood, used to cross-check the
    /// sufficient-statistic path.
    pub fn log_likelihood_direct(&self, state: &ParameterState) -> Result<f64, LikelihoodError> {
        self.check_dims(state)?;
        let pop = &state.pop;
        let Some(cache) = PopCache::new(pop) else {
            return Ok(f64::NEG_INFINITY);
        };
        let c = &self.prior.assay;
        let mut total = 0.0;
        for (i, person) in state.persons.iter().enumerate() {
            let ref_peak = self.persons[i].ref_peak_day;
            for sw in &self.data.persons[i].swabs {
                total += loglik_diag_swab(sw, ref_peak, person, pop, c);
                total += loglik_sg_swab(sw, ref_peak, person, pop, c);
            }
            total += self.person_sero(i, person, pop, &cache);
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DbsResult, Person};
    use crate::model::expit;

    fn pop() -> PopulationParams {
        PopulationParams {
            mu_lvp: 5.6f64.ln(),
            mu_lwa: 3.8f64.ln(),
            mu_lwb: 10.5f64.ln(),
            sigma_log: Mat3::diag([0.02, 0.09, 0.04]),
            beta_vp: vec![],
            beta_wa: vec![],
            beta_wb: vec![],
            alpha0: -5.3,
            alpha1: 7.7,
            alpha0_sg: -5.5,
            alpha1_sg: 7.6,
            sigma_yy: 0.5,
            delta_q: 0.25,
            sigma_y_sg: 0.6,
            mu_td: 0.5,
            mu_lwd: 4.2f64.ln(),
            sigma_lwd: 0.2,
            gamma1: 2.7,
            gamma2: 1.5,
            beta_c0: 1.1,
            beta_c: vec![],
            kappa1: 2.3,
            kappa2: 0.16,
        }
    }

    fn person() -> PersonState {
        PersonState { v_p: 5.6, w_a: 3.8, w_b: 10.5, t_p: 0.0, t_d: 0.6, w_d: 4.3, q: 0.64 }
    }

    fn swab(day: i32, y: f64, y_sg: Option<f64>) -> SwabRecord {
        SwabRecord::from_loads(day, y, y_sg, &AssayConstants::default()).unwrap()
    }

    #[test]
    fn negative_outside_shedding_is_log_tnr() {
        let p = pop();
        let c = AssayConstants::default();
        let sw = swab(30, 2.4, None);
        let v = loglik_diag_swab(&sw, 5.0, &person(), &p, &c);
        assert!((v - (1.0 - expit(p.alpha0)).ln()).abs() < 1e-14);
    }

    #[test]
    fn true_positive_at_mode() {
        let p = pop();
        let c = AssayConstants::default();
        let sw = swab(5, 8.0, None);
        let v = loglik_diag_swab(&sw, 5.0, &person(), &p, &c);
        let want = p.tpr().ln() - 0.5 * (2.0 * std::f64::consts::PI * 0.25).ln();
        assert!((v - want).abs() < 1e-12);
    }

    #[test]
    fn loq_density_ratio() {
        // both swabs at s = -1.9 where mu = 2.4 + 2.8; residual r from y
        let mut p = pop();
        p.delta_q = 0.25;
        let c = AssayConstants::default();
        let mut per = person();
        per.v_p = 3.0;
        let s = -1.9;
        let mu = tent(c.lod_diag, per.v_p, per.w_a, per.w_b, s);
        let y = 4.0;
        let r: f64 = y - mu;
        let q1 = swab(3, y, None);
        let mut q0 = q1;
        q0.q_flag = false;
        let ref_peak = 3.0 - s;
        let ratio = (loglik_diag_swab(&q1, ref_peak, &per, &p, &c) - loglik_diag_swab(&q0, ref_peak, &per, &p, &c)).exp();
        let d = p.delta_q;
        let var = p.sigma_yy * p.sigma_yy;
        let want = (1.0 / (1.0 + d)).sqrt() * (r * r / (2.0 * var) * (d / (1.0 + d))).exp();
        assert!((ratio - want).abs() < 1e-12, "{ratio} vs {want}");
    }

    #[test]
    fn sg_branches() {
        let p = pop();
        let c = AssayConstants::default();
        let per = person();
        let neg = swab(1, 2.4, None);
        assert_eq!(loglik_sg_swab(&neg, 5.0, &per, &p, &c), 0.0);
        // sg peak day: ref + t_p + t_d
        let g = derive_sg_geometry(&per.diag(), &per.sg()).unwrap();
        let mut at_peak = swab(6, 7.0, Some(c.lod_sg + g.v_p));
        at_peak.day = 6;
        let ref_peak = 6.0 - per.t_d;
        let v = loglik_sg_swab(&at_peak, ref_peak, &per, &p, &c);
        let want = p.tpr_sg().ln() - 0.5 * (2.0 * std::f64::consts::PI * p.sigma_y_sg.powi(2)).ln();
        assert!((v - want).abs() < 1e-12);
    }

    #[test]
    fn sero_none_is_zero_and_left_with_zero_p_is_neg_inf() {
        let g = GammaDist::new(2.3, 0.16).unwrap();
        assert_eq!(loglik_sero(&SeroRecord::None, 0.0, 1.0, &g), 0.0);
        let v = loglik_sero(&SeroRecord::Left { first_positive: 14.0 }, 0.0, f64::NEG_INFINITY, &g);
        assert_eq!(v, f64::NEG_INFINITY);
    }

    #[test]
    fn sero_right_matches_closed_form() {
        let g = GammaDist::new(2.3, 0.16).unwrap();
        let p: f64 = 0.75;
        let v = loglik_sero(&SeroRecord::Right { last_negative: 14.0 }, 2.0, crate::model::logit(p), &g);
        let want = ((1.0 - p) + p * (1.0 - g.cdf(12.0))).ln();
        assert!((v - want).abs() < 1e-13);
        // onset after the test day clamps F to zero
        let v = loglik_sero(&SeroRecord::Right { last_negative: 1.0 }, 3.0, crate::model::logit(p), &g);
        assert!(v.abs() < 1e-15);
    }

    #[test]
    fn interval_before_onset_is_impossible() {
        let g = GammaDist::new(2.3, 0.16).unwrap();
        let r = SeroRecord::Interval { last_negative: 1.0, first_positive: 14.0 };
        assert_eq!(loglik_sero(&r, 20.0, 1.0, &g), f64::NEG_INFINITY);
        assert!(loglik_sero(&r, 0.0, 1.0, &g).is_finite());
    }

    #[test]
    fn indicator_posterior_limits() {
        let g = GammaDist::new(2.3, 0.16).unwrap();
        let eta = crate::model::logit(0.75);
        assert_eq!(sero_indicator_posterior(&SeroRecord::Left { first_positive: 1.0 }, 0.0, eta, &g), 1.0);
        assert!((sero_indicator_posterior(&SeroRecord::None, 0.0, eta, &g) - 0.75).abs() < 1e-15);
        // right-censored before onset: no information
        let c = sero_indicator_posterior(&SeroRecord::Right { last_negative: 1.0 }, 5.0, eta, &g);
        assert!((c - 0.75).abs() < 1e-14);
    }

    fn toy_model() -> (Model, ParameterState) {
        let c = AssayConstants::default();
        let mk = |day, y, sg| SwabRecord::from_loads(day, y, sg, &c).unwrap();
        let a = Person::new(
            "a",
            vec![mk(1, 2.4, None), mk(2, 4.0, Some(2.4)), mk(3, 6.5, Some(5.0)), mk(4, 7.5, Some(5.5)), mk(6, 5.0, None)],
            vec![DbsResult { day: 1, positive: false }, DbsResult { day: 14, positive: true }],
        );
        let b = Person::new("b", vec![mk(3, 3.0, None), mk(5, 8.0, Some(6.0)), mk(9, 2.4, None)], vec![]);
        let mut data = Dataset::new(c);
        data.persons = vec![a, b];
        let model = Model::new(data, PriorConfig::default(), CovariateWiring::default()).unwrap();
        let per = PersonState { v_p: 5.0, w_a: 3.0, w_b: 8.0, t_p: 0.2, t_d: 0.5, w_d: 2.5, q: 0.6 };
        let state = ParameterState { pop: pop(), persons: vec![per, PersonState { t_p: -0.3, ..per }] };
        (model, state)
    }

    #[test]
    fn stats_path_matches_direct_evaluation() {
        let (model, state) = toy_model();
        let t = model.log_posterior_terms(&state).unwrap();
        let direct = model.log_likelihood_direct(&state).unwrap();
        assert!((t.diag_swabs + t.sg_swabs + t.sero - direct).abs() < 1e-10);
        assert!(t.total.is_finite());
    }

    #[test]
    fn support_violations_give_neg_inf() {
        let (model, mut state) = toy_model();
        state.persons[0].t_d = -state.persons[0].w_a - 0.1;
        assert_eq!(model.log_posterior(&state).unwrap(), f64::NEG_INFINITY);
        let (model, mut state) = toy_model();
        state.persons[1].w_d = state.persons[1].w_b - state.persons[1].t_d;
        assert_eq!(model.log_posterior(&state).unwrap(), f64::NEG_INFINITY);
        let (model, mut state) = toy_model();
        state.pop.sigma_log = Mat3::diag([1.0, -1.0, 1.0]);
        assert_eq!(model.log_posterior(&state).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let (model, mut state) = toy_model();
        state.persons.pop();
        assert!(matches!(model.log_posterior(&state), Err(LikelihoodError::DimensionMismatch { .. })));
    }

    #[test]
    fn empty_dataset_is_prior_only() {
        let model = Model::new(Dataset::new(AssayConstants::default()), PriorConfig::default(), CovariateWiring::default())
            .unwrap();
        let state = ParameterState { pop: pop(), persons: vec![] };
        let lp = model.log_posterior(&state).unwrap();
        assert_eq!(lp, model.prior.log_hyperprior(&state.pop));
    }

    #[test]
    fn person_without_positives_rejected() {
        let c = AssayConstants::default();
        let mut data = Dataset::new(c);
        data.persons = vec![Person::new("z", vec![SwabRecord::from_loads(1, 2.0, None, &c).unwrap()], vec![])];
        let err = Model::new(data, PriorConfig::default(), CovariateWiring::default()).unwrap_err();
        assert_eq!(err, LikelihoodError::NoPositiveSwabs("z".into()));
    }

    #[test]
    fn peak_covariate_uses_latent_peak() {
        let (model, _) = toy_model();
        let mut data = model.data.clone();
        for p in &mut data.persons {
            p.covariates = vec![];
        }
        let wiring = CovariateWiring { x_c: vec![PEAK_VP_COVARIATE.into()], ..Default::default() };
        let m = Model::new(data, PriorConfig::default(), wiring).unwrap();
        let mut p = pop();
        p.beta_c = vec![0.3];
        let per = person();
        assert!((m.sero_eta(0, &per, &p) - (p.beta_c0 + 0.3 * per.v_p)).abs() < 1e-15);
    }
}
