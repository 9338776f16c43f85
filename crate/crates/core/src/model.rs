//! Trajectory geometry, detection model and the typed parameter blocks.
//!
//! All loads are log10 copies/ml and all times are days. Person-level times
//! are measured from the latent diagnostic peak: `s = 0` at the peak, `s = -w_a`
//! at shedding onset and `s = w_b` at clearance. The sgRNA trajectory shares
//! the onset and peaks `t_d` days after the diagnostic peak.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::distributions::special::{expit, logit};
use crate::linalg::Mat3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid {what}: {detail}")]
    Invalid { what: &'static str, detail: String },
    #[error("sgRNA geometry rejected: {0}")]
    SgGeometry(String),
}

fn invalid(what: &'static str, detail: impl Into<String>) -> ModelError {
    ModelError::Invalid { what, detail: detail.into() }
}

/// Assay floors shared by the simulator, ingestion and the likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssayConstants {
    pub lod_diag: f64,
    pub lod_sg: f64,
    pub loq_diag: f64,
    /// Centre of the false-positive load distribution minus the LoD.
    pub false_pos_center_offset: f64,
    pub false_pos_sd: f64,
}

impl Default for AssayConstants {
    fn default() -> Self {
        Self {
            lod_diag: 2.4,
            lod_sg: 2.4,
            loq_diag: 4.9,
            false_pos_center_offset: 0.5,
            false_pos_sd: 0.5,
        }
    }
}

impl AssayConstants {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.lod_diag < self.loq_diag) {
            return Err(invalid("assay", "lod_diag must be below loq_diag"));
        }
        if !(self.false_pos_sd > 0.0) {
            return Err(invalid("assay", "false_pos_sd must be positive"));
        }
        if !(self.false_pos_center_offset > 0.0) {
            return Err(invalid("assay", "false_pos_center_offset must be positive"));
        }
        if !self.lod_sg.is_finite() {
            return Err(invalid("assay", "lod_sg must be finite"));
        }
        Ok(())
    }

    pub fn false_pos_center_diag(&self) -> f64 {
        self.lod_diag + self.false_pos_center_offset
    }

    pub fn false_pos_center_sg(&self) -> f64 {
        self.lod_sg + self.false_pos_center_offset
    }
}

/// Person-level diagnostic trajectory parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PersonDiagParams {
    /// Peak height above the LoD.
    pub v_p: f64,
    /// Onset to peak.
    pub w_a: f64,
    /// Peak to clearance.
    pub w_b: f64,
    /// Observed peak to latent peak (signed).
    pub t_p: f64,
}

/// Person-level sgRNA coupling parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PersonSgParams {
    /// Diagnostic latent peak to sgRNA latent peak (signed).
    pub t_d: f64,
    /// sgRNA clearance to diagnostic clearance.
    pub w_d: f64,
    /// sgRNA peak height as a fraction of the diagnostic peak height.
    pub q: f64,
}

/// Derived sgRNA tent: onset-to-peak, peak-to-clearance and peak height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgGeometry {
    pub w_a: f64,
    pub w_b: f64,
    pub v_p: f64,
}

impl PersonDiagParams {
    pub fn is_valid(&self) -> bool {
        self.v_p > 0.0
            && self.w_a > 0.0
            && self.w_b > 0.0
            && self.v_p.is_finite()
            && self.w_a.is_finite()
            && self.w_b.is_finite()
            && self.t_p.is_finite()
    }

    /// Onset day given the observed-peak study day.
    pub fn onset_day(&self, ref_peak_day: f64) -> f64 {
        ref_peak_day + self.t_p - self.w_a
    }
}

impl PersonSgParams {
    /// Checks the joint truncation of `(t_d, w_d)` against the diagnostic
    /// tent and that `q` lies in (0, 1).
    pub fn is_valid_for(&self, diag: &PersonDiagParams) -> bool {
        self.t_d > -diag.w_a
            && self.t_d <= diag.w_b
            && self.w_d >= 1.0
            && self.w_d < diag.w_b - self.t_d
            && self.q > 0.0
            && self.q < 1.0
    }
}

/// Primed geometry: `w'_a = w_a + t_d`, `w'_b = w_b - t_d - w_d`,
/// `v'_p = q v_p`. Both durations must be strictly positive.
pub fn derive_sg_geometry(
    diag: &PersonDiagParams,
    sg: &PersonSgParams,
) -> Result<SgGeometry, ModelError> {
    let g = sg_geometry_unchecked(diag, sg);
    if !(g.w_a > 0.0) {
        return Err(ModelError::SgGeometry(format!("w'_a = {} is not positive", g.w_a)));
    }
    if !(g.w_b > 0.0) {
        return Err(ModelError::SgGeometry(format!("w'_b = {} is not positive", g.w_b)));
    }
    Ok(g)
}

#[inline]
pub fn sg_geometry_unchecked(diag: &PersonDiagParams, sg: &PersonSgParams) -> SgGeometry {
    let w_a = diag.w_a + sg.t_d;
    SgGeometry { w_a, w_b: diag.w_a + diag.w_b - w_a - sg.w_d, v_p: sg.q * diag.v_p }
}

/// Inverse of [`derive_sg_geometry`] for the timing offsets: `(t_d, w_d)`.
pub fn recover_sg_offsets(diag: &PersonDiagParams, geom: &SgGeometry) -> (f64, f64) {
    let t_d = geom.w_a - diag.w_a;
    (t_d, diag.w_a + diag.w_b - geom.w_a - geom.w_b)
}

/// Tent-shaped latent load: `floor + height` at `s = 0`, linear down to the
/// floor at `s = -rise` and `s = fall`, continuing linearly beyond.
#[inline]
pub fn tent(floor: f64, height: f64, rise: f64, fall: f64, s: f64) -> f64 {
    if s <= 0.0 {
        floor + height * (1.0 + s / rise)
    } else {
        floor + height * (1.0 - s / fall)
    }
}

pub fn latent_mean_diag(p: &PersonDiagParams, s: f64, c: &AssayConstants) -> f64 {
    tent(c.lod_diag, p.v_p, p.w_a, p.w_b, s)
}

/// sgRNA latent load at `s_prime` days after the sgRNA latent peak.
pub fn latent_mean_sg(
    p: &PersonDiagParams,
    g: &PersonSgParams,
    s_prime: f64,
    c: &AssayConstants,
) -> f64 {
    let geom = sg_geometry_unchecked(p, g);
    if geom.v_p == 0.0 {
        return c.lod_sg;
    }
    tent(c.lod_sg, geom.v_p, geom.w_a, geom.w_b, s_prime)
}

/// Whether `s` lies in the closed shedding window `[-onset, clearance]`.
#[inline]
pub fn shedding_indicator(onset: f64, clearance: f64, s: f64) -> bool {
    -onset <= s && s <= clearance
}

/// `expit(alpha0 + alpha1 S)`.
#[inline]
pub fn detection_prob(alpha0: f64, alpha1: f64, shedding: bool) -> f64 {
    expit(alpha0 + if shedding { alpha1 } else { 0.0 })
}

/// Days since the latent diagnostic peak for a swab on `swab_day`.
#[inline]
pub fn swab_time_offset(swab_day: f64, ref_peak_day: f64, t_p: f64) -> f64 {
    swab_day - ref_peak_day - t_p
}

/// Days since the latent sgRNA peak.
#[inline]
pub fn sg_time_offset(s: f64, t_d: f64) -> f64 {
    s - t_d
}

/// Population-level parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationParams {
    pub mu_lvp: f64,
    pub mu_lwa: f64,
    pub mu_lwb: f64,
    /// Covariance of `(ln v_p, ln w_a, ln w_b)`.
    pub sigma_log: Mat3,
    pub beta_vp: Vec<f64>,
    pub beta_wa: Vec<f64>,
    pub beta_wb: Vec<f64>,
    pub alpha0: f64,
    pub alpha1: f64,
    pub alpha0_sg: f64,
    pub alpha1_sg: f64,
    /// Base observation s.d. of true-positive diagnostic loads; the variance
    /// is `sigma_yy² (1 + Q delta_q)`.
    pub sigma_yy: f64,
    pub delta_q: f64,
    pub sigma_y_sg: f64,
    pub mu_td: f64,
    pub mu_lwd: f64,
    pub sigma_lwd: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub beta_c0: f64,
    pub beta_c: Vec<f64>,
    /// Gamma shape for onset-to-seroconversion time.
    pub kappa1: f64,
    /// Gamma rate for onset-to-seroconversion time.
    pub kappa2: f64,
}

impl PopulationParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.sigma_log.cholesky().is_none() || !self.sigma_log.is_symmetric(1e-12) {
            return Err(invalid("population", "sigma_log must be symmetric positive-definite"));
        }
        let positives = [
            ("sigma_yy", self.sigma_yy),
            ("sigma_y_sg", self.sigma_y_sg),
            ("sigma_lwd", self.sigma_lwd),
            ("gamma1", self.gamma1),
            ("gamma2", self.gamma2),
            ("kappa1", self.kappa1),
            ("kappa2", self.kappa2),
        ];
        for (name, v) in positives {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid("population", format!("{name} = {v} must be positive")));
            }
        }
        if !(self.delta_q > 0.0 && self.delta_q < 1.0) {
            return Err(invalid("population", "delta_q must lie in (0, 1)"));
        }
        let finite = [
            self.mu_lvp,
            self.mu_lwa,
            self.mu_lwb,
            self.alpha0,
            self.alpha1,
            self.alpha0_sg,
            self.alpha1_sg,
            self.mu_td,
            self.mu_lwd,
            self.beta_c0,
        ];
        let betas = self.beta_vp.iter().chain(&self.beta_wa).chain(&self.beta_wb).chain(&self.beta_c);
        if finite.iter().chain(betas).any(|v| !v.is_finite()) {
            return Err(invalid("population", "non-finite location parameter"));
        }
        Ok(())
    }

    pub fn tpr(&self) -> f64 {
        detection_prob(self.alpha0, self.alpha1, true)
    }

    pub fn tnr(&self) -> f64 {
        1.0 - detection_prob(self.alpha0, self.alpha1, false)
    }

    pub fn tpr_sg(&self) -> f64 {
        detection_prob(self.alpha0_sg, self.alpha1_sg, true)
    }

    pub fn tnr_sg(&self) -> f64 {
        1.0 - detection_prob(self.alpha0_sg, self.alpha1_sg, false)
    }

    pub fn mean_sero_time(&self) -> f64 {
        self.kappa1 / self.kappa2
    }
}

/// Prior settings for `t_p` under the three follow-up edge regimes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PeakAlignmentConfig {
    pub mu_tp_left: f64,
    pub sigma_tp_left: f64,
    pub mu_tp_right: f64,
    pub sigma_tp_right: f64,
    pub sigma_tp: f64,
    /// Observed peaks within this many days of the first (last) follow-up
    /// day use the left (right) truncated regime.
    pub edge_window: u32,
}

impl Default for PeakAlignmentConfig {
    fn default() -> Self {
        Self {
            mu_tp_left: -0.5,
            sigma_tp_left: 1.0,
            mu_tp_right: 0.5,
            sigma_tp_right: 1.0,
            sigma_tp: 1.0,
            edge_window: 2,
        }
    }
}

impl PeakAlignmentConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.mu_tp_left < 0.0 && self.mu_tp_right > 0.0) {
            return Err(invalid("alignment", "need mu_tp_left < 0 < mu_tp_right"));
        }
        if !(self.sigma_tp_left > 0.0 && self.sigma_tp_right > 0.0 && self.sigma_tp > 0.0) {
            return Err(invalid("alignment", "scales must be positive"));
        }
        if self.edge_window < 1 {
            return Err(invalid("alignment", "edge_window must be at least 1"));
        }
        Ok(())
    }

    pub fn regime(&self, peak_day: i32, first_day: i32, last_day: i32) -> PeakRegime {
        let w = self.edge_window as i32;
        if peak_day < first_day + w {
            PeakRegime::Early
        } else if peak_day > last_day - w {
            PeakRegime::Late
        } else {
            PeakRegime::Central
        }
    }

    /// `(mean, sd, lower, upper)` of the `t_p` prior under `regime`.
    pub fn tp_prior(&self, regime: PeakRegime) -> (f64, f64, f64, f64) {
        match regime {
            PeakRegime::Early => (self.mu_tp_left, self.sigma_tp_left, f64::NEG_INFINITY, 1.0),
            PeakRegime::Late => (self.mu_tp_right, self.sigma_tp_right, -1.0, f64::INFINITY),
            PeakRegime::Central => (0.0, self.sigma_tp, f64::NEG_INFINITY, f64::INFINITY),
        }
    }
}

/// Where a person's observed peak sits relative to follow-up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PeakRegime {
    /// Peak at the start of follow-up: latent peak at most one day later.
    Early,
    Central,
    /// Peak at the end of follow-up: latent peak at most one day earlier.
    Late,
}

impl PeakRegime {
    pub fn admits(&self, t_p: f64) -> bool {
        match self {
            PeakRegime::Early => t_p <= 1.0,
            PeakRegime::Late => t_p >= -1.0,
            PeakRegime::Central => t_p.is_finite(),
        }
    }
}
