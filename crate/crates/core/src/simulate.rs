//! Forward simulation of complete synthetic studies from known parameters.
//!
//! Each person is simulated from its own random stream keyed by
//! `(seed, person index)`, so results do not depend on thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, DbsResult, Person, SwabRecord};
use crate::distributions::{BetaDist, GammaDist, MvNormal3, Rng, TruncatedNormal};
use crate::likelihood::{CovariateWiring, PEAK_VP_COVARIATE};
use crate::linalg::Mat3;
use crate::model::{
    derive_sg_geometry, detection_prob, expit, logit, tent, AssayConstants, PeakAlignmentConfig,
    PeakRegime, PopulationParams, SgGeometry,
};
use crate::state::PersonState;

/// Rejection attempts allowed for any truncated draw.
pub const REJECTION_CAP: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("person {person}: constraint `{constraint}` not satisfied after {attempts} attempts")]
    Rejection { person: usize, constraint: &'static str, attempts: usize },
    #[error("invalid truth: {0}")]
    InvalidTruth(String),
    #[error("invalid design: {0}")]
    InvalidDesign(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "lowercase")]
pub enum CovariateDist {
    Bernoulli { p: f64 },
    Normal { mean: f64, sd: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    #[serde(flatten)]
    pub dist: CovariateDist,
}

/// Follow-up schedule and cohort composition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyDesign {
    pub n_participants: usize,
    pub swab_days: Vec<i32>,
    pub dbs_days: Vec<i32>,
    pub fraction_with_dbs: f64,
    /// Fraction of persons whose positive swabs are assayed for sgRNA.
    pub fraction_sg_assayed: f64,
    pub covariates: Vec<CovariateSpec>,
    /// Calendar window for the latent diagnostic peak, `(first, last)`.
    pub peak_window: (f64, f64),
    /// Persons with fewer positive diagnostic swabs are redrawn.
    pub min_positive_swabs: usize,
}

impl Default for StudyDesign {
    fn default() -> Self {
        Self {
            n_participants: 80,
            swab_days: (1..=14).collect(),
            dbs_days: vec![1, 14, 28],
            fraction_with_dbs: 0.4,
            fraction_sg_assayed: 1.0,
            covariates: Vec::new(),
            peak_window: (2.0, 9.0),
            min_positive_swabs: 1,
        }
    }
}

impl StudyDesign {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidDesign(m));
        if self.swab_days.is_empty() {
            return bad("swab_days is empty".into());
        }
        for (name, days) in [("swab_days", &self.swab_days), ("dbs_days", &self.dbs_days)] {
            if days.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!("{name} must be strictly increasing"));
            }
        }
        for (name, f) in [("fraction_with_dbs", self.fraction_with_dbs), ("fraction_sg_assayed", self.fraction_sg_assayed)] {
            if !(0.0..=1.0).contains(&f) {
                return bad(format!("{name} = {f} must lie in [0, 1]"));
            }
        }
        if !(self.peak_window.0 <= self.peak_window.1) {
            return bad("peak_window must be ordered".into());
        }
        for c in &self.covariates {
            let ok = match c.dist {
                CovariateDist::Bernoulli { p } => (0.0..=1.0).contains(&p),
                CovariateDist::Normal { mean, sd } => mean.is_finite() && sd > 0.0,
            };
            if !ok {
                return bad(format!("covariate `{}` has invalid distribution parameters", c.name));
            }
            if c.name == PEAK_VP_COVARIATE {
                return bad(format!("`{PEAK_VP_COVARIATE}` is derived, not generated"));
            }
        }
        Ok(())
    }
}

/// Population values used for synthetic recovery studies: mean onset-to-peak
/// 3.8 d, peak-to-clearance 10.5 d, peak 5.6 above LoD; sgRNA timing offsets
/// giving 4.4 / 5.6 d and a 0.643 mean peak multiplier; TPR 0.918 / 0.896,
/// TNR 0.995 / 0.996; seroconversion probability 0.75 with mean delay 14.4 d.
///
/// Location parameters are offset by half the log-scale variance so the
/// natural-scale means hit the stated values.
pub fn reference_truth() -> PopulationParams {
    let var = [0.02, 0.09, 0.04];
    let alpha0 = logit(0.005);
    let alpha0_sg = logit(0.004);
    let sigma_lwd: f64 = 0.2;
    PopulationParams {
        mu_lvp: 5.6f64.ln() - var[0] / 2.0,
        mu_lwa: 3.8f64.ln() - var[1] / 2.0,
        mu_lwb: 10.5f64.ln() - var[2] / 2.0,
        sigma_log: Mat3::diag(var),
        beta_vp: vec![],
        beta_wa: vec![],
        beta_wb: vec![],
        alpha0,
        alpha1: logit(0.918) - alpha0,
        alpha0_sg,
        alpha1_sg: logit(0.896) - alpha0_sg,
        sigma_yy: 0.5,
        delta_q: 0.25,
        sigma_y_sg: 0.5,
        mu_td: 0.5,
        mu_lwd: 4.2f64.ln() - sigma_lwd * sigma_lwd / 2.0,
        sigma_lwd,
        gamma1: 2.7,
        gamma2: 1.5,
        beta_c0: logit(0.75),
        beta_c: vec![],
        kappa1: 2.3,
        kappa2: 0.16,
    }
}

/// Everything latent about one simulated person.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonTruth {
    pub id: String,
    pub state: PersonState,
    pub latent_peak_day: f64,
    pub ref_peak_day: i32,
    pub regime: PeakRegime,
    pub onset_day: f64,
    pub sg_geometry: SgGeometry,
    pub sg_assayed: bool,
    pub has_dbs: bool,
    pub seroconverts: bool,
    /// Onset-to-seroconversion time; drawn for everyone, relevant only when
    /// `seroconverts`.
    pub w_s: f64,
    pub covariates: Vec<f64>,
    /// Person redraws caused by the edge-regime or positivity requirements.
    pub redraws: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSidecar {
    pub seed: u64,
    pub population: PopulationParams,
    pub wiring: CovariateWiring,
    pub alignment: PeakAlignmentConfig,
    pub td_sd: f64,
    pub persons: Vec<PersonTruth>,
}

impl TruthSidecar {
    pub fn states(&self) -> Vec<PersonState> {
        self.persons.iter().map(|p| p.state).collect()
    }

    pub fn realized_sero_rate(&self) -> f64 {
        if self.persons.is_empty() {
            return f64::NAN;
        }
        self.persons.iter().filter(|p| p.seroconverts).count() as f64 / self.persons.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub dataset: Dataset,
    pub truth: TruthSidecar,
}

/// Settings shared by every simulated person.
#[derive(Debug, Clone)]
pub struct SimulationSpec<'a> {
    pub truth: &'a PopulationParams,
    pub wiring: &'a CovariateWiring,
    pub alignment: &'a PeakAlignmentConfig,
    pub design: &'a StudyDesign,
    pub assay: &'a AssayConstants,
    /// s.d. of the `t_d` distribution.
    pub td_sd: f64,
}

struct Prepared {
    mvn_chol: crate::linalg::Cholesky3,
    q_law: BetaDist,
    ws_law: GammaDist,
    idx_vp: Vec<usize>,
    idx_wa: Vec<usize>,
    idx_wb: Vec<usize>,
    /// `None` marks the latent-peak slot.
    idx_c: Vec<Option<usize>>,
}

impl SimulationSpec<'_> {
    fn prepare(&self) -> Result<Prepared, SimError> {
        self.truth.validate().map_err(|e| SimError::InvalidTruth(e.to_string()))?;
        self.design.validate()?;
        self.assay.validate().map_err(|e| SimError::InvalidTruth(e.to_string()))?;
        if !(self.td_sd > 0.0) {
            return Err(SimError::InvalidTruth("td_sd must be positive".into()));
        }
        let names: Vec<&str> = self.design.covariates.iter().map(|c| c.name.as_str()).collect();
        let find = |n: &String| {
            names
                .iter()
                .position(|m| m == n)
                .ok_or_else(|| SimError::InvalidDesign(format!("covariate `{n}` is not generated by the design")))
        };
        let idx = |v: &[String]| v.iter().map(find).collect::<Result<Vec<_>, _>>();
        let idx_c = self
            .wiring
            .x_c
            .iter()
            .map(|n| if n == PEAK_VP_COVARIATE { Ok(None) } else { find(n).map(Some) })
            .collect::<Result<Vec<_>, _>>()?;
        let t = self.truth;
        for (name, len, want) in [
            ("beta_vp", t.beta_vp.len(), self.wiring.x_vp.len()),
            ("beta_wa", t.beta_wa.len(), self.wiring.x_wa.len()),
            ("beta_wb", t.beta_wb.len(), self.wiring.x_wb.len()),
            ("beta_c", t.beta_c.len(), self.wiring.x_c.len()),
        ] {
            if len != want {
                return Err(SimError::InvalidTruth(format!("{name} has {len} entries, wiring needs {want}")));
            }
        }
        Ok(Prepared {
            mvn_chol: t.sigma_log.cholesky().expect("validated"),
            q_law: BetaDist::new(t.gamma1, t.gamma2).map_err(|e| SimError::InvalidTruth(e.to_string()))?,
            ws_law: GammaDist::new(t.kappa1, t.kappa2).map_err(|e| SimError::InvalidTruth(e.to_string()))?,
            idx_vp: idx(&self.wiring.x_vp)?,
            idx_wa: idx(&self.wiring.x_wa)?,
            idx_wb: idx(&self.wiring.x_wb)?,
            idx_c,
        })
    }
}

fn person_id(i: usize, n: usize) -> String {
    let width = n.to_string().len().max(3);
    format!("P{:0width$}", i + 1)
}

/// Normal draw conditioned to exceed `floor`.
fn draw_above(rng: &mut Rng, mean: f64, sd: f64, floor: f64, person: usize, constraint: &'static str) -> Result<f64, SimError> {
    for _ in 0..REJECTION_CAP {
        let y = rng.normal(mean, sd);
        if y > floor {
            return Ok(y);
        }
    }
    Err(SimError::Rejection { person, constraint, attempts: REJECTION_CAP })
}

/// Simulates one person from stream `(seed, index)`.
pub fn simulate_person(
    spec: &SimulationSpec<'_>,
    index: usize,
    n_total: usize,
    seed: u64,
) -> Result<(PersonTruth, Person), SimError> {
    let prep = spec.prepare()?;
    simulate_prepared(spec, &prep, index, n_total, seed)
}

fn simulate_prepared(
    spec: &SimulationSpec<'_>,
    prep: &Prepared,
    index: usize,
    n_total: usize,
    seed: u64,
) -> Result<(PersonTruth, Person), SimError> {
    let mut rng = Rng::new(seed, index as u64);
    let pop = spec.truth;
    let design = spec.design;
    let c = spec.assay;
    let reject = |constraint| SimError::Rejection { person: index, constraint, attempts: REJECTION_CAP };

    for redraws in 0..REJECTION_CAP {
        let x: Vec<f64> = design
            .covariates
            .iter()
            .map(|cv| match cv.dist {
                CovariateDist::Bernoulli { p } => f64::from(u8::from(rng.bernoulli(p))),
                CovariateDist::Normal { mean, sd } => rng.normal(mean, sd),
            })
            .collect();
        let lin = |beta: &[f64], idx: &[usize]| beta.iter().zip(idx).map(|(b, &k)| b * x[k]).sum::<f64>();
        let mean = [
            pop.mu_lvp + lin(&pop.beta_vp, &prep.idx_vp),
            pop.mu_lwa + lin(&pop.beta_wa, &prep.idx_wa),
            pop.mu_lwb + lin(&pop.beta_wb, &prep.idx_wb),
        ];
        let logs = MvNormal3::from_cholesky(mean, prep.mvn_chol).sample(&mut rng);
        let (v_p, w_a, w_b) = (logs[0].exp(), logs[1].exp(), logs[2].exp());

        let mut t_d = None;
        for _ in 0..REJECTION_CAP {
            let v = rng.normal(pop.mu_td, spec.td_sd);
            if v > -w_a && v <= w_b && w_b - v > 1.0 {
                t_d = Some(v);
                break;
            }
        }
        let t_d = t_d.ok_or_else(|| reject("-w_a < t_d <= w_b and w_b - t_d > 1"))?;
        // the interval can be arbitrarily narrow, so draw by inverse CDF
        let w_d = TruncatedNormal::new(pop.mu_lwd, pop.sigma_lwd, 0.0, (w_b - t_d).ln())
            .map(|tn| tn.sample(&mut rng).exp())
            .map_err(|_| reject("0 <= ln w_d < ln(w_b - t_d)"))?;
        if !(w_d < w_b - t_d) {
            continue;
        }
        let mut q = prep.q_law.sample(&mut rng);
        if q <= 0.0 || q >= 1.0 {
            q = q.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
        }
        let latent_peak = rng.uniform_range(design.peak_window.0, design.peak_window.1);
        let sg_assayed = rng.bernoulli(design.fraction_sg_assayed);

        let mut state = PersonState { v_p, w_a, w_b, t_p: 0.0, t_d, w_d, q };
        let geom = derive_sg_geometry(&state.diag(), &state.sg()).map_err(|_| reject("sgRNA geometry"))?;
        let sd_q = pop.sigma_yy * (1.0 + pop.delta_q).sqrt();
        let mut swabs = Vec::with_capacity(design.swab_days.len());
        for &day in &design.swab_days {
            let s = day as f64 - latent_peak;
            let shed = -w_a <= s && s <= w_b;
            let b = rng.bernoulli(detection_prob(pop.alpha0, pop.alpha1, shed));
            let y = if !b {
                c.lod_diag
            } else if !shed {
                draw_above(&mut rng, c.false_pos_center_diag(), c.false_pos_sd, c.lod_diag, index, "false-positive load > LoD")?
            } else {
                let mu = tent(c.lod_diag, v_p, w_a, w_b, s);
                let y = draw_above(&mut rng, mu, pop.sigma_yy, c.lod_diag, index, "true-positive load > LoD")?;
                if y < c.loq_diag {
                    draw_above(&mut rng, mu, sd_q, c.lod_diag, index, "true-positive load > LoD")?
                } else {
                    y
                }
            };
            let y_sg = if b && sg_assayed {
                let s2 = s - t_d;
                let shed2 = -geom.w_a <= s2 && s2 <= geom.w_b;
                let b2 = rng.bernoulli(detection_prob(pop.alpha0_sg, pop.alpha1_sg, shed2));
                Some(if !b2 {
                    c.lod_sg
                } else if !shed2 {
                    draw_above(&mut rng, c.false_pos_center_sg(), c.false_pos_sd, c.lod_sg, index, "sgRNA false-positive load > LoD")?
                } else {
                    let mu = tent(c.lod_sg, geom.v_p, geom.w_a, geom.w_b, s2);
                    draw_above(&mut rng, mu, pop.sigma_y_sg, c.lod_sg, index, "sgRNA true-positive load > LoD")?
                })
            } else {
                None
            };
            let rec = SwabRecord::from_loads(day, y, y_sg, c).expect("simulated loads are finite");
            swabs.push(rec);
        }

        let eta = pop.beta_c0
            + pop
                .beta_c
                .iter()
                .zip(&prep.idx_c)
                .map(|(b, k)| b * k.map_or(v_p, |k| x[k]))
                .sum::<f64>();
        let seroconverts = rng.bernoulli(expit(eta));
        let w_s = prep.ws_law.sample(&mut rng);
        let has_dbs = rng.bernoulli(design.fraction_with_dbs);
        let onset = latent_peak - w_a;
        let dbs: Vec<DbsResult> = if has_dbs {
            design
                .dbs_days
                .iter()
                .map(|&day| DbsResult { day, positive: seroconverts && day as f64 - onset >= w_s })
                .collect()
        } else {
            Vec::new()
        };

        let mut person = Person::new(person_id(index, n_total), swabs, dbs);
        if person.n_positive() < design.min_positive_swabs.max(1) {
            continue;
        }
        let ref_peak = person.ref_peak_day().expect("has positives");
        state.t_p = latent_peak - ref_peak as f64;
        let regime = spec.alignment.regime(ref_peak, design.swab_days[0], *design.swab_days.last().expect("non-empty"));
        if !regime.admits(state.t_p) {
            continue;
        }
        person.covariates = x.clone();
        let truth = PersonTruth {
            id: person.id.clone(),
            state,
            latent_peak_day: latent_peak,
            ref_peak_day: ref_peak,
            regime,
            onset_day: onset,
            sg_geometry: geom,
            sg_assayed,
            has_dbs,
            seroconverts,
            w_s,
            covariates: x,
            redraws,
        };
        return Ok((truth, person));
    }
    Err(reject("edge regime / minimum positive swabs"))
}

/// Simulates a full study. Reproducible for a given seed irrespective of the
/// rayon thread pool size.
pub fn simulate_dataset(spec: &SimulationSpec<'_>, seed: u64) -> Result<Simulation, SimError> {
    let prep = spec.prepare()?;
    let n = spec.design.n_participants;
    let people: Vec<(PersonTruth, Person)> = (0..n)
        .into_par_iter()
        .map(|i| simulate_prepared(spec, &prep, i, n, seed))
        .collect::<Result<_, _>>()?;
    let mut dataset = Dataset::new(*spec.assay);
    dataset.covariate_names = spec.design.covariates.iter().map(|c| c.name.clone()).collect();
    let mut persons = Vec::with_capacity(n);
    for (truth, person) in people {
        persons.push(truth);
        dataset.persons.push(person);
    }
    Ok(Simulation {
        dataset,
        truth: TruthSidecar {
            seed,
            population: spec.truth.clone(),
            wiring: spec.wiring.clone(),
            alignment: *spec.alignment,
            td_sd: spec.td_sd,
            persons,
        },
    })
}
