//! Posterior summaries: estimands computed per draw, trajectory bands and
//! sgRNA imputation for persons without sgRNA measurements.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{Rng, TruncatedNormal};
use crate::likelihood::{sero_indicator_posterior, Model, PopCache, PEAK_VP_COVARIATE};
use crate::model::{latent_mean_diag, sg_geometry_unchecked, swab_time_offset, tent, SgGeometry};
use crate::sampler::ChainOutput;
use crate::state::{ParameterState, PersonState};

#[derive(Debug, Error)]
pub enum PosteriorError {
    #[error("no posterior draws")]
    EmptyDraws,
    #[error("unknown person id {0:?}")]
    UnknownPerson(String),
    #[error("person {0:?} has sgRNA measurements; nothing to impute")]
    NothingMissing(String),
    #[error("draw row {row} does not match the model layout")]
    Layout { row: usize },
    #[error("invalid time grid: {0}")]
    Grid(String),
}

/// Equal-tailed summary of a scalar computed per draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimand {
    pub name: String,
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Estimand {
    pub fn from_values(name: impl Into<String>, values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Self {
            name: name.into(),
            mean: values.iter().sum::<f64>() / values.len() as f64,
            lo: quantile_sorted(&sorted, 0.025),
            hi: quantile_sorted(&sorted, 0.975),
        }
    }

    pub fn covers(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Linear-interpolation quantile of sorted data (the `(n - 1) p` rule used
/// by R's type 7 and spreadsheet `PERCENTILE`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub const DIAG_ONSET_TO_PEAK: &str = "diag_onset_to_peak";
pub const DIAG_PEAK_TO_CLEARANCE: &str = "diag_peak_to_clearance";
pub const DIAG_PEAK: &str = "diag_peak";
pub const SG_ONSET_TO_PEAK: &str = "sg_onset_to_peak";
pub const SG_PEAK_TO_CLEARANCE: &str = "sg_peak_to_clearance";
pub const SG_PEAK: &str = "sg_peak";
pub const TPR_DIAG: &str = "tpr_diag";
pub const TNR_DIAG: &str = "tnr_diag";
pub const TPR_SG: &str = "tpr_sg";
pub const TNR_SG: &str = "tnr_sg";
pub const SERO_RATE: &str = "sero_rate";
pub const MEAN_SERO_TIME: &str = "mean_sero_time";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub n_draws: usize,
    pub estimands: Vec<Estimand>,
    /// Estimands that cannot be computed from the fit (no sgRNA data).
    pub absent: Vec<String>,
}

impl PosteriorSummary {
    pub fn get(&self, name: &str) -> Option<&Estimand> {
        self.estimands.iter().find(|e| e.name == name)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,mean,lo,hi\n");
        for e in &self.estimands {
            out.push_str(&format!("{},{},{},{}\n", e.name, e.mean, e.lo, e.hi));
        }
        out
    }
}

/// Unflattens the retained draws of all chains, chain by chain.
pub fn collect_draws(model: &Model, outputs: &[ChainOutput]) -> Result<Vec<ParameterState>, PosteriorError> {
    let layout = model.layout();
    let mut out = Vec::new();
    for o in outputs {
        for row in &o.draws {
            let state = layout.unflatten(row).ok_or(PosteriorError::Layout { row: out.len() })?;
            out.push(state);
        }
    }
    if out.is_empty() {
        return Err(PosteriorError::EmptyDraws);
    }
    Ok(out)
}

fn mean_of(persons: &[PersonState], f: impl Fn(&PersonState) -> f64) -> f64 {
    persons.iter().map(f).sum::<f64>() / persons.len() as f64
}

fn mean_sg_geometry(persons: &[PersonState]) -> SgGeometry {
    let n = persons.len() as f64;
    let mut g = SgGeometry { w_a: 0.0, w_b: 0.0, v_p: 0.0 };
    for p in persons {
        let x = sg_geometry_unchecked(&p.diag(), &p.sg());
        g.w_a += x.w_a / n;
        g.w_b += x.w_b / n;
        g.v_p += x.v_p / n;
    }
    g
}

/// Posterior probability of seroconversion for each person at one draw.
pub fn sero_indicators(model: &Model, state: &ParameterState) -> Vec<f64> {
    let Some(cache) = PopCache::new(&state.pop) else {
        return vec![f64::NAN; state.persons.len()];
    };
    state
        .persons
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let eta = model.sero_eta(i, p, &state.pop);
            sero_indicator_posterior(&model.data.persons[i].sero, model.onset_day(i, p), eta, cache.gamma())
        })
        .collect()
}

fn estimand_values(model: &Model, s: &ParameterState) -> Vec<f64> {
    let lod = model.assay().lod_diag;
    let lod_sg = model.assay().lod_sg;
    let pop = &s.pop;
    let g = mean_sg_geometry(&s.persons);
    let c = sero_indicators(model, s);
    let mut v = vec![
        mean_of(&s.persons, |p| p.w_a),
        mean_of(&s.persons, |p| p.w_b),
        mean_of(&s.persons, |p| p.v_p) + lod,
        g.w_a,
        g.w_b,
        g.v_p + lod_sg,
        pop.tpr(),
        pop.tnr(),
        pop.tpr_sg(),
        pop.tnr_sg(),
        c.iter().sum::<f64>() / c.len() as f64,
        pop.mean_sero_time(),
    ];
    v.extend(pop.beta_vp.iter().chain(&pop.beta_wa).chain(&pop.beta_wb).chain(&pop.beta_c).map(|b| b.exp()));
    v
}

fn estimand_names(model: &Model) -> Vec<String> {
    let layout = model.layout();
    let mut names: Vec<String> = [
        DIAG_ONSET_TO_PEAK,
        DIAG_PEAK_TO_CLEARANCE,
        DIAG_PEAK,
        SG_ONSET_TO_PEAK,
        SG_PEAK_TO_CLEARANCE,
        SG_PEAK,
        TPR_DIAG,
        TNR_DIAG,
        TPR_SG,
        TNR_SG,
        SERO_RATE,
        MEAN_SERO_TIME,
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    names.extend(layout.x_vp.iter().map(|x| format!("factor_vp[{x}]")));
    names.extend(layout.x_wa.iter().map(|x| format!("factor_wa[{x}]")));
    names.extend(layout.x_wb.iter().map(|x| format!("factor_wb[{x}]")));
    // with v_p in log10 copies/ml, the peak-load odds ratio is per 10-fold increase
    names.extend(layout.x_c.iter().map(|x| format!("sero_or[{x}]")));
    names
}

/// Every estimand is evaluated on each draw and then summarised.
pub fn summarize_estimands(model: &Model, draws: &[ParameterState]) -> Result<PosteriorSummary, PosteriorError> {
    if draws.is_empty() {
        return Err(PosteriorError::EmptyDraws);
    }
    let names = estimand_names(model);
    let per_draw: Vec<Vec<f64>> = draws.par_iter().map(|s| estimand_values(model, s)).collect();
    let has_sg = model.data.persons.iter().any(|p| p.has_sg_data());
    let mut estimands = Vec::new();
    let mut absent = Vec::new();
    for (j, name) in names.into_iter().enumerate() {
        let sg_only = [SG_ONSET_TO_PEAK, SG_PEAK_TO_CLEARANCE, SG_PEAK, TPR_SG, TNR_SG].contains(&name.as_str());
        if sg_only && !has_sg {
            absent.push(name);
            continue;
        }
        let col: Vec<f64> = per_draw.iter().map(|r| r[j]).collect();
        estimands.push(Estimand::from_values(name, &col));
    }
    Ok(PosteriorSummary { n_draws: draws.len(), estimands, absent })
}

/// Name of the seroconversion odds-ratio estimand for peak viral load.
pub fn peak_odds_ratio_name() -> String {
    format!("sero_or[{PEAK_VP_COVARIATE}]")
}

/// Pointwise posterior band of a curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub series: String,
    pub time: Vec<f64>,
    pub mean: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Band {
    fn from_curves(series: String, time: Vec<f64>, curves: &[Vec<f64>]) -> Self {
        let k = time.len();
        let mut mean = Vec::with_capacity(k);
        let mut lo = Vec::with_capacity(k);
        let mut hi = Vec::with_capacity(k);
        for j in 0..k {
            let col: Vec<f64> = curves.iter().map(|c| c[j]).collect();
            let e = Estimand::from_values("", &col);
            mean.push(e.mean);
            lo.push(e.lo);
            hi.push(e.hi);
        }
        Self { series, time, mean, lo, hi }
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).collect()
    }
}

/// Writes bands as `time,mean,lo,hi,series` rows.
pub fn bands_to_csv(bands: &[Band]) -> String {
    let mut out = String::from("time,mean,lo,hi,series\n");
    for b in bands {
        for j in 0..b.time.len() {
            out.push_str(&format!("{},{},{},{},{}\n", b.time[j], b.mean[j], b.lo[j], b.hi[j], b.series));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum BandLevel {
    /// Days relative to the latent diagnostic peak, evaluated at the
    /// per-draw average person parameters.
    Population,
    /// Study days for one person.
    Person(String),
}

fn check_grid(grid: &[f64]) -> Result<(), PosteriorError> {
    if grid.is_empty() {
        return Err(PosteriorError::Grid("empty".into()));
    }
    if grid.iter().any(|t| !t.is_finite()) {
        return Err(PosteriorError::Grid("non-finite time".into()));
    }
    Ok(())
}

/// Latent diagnostic and sgRNA load bands, clamped at the detection limits.
pub fn trajectory_bands(
    model: &Model,
    draws: &[ParameterState],
    grid: &[f64],
    level: &BandLevel,
) -> Result<[Band; 2], PosteriorError> {
    if draws.is_empty() {
        return Err(PosteriorError::EmptyDraws);
    }
    check_grid(grid)?;
    let c = model.assay();
    let (label, curves): (String, Vec<(Vec<f64>, Vec<f64>)>) = match level {
        BandLevel::Population => {
            let curves = draws
                .par_iter()
                .map(|s| {
                    let vp = mean_of(&s.persons, |p| p.v_p);
                    let wa = mean_of(&s.persons, |p| p.w_a);
                    let wb = mean_of(&s.persons, |p| p.w_b);
                    let td = mean_of(&s.persons, |p| p.t_d);
                    let g = mean_sg_geometry(&s.persons);
                    let diag = grid.iter().map(|&t| tent(c.lod_diag, vp, wa, wb, t).max(c.lod_diag)).collect();
                    let sg = grid.iter().map(|&t| tent(c.lod_sg, g.v_p, g.w_a, g.w_b, t - td).max(c.lod_sg)).collect();
                    (diag, sg)
                })
                .collect();
            ("population".to_string(), curves)
        }
        BandLevel::Person(id) => {
            let i = model.data.person_index(id).ok_or_else(|| PosteriorError::UnknownPerson(id.clone()))?;
            let ref_peak = model.context(i).ref_peak_day;
            let curves = draws
                .par_iter()
                .map(|s| {
                    let p = &s.persons[i];
                    (diag_curve(p, ref_peak, grid, model), sg_curve(p, ref_peak, grid, model))
                })
                .collect();
            (id.clone(), curves)
        }
    };
    let diag: Vec<Vec<f64>> = curves.iter().map(|c| c.0.clone()).collect();
    let sg: Vec<Vec<f64>> = curves.iter().map(|c| c.1.clone()).collect();
    Ok([
        Band::from_curves(format!("{label}:diag"), grid.to_vec(), &diag),
        Band::from_curves(format!("{label}:sg"), grid.to_vec(), &sg),
    ])
}

fn diag_curve(p: &PersonState, ref_peak: f64, days: &[f64], model: &Model) -> Vec<f64> {
    let c = model.assay();
    days.iter()
        .map(|&d| latent_mean_diag(&p.diag(), swab_time_offset(d, ref_peak, p.t_p), c).max(c.lod_diag))
        .collect()
}

fn sg_curve(p: &PersonState, ref_peak: f64, days: &[f64], model: &Model) -> Vec<f64> {
    let c = model.assay();
    let g = sg_geometry_unchecked(&p.diag(), &p.sg());
    days.iter()
        .map(|&d| {
            let s = swab_time_offset(d, ref_peak, p.t_p) - p.t_d;
            tent(c.lod_sg, g.v_p, g.w_a, g.w_b, s).max(c.lod_sg)
        })
        .collect()
}

/// Imputed sgRNA trajectory for one person fitted without sgRNA data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputedSg {
    pub id: String,
    pub onset_to_peak: Estimand,
    pub peak_to_clearance: Estimand,
    pub peak: Estimand,
    /// Days of the person's diagnostic-positive swabs.
    pub days: Vec<i32>,
    pub diag_band: Band,
    pub sg_band: Band,
    /// Predictive sgRNA load given a positive sgRNA result on each day.
    pub predictive: Band,
    /// `predictive_draws[k][d]`: draw `d` for `days[k]`.
    pub predictive_draws: Vec<Vec<f64>>,
}

impl ImputedSg {
    /// Mean band widths (diagnostic, sgRNA) over the matched days.
    pub fn mean_widths(&self) -> (f64, f64) {
        let n = self.days.len().max(1) as f64;
        (self.diag_band.widths().iter().sum::<f64>() / n, self.sg_band.widths().iter().sum::<f64>() / n)
    }
}

fn predictive_positive(p: &PersonState, s: f64, pop: &crate::model::PopulationParams, model: &Model, rng: &mut Rng) -> f64 {
    let c = model.assay();
    let g = sg_geometry_unchecked(&p.diag(), &p.sg());
    let s2 = s - p.t_d;
    let (mu, sd) = if -g.w_a <= s2 && s2 <= g.w_b {
        (tent(c.lod_sg, g.v_p, g.w_a, g.w_b, s2), pop.sigma_y_sg)
    } else {
        (c.false_pos_center_sg(), c.false_pos_sd)
    };
    TruncatedNormal::new(mu, sd, c.lod_sg, f64::INFINITY).map_or(f64::NAN, |t| t.sample(rng))
}

/// Posterior sgRNA trajectories for persons whose sgRNA records were
/// missing in the fit. Predictive draws use stream `person index` of `seed`.
pub fn impute_sg(
    model: &Model,
    draws: &[ParameterState],
    ids: &[String],
    seed: u64,
) -> Result<Vec<ImputedSg>, PosteriorError> {
    if draws.is_empty() {
        return Err(PosteriorError::EmptyDraws);
    }
    let mut idx = Vec::with_capacity(ids.len());
    for id in ids {
        let i = model.data.person_index(id).ok_or_else(|| PosteriorError::UnknownPerson(id.clone()))?;
        if model.data.persons[i].has_sg_data() {
            return Err(PosteriorError::NothingMissing(id.clone()));
        }
        idx.push(i);
    }
    let lod_sg = model.assay().lod_sg;
    Ok(idx
        .par_iter()
        .map(|&i| {
            let person = &model.data.persons[i];
            let ref_peak = model.context(i).ref_peak_day;
            let days: Vec<i32> = person.swabs.iter().filter(|s| s.b_diag).map(|s| s.day).collect();
            let grid: Vec<f64> = days.iter().map(|&d| d as f64).collect();
            let geoms: Vec<SgGeometry> =
                draws.iter().map(|s| sg_geometry_unchecked(&s.persons[i].diag(), &s.persons[i].sg())).collect();
            let col = |f: &dyn Fn(&SgGeometry) -> f64| geoms.iter().map(f).collect::<Vec<_>>();
            let diag: Vec<Vec<f64>> = draws.iter().map(|s| diag_curve(&s.persons[i], ref_peak, &grid, model)).collect();
            let sg: Vec<Vec<f64>> = draws.iter().map(|s| sg_curve(&s.persons[i], ref_peak, &grid, model)).collect();
            let mut rng = Rng::new(seed, i as u64);
            let mut pred = vec![Vec::with_capacity(draws.len()); grid.len()];
            let mut curves = Vec::with_capacity(draws.len());
            for s in draws {
                let p = &s.persons[i];
                let curve: Vec<f64> = grid
                    .iter()
                    .map(|&d| predictive_positive(p, swab_time_offset(d, ref_peak, p.t_p), &s.pop, model, &mut rng))
                    .collect();
                for (k, v) in curve.iter().enumerate() {
                    pred[k].push(*v);
                }
                curves.push(curve);
            }
            ImputedSg {
                id: person.id.clone(),
                onset_to_peak: Estimand::from_values("sg_onset_to_peak", &col(&|g| g.w_a)),
                peak_to_clearance: Estimand::from_values("sg_peak_to_clearance", &col(&|g| g.w_b)),
                peak: Estimand::from_values("sg_peak", &col(&|g| g.v_p + lod_sg)),
                days,
                diag_band: Band::from_curves(format!("{}:diag", person.id), grid.clone(), &diag),
                sg_band: Band::from_curves(format!("{}:sg", person.id), grid.clone(), &sg),
                predictive: Band::from_curves(format!("{}:sg_predictive", person.id), grid.clone(), &curves),
                predictive_draws: pred,
            }
        })
        .collect())
}
