//! K-fold cross-validation by masking sgRNA and antibody data.
//!
//! Each fold refits the model with the held-out persons' sgRNA and DBS
//! records removed, imputes their sgRNA trajectories and scores the
//! predictive bands against the masked loads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, DbsResult, SeroRecord, SgObservation};
use crate::distributions::special::expit;
use crate::distributions::Rng;
use crate::likelihood::{CovariateWiring, LikelihoodError, Model, PriorConfig, TermCounts};
use crate::posterior::{collect_draws, impute_sg, Estimand, PosteriorError};
use crate::sampler::{self, ChainConfig, SamplerError};

/// Fold shuffles use this stream of the plan seed.
pub const FOLD_STREAM: u64 = 1 << 41;
const FOLD_SEED_STREAM: u64 = (1 << 41) + 1;

#[derive(Debug, Error)]
pub enum CvError {
    #[error("cannot make {k} folds from {n} persons")]
    TooManyFolds { k: usize, n: usize },
    #[error("fold count must be positive")]
    ZeroFolds,
    #[error("fold plan does not match the dataset: {0}")]
    PlanMismatch(String),
    #[error("fold {fold}: {source}")]
    Likelihood { fold: usize, source: LikelihoodError },
    #[error("fold {fold}: {source}")]
    Sampler { fold: usize, source: SamplerError },
    #[error("fold {fold}: {source}")]
    Posterior { fold: usize, source: PosteriorError },
    #[error("fold {fold}: masked persons still contribute terms ({detail})")]
    MaskLeak { fold: usize, detail: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    /// `(person id, fold)` in dataset order.
    pub assignment: Vec<(String, usize)>,
}

impl FoldPlan {
    pub fn members(&self, fold: usize) -> Vec<String> {
        self.assignment.iter().filter(|(_, f)| *f == fold).map(|(id, _)| id.clone()).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for (_, f) in &self.assignment {
            s[*f] += 1;
        }
        s
    }
}

/// Seeded uniform partition: shuffle, then deal round-robin.
pub fn make_folds(data: &Dataset, k: usize, seed: u64) -> Result<FoldPlan, CvError> {
    let n = data.len();
    if k == 0 {
        return Err(CvError::ZeroFolds);
    }
    if k > n {
        return Err(CvError::TooManyFolds { k, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    Rng::new(seed, FOLD_STREAM).shuffle(&mut order);
    let mut fold_of = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % k;
    }
    let assignment = data.persons.iter().zip(fold_of).map(|(p, f)| (p.id.clone(), f)).collect();
    Ok(FoldPlan { k, seed, assignment })
}

/// Original records of the masked persons.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    entries: Vec<MaskEntry>,
}

#[derive(Debug, Clone, PartialEq)]
struct MaskEntry {
    person: usize,
    sg: Vec<SgObservation>,
    dbs: Vec<DbsResult>,
    sero: SeroRecord,
}

impl Mask {
    pub fn persons(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.person).collect()
    }
}

/// Marks the listed persons' sgRNA records as not assayed and removes their
/// DBS results.
pub fn mask(data: &Dataset, ids: &[String]) -> Result<(Dataset, Mask), CvError> {
    let mut out = data.clone();
    let mut entries = Vec::with_capacity(ids.len());
    for id in ids {
        let i = data.person_index(id).ok_or_else(|| CvError::PlanMismatch(format!("unknown person {id:?}")))?;
        let p = &mut out.persons[i];
        entries.push(MaskEntry {
            person: i,
            sg: p.swabs.iter().map(|s| s.sg).collect(),
            dbs: std::mem::take(&mut p.dbs),
            sero: std::mem::replace(&mut p.sero, SeroRecord::None),
        });
        for s in &mut p.swabs {
            s.sg = SgObservation::NotAssayed;
        }
    }
    Ok((out, Mask { entries }))
}

pub fn unmask(masked: &Dataset, mask: &Mask) -> Dataset {
    let mut out = masked.clone();
    for e in &mask.entries {
        let p = &mut out.persons[e.person];
        for (s, sg) in p.swabs.iter_mut().zip(&e.sg) {
            s.sg = *sg;
        }
        p.dbs = e.dbs.clone();
        p.sero = e.sero.clone();
    }
    out
}

/// Terms the masked dataset should have: the full counts minus every sgRNA
/// and antibody term of the held-out persons.
pub fn expected_term_counts(data: &Dataset, ids: &[String]) -> TermCounts {
    let mut t = TermCounts::default();
    for p in &data.persons {
        t.diag_swab_terms += p.swabs.len();
        if ids.contains(&p.id) {
            continue;
        }
        t.sg_swab_terms += p.swabs.iter().filter(|s| s.sg.is_assayed()).count();
        t.sero_terms += usize::from(p.sero.has_data());
    }
    t
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOutScore {
    pub id: String,
    /// Positive sgRNA swabs in the unmasked data.
    pub n_scored: usize,
    pub n_covered: usize,
    pub abs_error_sum: f64,
    /// Posterior seroconversion probability.
    pub sero_prob: Estimand,
    /// Mean latent band widths at the diagnostic-positive days.
    pub diag_band_width: f64,
    pub sg_band_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub seed: u64,
    pub held_out: Vec<String>,
    pub max_rhat: f64,
    pub flagged: bool,
    pub n_scored: usize,
    pub coverage: f64,
    pub mae: f64,
    pub persons: Vec<HeldOutScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub plan: FoldPlan,
    pub rhat_threshold: f64,
    pub folds: Vec<FoldReport>,
    /// Folds excluded from the pooled scores.
    pub flagged_folds: Vec<usize>,
    pub n_scored: usize,
    pub coverage: f64,
    pub mae: f64,
    /// Held-out persons whose sgRNA band is, on average, at least as wide
    /// as their diagnostic band.
    pub n_sg_wider: usize,
    pub n_compared: usize,
    pub sero_prob_min: f64,
    pub sero_prob_max: f64,
}

impl CvReport {
    /// One row per fold plus a pooled row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fold,n_held_out,n_scored,coverage,mae,max_rhat,flagged\n");
        for f in &self.folds {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                f.fold,
                f.held_out.len(),
                f.n_scored,
                f.coverage,
                f.mae,
                f.max_rhat,
                f.flagged
            ));
        }
        let n: usize = self.folds.iter().filter(|f| !f.flagged).map(|f| f.held_out.len()).sum();
        out.push_str(&format!("pooled,{n},{},{},{},,{}\n", self.n_scored, self.coverage, self.mae, self.flagged_folds.len()));
        out
    }
}

/// Chain seed for a fold, derived from the base seed.
pub fn fold_seed(base: u64, fold: usize) -> u64 {
    let mut r = Rng::new(base, FOLD_SEED_STREAM + fold as u64);
    rand::RngCore::next_u64(&mut r)
}

pub struct CvSetup<'a> {
    pub data: &'a Dataset,
    pub prior: &'a PriorConfig,
    pub wiring: &'a CovariateWiring,
    pub chains: &'a ChainConfig,
    pub rhat_threshold: f64,
}

/// Fits and scores one fold.
pub fn run_fold(setup: &CvSetup<'_>, plan: &FoldPlan, fold: usize) -> Result<FoldReport, CvError> {
    let held_out = plan.members(fold);
    let (masked, _) = mask(setup.data, &held_out)?;
    let model = Model::new(masked, setup.prior.clone(), setup.wiring.clone())
        .map_err(|source| CvError::Likelihood { fold, source })?;
    let want = expected_term_counts(setup.data, &held_out);
    let got = model.term_counts();
    if got != want {
        return Err(CvError::MaskLeak { fold, detail: format!("expected {want:?}, got {got:?}") });
    }
    let seed = fold_seed(setup.chains.seed, fold);
    let config = ChainConfig { seed, ..setup.chains.clone() };
    let outputs = sampler::run(&model, &config).map_err(|source| CvError::Sampler { fold, source })?;
    let n_global = model.layout().n_global();
    let max_rhat = sampler::diagnostics(&outputs)
        .iter()
        .take(n_global)
        .filter(|d| !d.degenerate)
        .map(|d| d.rhat)
        .fold(f64::NAN, f64::max);
    let draws = collect_draws(&model, &outputs).map_err(|source| CvError::Posterior { fold, source })?;
    let imputed = impute_sg(&model, &draws, &held_out, seed).map_err(|source| CvError::Posterior { fold, source })?;
    let lod_sg = setup.data.assay.lod_sg;
    let mut persons = Vec::with_capacity(held_out.len());
    for imp in &imputed {
        let i = model.data.person_index(&imp.id).expect("held-out person is in the fit");
        let original = &setup.data.persons[i];
        let mut score = HeldOutScore {
            id: imp.id.clone(),
            n_scored: 0,
            n_covered: 0,
            abs_error_sum: 0.0,
            sero_prob: Estimand::from_values(
                "sero_prob",
                &draws.iter().map(|s| expit(model.sero_eta(i, &s.persons[i], &s.pop))).collect::<Vec<_>>(),
            ),
            diag_band_width: imp.mean_widths().0,
            sg_band_width: imp.mean_widths().1,
        };
        for (k, day) in imp.days.iter().enumerate() {
            let swab = original.swabs.iter().find(|s| s.day == *day).expect("imputed day is a swab day");
            let Some(y) = swab.sg.value(lod_sg).filter(|_| swab.sg.detected()) else {
                continue;
            };
            score.n_scored += 1;
            score.n_covered += usize::from(imp.predictive.lo[k] <= y && y <= imp.predictive.hi[k]);
            score.abs_error_sum += (imp.predictive.mean[k] - y).abs();
        }
        persons.push(score);
    }
    let n_scored: usize = persons.iter().map(|p| p.n_scored).sum();
    let n_covered: usize = persons.iter().map(|p| p.n_covered).sum();
    let abs: f64 = persons.iter().map(|p| p.abs_error_sum).sum();
    Ok(FoldReport {
        fold,
        seed,
        held_out,
        flagged: !(max_rhat <= setup.rhat_threshold),
        max_rhat,
        n_scored,
        coverage: n_covered as f64 / n_scored as f64,
        mae: abs / n_scored as f64,
        persons,
    })
}

/// Runs every fold in parallel and pools the unflagged ones.
pub fn run_cv(setup: &CvSetup<'_>, plan: &FoldPlan) -> Result<CvReport, CvError> {
    let ids: Vec<&str> = setup.data.persons.iter().map(|p| p.id.as_str()).collect();
    if plan.assignment.len() != ids.len()
        || plan.assignment.iter().zip(&ids).any(|((id, f), want)| id != want || *f >= plan.k)
    {
        return Err(CvError::PlanMismatch("person ids or fold indices differ".into()));
    }
    let folds: Vec<FoldReport> =
        (0..plan.k).into_par_iter().map(|f| run_fold(setup, plan, f)).collect::<Result<_, _>>()?;
    let kept: Vec<&FoldReport> = folds.iter().filter(|f| !f.flagged).collect();
    let scores: Vec<&HeldOutScore> = kept.iter().flat_map(|f| &f.persons).collect();
    let n_scored: usize = scores.iter().map(|p| p.n_scored).sum();
    let n_covered: usize = scores.iter().map(|p| p.n_covered).sum();
    let abs: f64 = scores.iter().map(|p| p.abs_error_sum).sum();
    let compared: Vec<&&HeldOutScore> = scores.iter().filter(|p| p.n_scored > 0).collect();
    Ok(CvReport {
        plan: plan.clone(),
        rhat_threshold: setup.rhat_threshold,
        flagged_folds: folds.iter().filter(|f| f.flagged).map(|f| f.fold).collect(),
        n_scored,
        coverage: n_covered as f64 / n_scored as f64,
        mae: abs / n_scored as f64,
        n_sg_wider: compared.iter().filter(|p| p.sg_band_width >= p.diag_band_width).count(),
        n_compared: compared.len(),
        sero_prob_min: scores.iter().map(|p| p.sero_prob.mean).fold(f64::INFINITY, f64::min),
        sero_prob_max: scores.iter().map(|p| p.sero_prob.mean).fold(f64::NEG_INFINITY, f64::max),
        folds,
    })
}
