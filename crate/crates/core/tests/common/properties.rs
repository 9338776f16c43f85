//! Property suites: trajectory geometry, support of recorded draws, the
//! seroconversion marginalization identity and permutation invariance.

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use vlsero::distributions::{GammaDist, Rng};
use vlsero::likelihood::{loglik_sero, sero_indicator_posterior};
use vlsero::model::{
    derive_sg_geometry, latent_mean_diag, latent_mean_sg, swab_time_offset, tent, AssayConstants,
    PersonDiagParams, PersonSgParams,
};
use vlsero::sampler::{self, ChainConfig};
use vlsero::simulate::{reference_truth, simulate_dataset, CovariateDist, CovariateSpec, SimulationSpec, StudyDesign};
use vlsero::{CovariateWiring, Dataset, Model, ParameterState, PeakAlignmentConfig, PriorConfig, SeroRecord};

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(Config { cases, failure_persistence: None, ..Config::default() }, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn person_strategy() -> impl Strategy<Value = (PersonDiagParams, PersonSgParams)> {
    (0.1f64..12.0, 0.2f64..12.0, 1.5f64..25.0, -3.0f64..3.0, 0.0f64..1.0, 0.0f64..0.999, 0.001f64..0.999).prop_filter_map(
        "sg support",
        |(v_p, w_a, w_b, t_p, ftd, fwd, q)| {
            let t_d = -w_a + (w_b - 1.0 + w_a) * ftd;
            if !(t_d > -w_a && w_b - t_d > 1.0) {
                return None;
            }
            let w_d = (((w_b - t_d).ln()) * fwd).exp();
            Some((PersonDiagParams { v_p, w_a, w_b, t_p }, PersonSgParams { t_d, w_d, q }))
        },
    )
}

/// Peak height, LoD at both window ends, boundedness, continuity at the
/// peak, monotonicity, sgRNA nesting and invariance of loads under a joint
/// shift of swab day and latent peak.
pub fn tent_invariants() -> Result<String, String> {
    let c = AssayConstants::default();
    let cases = 3000;
    let mut r = runner(cases);
    let result = r.run(&(person_strategy(), 0.0f64..1.0, 0.0f64..1.0, -5.0f64..5.0), |((d, g), u, v, shift)| {
        let tol = 1e-10 * (1.0 + d.v_p);
        prop_assert!((latent_mean_diag(&d, 0.0, &c) - (c.lod_diag + d.v_p)).abs() < tol);
        prop_assert!((latent_mean_diag(&d, -d.w_a, &c) - c.lod_diag).abs() < tol);
        prop_assert!((latent_mean_diag(&d, d.w_b, &c) - c.lod_diag).abs() < tol);
        let eps = 1e-9;
        prop_assert!((latent_mean_diag(&d, -eps, &c) - latent_mean_diag(&d, eps, &c)).abs() < 1e-6);
        let (lo, hi) = if u < v { (u, v) } else { (v, u) };
        for s in [-d.w_a * lo, -d.w_a * hi, d.w_b * lo, d.w_b * hi] {
            let y = latent_mean_diag(&d, s, &c);
            prop_assert!(y >= c.lod_diag - tol && y <= c.lod_diag + d.v_p + tol);
        }
        if hi - lo > 1e-9 {
            prop_assert!(latent_mean_diag(&d, -d.w_a * hi, &c) < latent_mean_diag(&d, -d.w_a * lo, &c));
            prop_assert!(latent_mean_diag(&d, d.w_b * hi, &c) < latent_mean_diag(&d, d.w_b * lo, &c));
        }
        prop_assert!(latent_mean_diag(&d, -d.w_a - 0.5, &c) < c.lod_diag);
        prop_assert!(latent_mean_diag(&d, d.w_b + 0.5, &c) < c.lod_diag);

        let geom = derive_sg_geometry(&d, &g).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert!(geom.v_p < d.v_p);
        // sgRNA window in diagnostic time is [-w_a, w_b - w_d]
        prop_assert!((g.t_d - geom.w_a - (-d.w_a)).abs() < 1e-9);
        prop_assert!(g.t_d + geom.w_b <= d.w_b - g.w_d + 1e-9);
        prop_assert!((latent_mean_sg(&d, &g, 0.0, &c) - (c.lod_sg + geom.v_p)).abs() < tol);
        prop_assert!((tent(c.lod_sg, geom.v_p, geom.w_a, geom.w_b, geom.w_b) - c.lod_sg).abs() < tol);

        let day = 6.0;
        let s0 = swab_time_offset(day, 5.0, d.t_p);
        let s1 = swab_time_offset(day + shift, 5.0, d.t_p + shift);
        prop_assert!((s0 - s1).abs() < 1e-9);
        Ok(())
    });
    match result {
        Ok(()) => Ok(format!("tent invariants: {cases} random persons")),
        Err(e) => Err(format!("tent invariants: {e}")),
    }
}

fn support_violation(model: &Model, s: &ParameterState) -> Option<String> {
    let p = &s.pop;
    if p.sigma_log.cholesky().is_none() || !p.sigma_log.is_symmetric(1e-12) {
        return Some("Sigma_log not symmetric positive definite".into());
    }
    let positive = [
        ("sigma_yy", p.sigma_yy),
        ("sigma_y_sg", p.sigma_y_sg),
        ("sigma_lwd", p.sigma_lwd),
        ("gamma1", p.gamma1),
        ("gamma2", p.gamma2),
        ("kappa1", p.kappa1),
        ("kappa2", p.kappa2),
    ];
    if let Some((n, v)) = positive.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
        return Some(format!("{n} = {v}"));
    }
    if !(p.delta_q > 0.0 && p.delta_q < 1.0) {
        return Some(format!("delta_q = {}", p.delta_q));
    }
    for (i, x) in s.persons.iter().enumerate() {
        let d = x.diag();
        let ok = d.is_valid()
            && x.sg().is_valid_for(&d)
            && x.w_b - x.t_d > 1.0
            && model.context(i).regime.admits(x.t_p);
        if !ok {
            return Some(format!("person {i}: {x:?}"));
        }
    }
    None
}

/// Fits a small simulated study and checks that every recorded draw lies in
/// the support and that the recorded log posterior equals a fresh
/// evaluation of that draw.
pub fn support_preservation() -> Result<String, String> {
    let truth = reference_truth();
    let wiring = CovariateWiring::default();
    let align = PeakAlignmentConfig::default();
    let design = StudyDesign { n_participants: 16, fraction_with_dbs: 0.6, fraction_sg_assayed: 0.6, ..Default::default() };
    let assay = AssayConstants::default();
    let spec = SimulationSpec { truth: &truth, wiring: &wiring, alignment: &align, design: &design, assay: &assay, td_sd: 2.0 };
    let sim = simulate_dataset(&spec, 4242).map_err(|e| e.to_string())?;
    let model = Model::new(sim.dataset, PriorConfig::default(), wiring).map_err(|e| e.to_string())?;
    let cfg = ChainConfig { n_chains: 3, n_warmup: 300, n_samples: 600, thin: 1, seed: 17, ..Default::default() };
    let outputs = sampler::run(&model, &cfg).map_err(|e| e.to_string())?;
    let layout = model.layout();
    let mut n = 0;
    let mut worst_lp: f64 = 0.0;
    for out in &outputs {
        for (row, lp) in out.draws.iter().zip(&out.logpost) {
            let s = layout.unflatten(row).ok_or("draw does not match layout")?;
            if let Some(v) = support_violation(&model, &s) {
                return Err(format!("support preservation: chain {} draw {n}: {v}", out.chain_id));
            }
            let fresh = model.log_posterior(&s).map_err(|e| e.to_string())?;
            if !fresh.is_finite() {
                return Err(format!("support preservation: non-finite log posterior at draw {n}"));
            }
            worst_lp = worst_lp.max((fresh - lp).abs() / fresh.abs().max(1.0));
            n += 1;
        }
    }
    if worst_lp > 1e-9 {
        return Err(format!("support preservation: recorded log posterior drifts from fresh evaluation by {worst_lp:e}"));
    }
    Ok(format!("support preservation: {n} draws in support, recorded log posterior within {worst_lp:.1e}"))
}

pub const MC_DRAWS: usize = 100_000;

/// Closed-form marginal probability of each censoring pattern against
/// Monte Carlo over `(C, T)`; agreement within 4 MC standard errors.
pub fn sero_marginalization() -> Result<String, String> {
    let gamma = GammaDist::new(2.3, 0.16).unwrap();
    let records = [
        SeroRecord::Right { last_negative: 14.0 },
        SeroRecord::Right { last_negative: 28.0 },
        SeroRecord::Left { first_positive: 14.0 },
        SeroRecord::Left { first_positive: 28.0 },
        SeroRecord::Interval { last_negative: 1.0, first_positive: 14.0 },
        SeroRecord::Interval { last_negative: 14.0, first_positive: 28.0 },
    ];
    let onsets = [-3.0, 2.5, 9.0];
    let etas: [f64; 2] = [-1.0, 1.0986];
    let mut rng = Rng::new(2718, 0);
    let mut worst_z: f64 = 0.0;
    let mut n_cases = 0;
    for rec in &records {
        for &onset in &onsets {
            for &eta in &etas {
                let p = 1.0 / (1.0 + (-eta).exp());
                let mut hits = 0usize;
                let mut converted_hits = 0usize;
                for _ in 0..MC_DRAWS {
                    let c = rng.uniform() < p;
                    let t = onset + gamma.sample(&mut rng);
                    let consistent = match *rec {
                        SeroRecord::Right { last_negative } => !c || t > last_negative,
                        SeroRecord::Left { first_positive } => c && t <= first_positive,
                        SeroRecord::Interval { last_negative, first_positive } => {
                            c && t > last_negative && t <= first_positive
                        }
                        SeroRecord::None => true,
                    };
                    if consistent {
                        hits += 1;
                        converted_hits += c as usize;
                    }
                }
                let exact = loglik_sero(rec, onset, eta, &gamma).exp();
                let mc = hits as f64 / MC_DRAWS as f64;
                let se = (exact * (1.0 - exact) / MC_DRAWS as f64).sqrt().max(1e-12);
                let z = (mc - exact).abs() / se;
                if hits > 0 {
                    let post = sero_indicator_posterior(rec, onset, eta, &gamma);
                    let cond = converted_hits as f64 / hits as f64;
                    let se_c = (post * (1.0 - post) / hits as f64).sqrt().max(1e-12);
                    worst_z = worst_z.max((cond - post).abs() / se_c);
                }
                worst_z = worst_z.max(z);
                n_cases += 1;
            }
        }
    }
    let line = format!("sero marginalization vs Monte Carlo: {n_cases} cases x {MC_DRAWS} draws, max |z| = {worst_z:.2}");
    if worst_z < 4.0 { Ok(line) } else { Err(line) }
}

/// Log posterior is unchanged by reordering persons together with their
/// latent states, and changes when only the data are reordered.
pub fn permutation_invariance() -> Result<String, String> {
    let mut truth = reference_truth();
    truth.beta_vp = vec![0.15];
    truth.beta_c = vec![-0.4];
    let wiring = CovariateWiring { x_vp: vec!["age".into()], x_c: vec!["age".into()], ..Default::default() };
    let align = PeakAlignmentConfig::default();
    let design = StudyDesign {
        n_participants: 12,
        fraction_with_dbs: 0.7,
        fraction_sg_assayed: 0.7,
        covariates: vec![CovariateSpec { name: "age".into(), dist: CovariateDist::Normal { mean: 0.0, sd: 1.0 } }],
        ..Default::default()
    };
    let assay = AssayConstants::default();
    let spec = SimulationSpec { truth: &truth, wiring: &wiring, alignment: &align, design: &design, assay: &assay, td_sd: 2.0 };
    let sim = simulate_dataset(&spec, 77).map_err(|e| e.to_string())?;
    let state = ParameterState { pop: truth.clone(), persons: sim.truth.states() };
    let base = Model::new(sim.dataset.clone(), PriorConfig::default(), wiring.clone()).map_err(|e| e.to_string())?;
    let lp = base.log_posterior(&state).map_err(|e| e.to_string())?;
    let mut rng = Rng::new(31, 0);
    let mut worst: f64 = 0.0;
    let mut data_only_changed = 0;
    let trials = 20;
    for _ in 0..trials {
        let mut order: Vec<usize> = (0..sim.dataset.len()).collect();
        rng.shuffle(&mut order);
        let mut data = Dataset::new(sim.dataset.assay.clone());
        data.covariate_names = sim.dataset.covariate_names.clone();
        data.persons = order.iter().map(|&i| sim.dataset.persons[i].clone()).collect();
        let permuted = ParameterState { pop: state.pop.clone(), persons: order.iter().map(|&i| state.persons[i]).collect() };
        let model = Model::new(data, PriorConfig::default(), wiring.clone()).map_err(|e| e.to_string())?;
        let lp2 = model.log_posterior(&permuted).map_err(|e| e.to_string())?;
        worst = worst.max((lp2 - lp).abs() / lp.abs().max(1.0));
        let mismatched = model.log_posterior(&state).map_err(|e| e.to_string())?;
        if order.iter().enumerate().any(|(k, &i)| k != i) && (mismatched - lp).abs() > 1e-6 {
            data_only_changed += 1;
        }
    }
    let line = format!("permutation invariance: {trials} permutations, max relative diff {worst:.1e}");
    if worst <= 1e-12 && data_only_changed == trials { Ok(line) } else { Err(format!("{line}; data-only changes {data_only_changed}/{trials}")) }
}

pub fn all_checks() -> Vec<Result<String, String>> {
    vec![tent_invariants(), support_preservation(), sero_marginalization(), permutation_invariance()]
}
