//! Subcommand implementations.
//!
//! Every command that writes an output directory also writes
//! `manifest.json` there; `rerun` re-executes a manifest into a fresh
//! directory and checks that every output is byte-identical.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use vlsero::cv::{self, CvSetup};
use vlsero::posterior::{self, BandLevel};
use vlsero::sampler::{self, ChainOutput};
use vlsero::simulate::{self, SimulationSpec};
use vlsero::{data, Dataset, Model};

use crate::config::{self, Config, LoadedConfig};
use crate::manifest::{self, Manifest, SeedRecord};
use crate::CliError;

pub const FIT_FILE: &str = "fit.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommandKind {
    Simulate,
    Fit,
    Summarize,
    Impute,
    Cv,
    Validate,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::Simulate => "simulate",
            CommandKind::Fit => "fit",
            CommandKind::Summarize => "summarize",
            CommandKind::Impute => "impute",
            CommandKind::Cv => "cv",
            CommandKind::Validate => "validate",
        }
    }
}

/// A fully resolved command, with absolute paths.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Invocation {
    pub command: CommandKind,
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub folds: Option<usize>,
    /// Fit directory read by `summarize` and `impute`.
    pub fit: Option<PathBuf>,
}

/// Process-level context recorded in manifests.
#[derive(Debug, Clone, Default)]
pub struct RunContext {
    pub args: Vec<String>,
    pub threads: Option<usize>,
}

/// What a command read and which seeds it used.
#[derive(Debug, Default)]
struct Record {
    config: Option<LoadedConfig>,
    inputs: Vec<PathBuf>,
    seeds: Vec<SeedRecord>,
}

/// Chain metadata stored in `fit.json`; draws live in the chain CSVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    /// Config with data paths made absolute.
    pub config: Config,
    pub names: Vec<String>,
    pub n_global: usize,
    pub chains: Vec<ChainOutput>,
}

pub fn draws_file(chain: usize) -> String {
    format!("draws_chain_{chain}.csv")
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    write(path, serde_json::to_string_pretty(value)?)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn need<'a, T>(v: &'a Option<T>, flag: &str, command: CommandKind) -> Result<&'a T, CliError> {
    v.as_ref().ok_or_else(|| CliError::Validation(format!("{} requires {flag}", command.name())))
}

fn data_paths(lc: &LoadedConfig) -> Result<(PathBuf, Option<PathBuf>, Option<PathBuf>), CliError> {
    let swabs = lc.swabs_path().ok_or_else(|| CliError::Validation("missing required config keys: data.swabs".into()))?;
    Ok((swabs, lc.dbs_path(), lc.covariates_path()))
}

fn input_files(lc: &LoadedConfig) -> Vec<PathBuf> {
    [lc.swabs_path(), lc.dbs_path(), lc.covariates_path()].into_iter().flatten().collect()
}

pub fn load_dataset(lc: &LoadedConfig) -> Result<Dataset, CliError> {
    let (swabs, dbs, cov) = data_paths(lc)?;
    let cfg = &lc.config;
    Ok(Dataset::from_paths(&swabs, dbs.as_deref(), cov.as_deref(), &cfg.prior.assay, &cfg.wiring.referenced())?)
}

pub fn load_model(lc: &LoadedConfig) -> Result<Model, CliError> {
    let data = load_dataset(lc)?;
    Ok(Model::new(data, lc.config.prior.clone(), lc.config.wiring.clone())?)
}

fn seed_of(cfg: &Config) -> u64 {
    cfg.seed.unwrap_or(cfg.chains.seed)
}

/// Runs one command and, if it has an output directory, writes and
/// returns its manifest.
pub fn execute(inv: &Invocation, ctx: &RunContext) -> Result<Option<Manifest>, CliError> {
    let started = manifest::unix_now();
    if let Some(out) = &inv.out {
        std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    }
    let record = match inv.command {
        CommandKind::Simulate => simulate_cmd(inv)?,
        CommandKind::Fit => fit_cmd(inv)?,
        CommandKind::Summarize => summarize_cmd(inv)?,
        CommandKind::Impute => impute_cmd(inv)?,
        CommandKind::Cv => cv_cmd(inv)?,
        CommandKind::Validate => validate_cmd(inv)?,
    };
    let Some(out) = &inv.out else {
        return Ok(None);
    };
    let mut inputs = record.inputs;
    if let Some(lc) = &record.config {
        inputs.insert(0, lc.path.clone());
    }
    let m = Manifest {
        command: inv.command.name().to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_path: record.config.as_ref().map(|c| c.path.clone()),
        config_text: record.config.as_ref().map(|c| c.text.clone()),
        args: ctx.args.clone(),
        invocation: inv.clone(),
        threads: ctx.threads,
        seeds: record.seeds,
        inputs: manifest::hash_inputs(&inputs)?,
        outputs: manifest::hash_outputs(out)?,
        started_unix: started,
        finished_unix: manifest::unix_now(),
    };
    m.write(out)?;
    Ok(Some(m))
}

fn load_config(inv: &Invocation) -> Result<LoadedConfig, CliError> {
    let path = need(&inv.config, "--config", inv.command)?;
    config::load(path, inv.command.name(), inv.seed)
}

fn simulate_cmd(inv: &Invocation) -> Result<Record, CliError> {
    let lc = load_config(inv)?;
    let out = need(&inv.out, "--out", inv.command)?;
    let cfg = &lc.config;
    let seed = seed_of(cfg);
    let truth = cfg.truth()?;
    let spec = SimulationSpec {
        truth: &truth,
        wiring: &cfg.wiring,
        alignment: &cfg.prior.alignment,
        design: &cfg.design,
        assay: &cfg.prior.assay,
        td_sd: cfg.prior.td_sd,
    };
    let sim = simulate::simulate_dataset(&spec, seed)?;
    sim.dataset.write_dir(out)?;
    write_json(&out.join("truth.json"), &sim.truth)?;
    info!("simulated {} persons with seed {seed}", sim.dataset.len());
    let seeds = vec![SeedRecord { label: "simulate (stream = person index)".into(), seed, stream: None }];
    Ok(Record { config: Some(lc), inputs: Vec::new(), seeds })
}

fn chain_seeds(outputs: &[ChainOutput], prefix: &str) -> Vec<SeedRecord> {
    outputs
        .iter()
        .map(|o| SeedRecord { label: format!("{prefix}chain {}", o.chain_id), seed: o.seed, stream: Some(o.stream) })
        .collect()
}

fn write_draws(path: &Path, o: &ChainOutput, n_warmup: usize, thin: usize) -> Result<(), CliError> {
    let err = |e: csv::Error| CliError::io(path, e);
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    let mut header = vec!["iteration".to_string(), "logpost".to_string()];
    header.extend(o.names.iter().cloned());
    w.write_record(&header).map_err(err)?;
    for (k, (row, lp)) in o.draws.iter().zip(&o.logpost).enumerate() {
        let mut rec = vec![(n_warmup + (k + 1) * thin).to_string(), lp.to_string()];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Reads a chain CSV back as (draw rows, recorded log posterior).
pub fn read_draws(path: &Path, names: &[String]) -> Result<(Vec<Vec<f64>>, Vec<f64>), CliError> {
    let bad = |m: String| CliError::Validation(format!("{}: {m}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::io(path, e))?;
    let header = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    let want: Vec<&str> = ["iteration", "logpost"].into_iter().chain(names.iter().map(String::as_str)).collect();
    if header.iter().ne(want.iter().copied()) {
        return Err(bad("header does not match the fit's parameter names".into()));
    }
    let mut draws = Vec::new();
    let mut logpost = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let vals: Vec<f64> = rec
            .iter()
            .skip(1)
            .map(|s| s.parse::<f64>().map_err(|e| bad(format!("row {}: {e}", line + 2))))
            .collect::<Result<_, _>>()?;
        logpost.push(vals[0]);
        draws.push(vals[1..].to_vec());
    }
    Ok((draws, logpost))
}

fn diagnostics_csv(outputs: &[ChainOutput]) -> String {
    let mut s = String::from("name,rhat,rhat_classic,rhat_rank,ess_bulk,degenerate\n");
    for d in sampler::diagnostics(outputs) {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            d.name, d.rhat, d.rhat_classic, d.rhat_rank, d.ess_bulk, d.degenerate
        ));
    }
    s
}

fn resolved(lc: &LoadedConfig) -> Config {
    let mut c = lc.config.clone();
    c.data.swabs = lc.swabs_path();
    c.data.dbs = lc.dbs_path();
    c.data.covariates = lc.covariates_path();
    c
}

fn fit_cmd(inv: &Invocation) -> Result<Record, CliError> {
    let lc = load_config(inv)?;
    let out = need(&inv.out, "--out", inv.command)?;
    let model = load_model(&lc)?;
    let chains = &lc.config.chains;
    info!(
        "fitting {} persons: {} chains x ({} warmup + {} samples, thin {})",
        model.n_persons(),
        chains.n_chains,
        chains.n_warmup,
        chains.n_samples,
        chains.thin
    );
    let outputs = sampler::run(&model, chains)?;
    for o in &outputs {
        write_draws(&out.join(draws_file(o.chain_id)), o, chains.n_warmup, chains.thin)?;
    }
    let layout = model.layout();
    let n_global = layout.n_global();
    let diag = sampler::diagnostics(&outputs);
    if let Some(worst) = diag.iter().take(n_global).filter(|d| !d.degenerate).max_by(|a, b| a.rhat.total_cmp(&b.rhat)) {
        if worst.rhat > 1.05 {
            warn!("max global R-hat {:.3} ({}) exceeds 1.05", worst.rhat, worst.name);
        }
    }
    write(&out.join("diagnostics.csv"), diagnostics_csv(&outputs))?;
    let meta: Vec<ChainOutput> =
        outputs.iter().map(|o| ChainOutput { draws: Vec::new(), logpost: Vec::new(), ..o.clone() }).collect();
    let fit = FitRecord { config: resolved(&lc), names: layout.names(), n_global, chains: meta };
    write_json(&out.join(FIT_FILE), &fit)?;
    Ok(Record { inputs: input_files(&lc), seeds: chain_seeds(&outputs, ""), config: Some(lc) })
}

/// A fit directory loaded back with its model.
pub struct LoadedFit {
    pub record: FitRecord,
    pub model: Model,
    pub outputs: Vec<ChainOutput>,
    pub files: Vec<PathBuf>,
}

pub fn load_fit(dir: &Path) -> Result<LoadedFit, CliError> {
    let fit_path = dir.join(FIT_FILE);
    let record: FitRecord = read_json(&fit_path)?;
    let lc = LoadedConfig {
        config: record.config.clone(),
        path: fit_path.clone(),
        text: String::new(),
        base_dir: dir.to_path_buf(),
    };
    let model = load_model(&lc)?;
    if model.layout().names() != record.names {
        return Err(CliError::Validation(format!("{}: parameter names do not match the data", fit_path.display())));
    }
    let mut files = vec![fit_path];
    files.extend(input_files(&lc));
    let mut outputs = Vec::with_capacity(record.chains.len());
    for meta in &record.chains {
        let path = dir.join(draws_file(meta.chain_id));
        let (draws, logpost) = read_draws(&path, &record.names)?;
        files.push(path);
        outputs.push(ChainOutput { draws, logpost, ..meta.clone() });
    }
    Ok(LoadedFit { record, model, outputs, files })
}

/// Optional `--config` for commands that read a fit: only its output
/// sections are used.
fn overrides(inv: &Invocation, fit: &FitRecord) -> Result<(Config, Option<LoadedConfig>), CliError> {
    match &inv.config {
        Some(p) => {
            let lc = config::load(p, inv.command.name(), inv.seed)?;
            Ok((lc.config.clone(), Some(lc)))
        }
        None => {
            let mut c = fit.config.clone();
            if let Some(s) = inv.seed {
                c.seed = Some(s);
            }
            Ok((c, None))
        }
    }
}

/// Recomputes the log posterior of every stored draw. Returns the CSV
/// report and the largest relative discrepancy.
pub fn logpost_check(model: &Model, outputs: &[ChainOutput]) -> Result<(String, f64), CliError> {
    let layout = model.layout();
    let mut s = String::from("chain,draw,recorded,recomputed,rel_diff\n");
    let mut worst = 0.0f64;
    for o in outputs {
        let rows: Vec<Result<f64, CliError>> = o
            .draws
            .par_iter()
            .map(|row| {
                let state = layout.unflatten(row).ok_or_else(|| CliError::Validation("draw does not match layout".into()))?;
                Ok(model.log_posterior(&state)?)
            })
            .collect();
        for (k, (lp, rec)) in rows.into_iter().zip(&o.logpost).enumerate() {
            let lp = lp?;
            let rel = if lp == *rec { 0.0 } else { (lp - rec).abs() / rec.abs().max(1.0) };
            worst = if rel.is_nan() { f64::INFINITY } else { worst.max(rel) };
            s.push_str(&format!("{},{k},{rec},{lp},{rel}\n", o.chain_id));
        }
    }
    Ok((s, worst))
}

fn summarize_cmd(inv: &Invocation) -> Result<Record, CliError> {
    let out = need(&inv.out, "--out", inv.command)?;
    let fit = load_fit(need(&inv.fit, "--fit", inv.command)?)?;
    let (cfg, lc) = overrides(inv, &fit.record)?;
    let (check, worst) = logpost_check(&fit.model, &fit.outputs)?;
    write(&out.join("logpost_check.csv"), check)?;
    let tol = cfg.summary.logpost_tolerance;
    if worst > tol {
        return Err(CliError::Numeric(format!(
            "recomputed log posterior differs from the recorded trace by {worst:e} (tolerance {tol:e})"
        )));
    }
    info!("log posterior trace reproduced (max relative difference {worst:e})");
    let draws = posterior::collect_draws(&fit.model, &fit.outputs)?;
    let summary = posterior::summarize_estimands(&fit.model, &draws)?;
    write_json(&out.join("summary.json"), &summary)?;
    write(&out.join("summary.csv"), summary.to_csv())?;
    let mut bands = Vec::new();
    bands.extend(posterior::trajectory_bands(&fit.model, &draws, &cfg.summary.grid(), &BandLevel::Population)?);
    for id in &cfg.summary.persons {
        let i = fit.model.data.person_index(id).ok_or_else(|| CliError::Validation(format!("unknown person `{id}`")))?;
        let p = &fit.model.data.persons[i];
        let (first, last) = (p.first_day().unwrap_or(0) as f64, p.last_day().unwrap_or(0) as f64);
        let n = ((last - first) / cfg.summary.grid_step + 1e-9).floor() as usize;
        let grid: Vec<f64> = (0..=n).map(|k| first + k as f64 * cfg.summary.grid_step).collect();
        bands.extend(posterior::trajectory_bands(&fit.model, &draws, &grid, &BandLevel::Person(id.clone()))?);
    }
    write(&out.join("bands.csv"), posterior::bands_to_csv(&bands))?;
    Ok(Record { config: lc, inputs: fit.files, seeds: Vec::new() })
}

fn impute_cmd(inv: &Invocation) -> Result<Record, CliError> {
    let out = need(&inv.out, "--out", inv.command)?;
    let fit = load_fit(need(&inv.fit, "--fit", inv.command)?)?;
    let (cfg, lc) = overrides(inv, &fit.record)?;
    let ids: Vec<String> = if cfg.impute.persons.is_empty() {
        fit.model.data.persons.iter().filter(|p| !p.has_sg_data()).map(|p| p.id.clone()).collect()
    } else {
        cfg.impute.persons.clone()
    };
    if ids.is_empty() {
        return Err(CliError::Validation("every person has sgRNA data; nothing to impute".into()));
    }
    let seed = seed_of(&cfg);
    let draws = posterior::collect_draws(&fit.model, &fit.outputs)?;
    let imputed = posterior::impute_sg(&fit.model, &draws, &ids, seed)?;
    write_json(&out.join("imputed_sg.json"), &imputed)?;
    let mut summary = String::from("person_id,estimand,mean,lo,hi\n");
    let mut bands = Vec::new();
    for imp in &imputed {
        for e in [&imp.onset_to_peak, &imp.peak_to_clearance, &imp.peak] {
            summary.push_str(&format!("{},{},{},{},{}\n", imp.id, e.name, e.mean, e.lo, e.hi));
        }
        bands.extend([imp.diag_band.clone(), imp.sg_band.clone(), imp.predictive.clone()]);
    }
    write(&out.join("imputed_summary.csv"), summary)?;
    write(&out.join("imputed_bands.csv"), posterior::bands_to_csv(&bands))?;
    let seeds = vec![SeedRecord { label: "impute (stream = person index)".into(), seed, stream: None }];
    Ok(Record { config: lc, inputs: fit.files, seeds })
}

fn cv_cmd(inv: &Invocation) -> Result<Record, CliError> {
    let lc = load_config(inv)?;
    let out = need(&inv.out, "--out", inv.command)?;
    let cfg = &lc.config;
    let data = load_dataset(&lc)?;
    let k = inv.folds.unwrap_or(cfg.cv.folds);
    let seed = seed_of(cfg);
    let plan = cv::make_folds(&data, k, seed)?;
    write_json(&out.join("fold_plan.json"), &plan)?;
    let setup = CvSetup {
        data: &data,
        prior: &cfg.prior,
        wiring: &cfg.wiring,
        chains: &cfg.chains,
        rhat_threshold: cfg.cv.rhat_threshold,
    };
    info!("cross-validating {} persons in {k} folds", data.len());
    let report = cv::run_cv(&setup, &plan)?;
    for f in &report.folds {
        write_json(&out.join(format!("fold_{}.json", f.fold)), f)?;
    }
    write(&out.join("cv_scores.csv"), report.to_csv())?;
    write_json(&out.join("cv_report.json"), &report)?;
    let mut seeds = vec![SeedRecord { label: "fold assignment".into(), seed, stream: None }];
    for f in &report.folds {
        for c in 0..cfg.chains.n_chains {
            seeds.push(SeedRecord {
                label: format!("fold {} chain {c}", f.fold),
                seed: f.seed,
                stream: Some(sampler::CHAIN_STREAM_BASE + c as u64),
            });
        }
    }
    Ok(Record { inputs: input_files(&lc), seeds, config: Some(lc) })
}

#[derive(Debug, Serialize)]
struct Validation {
    counts: BTreeMap<&'static str, usize>,
    covariates: Vec<String>,
    sero_records: BTreeMap<&'static str, usize>,
}

fn validate_cmd(inv: &Invocation) -> Result<Record, CliError> {
    let lc = load_config(inv)?;
    let model = load_model(&lc)?;
    let mut sero_records = BTreeMap::new();
    for p in &model.data.persons {
        *sero_records.entry(p.sero.kind_name()).or_insert(0) += 1;
    }
    let v = Validation { counts: data::describe(&model.data), covariates: model.data.covariate_names.clone(), sero_records };
    let text = serde_json::to_string_pretty(&v)?;
    println!("{text}");
    if let Some(out) = &inv.out {
        write(&out.join("validation.json"), &text)?;
    }
    Ok(Record { inputs: input_files(&lc), seeds: Vec::new(), config: Some(lc) })
}

/// Re-executes a manifest into `out` and compares every output hash.
pub fn rerun(manifest_path: &Path, out: &Path, ctx: &RunContext) -> Result<Manifest, CliError> {
    let recorded = Manifest::read(manifest_path)?;
    let changed = recorded.changed_inputs();
    if !changed.is_empty() {
        return Err(CliError::Validation(format!("inputs changed since the run:\n  {}", changed.join("\n  "))));
    }
    if recorded.tool_version != env!("CARGO_PKG_VERSION") {
        warn!("manifest written by version {}, running {}", recorded.tool_version, env!("CARGO_PKG_VERSION"));
    }
    let out = std::path::absolute(out).map_err(|e| CliError::io(out, e))?;
    if recorded.invocation.out.as_deref() == Some(out.as_path()) {
        return Err(CliError::Validation("rerun output directory must differ from the original".into()));
    }
    let inv = Invocation { out: Some(out), ..recorded.invocation.clone() };
    let fresh = execute(&inv, ctx)?.expect("rerun always has an output directory");
    let diff = manifest::compare_outputs(&recorded.outputs, &fresh.outputs);
    if !diff.is_empty() {
        return Err(CliError::Numeric(format!("outputs not reproduced:\n  {}", diff.join("\n  "))));
    }
    info!("all {} outputs reproduced", fresh.outputs.len());
    Ok(fresh)
}
