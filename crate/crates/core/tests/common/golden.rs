//! Loader for the one-person golden instance whose log posterior was
//! computed by the independent scipy script next to the JSON.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use vlsero::data::DbsResult;
use vlsero::likelihood::LogPosteriorTerms;
use vlsero::{AssayConstants, CovariateWiring, Dataset, Model, ParameterState, Person, PriorConfig, SwabRecord};

#[derive(Deserialize)]
struct Instance {
    person_id: String,
    covariate_names: Vec<String>,
    covariates: Vec<f64>,
    wiring: CovariateWiring,
    swabs: Vec<(i32, f64, Option<f64>)>,
    dbs: Vec<(i32, bool)>,
}

#[derive(Deserialize)]
struct Terms {
    hyperprior: f64,
    person_prior: f64,
    diag_swabs: f64,
    sg_swabs: f64,
    sero: f64,
}

#[derive(Deserialize)]
struct Record {
    instance: Instance,
    state: ParameterState,
    terms: Terms,
    log_posterior: f64,
}

pub struct Golden {
    pub model: Model,
    pub state: ParameterState,
    pub terms: LogPosteriorTerms,
}

pub fn golden_path(core_dir: &Path) -> PathBuf {
    core_dir.join("tests/golden/logpost_1p3s.json")
}

pub fn load(core_dir: &Path) -> Golden {
    let text = std::fs::read_to_string(golden_path(core_dir)).expect("golden json readable");
    let rec: Record = serde_json::from_str(&text).expect("golden json parses");
    let assay = AssayConstants::default();
    let inst = rec.instance;
    let swabs = inst
        .swabs
        .iter()
        .map(|&(day, y, sg)| SwabRecord::from_loads(day, y, sg, &assay).expect("valid swab"))
        .collect();
    let dbs = inst.dbs.iter().map(|&(day, positive)| DbsResult { day, positive }).collect();
    let mut person = Person::new(inst.person_id, swabs, dbs);
    person.covariates = inst.covariates;
    let mut data = Dataset::new(assay);
    data.covariate_names = inst.covariate_names;
    data.persons.push(person);
    let model = Model::new(data, PriorConfig::default(), inst.wiring).expect("golden model builds");
    let t = rec.terms;
    Golden {
        model,
        state: rec.state,
        terms: LogPosteriorTerms {
            hyperprior: t.hyperprior,
            person_prior: t.person_prior,
            diag_swabs: t.diag_swabs,
            sg_swabs: t.sg_swabs,
            sero: t.sero,
            total: rec.log_posterior,
        },
    }
}
