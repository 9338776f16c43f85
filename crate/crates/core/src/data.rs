//! Swab and DBS records, CSV ingestion and the in-memory dataset.
//!
//! File schemas (headers are matched exactly):
//!
//! - `swabs.csv`: `person_id,day,y_diag,y_sg`. An empty `y_sg` means the swab
//!   was not assayed for sgRNA. Loads at or below the LoD are negatives.
//! - `dbs.csv`: `person_id,day,igg_positive` with `igg_positive` in {0, 1}.
//! - `covariates.csv`: `person_id,<name>,...` with numeric values.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::AssayConstants;

pub const SWABS_HEADER: [&str; 4] = ["person_id", "day", "y_diag", "y_sg"];
pub const DBS_HEADER: [&str; 3] = ["person_id", "day", "igg_positive"];

/// One row-level problem found while reading input files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Issue {
    pub file: String,
    pub line: u64,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.file, self.line, self.message)
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{file}: {source}")]
    Csv { file: String, source: csv::Error },
    #[error("{file}: expected header `{expected}`, found `{found}`")]
    Header { file: String, expected: String, found: String },
    #[error("{} validation issue(s):\n{}", .0.len(), join_issues(.0))]
    Invalid(Vec<Issue>),
    #[error("{0}")]
    Inconsistent(String),
}

fn join_issues(issues: &[Issue]) -> String {
    issues.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n")
}

/// sgRNA result for one swab.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SgObservation {
    NotAssayed,
    Negative,
    Positive(f64),
}

impl SgObservation {
    pub fn is_assayed(&self) -> bool {
        !matches!(self, SgObservation::NotAssayed)
    }

    pub fn detected(&self) -> bool {
        matches!(self, SgObservation::Positive(_))
    }

    /// Recorded load, with negatives pinned to the sg LoD.
    pub fn value(&self, lod_sg: f64) -> Option<f64> {
        match self {
            SgObservation::NotAssayed => None,
            SgObservation::Negative => Some(lod_sg),
            SgObservation::Positive(y) => Some(*y),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwabRecord {
    pub day: i32,
    /// Recorded load; equals the LoD for negatives.
    pub y_diag: f64,
    pub b_diag: bool,
    /// Positive but below the limit of quantification.
    pub q_flag: bool,
    pub sg: SgObservation,
}

impl SwabRecord {
    /// Derives detection flags from raw loads. Loads at or below a LoD are
    /// negatives and are pinned to that LoD.
    pub fn from_loads(
        day: i32,
        y_diag: f64,
        y_sg: Option<f64>,
        assay: &AssayConstants,
    ) -> Result<Self, String> {
        if !y_diag.is_finite() {
            return Err(format!("y_diag `{y_diag}` is not finite"));
        }
        let b_diag = y_diag > assay.lod_diag;
        let sg = match y_sg {
            None => SgObservation::NotAssayed,
            Some(v) if !v.is_finite() => return Err(format!("y_sg `{v}` is not finite")),
            Some(_) if !b_diag => {
                return Err("sgRNA value recorded on a diagnostic-negative swab".into())
            }
            Some(v) if v > assay.lod_sg => SgObservation::Positive(v),
            Some(_) => SgObservation::Negative,
        };
        Ok(Self {
            day,
            y_diag: if b_diag { y_diag } else { assay.lod_diag },
            b_diag,
            q_flag: b_diag && y_diag < assay.loq_diag,
            sg,
        })
    }

    pub fn y_sg(&self, assay: &AssayConstants) -> Option<f64> {
        self.sg.value(assay.lod_sg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DbsResult {
    pub day: i32,
    pub positive: bool,
}

/// Censoring of the shedding-onset to seroconversion time, in study days.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SeroRecord {
    /// No antibody data: no likelihood contribution.
    None,
    /// All tests negative.
    Right { last_negative: f64 },
    /// First test already positive.
    Left { first_positive: f64 },
    Interval { last_negative: f64, first_positive: f64 },
}

impl SeroRecord {
    /// Builds the censoring record from DBS results in any order. Results
    /// after the first positive test are ignored.
    pub fn from_dbs(results: &[DbsResult]) -> Self {
        let mut sorted = results.to_vec();
        sorted.sort_by_key(|r| r.day);
        let mut last_negative = None;
        for r in &sorted {
            if r.positive {
                return match last_negative {
                    None => SeroRecord::Left { first_positive: r.day as f64 },
                    Some(lo) => {
                        SeroRecord::Interval { last_negative: lo, first_positive: r.day as f64 }
                    }
                };
            }
            last_negative = Some(r.day as f64);
        }
        match last_negative {
            None => SeroRecord::None,
            Some(lo) => SeroRecord::Right { last_negative: lo },
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            SeroRecord::None => "none",
            SeroRecord::Right { .. } => "right",
            SeroRecord::Left { .. } => "left",
            SeroRecord::Interval { .. } => "interval",
        }
    }

    pub fn has_data(&self) -> bool {
        !matches!(self, SeroRecord::None)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Person {
    pub id: String,
    /// Sorted by day, one record per day.
    pub swabs: Vec<SwabRecord>,
    pub dbs: Vec<DbsResult>,
    pub sero: SeroRecord,
    /// Values aligned with [`Dataset::covariate_names`].
    pub covariates: Vec<f64>,
}

impl Person {
    pub fn new(id: impl Into<String>, mut swabs: Vec<SwabRecord>, mut dbs: Vec<DbsResult>) -> Self {
        swabs.sort_by_key(|s| s.day);
        dbs.sort_by_key(|d| d.day);
        let sero = SeroRecord::from_dbs(&dbs);
        Self { id: id.into(), swabs, dbs, sero, covariates: Vec::new() }
    }

    /// Study day of the maximal diagnostic load, earliest on ties.
    pub fn ref_peak_day(&self) -> Option<i32> {
        let mut best: Option<&SwabRecord> = None;
        for s in self.swabs.iter().filter(|s| s.b_diag) {
            if best.is_none_or(|b| s.y_diag > b.y_diag) {
                best = Some(s);
            }
        }
        best.map(|s| s.day)
    }

    pub fn first_day(&self) -> Option<i32> {
        self.swabs.first().map(|s| s.day)
    }

    pub fn last_day(&self) -> Option<i32> {
        self.swabs.last().map(|s| s.day)
    }

    pub fn n_positive(&self) -> usize {
        self.swabs.iter().filter(|s| s.b_diag).count()
    }

    /// True when at least one swab was assayed for sgRNA.
    pub fn has_sg_data(&self) -> bool {
        self.swabs.iter().any(|s| s.sg.is_assayed())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub assay: AssayConstants,
    pub covariate_names: Vec<String>,
    pub persons: Vec<Person>,
}

impl Dataset {
    pub fn new(assay: AssayConstants) -> Self {
        Self { assay, covariate_names: Vec::new(), persons: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.persons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.persons.is_empty()
    }

    pub fn person_index(&self, id: &str) -> Option<usize> {
        self.persons.iter().position(|p| p.id == id)
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|n| n == name)
    }

    pub fn n_swabs(&self) -> usize {
        self.persons.iter().map(|p| p.swabs.len()).sum()
    }

    /// Structural checks that ingestion guarantees but hand-built datasets
    /// may violate.
    pub fn check(&self) -> Result<(), DataError> {
        let mut problems = Vec::new();
        let mut seen = HashMap::new();
        for (i, p) in self.persons.iter().enumerate() {
            if seen.insert(p.id.as_str(), i).is_some() {
                problems.push(format!("duplicate person id `{}`", p.id));
            }
            if p.covariates.len() != self.covariate_names.len() {
                problems.push(format!("person `{}` has {} covariates, expected {}",
                    p.id, p.covariates.len(), self.covariate_names.len()));
            }
            if p.swabs.windows(2).any(|w| w[0].day >= w[1].day) {
                problems.push(format!("person `{}` swabs not strictly increasing in day", p.id));
            }
            for s in &p.swabs {
                if s.b_diag != (s.y_diag > self.assay.lod_diag)
                    || (!s.b_diag && s.y_diag != self.assay.lod_diag)
                    || s.q_flag != (s.b_diag && s.y_diag < self.assay.loq_diag)
                {
                    problems.push(format!("person `{}` day {}: inconsistent diagnostic flags", p.id, s.day));
                }
                if s.sg.is_assayed() && !s.b_diag {
                    problems.push(format!("person `{}` day {}: sgRNA on diagnostic-negative swab", p.id, s.day));
                }
            }
            if p.sero != SeroRecord::from_dbs(&p.dbs) && p.sero != SeroRecord::None {
                problems.push(format!("person `{}` sero record disagrees with DBS results", p.id));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(DataError::Inconsistent(problems.join("; ")))
        }
    }

    pub fn from_paths(
        swabs: &Path,
        dbs: Option<&Path>,
        covariates: Option<&Path>,
        assay: &AssayConstants,
        required_covariates: &[String],
    ) -> Result<Self, DataError> {
        let open = |p: &Path| {
            std::fs::File::open(p).map_err(|source| DataError::Io { path: p.to_path_buf(), source })
        };
        let name = |p: &Path| p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned());
        let swab_src = Source { name: name(swabs), reader: open(swabs)? };
        let dbs_src = dbs.map(|p| Ok::<_, DataError>(Source { name: name(p), reader: open(p)? })).transpose()?;
        let cov_src = covariates
            .map(|p| Ok::<_, DataError>(Source { name: name(p), reader: open(p)? }))
            .transpose()?;
        ingest(swab_src, dbs_src, cov_src, assay, required_covariates)
    }

    /// Writes `swabs.csv`, `dbs.csv` and (if any covariates) `covariates.csv`.
    pub fn write_dir(&self, dir: &Path) -> Result<(), DataError> {
        let create = |name: &str| {
            let path = dir.join(name);
            std::fs::File::create(&path).map_err(|source| DataError::Io { path, source })
        };
        self.write_swabs(create("swabs.csv")?)?;
        self.write_dbs(create("dbs.csv")?)?;
        if !self.covariate_names.is_empty() {
            self.write_covariates(create("covariates.csv")?)?;
        }
        Ok(())
    }

    pub fn write_swabs<W: Write>(&self, w: W) -> Result<(), DataError> {
        let err = |source| DataError::Csv { file: "swabs.csv".into(), source };
        let mut out = csv::Writer::from_writer(w);
        out.write_record(SWABS_HEADER).map_err(err)?;
        for p in &self.persons {
            for s in &p.swabs {
                let y_sg = s.y_sg(&self.assay).map(|v| v.to_string()).unwrap_or_default();
                out.write_record([p.id.clone(), s.day.to_string(), s.y_diag.to_string(), y_sg])
                    .map_err(err)?;
            }
        }
        out.flush().map_err(|e| err(e.into()))
    }

    pub fn write_dbs<W: Write>(&self, w: W) -> Result<(), DataError> {
        let err = |source| DataError::Csv { file: "dbs.csv".into(), source };
        let mut out = csv::Writer::from_writer(w);
        out.write_record(DBS_HEADER).map_err(err)?;
        for p in &self.persons {
            for d in &p.dbs {
                let flag = if d.positive { "1" } else { "0" };
                out.write_record([p.id.as_str(), &d.day.to_string(), flag]).map_err(err)?;
            }
        }
        out.flush().map_err(|e| err(e.into()))
    }

    pub fn write_covariates<W: Write>(&self, w: W) -> Result<(), DataError> {
        let err = |source| DataError::Csv { file: "covariates.csv".into(), source };
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["person_id".to_string()];
        header.extend(self.covariate_names.iter().cloned());
        out.write_record(&header).map_err(err)?;
        for p in &self.persons {
            let mut row = vec![p.id.clone()];
            row.extend(p.covariates.iter().map(|v| v.to_string()));
            out.write_record(&row).map_err(err)?;
        }
        out.flush().map_err(|e| err(e.into()))
    }
}

/// A named CSV input.
pub struct Source<R> {
    pub name: String,
    pub reader: R,
}

impl<'a> Source<&'a [u8]> {
    pub fn from_str(name: &str, text: &'a str) -> Self {
        Self { name: name.to_string(), reader: text.as_bytes() }
    }
}

fn csv_reader<R: Read>(src: Source<R>) -> (String, csv::Reader<R>) {
    let reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(src.reader);
    (src.name, reader)
}

fn check_header(
    file: &str,
    reader: &mut csv::Reader<impl Read>,
    expected: &[&str],
) -> Result<csv::StringRecord, DataError> {
    let found = reader.headers().map_err(|source| DataError::Csv { file: file.into(), source })?.clone();
    if found.iter().ne(expected.iter().copied()) {
        return Err(DataError::Header {
            file: file.into(),
            expected: expected.join(","),
            found: found.iter().collect::<Vec<_>>().join(","),
        });
    }
    Ok(found)
}

/// Reads and validates the three input tables. All row-level problems are
/// collected and reported together.
pub fn ingest<R1: Read, R2: Read, R3: Read>(
    swabs: Source<R1>,
    dbs: Option<Source<R2>>,
    covariates: Option<Source<R3>>,
    assay: &AssayConstants,
    required_covariates: &[String],
) -> Result<Dataset, DataError> {
    assay.validate().map_err(|e| DataError::Inconsistent(e.to_string()))?;
    let mut issues = Vec::new();
    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<SwabRecord>> = HashMap::new();
    let mut seen_days: HashMap<(String, i32), u64> = HashMap::new();

    let (file, mut rdr) = csv_reader(swabs);
    check_header(&file, &mut rdr, &SWABS_HEADER)?;
    for rec in rdr.records() {
        let rec = rec.map_err(|source| DataError::Csv { file: file.clone(), source })?;
        let line = rec.position().map_or(0, |p| p.line());
        let mut issue = |message: String| issues.push(Issue { file: file.clone(), line, message });
        let id = rec[0].to_string();
        if id.is_empty() {
            issue("empty person_id".into());
            continue;
        }
        let Ok(day) = rec[1].parse::<i32>() else {
            issue(format!("day `{}` is not an integer", &rec[1]));
            continue;
        };
        let Ok(y_diag) = rec[2].parse::<f64>() else {
            issue(format!("y_diag `{}` is not a number", &rec[2]));
            continue;
        };
        let y_sg = match &rec[3] {
            "" => None,
            s => match s.parse::<f64>() {
                Ok(v) => Some(v),
                Err(_) => {
                    issue(format!("y_sg `{s}` is not a number"));
                    continue;
                }
            },
        };
        if let Some(first) = seen_days.insert((id.clone(), day), line) {
            issue(format!("duplicate swab for person `{id}` on day {day} (first at line {first})"));
            continue;
        }
        match SwabRecord::from_loads(day, y_diag, y_sg, assay) {
            Ok(s) => {
                if !rows.contains_key(&id) {
                    order.push(id.clone());
                }
                rows.entry(id).or_default().push(s);
            }
            Err(m) => issue(m),
        }
    }

    let mut dbs_rows: HashMap<String, Vec<DbsResult>> = HashMap::new();
    if let Some(src) = dbs {
        let (file, mut rdr) = csv_reader(src);
        check_header(&file, &mut rdr, &DBS_HEADER)?;
        let mut seen: HashMap<(String, i32), u64> = HashMap::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|source| DataError::Csv { file: file.clone(), source })?;
            let line = rec.position().map_or(0, |p| p.line());
            let mut issue = |message: String| issues.push(Issue { file: file.clone(), line, message });
            let id = rec[0].to_string();
            let Ok(day) = rec[1].parse::<i32>() else {
                issue(format!("day `{}` is not an integer", &rec[1]));
                continue;
            };
            let positive = match &rec[2] {
                "0" => false,
                "1" => true,
                other => {
                    issue(format!("igg_positive `{other}` must be 0 or 1"));
                    continue;
                }
            };
            if !rows.contains_key(&id) {
                issue(format!("DBS result for person `{id}` who has no swabs"));
                continue;
            }
            if let Some(first) = seen.insert((id.clone(), day), line) {
                issue(format!("duplicate DBS result for person `{id}` on day {day} (first at line {first})"));
                continue;
            }
            dbs_rows.entry(id).or_default().push(DbsResult { day, positive });
        }
    }

    let mut covariate_names = Vec::new();
    let mut cov_rows: HashMap<String, Vec<f64>> = HashMap::new();
    if let Some(src) = covariates {
        let (file, mut rdr) = csv_reader(src);
        let header = rdr.headers().map_err(|source| DataError::Csv { file: file.clone(), source })?.clone();
        if header.get(0) != Some("person_id") || header.len() < 2 {
            return Err(DataError::Header {
                file,
                expected: "person_id,<name>,...".into(),
                found: header.iter().collect::<Vec<_>>().join(","),
            });
        }
        covariate_names = header.iter().skip(1).map(str::to_string).collect();
        for rec in rdr.records() {
            let rec = rec.map_err(|source| DataError::Csv { file: file.clone(), source })?;
            let line = rec.position().map_or(0, |p| p.line());
            let id = rec[0].to_string();
            let mut values = Vec::with_capacity(covariate_names.len());
            for (name, raw) in covariate_names.iter().zip(rec.iter().skip(1)) {
                match raw.parse::<f64>() {
                    Ok(v) if v.is_finite() => values.push(v),
                    _ => issues.push(Issue {
                        file: file.clone(),
                        line,
                        message: format!("covariate `{name}` value `{raw}` is not a finite number"),
                    }),
                }
            }
            if !rows.contains_key(&id) {
                issues.push(Issue { file: file.clone(), line, message: format!("covariates for unknown person `{id}`") });
            } else if cov_rows.insert(id.clone(), values).is_some() {
                issues.push(Issue { file: file.clone(), line, message: format!("duplicate covariate row for `{id}`") });
            }
        }
    }
    for name in required_covariates {
        if name != crate::likelihood::PEAK_VP_COVARIATE && !covariate_names.contains(name) {
            issues.push(Issue {
                file: "config".into(),
                line: 0,
                message: format!("unknown covariate `{name}` referenced by the model"),
            });
        }
    }
    if !covariate_names.is_empty() {
        for id in &order {
            if !cov_rows.contains_key(id) {
                issues.push(Issue {
                    file: "covariates".into(),
                    line: 0,
                    message: format!("person `{id}` has no covariate row"),
                });
            }
        }
    }
    if !issues.is_empty() {
        issues.sort_by(|a, b| (a.file.as_str(), a.line).cmp(&(b.file.as_str(), b.line)));
        return Err(DataError::Invalid(issues));
    }

    let persons = order
        .into_iter()
        .map(|id| {
            let swabs = rows.remove(&id).unwrap_or_default();
            let dbs = dbs_rows.remove(&id).unwrap_or_default();
            let mut p = Person::new(id.clone(), swabs, dbs);
            p.covariates = cov_rows.remove(&id).unwrap_or_default();
            p
        })
        .collect();
    Ok(Dataset { assay: *assay, covariate_names, persons })
}

/// Per-person summary for the `validate` command.
pub fn describe(data: &Dataset) -> BTreeMap<&'static str, usize> {
    let mut out = BTreeMap::new();
    out.insert("persons", data.len());
    out.insert("swabs", data.n_swabs());
    out.insert("positive_swabs", data.persons.iter().map(Person::n_positive).sum());
    out.insert(
        "sg_assayed",
        data.persons.iter().flat_map(|p| &p.swabs).filter(|s| s.sg.is_assayed()).count(),
    );
    out.insert("with_dbs", data.persons.iter().filter(|p| p.sero.has_data()).count());
    out.insert("without_positive", data.persons.iter().filter(|p| p.n_positive() == 0).count());
    out
}
