//! CSV formats shared by the tools.
//!
//! All files are UTF-8 with LF line endings. Booleans are `0`/`1`, sex is
//! `M`/`F`, and reals use Rust's shortest round-trip formatting so written
//! values parse back bit-exactly. Fields without a value are left empty.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::design_est::{EstimateRecord, InferenceKind};
use crate::frame::{
    Household, HouseholdId, Person, PersonId, PopulationFrame, Sex, SurveyModuleSpec,
};
use crate::sampler::{SchemeId, StageIISample, StageISample};
use crate::weights::WeightedSample;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
}

fn file_err(path: &Path, source: std::io::Error) -> IoError {
    IoError::File { path: path.display().to_string(), source }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> IoError {
    IoError::Parse { path: path.display().to_string(), line, message: message.into() }
}

// ---------------------------------------------------------------------------
// population files
// ---------------------------------------------------------------------------

/// Person file: `household_id,person_id,age_months,sex,is_head,<outcomes...>`.
pub fn population_to_csv(frame: &PopulationFrame) -> String {
    let outcome_names = frame.person_outcome_names();
    let mut out = String::new();
    out.push_str("household_id,person_id,age_months,sex,is_head");
    for name in &outcome_names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for p in frame.persons() {
        let _ = write!(
            out,
            "{},{},{},{},{}",
            p.household_id,
            p.person_id,
            p.age_months,
            p.sex.code(),
            if p.is_head { 1 } else { 0 }
        );
        for name in &outcome_names {
            out.push(',');
            if let Some(v) = p.outcome(name) {
                let _ = write!(out, "{v}");
            }
        }
        out.push('\n');
    }
    out
}

/// Household file: `household_id,<household outcomes...>`.
pub fn households_to_csv(frame: &PopulationFrame) -> String {
    let outcome_names = frame.household_outcome_names();
    let mut out = String::new();
    out.push_str("household_id");
    for name in &outcome_names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for h in frame.households() {
        let _ = write!(out, "{}", h.household_id);
        for name in &outcome_names {
            out.push(',');
            if let Some(v) = h.outcome(name) {
                let _ = write!(out, "{v}");
            }
        }
        out.push('\n');
    }
    out
}

/// Write `population.csv` and `households.csv` under `dir`.
pub fn write_population_files(frame: &PopulationFrame, dir: &Path) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(|e| file_err(dir, e))?;
    let ppath = dir.join("population.csv");
    fs::write(&ppath, population_to_csv(frame)).map_err(|e| file_err(&ppath, e))?;
    let hpath = dir.join("households.csv");
    fs::write(&hpath, households_to_csv(frame)).map_err(|e| file_err(&hpath, e))?;
    Ok(())
}

/// Read a population from the person file and an optional household file.
/// Household rosters are reconstructed in row order; the under-50 count is
/// recomputed from members.
pub fn read_population(
    persons_path: &Path,
    households_path: Option<&Path>,
) -> Result<PopulationFrame, IoError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(persons_path)
        .map_err(|e| IoError::Csv { path: persons_path.display().to_string(), source: e })?;
    let headers = reader
        .headers()
        .map_err(|e| IoError::Csv { path: persons_path.display().to_string(), source: e })?
        .clone();
    let fixed = ["household_id", "person_id", "age_months", "sex", "is_head"];
    for (i, want) in fixed.iter().enumerate() {
        if headers.get(i) != Some(*want) {
            return Err(parse_err(
                persons_path,
                1,
                format!("expected column {} to be {want}", i + 1),
            ));
        }
    }
    let outcome_names: Vec<String> =
        headers.iter().skip(fixed.len()).map(|s| s.to_string()).collect();

    let mut persons: Vec<Person> = Vec::new();
    let mut rosters: BTreeMap<HouseholdId, Vec<PersonId>> = BTreeMap::new();
    let mut order: Vec<HouseholdId> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2;
        let record =
            record.map_err(|e| IoError::Csv { path: persons_path.display().to_string(), source: e })?;
        let get = |i: usize| record.get(i).unwrap_or("");
        let household_id = HouseholdId(
            get(0).parse().map_err(|_| parse_err(persons_path, line, "bad household_id"))?,
        );
        let person_id = PersonId(
            get(1).parse().map_err(|_| parse_err(persons_path, line, "bad person_id"))?,
        );
        let age_months: u32 =
            get(2).parse().map_err(|_| parse_err(persons_path, line, "bad age_months"))?;
        let sex = Sex::parse(get(3))
            .ok_or_else(|| parse_err(persons_path, line, "sex must be M or F"))?;
        let is_head = match get(4) {
            "0" => false,
            "1" => true,
            other => {
                return Err(parse_err(persons_path, line, format!("is_head must be 0/1, got {other}")))
            }
        };
        let mut outcomes = BTreeMap::new();
        for (j, name) in outcome_names.iter().enumerate() {
            let cell = get(fixed.len() + j);
            if !cell.is_empty() {
                let v: f64 = cell.parse().map_err(|_| {
                    parse_err(persons_path, line, format!("bad value for outcome {name}"))
                })?;
                outcomes.insert(name.clone(), v);
            }
        }
        if !rosters.contains_key(&household_id) {
            order.push(household_id);
        }
        rosters.entry(household_id).or_default().push(person_id);
        persons.push(Person { person_id, household_id, age_months, sex, is_head, outcomes });
    }

    let mut household_outcomes: BTreeMap<HouseholdId, BTreeMap<String, f64>> = BTreeMap::new();
    if let Some(hpath) = households_path {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(hpath)
            .map_err(|e| IoError::Csv { path: hpath.display().to_string(), source: e })?;
        let headers = reader
            .headers()
            .map_err(|e| IoError::Csv { path: hpath.display().to_string(), source: e })?
            .clone();
        if headers.get(0) != Some("household_id") {
            return Err(parse_err(hpath, 1, "first column must be household_id"));
        }
        let names: Vec<String> = headers.iter().skip(1).map(|s| s.to_string()).collect();
        for (idx, record) in reader.records().enumerate() {
            let line = idx + 2;
            let record = record
                .map_err(|e| IoError::Csv { path: hpath.display().to_string(), source: e })?;
            let hid = HouseholdId(
                record
                    .get(0)
                    .unwrap_or("")
                    .parse()
                    .map_err(|_| parse_err(hpath, line, "bad household_id"))?,
            );
            let mut map = BTreeMap::new();
            for (j, name) in names.iter().enumerate() {
                let cell = record.get(j + 1).unwrap_or("");
                if !cell.is_empty() {
                    let v: f64 = cell.parse().map_err(|_| {
                        parse_err(hpath, line, format!("bad value for outcome {name}"))
                    })?;
                    map.insert(name.clone(), v);
                }
            }
            if let std::collections::btree_map::Entry::Vacant(slot) = rosters.entry(hid) {
                order.push(hid);
                slot.insert(Vec::new());
            }
            household_outcomes.insert(hid, map);
        }
    }

    let age_of: std::collections::HashMap<PersonId, u32> =
        persons.iter().map(|p| (p.person_id, p.age_months)).collect();
    let under50 = |ids: &[PersonId]| {
        ids.iter()
            .filter_map(|pid| age_of.get(pid))
            .filter(|&&age| age < crate::frame::UNDER_50_MONTHS)
            .count() as u32
    };

    let households: Vec<Household> = order
        .iter()
        .map(|hid| {
            let member_ids = rosters[hid].clone();
            Household {
                household_id: *hid,
                n_total_under50: under50(&member_ids),
                member_ids,
                household_outcomes: household_outcomes.remove(hid).unwrap_or_default(),
            }
        })
        .collect();

    Ok(PopulationFrame::from_parts(households, persons))
}

// ---------------------------------------------------------------------------
// sample manifest and weighted samples
// ---------------------------------------------------------------------------

pub fn sample_manifest_header() -> &'static str {
    "scheme,module,household_id,person_id,k_h,n_h\n"
}

/// Manifest rows for one realized sample: one row per selected person
/// (person modules) or per sampled household (household modules, blank
/// person). `k_h` is blank for SRS stage I.
pub fn sample_manifest_rows(
    frame: &PopulationFrame,
    scheme: SchemeId,
    module: &SurveyModuleSpec,
    stage1: Option<&StageISample>,
    stage2: &StageIISample,
) -> String {
    let mut out = String::new();
    let draw_count = |hid: HouseholdId| -> Option<u32> {
        match stage1 {
            Some(StageISample::PpsWr { draw_counts, .. }) => draw_counts.get(&hid).copied(),
            _ => None,
        }
    };
    let scheme_name = scheme.as_str();
    if module.level == crate::frame::ModuleLevel::Household {
        for (&hid, &n_h) in &stage2.allocation {
            let k = draw_count(hid).map(|k| k.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{scheme_name},{},{hid},,{k},{n_h}", module.module_name);
        }
    } else {
        for &pid in &stage2.selected {
            let hid = frame.person(pid).map(|p| p.household_id).unwrap_or(HouseholdId(0));
            let k = draw_count(hid).map(|k| k.to_string()).unwrap_or_default();
            let n_h = stage2.allocation.get(&hid).copied().unwrap_or(0);
            let _ = writeln!(out, "{scheme_name},{},{hid},{pid},{k},{n_h}", module.module_name);
        }
    }
    out
}

pub fn weighted_sample_header() -> &'static str {
    "scheme,module,psu_id,household_id,person_id,y,w\n"
}

pub fn weighted_sample_rows(sample: &WeightedSample) -> String {
    let mut out = String::new();
    for r in &sample.rows {
        let pid = r.person_id.map(|p| p.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{pid},{},{}",
            sample.scheme.as_str(),
            sample.module_name,
            r.psu_id,
            r.household_id,
            r.y,
            r.w
        );
    }
    out
}

// ---------------------------------------------------------------------------
// posterior draw dump (diagnostics)
// ---------------------------------------------------------------------------

/// MCMC draw dump: `chain,iter,param,value`, covering the location and
/// scale parameters and the per-household intercepts.
pub fn draw_dump_csv(posterior: &crate::model_est::PosteriorDraws) -> String {
    let mut out = String::from("chain,iter,param,value\n");
    let sigma_name = match posterior.spec.response_level {
        crate::model_est::ResponseLevel::Person => "sigma_y",
        crate::model_est::ResponseLevel::Household => "sigma_t",
    };
    for (ci, chain) in posterior.chains.iter().enumerate() {
        let c = ci + 1;
        for (i, v) in chain.mu.iter().enumerate() {
            let _ = writeln!(out, "{c},{},mu,{v}", i + 1);
        }
        for (j, name) in posterior.coef_names.iter().enumerate() {
            for (i, v) in chain.beta[j].iter().enumerate() {
                let _ = writeln!(out, "{c},{},{name},{v}", i + 1);
            }
        }
        for (i, v) in chain.sigma_alpha.iter().enumerate() {
            let _ = writeln!(out, "{c},{},sigma_alpha,{v}", i + 1);
        }
        for (i, v) in chain.sigma_y.iter().enumerate() {
            let _ = writeln!(out, "{c},{},{sigma_name},{v}", i + 1);
        }
        for (h, column) in chain.alpha.iter().enumerate() {
            let hid = posterior.observed_households[h];
            for (i, v) in column.iter().enumerate() {
                let _ = writeln!(out, "{c},{},alpha_{hid},{v}", i + 1);
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// results
// ---------------------------------------------------------------------------

pub fn results_header() -> &'static str {
    "rep,scheme,module,inference,n,estimate,variance,deff,n_eff,flags\n"
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn results_to_csv(records: &[EstimateRecord]) -> String {
    let mut out = String::from(results_header());
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.replication_id,
            r.scheme.as_str(),
            r.module_name,
            r.inference.as_str(),
            r.n,
            r.estimate,
            r.variance,
            opt_f64(r.deff),
            opt_f64(r.n_eff),
            r.flags.join(";")
        );
    }
    out
}

pub fn read_results(path: &Path) -> Result<Vec<EstimateRecord>, IoError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| IoError::Csv { path: path.display().to_string(), source: e })?;
    let mut out = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2;
        let record =
            record.map_err(|e| IoError::Csv { path: path.display().to_string(), source: e })?;
        let get = |i: usize| record.get(i).unwrap_or("");
        let parse_f = |i: usize, what: &str| -> Result<f64, IoError> {
            get(i).parse().map_err(|_| parse_err(path, line, format!("bad {what}")))
        };
        let parse_opt = |i: usize, what: &str| -> Result<Option<f64>, IoError> {
            let cell = get(i);
            if cell.is_empty() {
                Ok(None)
            } else {
                cell.parse()
                    .map(Some)
                    .map_err(|_| parse_err(path, line, format!("bad {what}")))
            }
        };
        out.push(EstimateRecord {
            replication_id: get(0)
                .parse()
                .map_err(|_| parse_err(path, line, "bad rep"))?,
            scheme: SchemeId::from_name(get(1))
                .ok_or_else(|| parse_err(path, line, format!("unknown scheme {}", get(1))))?,
            module_name: get(2).to_string(),
            inference: InferenceKind::from_name(get(3))
                .ok_or_else(|| parse_err(path, line, format!("unknown inference {}", get(3))))?,
            n: get(4).parse().map_err(|_| parse_err(path, line, "bad n"))?,
            estimate: parse_f(5, "estimate")?,
            variance: parse_f(6, "variance")?,
            deff: parse_opt(7, "deff")?,
            n_eff: parse_opt(8, "n_eff")?,
            flags: if get(9).is_empty() {
                Vec::new()
            } else {
                get(9).split(';').map(|s| s.to_string()).collect()
            },
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// true means
// ---------------------------------------------------------------------------

pub fn true_means_to_csv(truth: &BTreeMap<(u32, String), f64>) -> String {
    let mut out = String::from("rep,module,true_mean\n");
    for ((rep, module), value) in truth {
        let _ = writeln!(out, "{rep},{module},{value}");
    }
    out
}

pub fn read_true_means(path: &Path) -> Result<BTreeMap<(u32, String), f64>, IoError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| IoError::Csv { path: path.display().to_string(), source: e })?;
    let mut out = BTreeMap::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2;
        let record =
            record.map_err(|e| IoError::Csv { path: path.display().to_string(), source: e })?;
        let rep: u32 = record
            .get(0)
            .unwrap_or("")
            .parse()
            .map_err(|_| parse_err(path, line, "bad rep"))?;
        let module = record.get(1).unwrap_or("").to_string();
        let value: f64 = record
            .get(2)
            .unwrap_or("")
            .parse()
            .map_err(|_| parse_err(path, line, "bad true_mean"))?;
        out.insert((rep, module), value);
    }
    Ok(out)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| file_err(parent, e))?;
    }
    fs::write(path, text).map_err(|e| file_err(path, e))
}
