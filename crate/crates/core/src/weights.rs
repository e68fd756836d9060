//! Inclusion probabilities and design weights for every scheme.
//!
//! The PPS person-level probability has a closed form: a person in
//! household h with draw probability p_h and within-household rate n_h/N_h
//! is included with probability `1 - (1 - p_h*n_h/N_h)^m`, approximated by
//! `m*p_h*n_h/N_h` when the per-draw rate is small. The weights adopt the
//! approximate form, `w = (sum_x / (m*x_h)) * N_h/n_h`; both probabilities
//! are exposed for diagnostics.
//!
//! The SRS schemes have no closed form because the stage-II rate depends on
//! which other households were drawn. Their probabilities are estimated by
//! conditional Monte Carlo over stage-I sets containing the household, or
//! computed exactly by enumeration when there are at most
//! [`EXHAUSTIVE_SUBSET_LIMIT`] such sets. Households with the same
//! eligible-member count have identical probabilities (the rest of the
//! frame is the same multiset), so the table builder solves one problem per
//! distinct count.

use std::collections::BTreeMap;

use itertools::Itertools;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::frame::{HouseholdId, ModuleLevel, PersonId, PopulationFrame, SurveyModuleSpec};
use crate::sampler::{SchemeId, StageIISample, StageISample};
use crate::stats;

/// Largest number of stage-I subsets enumerated exactly before falling back
/// to Monte Carlo.
pub const EXHAUSTIVE_SUBSET_LIMIT: f64 = 1e5;

#[derive(Debug, Error)]
pub enum WeightError {
    #[error("household {0} not in frame")]
    UnknownHousehold(HouseholdId),
    #[error("selected person {0} has zero estimated inclusion probability")]
    ZeroInclusion(PersonId),
    #[error("outcome {outcome} missing for {unit}")]
    MissingOutcome { outcome: String, unit: String },
    #[error("inclusion Monte Carlo needs at least one replicate")]
    ZeroReplicates,
    #[error("no inclusion entry for household {0}")]
    MissingInclusion(HouseholdId),
    #[error("scheme mismatch: {0}")]
    SchemeMismatch(String),
    #[error("weighted sample is empty")]
    EmptySample,
}

/// How a probability was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InclusionMethod {
    ClosedFormExact,
    ClosedFormApprox,
    MonteCarlo,
}

/// A per-person inclusion probability for one household's members.
#[derive(Debug, Clone, Copy)]
pub struct InclusionResult {
    pub pi: f64,
    pub method: InclusionMethod,
    /// 0 for closed forms.
    pub mc_replicates: u32,
    /// 0 for closed forms.
    pub mc_standard_error: f64,
}

/// PPS inclusion probability of a person: `(exact, approximate)`.
///
/// Exact: `1 - (1 - p_h*n_h/N_h)^m`; approximate: `m*p_h*n_h/N_h`. The
/// exact value never exceeds the approximation. A household without
/// eligible members gets probability zero by convention.
pub fn pps_inclusion(p_h: f64, n_h: u32, cap_n_h: u32, m_i: u32) -> (f64, f64) {
    if cap_n_h == 0 {
        return (0.0, 0.0);
    }
    let rate = p_h * n_h as f64 / cap_n_h as f64;
    let exact = 1.0 - (1.0 - rate).powi(m_i as i32);
    let approx = m_i as f64 * rate;
    (exact, approx)
}

/// Which SRS second stage a probability refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SrsSchemeKind {
    Systematic,
    Stratified,
}

impl SrsSchemeKind {
    /// The conditional stage-II rate for a member of a household with
    /// `n_h_group` eligible members given a stage-I total of `n_si`.
    fn stage2_rate(self, n_h_group: u32, n_si: u32, n_target: u32) -> f64 {
        if n_si == 0 {
            return 1.0;
        }
        match self {
            SrsSchemeKind::Systematic => (n_target as f64 / n_si as f64).min(1.0),
            SrsSchemeKind::Stratified => {
                if n_h_group == 0 {
                    return 0.0;
                }
                let share = n_h_group as f64 * n_target as f64 / n_si as f64;
                (share.round() / n_h_group as f64).min(1.0)
            }
        }
    }
}

/// Estimate a person-level inclusion probability under an SRS scheme for
/// one household, by exhaustive enumeration when feasible and otherwise by
/// Monte Carlo over stage-I sets containing the household.
pub fn srs_scheme_inclusion_mc(
    frame: &PopulationFrame,
    household: HouseholdId,
    module: &SurveyModuleSpec,
    n_i: u32,
    scheme: SrsSchemeKind,
    replicates: u32,
    rng: &mut ChaCha8Rng,
) -> Result<InclusionResult, WeightError> {
    if replicates == 0 {
        return Err(WeightError::ZeroReplicates);
    }
    let index = frame.group_index(module.target_group);
    let counts = index.counts();
    let pos = index
        .households
        .iter()
        .position(|&h| h == household)
        .ok_or(WeightError::UnknownHousehold(household))?;
    let own = counts[pos];
    let others: Vec<u32> =
        counts.iter().enumerate().filter(|&(i, _)| i != pos).map(|(_, &c)| c).collect();
    Ok(inclusion_for_count(own, &others, n_i, module.n_target, scheme, replicates, rng))
}

fn inclusion_for_count(
    own: u32,
    others: &[u32],
    n_i: u32,
    n_target: u32,
    scheme: SrsSchemeKind,
    replicates: u32,
    rng: &mut ChaCha8Rng,
) -> InclusionResult {
    let n_frame = others.len() + 1;
    let eff_n = (n_i as usize).min(n_frame);
    let factor = eff_n as f64 / n_frame as f64;
    let k = eff_n - 1; // companions drawn alongside the fixed household

    let exhaustive = stats::binomial_at_most(others.len() as u64, k as u64, EXHAUSTIVE_SUBSET_LIMIT)
        .is_some();

    if exhaustive {
        let mut sum = 0.0;
        let mut count = 0u64;
        if k == 0 {
            sum = scheme.stage2_rate(own, own, n_target);
            count = 1;
        } else {
            for combo in (0..others.len()).combinations(k) {
                let n_si = own + combo.iter().map(|&i| others[i]).sum::<u32>();
                sum += scheme.stage2_rate(own, n_si, n_target);
                count += 1;
            }
        }
        InclusionResult {
            pi: factor * sum / count as f64,
            method: InclusionMethod::ClosedFormExact,
            mc_replicates: 0,
            mc_standard_error: 0.0,
        }
    } else {
        let mut pool = others.to_vec();
        let mut terms = Vec::with_capacity(replicates as usize);
        for _ in 0..replicates {
            let (chosen, _) = pool.partial_shuffle(rng, k);
            let n_si = own + chosen.iter().sum::<u32>();
            terms.push(scheme.stage2_rate(own, n_si, n_target));
        }
        let mean = stats::mean(&terms);
        let sd = stats::sample_variance(&terms).sqrt();
        let se = if terms.len() > 1 { sd / (terms.len() as f64).sqrt() } else { 0.0 };
        InclusionResult {
            pi: factor * mean,
            method: InclusionMethod::MonteCarlo,
            mc_replicates: replicates,
            mc_standard_error: factor * se,
        }
    }
}

/// Person-level inclusion probabilities for every household in the frame
/// under one SRS scheme and module.
#[derive(Debug, Clone)]
pub struct SchemeInclusionTable {
    pub scheme: SrsSchemeKind,
    pub module_name: String,
    pub per_household: BTreeMap<HouseholdId, InclusionResult>,
}

impl SchemeInclusionTable {
    pub fn get(&self, household: HouseholdId) -> Option<&InclusionResult> {
        self.per_household.get(&household)
    }
}

/// Build the full inclusion table for a module. Households sharing an
/// eligible-member count share one estimation problem, so cost scales with
/// the number of distinct counts rather than the number of households.
pub fn srs_scheme_inclusion_table(
    frame: &PopulationFrame,
    module: &SurveyModuleSpec,
    n_i: u32,
    scheme: SrsSchemeKind,
    replicates: u32,
    rng: &mut ChaCha8Rng,
) -> Result<SchemeInclusionTable, WeightError> {
    if replicates == 0 {
        return Err(WeightError::ZeroReplicates);
    }
    let index = frame.group_index(module.target_group);
    let counts = index.counts();

    let mut by_count: BTreeMap<u32, InclusionResult> = BTreeMap::new();
    let mut distinct: Vec<u32> = counts.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    for &own in &distinct {
        // the companion multiset is all counts minus one instance of `own`
        let mut removed = false;
        let others: Vec<u32> = counts
            .iter()
            .filter(|&&c| {
                if !removed && c == own {
                    removed = true;
                    false
                } else {
                    true
                }
            })
            .copied()
            .collect();
        let result =
            inclusion_for_count(own, &others, n_i, module.n_target, scheme, replicates, rng);
        by_count.insert(own, result);
    }

    let per_household = index
        .households
        .iter()
        .zip(&counts)
        .map(|(&hid, &c)| (hid, by_count[&c]))
        .collect();

    Ok(SchemeInclusionTable { scheme, module_name: module.module_name.clone(), per_household })
}

/// One weighted observation.
#[derive(Debug, Clone)]
pub struct WeightedRow {
    /// Blank for household-level rows.
    pub person_id: Option<PersonId>,
    pub household_id: HouseholdId,
    /// First-stage unit for variance estimation: the household for the
    /// two-stage schemes (PPS draws collapsed), the person for direct SRS
    /// of persons.
    pub psu_id: u64,
    pub y: f64,
    pub w: f64,
}

/// A sample with outcome values and design weights attached.
#[derive(Debug, Clone)]
pub struct WeightedSample {
    pub scheme: SchemeId,
    pub module_name: String,
    pub rows: Vec<WeightedRow>,
}

impl WeightedSample {
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn n_psus(&self) -> usize {
        let mut psus: Vec<u64> = self.rows.iter().map(|r| r.psu_id).collect();
        psus.sort_unstable();
        psus.dedup();
        psus.len()
    }
}

/// Attach outcomes and design weights to a realized sample.
///
/// Dispatches on module level and scheme: household modules weight the
/// unique stage-I households, SRS schemes invert the inclusion table
/// entries, PPS uses the size-measure weight, and direct SRS of persons is
/// self-weighted.
pub fn design_weights(
    frame: &PopulationFrame,
    module: &SurveyModuleSpec,
    scheme: SchemeId,
    stage1: Option<&StageISample>,
    stage2: &StageIISample,
    inclusion: Option<&SchemeInclusionTable>,
) -> Result<WeightedSample, WeightError> {
    match (module.level, scheme) {
        (ModuleLevel::Household, _) => {
            let stage1 = stage1.ok_or_else(|| {
                WeightError::SchemeMismatch("household module requires a stage-I sample".into())
            })?;
            household_head_weights(frame, module, scheme, stage1, stage2)
        }
        (ModuleLevel::Person, SchemeId::SrsSystematic | SchemeId::SrsStratified) => {
            let table = inclusion.ok_or_else(|| {
                WeightError::SchemeMismatch("SRS schemes need an inclusion table".into())
            })?;
            srs_scheme_person_weights(frame, module, scheme, stage2, table)
        }
        (ModuleLevel::Person, SchemeId::PpsOnePerDraw) => {
            let stage1 = stage1.ok_or_else(|| {
                WeightError::SchemeMismatch("PPS weights require the stage-I sample".into())
            })?;
            pps_person_weights(frame, module, stage1, stage2)
        }
        (ModuleLevel::Person, SchemeId::SrsPersons) => srs_person_weights(frame, module, stage2),
    }
}

fn person_outcome(
    frame: &PopulationFrame,
    pid: PersonId,
    outcome: &str,
) -> Result<f64, WeightError> {
    frame
        .person(pid)
        .and_then(|p| p.outcome(outcome))
        .ok_or_else(|| WeightError::MissingOutcome {
            outcome: outcome.to_string(),
            unit: format!("person {pid}"),
        })
}

/// Weights for the SRS schemes: `w = 1/pi` from the inclusion table.
pub fn srs_scheme_person_weights(
    frame: &PopulationFrame,
    module: &SurveyModuleSpec,
    scheme: SchemeId,
    stage2: &StageIISample,
    table: &SchemeInclusionTable,
) -> Result<WeightedSample, WeightError> {
    let mut rows = Vec::with_capacity(stage2.selected.len());
    for &pid in &stage2.selected {
        let person = frame.person(pid).ok_or(WeightError::MissingOutcome {
            outcome: module.outcome_name.clone(),
            unit: format!("person {pid}"),
        })?;
        let hid = person.household_id;
        let inc = table.get(hid).ok_or(WeightError::MissingInclusion(hid))?;
        if inc.pi.is_nan() || inc.pi <= 0.0 {
            return Err(WeightError::ZeroInclusion(pid));
        }
        rows.push(WeightedRow {
            person_id: Some(pid),
            household_id: hid,
            psu_id: hid.0 as u64,
            y: person_outcome(frame, pid, &module.outcome_name)?,
            w: 1.0 / inc.pi,
        });
    }
    if rows.is_empty() {
        return Err(WeightError::EmptySample);
    }
    Ok(WeightedSample { scheme, module_name: module.module_name.clone(), rows })
}

/// PPS person weights `w = (sum_x / (m*x_h)) * N_h/n_h` with n_h = 1 per
/// retained draw; `m` is the retained draw count when thinning applied.
pub fn pps_person_weights(
    frame: &PopulationFrame,
    module: &SurveyModuleSpec,
    stage1: &StageISample,
    stage2: &StageIISample,
) -> Result<WeightedSample, WeightError> {
    let (size_total, sizes, m_total) = match stage1 {
        StageISample::PpsWr { size_total, sizes, m_draws, .. } => (*size_total, sizes, *m_draws),
        StageISample::SrsWor { .. } => {
            return Err(WeightError::SchemeMismatch(
                "PPS weights require a PPS stage-I sample".into(),
            ))
        }
    };
    let m_eff = stage2
        .retained_draws
        .as_ref()
        .map(|r| r.values().sum::<u32>())
        .unwrap_or(m_total);
    let index = frame.group_index(module.target_group);

    let mut rows = Vec::with_capacity(stage2.selected.len());
    for &pid in &stage2.selected {
        let person = frame.person(pid).ok_or(WeightError::MissingOutcome {
            outcome: module.outcome_name.clone(),
            unit: format!("person {pid}"),
        })?;
        let hid = person.household_id;
        let x_h = *sizes.get(&hid).ok_or(WeightError::MissingInclusion(hid))?;
        if x_h.is_nan() || x_h <= 0.0 {
            return Err(WeightError::ZeroInclusion(pid));
        }
        let n_h_group = index.count_in(hid);
        let w = (size_total / (m_eff as f64 * x_h)) * n_h_group as f64;
        rows.push(WeightedRow {
            person_id: Some(pid),
            household_id: hid,
            psu_id: hid.0 as u64,
            y: person_outcome(frame, pid, &module.outcome_name)?,
            w,
        });
    }
    if rows.is_empty() {
        return Err(WeightError::EmptySample);
    }
    Ok(WeightedSample { scheme: SchemeId::PpsOnePerDraw, module_name: module.module_name.clone(), rows })
}

/// Household-survey weights: one row per unique sampled household carrying
/// the household outcome, weighted by the inverse household inclusion
/// probability (`n_I/N_I` for SRS; `1-(1-p_h)^m` for PPS).
pub fn household_head_weights(
    frame: &PopulationFrame,
    module: &SurveyModuleSpec,
    scheme: SchemeId,
    stage1: &StageISample,
    stage2: &StageIISample,
) -> Result<WeightedSample, WeightError> {
    let mut rows = Vec::new();
    match stage1 {
        StageISample::SrsWor { households, .. } => {
            let n_frame = frame.n_households();
            let pi = (households.len() as f64 / n_frame as f64).min(1.0);
            for &hid in stage2.allocation.keys() {
                let h = frame.household(hid).ok_or(WeightError::UnknownHousehold(hid))?;
                let y = h.outcome(&module.outcome_name).ok_or(WeightError::MissingOutcome {
                    outcome: module.outcome_name.clone(),
                    unit: format!("household {hid}"),
                })?;
                rows.push(WeightedRow {
                    person_id: None,
                    household_id: hid,
                    psu_id: hid.0 as u64,
                    y,
                    w: 1.0 / pi,
                });
            }
        }
        StageISample::PpsWr { draw_counts, m_draws, size_total, sizes, .. } => {
            for &hid in draw_counts.keys() {
                let h = frame.household(hid).ok_or(WeightError::UnknownHousehold(hid))?;
                let y = h.outcome(&module.outcome_name).ok_or(WeightError::MissingOutcome {
                    outcome: module.outcome_name.clone(),
                    unit: format!("household {hid}"),
                })?;
                let p_h = sizes[&hid] / size_total;
                let pi = 1.0 - (1.0 - p_h).powi(*m_draws as i32);
                if pi.is_nan() || pi <= 0.0 {
                    return Err(WeightError::UnknownHousehold(hid));
                }
                rows.push(WeightedRow {
                    person_id: None,
                    household_id: hid,
                    psu_id: hid.0 as u64,
                    y,
                    w: 1.0 / pi,
                });
            }
        }
    }
    if rows.is_empty() {
        return Err(WeightError::EmptySample);
    }
    Ok(WeightedSample { scheme, module_name: module.module_name.clone(), rows })
}

/// Self-weighted direct SRS of persons: constant weight N/n, one PSU per
/// person.
pub fn srs_person_weights(
    frame: &PopulationFrame,
    module: &SurveyModuleSpec,
    stage2: &StageIISample,
) -> Result<WeightedSample, WeightError> {
    let index = frame.group_index(module.target_group);
    let n = stage2.selected.len();
    if n == 0 {
        return Err(WeightError::EmptySample);
    }
    let w = index.total as f64 / n as f64;
    let mut rows = Vec::with_capacity(n);
    for &pid in &stage2.selected {
        let person = frame.person(pid).ok_or(WeightError::MissingOutcome {
            outcome: module.outcome_name.clone(),
            unit: format!("person {pid}"),
        })?;
        rows.push(WeightedRow {
            person_id: Some(pid),
            household_id: person.household_id,
            psu_id: pid.0 as u64,
            y: person_outcome(frame, pid, &module.outcome_name)?,
            w,
        });
    }
    Ok(WeightedSample { scheme: SchemeId::SrsPersons, module_name: module.module_name.clone(), rows })
}
