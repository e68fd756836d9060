//! Stage-I household sampling and stage-II person sampling.
//!
//! Stage I is either simple random sampling of households without
//! replacement or probability-proportional-to-size sampling with
//! replacement. Stage II depends on the survey module: proportional
//! stratified counts per household, a fractional-interval systematic sample
//! over a random ordering, or one person per retained PPS draw. The
//! household survey takes the head of every sampled household, and a
//! direct SRS-of-persons scheme is available as the self-weighted baseline.
//!
//! All samplers are pure functions of `(frame, parameters, rng)`: the same
//! seed always reproduces the same sample.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::frame::{
    Household, HouseholdId, ModuleLevel, PersonId, PopulationFrame, SurveyModuleSpec,
};
use crate::seed;

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("cannot sample from an empty frame")]
    EmptyFrame,
    #[error("stage-I draw count must be >= 1")]
    ZeroDraws,
    #[error("all household size measures are zero")]
    ZeroSizeMeasure,
    #[error("size measure for household {0} is negative or not finite")]
    BadSizeMeasure(HouseholdId),
    #[error("scheme/stage mismatch: {0}")]
    SchemeMismatch(String),
    #[error("household-level modules cannot run under scheme {0}")]
    InvalidPlan(String),
}

/// The sampling schemes compared by the simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SchemeId {
    /// SRS of households, proportional stratified sampling within.
    SrsStratified,
    /// SRS of households, fractional-interval systematic sampling within.
    SrsSystematic,
    /// PPS-with-replacement of households, one person per retained draw.
    PpsOnePerDraw,
    /// Direct SRS of persons; the self-weighted reference design.
    SrsPersons,
}

impl SchemeId {
    pub const ALL: [SchemeId; 4] = [
        SchemeId::SrsStratified,
        SchemeId::SrsSystematic,
        SchemeId::PpsOnePerDraw,
        SchemeId::SrsPersons,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SchemeId::SrsStratified => "srs_stratified",
            SchemeId::SrsSystematic => "srs_systematic",
            SchemeId::PpsOnePerDraw => "pps_one_per_draw",
            SchemeId::SrsPersons => "srs_persons",
        }
    }

    pub fn from_name(s: &str) -> Option<SchemeId> {
        SchemeId::ALL.iter().copied().find(|x| x.as_str() == s)
    }

    pub fn uses_pps_stage1(self) -> bool {
        self == SchemeId::PpsOnePerDraw
    }
}

/// A scheme applied to one module with its stage-I draw count.
#[derive(Debug, Clone)]
pub struct SamplingPlan {
    pub scheme: SchemeId,
    pub module: SurveyModuleSpec,
    /// n_I for the SRS schemes, m_I for PPS; ignored for SRS-of-persons.
    pub stage1_draws: u32,
}

impl SamplingPlan {
    pub fn validate(&self) -> Result<(), SampleError> {
        if self.module.level == ModuleLevel::Household && self.scheme == SchemeId::SrsPersons {
            return Err(SampleError::InvalidPlan(self.scheme.as_str().into()));
        }
        Ok(())
    }
}

/// A realized stage-I household sample.
#[derive(Debug, Clone)]
pub enum StageISample {
    /// SRS without replacement: the set s_I.
    SrsWor {
        /// Sorted sampled household ids.
        households: Vec<HouseholdId>,
        requested_n: u32,
        /// True when the request covered the whole frame.
        whole_frame: bool,
    },
    /// PPS with replacement: the multiset r_I as draw counts.
    PpsWr {
        /// Household id -> number of times drawn (k_h >= 1).
        draw_counts: BTreeMap<HouseholdId, u32>,
        /// Total draws m_I (= sum of draw counts).
        m_draws: u32,
        size_measure_name: String,
        /// Sum of the size measure over the whole frame.
        size_total: f64,
        /// Size measure of each drawn household.
        sizes: BTreeMap<HouseholdId, f64>,
    },
}

impl StageISample {
    pub fn unique_households(&self) -> Vec<HouseholdId> {
        match self {
            StageISample::SrsWor { households, .. } => households.clone(),
            StageISample::PpsWr { draw_counts, .. } => draw_counts.keys().copied().collect(),
        }
    }

    pub fn n_unique(&self) -> usize {
        match self {
            StageISample::SrsWor { households, .. } => households.len(),
            StageISample::PpsWr { draw_counts, .. } => draw_counts.len(),
        }
    }

    pub fn is_srs(&self) -> bool {
        matches!(self, StageISample::SrsWor { .. })
    }
}

/// Details recorded by the systematic sampler.
#[derive(Debug, Clone, Copy)]
pub struct SystematicInfo {
    /// Sampling interval a = N*/n_target.
    pub interval: f64,
    /// Offset xi drawn uniformly on (0, a).
    pub offset: f64,
    /// Seed of the stream that randomized household and person order.
    pub ordering_seed: u64,
}

/// A realized stage-II person sample.
#[derive(Debug, Clone)]
pub struct StageIISample {
    pub selected: BTreeSet<PersonId>,
    /// Persons selected per stage-I household (0 entries are kept so the
    /// sampled-household set remains visible downstream).
    pub allocation: BTreeMap<HouseholdId, u32>,
    /// True when every eligible person was taken.
    pub census: bool,
    pub systematic: Option<SystematicInfo>,
    /// PPS only: draw instances retained per household after thinning.
    pub retained_draws: Option<BTreeMap<HouseholdId, u32>>,
}

impl StageIISample {
    pub fn n_selected(&self) -> usize {
        self.selected.len()
    }
}

/// The under-50 household size measure x_h used by the PPS design.
pub fn under50_size(h: &Household) -> f64 {
    h.n_total_under50 as f64
}

/// SRS without replacement of `n_i` households. Requests at or above the
/// frame size take the whole frame.
pub fn srs_households(
    frame: &PopulationFrame,
    n_i: u32,
    rng: &mut ChaCha8Rng,
) -> Result<StageISample, SampleError> {
    if frame.n_households() == 0 {
        return Err(SampleError::EmptyFrame);
    }
    if n_i == 0 {
        return Err(SampleError::ZeroDraws);
    }
    let n_frame = frame.n_households();
    let take = (n_i as usize).min(n_frame);
    let mut ids: Vec<HouseholdId> =
        frame.households().iter().map(|h| h.household_id).collect();
    let mut households = if take == n_frame {
        ids
    } else {
        let (chosen, _) = ids.partial_shuffle(rng, take);
        chosen.to_vec()
    };
    households.sort_unstable();
    Ok(StageISample::SrsWor { households, requested_n: n_i, whole_frame: take == n_frame })
}

/// PPS with replacement: `m_i` i.i.d. draws with probability proportional
/// to `size_measure`.
pub fn ppswr_households(
    frame: &PopulationFrame,
    m_i: u32,
    size_measure: impl Fn(&Household) -> f64,
    size_measure_name: &str,
    rng: &mut ChaCha8Rng,
) -> Result<StageISample, SampleError> {
    if frame.n_households() == 0 {
        return Err(SampleError::EmptyFrame);
    }
    if m_i == 0 {
        return Err(SampleError::ZeroDraws);
    }
    let mut sizes = Vec::with_capacity(frame.n_households());
    for h in frame.households() {
        let x = size_measure(h);
        if !x.is_finite() || x < 0.0 {
            return Err(SampleError::BadSizeMeasure(h.household_id));
        }
        sizes.push(x);
    }
    let size_total: f64 = sizes.iter().sum();
    if size_total <= 0.0 {
        return Err(SampleError::ZeroSizeMeasure);
    }

    let dist = rand::distr::weighted::WeightedIndex::new(&sizes)
        .map_err(|_| SampleError::ZeroSizeMeasure)?;
    let mut draw_counts: BTreeMap<HouseholdId, u32> = BTreeMap::new();
    for _ in 0..m_i {
        let idx = rng.sample(&dist);
        *draw_counts.entry(frame.households()[idx].household_id).or_insert(0) += 1;
    }
    let size_map = draw_counts
        .keys()
        .map(|&hid| {
            let idx = frame
                .households()
                .iter()
                .position(|h| h.household_id == hid)
                .expect("drawn household exists");
            (hid, sizes[idx])
        })
        .collect();

    Ok(StageISample::PpsWr {
        draw_counts,
        m_draws: m_i,
        size_measure_name: size_measure_name.to_string(),
        size_total,
        sizes: size_map,
    })
}

fn srs_stage1_households<'a>(
    stage1: &'a StageISample,
    op: &str,
) -> Result<&'a [HouseholdId], SampleError> {
    match stage1 {
        StageISample::SrsWor { households, .. } => Ok(households),
        StageISample::PpsWr { .. } => {
            Err(SampleError::SchemeMismatch(format!("{op} requires an SRS stage-I sample")))
        }
    }
}

/// Round half away from zero, the convention for the stratified shares.
fn round_half_away(x: f64) -> f64 {
    x.round()
}

/// Proportional stratified stage II: `n_h = round(N_h * n_target / N_sI)`
/// persons per sampled household, or everyone when the sampled households
/// hold at most `n_target` eligible people.
pub fn stratified_within(
    frame: &PopulationFrame,
    stage1: &StageISample,
    module: &SurveyModuleSpec,
    rng: &mut ChaCha8Rng,
) -> Result<StageIISample, SampleError> {
    let households = srs_stage1_households(stage1, "stratified_within")?;
    let index = frame.group_index(module.target_group);

    let n_si: u32 = households.iter().map(|&h| index.count_in(h)).sum();
    let mut selected = BTreeSet::new();
    let mut allocation = BTreeMap::new();

    if n_si <= module.n_target {
        for &hid in households {
            let eligible = index.eligible_in(hid);
            allocation.insert(hid, eligible.len() as u32);
            selected.extend(eligible.iter().copied());
        }
        return Ok(StageIISample {
            selected,
            allocation,
            census: true,
            systematic: None,
            retained_draws: None,
        });
    }

    for &hid in households {
        let eligible = index.eligible_in(hid);
        let n_h_pop = eligible.len() as u32;
        let share = n_h_pop as f64 * module.n_target as f64 / n_si as f64;
        let n_h = (round_half_away(share) as u32).min(n_h_pop);
        allocation.insert(hid, n_h);
        if n_h == 0 {
            continue;
        }
        if n_h == n_h_pop {
            selected.extend(eligible.iter().copied());
        } else {
            let mut pool = eligible.to_vec();
            let (chosen, _) = pool.partial_shuffle(rng, n_h as usize);
            selected.extend(chosen.iter().copied());
        }
    }

    Ok(StageIISample { selected, allocation, census: false, systematic: None, retained_draws: None })
}

/// Number of fixed bits in the dyadic offset used by the systematic
/// sampler: xi = t/2^53 * a with integer t in (0, 2^53).
pub const XI_FRACTION_BITS: u32 = 53;

/// Fractional-interval selection over `1..=n_star`.
///
/// Selects the indices `ceil(xi + j*a)` for `j = 0..n_target`, with
/// `a = n_star/n_target` and `xi = t/2^53 * a`. Arithmetic is exact
/// (u128), so the selected set is precisely the mathematical one: exactly
/// `n_target` distinct indices whenever `n_star > n_target`.
pub fn fractional_interval_select(n_star: u64, n_target: u64, t: u64) -> Vec<u64> {
    assert!(n_target > 0 && n_star > n_target, "requires n_star > n_target >= 1");
    assert!(t > 0 && t < (1u64 << XI_FRACTION_BITS), "offset numerator out of (0, 2^53)");
    let den = (n_target as u128) << XI_FRACTION_BITS;
    let mut out = Vec::with_capacity(n_target as usize);
    for j in 0..n_target {
        // xi + j*a = n_star * (t + j*2^53) / (n_target * 2^53)
        let num = (n_star as u128) * (t as u128 + ((j as u128) << XI_FRACTION_BITS));
        let k = num.div_ceil(den) as u64;
        out.push(k);
    }
    out
}

/// Convert a real offset xi in (0, a) to the dyadic numerator used by
/// [`fractional_interval_select`]. Exact for dyadic xi/a (e.g. hand-worked
/// examples); nearest representable otherwise.
pub fn offset_numerator(xi: f64, a: f64) -> u64 {
    let u = xi / a;
    assert!(u > 0.0 && u < 1.0, "xi must lie strictly inside (0, a)");
    ((u * (1u64 << XI_FRACTION_BITS) as f64).round() as u64)
        .clamp(1, (1u64 << XI_FRACTION_BITS) - 1)
}

/// Systematic stage II: households and eligible persons within household
/// are ordered uniformly at random, then a fractional-interval sample of
/// exactly `n_target` persons is taken. Falls back to a census when the
/// sampled households hold at most `n_target` eligible people.
pub fn systematic_within(
    frame: &PopulationFrame,
    stage1: &StageISample,
    module: &SurveyModuleSpec,
    rng: &mut ChaCha8Rng,
) -> Result<StageIISample, SampleError> {
    let households = srs_stage1_households(stage1, "systematic_within")?;
    let index = frame.group_index(module.target_group);

    let n_star: u64 = households.iter().map(|&h| index.count_in(h) as u64).sum();
    let mut allocation: BTreeMap<HouseholdId, u32> = BTreeMap::new();
    let mut selected = BTreeSet::new();

    if n_star == 0 {
        for &hid in households {
            allocation.insert(hid, 0);
        }
        return Ok(StageIISample {
            selected,
            allocation,
            census: true,
            systematic: None,
            retained_draws: None,
        });
    }

    if n_star <= module.n_target as u64 {
        for &hid in households {
            let eligible = index.eligible_in(hid);
            allocation.insert(hid, eligible.len() as u32);
            selected.extend(eligible.iter().copied());
        }
        return Ok(StageIISample {
            selected,
            allocation,
            census: true,
            systematic: None,
            retained_draws: None,
        });
    }

    // Random ordering of households, then of eligible persons within each.
    let ordering_seed = rng.next_u64();
    let mut order_rng = seed::rng_from(ordering_seed);
    let mut order: Vec<HouseholdId> = households.to_vec();
    order.shuffle(&mut order_rng);
    let mut listing: Vec<(PersonId, HouseholdId)> = Vec::with_capacity(n_star as usize);
    for &hid in &order {
        let mut people = index.eligible_in(hid).to_vec();
        people.shuffle(&mut order_rng);
        for pid in people {
            listing.push((pid, hid));
        }
        allocation.insert(hid, 0);
    }

    let n_target = module.n_target as u64;
    let a = n_star as f64 / n_target as f64;
    let t = rng.random_range(1..(1u64 << XI_FRACTION_BITS));
    let xi = (t as f64 / (1u64 << XI_FRACTION_BITS) as f64) * a;

    for k in fractional_interval_select(n_star, n_target, t) {
        let (pid, hid) = listing[(k - 1) as usize];
        selected.insert(pid);
        *allocation.get_mut(&hid).expect("stage-I household") += 1;
    }

    Ok(StageIISample {
        selected,
        allocation,
        census: false,
        systematic: Some(SystematicInfo { interval: a, offset: xi, ordering_seed }),
        retained_draws: None,
    })
}

/// PPS stage II: thin the draw multiset to `n_target` instances when it is
/// larger, then select one eligible person uniformly per retained instance,
/// independently across instances. Repeat selections collapse.
pub fn pps_within(
    frame: &PopulationFrame,
    stage1: &StageISample,
    module: &SurveyModuleSpec,
    rng: &mut ChaCha8Rng,
) -> Result<StageIISample, SampleError> {
    let draw_counts = match stage1 {
        StageISample::PpsWr { draw_counts, .. } => draw_counts,
        StageISample::SrsWor { .. } => {
            return Err(SampleError::SchemeMismatch(
                "pps_within requires a PPS stage-I sample".into(),
            ))
        }
    };
    let index = frame.group_index(module.target_group);

    let mut instances: Vec<HouseholdId> = Vec::new();
    for (&hid, &k) in draw_counts {
        for _ in 0..k {
            instances.push(hid);
        }
    }

    let m = instances.len();
    let retained: Vec<HouseholdId> = if (module.n_target as usize) < m {
        let (chosen, _) = instances.partial_shuffle(rng, module.n_target as usize);
        chosen.to_vec()
    } else {
        instances
    };

    let mut retained_counts: BTreeMap<HouseholdId, u32> = BTreeMap::new();
    for &hid in &retained {
        *retained_counts.entry(hid).or_insert(0) += 1;
    }

    let mut selected = BTreeSet::new();
    let mut allocation: BTreeMap<HouseholdId, u32> = BTreeMap::new();
    for &hid in draw_counts.keys() {
        allocation.insert(hid, 0);
    }
    for &hid in &retained {
        let eligible = index.eligible_in(hid);
        if eligible.is_empty() {
            continue;
        }
        let pick = eligible[rng.random_range(0..eligible.len())];
        selected.insert(pick);
    }
    for (&hid, count) in allocation.iter_mut() {
        *count = selected
            .iter()
            .filter(|pid| index.eligible_in(hid).contains(pid))
            .count() as u32;
    }

    Ok(StageIISample {
        selected,
        allocation,
        census: false,
        systematic: None,
        retained_draws: Some(retained_counts),
    })
}

/// The household survey's stage II: the head of each unique stage-I
/// household, once, regardless of draw multiplicity.
pub fn select_household_heads(frame: &PopulationFrame, stage1: &StageISample) -> StageIISample {
    let mut selected = BTreeSet::new();
    let mut allocation = BTreeMap::new();
    for hid in stage1.unique_households() {
        let head = frame
            .household(hid)
            .and_then(|h| frame.members(h).find(|p| p.is_head))
            .map(|p| p.person_id);
        match head {
            Some(pid) => {
                selected.insert(pid);
                allocation.insert(hid, 1);
            }
            None => {
                allocation.insert(hid, 0);
            }
        }
    }
    StageIISample { selected, allocation, census: false, systematic: None, retained_draws: None }
}

/// Paired stage-I draws for the household survey comparison: PPS first,
/// then an SRS sample sized by the number of unique PPS households.
pub fn pair_household_designs(
    frame: &PopulationFrame,
    m_i: u32,
    size_measure: impl Fn(&Household) -> f64,
    size_measure_name: &str,
    rng: &mut ChaCha8Rng,
) -> Result<(StageISample, StageISample), SampleError> {
    let pps = ppswr_households(frame, m_i, size_measure, size_measure_name, rng)?;
    let unique = pps.n_unique() as u32;
    let srs = srs_households(frame, unique, rng)?;
    Ok((pps, srs))
}

/// Direct SRS of `n` persons from the module's eligible population.
pub fn srs_persons(
    frame: &PopulationFrame,
    module: &SurveyModuleSpec,
    n: u32,
    rng: &mut ChaCha8Rng,
) -> Result<StageIISample, SampleError> {
    if n == 0 {
        return Err(SampleError::ZeroDraws);
    }
    let index = frame.group_index(module.target_group);
    let mut pool: Vec<(PersonId, HouseholdId)> = Vec::with_capacity(index.total as usize);
    for (i, hid) in index.households.iter().enumerate() {
        for &pid in &index.eligible[i] {
            pool.push((pid, *hid));
        }
    }
    if pool.is_empty() {
        return Err(SampleError::EmptyFrame);
    }
    let take = (n as usize).min(pool.len());
    let census = take == pool.len();
    let chosen: Vec<(PersonId, HouseholdId)> = if census {
        pool
    } else {
        let (c, _) = pool.partial_shuffle(rng, take);
        c.to_vec()
    };
    let mut selected = BTreeSet::new();
    let mut allocation: BTreeMap<HouseholdId, u32> = BTreeMap::new();
    for (pid, hid) in chosen {
        selected.insert(pid);
        *allocation.entry(hid).or_insert(0) += 1;
    }
    Ok(StageIISample { selected, allocation, census, systematic: None, retained_draws: None })
}
