//! Synthetic population generation.
//!
//! Demography (household sizes, ages, sexes) is drawn from configurable
//! distributions standing in for census data. Outcomes come from a
//! random-intercept Normal model: the household intercept mean is a
//! quadratic in the household's under-50 size, and person values scatter
//! around the intercept. Household consumption uses the analogous
//! household-level model, either on the raw scale (with standard deviation
//! proportional to the under-50 size) or on the log scale.
//!
//! Throughout the crate the second argument of a Normal is a standard
//! deviation, never a variance. A zero standard deviation yields the mean
//! exactly, so variance-free configurations are bitwise reproducible.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::frame::{Household, HouseholdId, Person, PersonId, PopulationFrame, Sex, TargetGroup};
use crate::seed::{self, tags};

/// Age bands used by the demography generator, inclusive month ranges:
/// 0-5 months, 6-59 months, 5-14 years, 15-49 years, 50+ years (capped at
/// 99 years).
pub const AGE_BANDS: [(u32, u32); 5] = [(0, 5), (6, 59), (60, 179), (180, 599), (600, 1199)];

#[derive(Debug, Error)]
pub enum PopgenError {
    #[error("invalid generator configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid input: {0}")]
    InputError(String),
}

/// Household size distribution.
#[derive(Debug, Clone, PartialEq)]
pub enum SizeDistribution {
    Fixed(u32),
    TruncatedPoisson { lambda: f64, min: u32, max: Option<u32> },
    /// Explicit histogram of (size, probability) pairs.
    Empirical(Vec<(u32, f64)>),
}

impl SizeDistribution {
    fn validate(&self) -> Result<(), PopgenError> {
        match self {
            SizeDistribution::Fixed(k) => {
                if *k == 0 {
                    return Err(PopgenError::InvalidConfig("fixed household size must be >= 1".into()));
                }
            }
            SizeDistribution::TruncatedPoisson { lambda, min, max } => {
                if !lambda.is_finite() || *lambda <= 0.0 {
                    return Err(PopgenError::InvalidConfig("size_lambda must be positive".into()));
                }
                if *min == 0 {
                    return Err(PopgenError::InvalidConfig("minimum household size must be >= 1".into()));
                }
                if let Some(max) = max {
                    if max < min {
                        return Err(PopgenError::InvalidConfig("size_max below size_min".into()));
                    }
                }
            }
            SizeDistribution::Empirical(hist) => {
                if hist.is_empty() {
                    return Err(PopgenError::InvalidConfig("empty size histogram".into()));
                }
                let total: f64 = hist.iter().map(|(_, p)| p).sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(PopgenError::InvalidConfig(format!(
                        "size histogram probabilities sum to {total}, expected 1"
                    )));
                }
                if hist.iter().any(|(k, p)| *k == 0 || *p < 0.0) {
                    return Err(PopgenError::InvalidConfig(
                        "size histogram needs sizes >= 1 and nonnegative probabilities".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Probability table of the distribution (normalized). The untruncated
    /// Poisson tail is carried out to where the remaining mass is below
    /// 1e-15.
    pub fn pmf(&self) -> Vec<(u32, f64)> {
        match self {
            SizeDistribution::Fixed(k) => vec![(*k, 1.0)],
            SizeDistribution::Empirical(hist) => hist.clone(),
            SizeDistribution::TruncatedPoisson { lambda, min, max } => {
                let hi = max.unwrap_or_else(|| {
                    (lambda + 12.0 * lambda.sqrt() + 30.0).ceil() as u32
                })
                .max(*min);
                let mut log_pmf = Vec::new();
                let mut log_fact = 0.0;
                for k in 0..=hi {
                    if k > 0 {
                        log_fact += (k as f64).ln();
                    }
                    if k >= *min {
                        log_pmf.push((k, k as f64 * lambda.ln() - lambda - log_fact));
                    }
                }
                let max_log = log_pmf.iter().map(|(_, l)| *l).fold(f64::NEG_INFINITY, f64::max);
                let unnorm: Vec<(u32, f64)> =
                    log_pmf.iter().map(|&(k, l)| (k, (l - max_log).exp())).collect();
                let total: f64 = unnorm.iter().map(|(_, p)| p).sum();
                unnorm.into_iter().map(|(k, p)| (k, p / total)).collect()
            }
        }
    }

    /// Mean household size implied by the pmf.
    pub fn mean(&self) -> f64 {
        self.pmf().iter().map(|&(k, p)| k as f64 * p).sum()
    }
}

/// Demography configuration: household count, size distribution, age band
/// probabilities (order matching [`AGE_BANDS`]), and the female fraction.
#[derive(Debug, Clone)]
pub struct DemographyParams {
    pub n_households: u32,
    pub size_distribution: SizeDistribution,
    pub age_band_probabilities: [f64; 5],
    pub p_female: f64,
}

impl DemographyParams {
    pub fn validate(&self) -> Result<(), PopgenError> {
        if self.n_households == 0 {
            return Err(PopgenError::InvalidConfig("n_households must be >= 1".into()));
        }
        self.size_distribution.validate()?;
        let total: f64 = self.age_band_probabilities.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(PopgenError::InvalidConfig(format!(
                "age_probs sum to {total}, expected 1"
            )));
        }
        if self.age_band_probabilities.iter().any(|p| *p < 0.0) {
            return Err(PopgenError::InvalidConfig("age_probs must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.p_female) {
            return Err(PopgenError::InvalidConfig("p_female must lie in [0,1]".into()));
        }
        Ok(())
    }
}

/// Person-level outcome model: household intercepts
/// `alpha_h ~ Normal(mu + beta1*S + beta2*S^2, sigma_alpha)` with S the
/// household's under-50 size, and values `y ~ Normal(alpha_h, sigma_y)`.
#[derive(Debug, Clone, Copy)]
pub struct PersonOutcomeParams {
    pub mu: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub sigma_alpha: f64,
    pub sigma_y: f64,
}

impl PersonOutcomeParams {
    fn validate(&self) -> Result<(), PopgenError> {
        for (name, v) in [
            ("mu", self.mu),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("sigma_alpha", self.sigma_alpha),
            ("sigma_y", self.sigma_y),
        ] {
            if !v.is_finite() {
                return Err(PopgenError::InvalidConfig(format!("{name} must be finite")));
            }
        }
        if self.sigma_alpha < 0.0 || self.sigma_y < 0.0 {
            return Err(PopgenError::InvalidConfig("sigma parameters must be >= 0".into()));
        }
        Ok(())
    }

    pub fn household_mean(&self, under50: u32) -> f64 {
        let s = under50 as f64;
        self.mu + self.beta1 * s + self.beta2 * s * s
    }
}

/// Household consumption model. On the raw scale the standard deviation is
/// `S * sigma_t` (S the under-50 size), so size-zero households draw their
/// mean deterministically; on the log scale the model is homoscedastic and
/// the stored value is the exponentiated draw.
#[derive(Debug, Clone, Copy)]
pub struct ConsumptionParams {
    pub mu: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub sigma_t: f64,
    pub log_scale: bool,
}

impl ConsumptionParams {
    fn validate(&self) -> Result<(), PopgenError> {
        for (name, v) in [
            ("mu", self.mu),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("sigma_t", self.sigma_t),
        ] {
            if !v.is_finite() {
                return Err(PopgenError::InvalidConfig(format!("{name} must be finite")));
            }
        }
        if self.sigma_t < 0.0 {
            return Err(PopgenError::InvalidConfig("sigma_t must be >= 0".into()));
        }
        Ok(())
    }

    pub fn household_mean(&self, under50: u32) -> f64 {
        let s = under50 as f64;
        self.mu + self.beta1 * s + self.beta2 * s * s
    }
}

/// Outcome block of a generator configuration.
#[derive(Debug, Clone)]
pub enum OutcomeConfig {
    /// Person-level outcome generated for every member of `group`.
    Person { group: TargetGroup, params: PersonOutcomeParams },
    /// Household-level total consumption.
    Household { params: ConsumptionParams },
}

/// Full generator configuration: demography plus named outcomes.
#[derive(Debug, Clone)]
pub struct GeneratorConfig {
    pub demography: DemographyParams,
    pub outcomes: BTreeMap<String, OutcomeConfig>,
}

/// Generate households and persons only; outcome maps are left empty.
///
/// Sizes are i.i.d. from the size distribution; each member draws an age
/// band and sex independently, with a uniform month-age inside the band.
/// The oldest member is flagged head (ties broken by lowest person id).
pub fn generate_demography(
    params: &DemographyParams,
    rng: &mut ChaCha8Rng,
) -> Result<PopulationFrame, PopgenError> {
    params.validate()?;
    let pmf = params.size_distribution.pmf();
    let mut cdf = Vec::with_capacity(pmf.len());
    let mut acc = 0.0;
    for &(k, p) in &pmf {
        acc += p;
        cdf.push((k, acc));
    }

    let mut households = Vec::with_capacity(params.n_households as usize);
    let mut persons = Vec::new();
    let mut next_pid = 1u32;

    for hid in 1..=params.n_households {
        let u: f64 = rng.random();
        let size = cdf
            .iter()
            .find(|&&(_, c)| u < c)
            .map(|&(k, _)| k)
            .unwrap_or(cdf.last().expect("nonempty pmf").0);

        let mut member_ids = Vec::with_capacity(size as usize);
        let mut under50 = 0u32;
        let mut oldest: Option<(u32, PersonId)> = None;
        let first_idx = persons.len();
        for _ in 0..size {
            let band_u: f64 = rng.random();
            let mut band = AGE_BANDS.len() - 1;
            let mut c = 0.0;
            for (i, p) in params.age_band_probabilities.iter().enumerate() {
                c += p;
                if band_u < c {
                    band = i;
                    break;
                }
            }
            let (lo, hi) = AGE_BANDS[band];
            let age_months = rng.random_range(lo..=hi);
            let sex = if rng.random::<f64>() < params.p_female { Sex::Female } else { Sex::Male };
            let pid = PersonId(next_pid);
            next_pid += 1;
            if age_months < crate::frame::UNDER_50_MONTHS {
                under50 += 1;
            }
            match oldest {
                Some((age, _)) if age >= age_months => {}
                _ => oldest = Some((age_months, pid)),
            }
            member_ids.push(pid);
            persons.push(Person {
                person_id: pid,
                household_id: HouseholdId(hid),
                age_months,
                sex,
                is_head: false,
                outcomes: BTreeMap::new(),
            });
        }
        let head = oldest.expect("household size >= 1").1;
        let first_pid = persons[first_idx].person_id.0;
        persons[first_idx + (head.0 - first_pid) as usize].is_head = true;

        households.push(Household {
            household_id: HouseholdId(hid),
            member_ids,
            n_total_under50: under50,
            household_outcomes: BTreeMap::new(),
        });
    }

    Ok(PopulationFrame::from_parts(households, persons))
}

/// Fill a person-level outcome for every member of `group`.
///
/// One intercept is drawn per household (whether or not it has eligible
/// members, keeping the stream aligned with the household count), then one
/// value per eligible person.
pub fn generate_person_outcomes(
    frame: PopulationFrame,
    outcome_name: &str,
    group: TargetGroup,
    params: &PersonOutcomeParams,
    rng: &mut ChaCha8Rng,
) -> Result<PopulationFrame, PopgenError> {
    params.validate()?;
    let (households, mut persons) = frame.into_parts();

    let mut alpha = std::collections::HashMap::with_capacity(households.len());
    for h in &households {
        let mean = params.household_mean(h.n_total_under50);
        let dist = Normal::new(mean, params.sigma_alpha)
            .map_err(|e| PopgenError::InvalidConfig(format!("alpha distribution: {e}")))?;
        alpha.insert(h.household_id, dist.sample(rng));
    }

    for p in persons.iter_mut() {
        if group.contains_person(p) {
            let a = *alpha
                .get(&p.household_id)
                .ok_or_else(|| PopgenError::InputError(format!(
                    "person {} references household {} absent from frame",
                    p.person_id, p.household_id
                )))?;
            let dist = Normal::new(a, params.sigma_y)
                .map_err(|e| PopgenError::InvalidConfig(format!("y distribution: {e}")))?;
            p.outcomes.insert(outcome_name.to_string(), dist.sample(rng));
        }
    }

    Ok(PopulationFrame::from_parts(households, persons))
}

/// Fill household total consumption for every household.
pub fn generate_household_consumption(
    frame: PopulationFrame,
    outcome_name: &str,
    params: &ConsumptionParams,
    rng: &mut ChaCha8Rng,
) -> Result<PopulationFrame, PopgenError> {
    params.validate()?;
    let (mut households, persons) = frame.into_parts();

    for h in households.iter_mut() {
        let mean = params.household_mean(h.n_total_under50);
        let value = if params.log_scale {
            let dist = Normal::new(mean, params.sigma_t)
                .map_err(|e| PopgenError::InvalidConfig(format!("log consumption: {e}")))?;
            dist.sample(rng).exp()
        } else {
            let sd = h.n_total_under50 as f64 * params.sigma_t;
            let dist = Normal::new(mean, sd)
                .map_err(|e| PopgenError::InvalidConfig(format!("consumption: {e}")))?;
            dist.sample(rng)
        };
        h.household_outcomes.insert(outcome_name.to_string(), value);
    }

    Ok(PopulationFrame::from_parts(households, persons))
}

/// Generate a complete population: demography plus every configured
/// outcome, each on its own derived stream so outcome order in the config
/// cannot perturb other outcomes.
pub fn generate_population(
    config: &GeneratorConfig,
    master_seed: u64,
) -> Result<PopulationFrame, PopgenError> {
    let mut demo_rng = seed::rng_from(seed::derive(master_seed, tags::POPULATION));
    let mut frame = generate_demography(&config.demography, &mut demo_rng)?;
    for (i, (name, outcome)) in config.outcomes.iter().enumerate() {
        let mut rng =
            seed::rng_from(seed::derive(master_seed, seed::indexed_tag(tags::OUTCOME, i as u64)));
        frame = match outcome {
            OutcomeConfig::Person { group, params } => {
                generate_person_outcomes(frame, name, *group, params, &mut rng)?
            }
            OutcomeConfig::Household { params } => {
                generate_household_consumption(frame, name, params, &mut rng)?
            }
        };
    }
    Ok(frame)
}

/// Posterior draws from a pilot model fit, keyed by parameter name. Used by
/// the coefficient-zeroing rule when calibrating generator parameters.
#[derive(Debug, Clone)]
pub struct PosteriorSummary {
    draws: BTreeMap<String, Vec<f64>>,
}

impl PosteriorSummary {
    /// All draw arrays must have one common length of at least 100.
    pub fn new(draws: BTreeMap<String, Vec<f64>>) -> Result<Self, PopgenError> {
        let mut len = None;
        for (name, arr) in &draws {
            if arr.is_empty() {
                return Err(PopgenError::InputError(format!("empty draw array for {name}")));
            }
            if arr.len() < 100 {
                return Err(PopgenError::InputError(format!(
                    "parameter {name} has {} draws, need at least 100",
                    arr.len()
                )));
            }
            match len {
                None => len = Some(arr.len()),
                Some(l) if l != arr.len() => {
                    return Err(PopgenError::InputError(format!(
                        "draw arrays differ in length ({l} vs {} for {name})",
                        arr.len()
                    )));
                }
                _ => {}
            }
        }
        Ok(PosteriorSummary { draws })
    }

    pub fn parameter_names(&self) -> impl Iterator<Item = &str> {
        self.draws.keys().map(|s| s.as_str())
    }

    pub fn draws_for(&self, name: &str) -> Option<&[f64]> {
        self.draws.get(name).map(|v| v.as_slice())
    }
}

/// Collapse a posterior to point parameters, zeroing noisy coefficients.
///
/// For each name in `coefficient_names`, the central 50% interval
/// (25th-75th percentile, linear interpolation, inclusive containment) is
/// checked: if it contains 0 the coefficient becomes 0, otherwise the
/// posterior median. All other parameters pass through as medians.
pub fn zero_noisy_coefficients(
    posterior: &PosteriorSummary,
    coefficient_names: &[&str],
) -> Result<BTreeMap<String, f64>, PopgenError> {
    for name in coefficient_names {
        if posterior.draws_for(name).is_none() {
            return Err(PopgenError::InputError(format!("no draws for coefficient {name}")));
        }
    }
    let mut out = BTreeMap::new();
    for name in posterior.parameter_names() {
        let draws = posterior.draws_for(name).expect("key exists");
        let mut sorted = draws.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("NaN in posterior draws"));
        let median = crate::stats::quantile_sorted(&sorted, 0.5);
        let value = if coefficient_names.contains(&name) {
            let q25 = crate::stats::quantile_sorted(&sorted, 0.25);
            let q75 = crate::stats::quantile_sorted(&sorted, 0.75);
            if q25 <= 0.0 && 0.0 <= q75 {
                0.0
            } else {
                median
            }
        } else {
            median
        };
        out.insert(name.to_string(), value);
    }
    Ok(out)
}
