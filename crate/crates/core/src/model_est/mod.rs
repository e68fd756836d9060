//! Bayesian model-based inference.
//!
//! A hierarchical Normal model is fitted to the realized sample by Gibbs
//! sampling ([`mcmc_fit`]), the finite population mean is simulated from
//! each posterior draw by imputing the unobserved part of the village
//! ([`finite_population_mean_draws`]), and the posterior variance is turned
//! into a design effect against the closed-form SRS variance with its
//! finite population correction ([`model_design_effect`]). The calibration
//! study ([`calibration_study`]) checks that posterior variances track the
//! design-based variance of posterior means under repeated sampling.

pub mod diagnostics;
mod gibbs;

use std::collections::{BTreeMap, HashMap};

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use thiserror::Error;

pub use gibbs::{
    coef_names, mcmc_fit, ChainDraws, DrawView, McmcSettings, ModelSpec, PosteriorDraws,
    PriorConfig,
};

use crate::frame::{HouseholdId, ModuleLevel, PopulationFrame, SurveyModuleSpec};
use crate::sampler::{self, SamplingPlan, SchemeId, StageIISample};
use crate::seed::{self, tags};
use crate::stats;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid input: {0}")]
    InputError(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("sampling failed: {0}")]
    Sampling(#[from] crate::sampler::SampleError),
}

/// Which level the response lives at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResponseLevel {
    Person,
    Household,
}

/// Convergence summary of a fit.
#[derive(Debug, Clone)]
pub struct FitDiagnostics {
    pub rhat: BTreeMap<String, f64>,
    pub ess: BTreeMap<String, f64>,
    pub converged: bool,
}

/// One sampled household with its observations and covariates.
#[derive(Debug, Clone)]
pub struct ObservedHousehold {
    pub household_id: HouseholdId,
    /// Person outcomes, or the single household total at household level.
    pub ys: Vec<f64>,
    /// Module-group size N_h.
    pub n_group: u32,
    /// Under-50 size.
    pub n_under50: u32,
}

/// Covariates of every frame household, used for imputation.
#[derive(Debug, Clone, Copy)]
pub struct FrameHouseholdCov {
    pub household_id: HouseholdId,
    pub n_group: u32,
    pub n_under50: u32,
}

/// Everything a fit needs: observed households plus frame-wide covariates.
#[derive(Debug, Clone)]
pub struct ModelData {
    pub level: ResponseLevel,
    pub observed: Vec<ObservedHousehold>,
    pub frame: Vec<FrameHouseholdCov>,
}

impl ModelData {
    /// Assemble person-level data from a stage-II sample: households with at
    /// least one observed person enter the likelihood; households sampled
    /// with zero observations carry no data and are treated like unsampled
    /// ones downstream.
    pub fn from_person_sample(
        frame: &PopulationFrame,
        module: &SurveyModuleSpec,
        stage2: &StageIISample,
    ) -> Result<ModelData, FitError> {
        if module.level != ModuleLevel::Person {
            return Err(FitError::InputError("person-level data from a household module".into()));
        }
        let index = frame.group_index(module.target_group);
        let mut by_household: BTreeMap<HouseholdId, Vec<f64>> = BTreeMap::new();
        for &pid in &stage2.selected {
            let person = frame
                .person(pid)
                .ok_or_else(|| FitError::InputError(format!("person {pid} not in frame")))?;
            let y = person.outcome(&module.outcome_name).ok_or_else(|| {
                FitError::InputError(format!(
                    "outcome {} missing for person {pid}",
                    module.outcome_name
                ))
            })?;
            by_household.entry(person.household_id).or_default().push(y);
        }
        let observed = by_household
            .into_iter()
            .map(|(hid, ys)| {
                let h = frame.household(hid).expect("selected household exists");
                ObservedHousehold {
                    household_id: hid,
                    ys,
                    n_group: index.count_in(hid),
                    n_under50: h.n_total_under50,
                }
            })
            .collect();
        Ok(ModelData { level: ResponseLevel::Person, observed, frame: frame_covariates(frame, &index) })
    }

    /// Assemble household-level data: one total per unique sampled
    /// household.
    pub fn from_household_sample(
        frame: &PopulationFrame,
        module: &SurveyModuleSpec,
        sampled_households: &[HouseholdId],
    ) -> Result<ModelData, FitError> {
        if module.level != ModuleLevel::Household {
            return Err(FitError::InputError("household-level data from a person module".into()));
        }
        let index = frame.group_index(module.target_group);
        let mut observed = Vec::with_capacity(sampled_households.len());
        for &hid in sampled_households {
            let h = frame
                .household(hid)
                .ok_or_else(|| FitError::InputError(format!("household {hid} not in frame")))?;
            let t = h.outcome(&module.outcome_name).ok_or_else(|| {
                FitError::InputError(format!(
                    "outcome {} missing for household {hid}",
                    module.outcome_name
                ))
            })?;
            observed.push(ObservedHousehold {
                household_id: hid,
                ys: vec![t],
                n_group: index.count_in(hid),
                n_under50: h.n_total_under50,
            });
        }
        Ok(ModelData {
            level: ResponseLevel::Household,
            observed,
            frame: frame_covariates(frame, &index),
        })
    }
}

fn frame_covariates(
    frame: &PopulationFrame,
    index: &crate::frame::GroupIndex,
) -> Vec<FrameHouseholdCov> {
    frame
        .households()
        .iter()
        .map(|h| FrameHouseholdCov {
            household_id: h.household_id,
            n_group: index.count_in(h.household_id),
            n_under50: h.n_total_under50,
        })
        .collect()
}

/// Posterior draws of the finite population mean.
#[derive(Debug, Clone)]
pub struct FinitePopPosterior {
    pub draws: Vec<f64>,
    pub mean: f64,
    pub variance: f64,
}

impl FinitePopPosterior {
    fn from_draws(draws: Vec<f64>) -> FinitePopPosterior {
        let mean = stats::mean(&draws);
        let variance = if draws.len() > 1 { stats::sample_variance(&draws) } else { 0.0 };
        FinitePopPosterior { draws, mean, variance }
    }

    /// Central interval at the given level (e.g. 0.9).
    pub fn central_interval(&self, level: f64) -> (f64, f64) {
        let lo = (1.0 - level) / 2.0;
        (stats::quantile(&self.draws, lo), stats::quantile(&self.draws, 1.0 - lo))
    }
}

/// Per-household contribution of one posterior draw, read by the
/// decomposition checks in the test module.
#[derive(Debug, Clone, Copy)]
#[cfg_attr(not(test), allow(dead_code))]
struct HouseholdContribution {
    n_group: u32,
    n_obs: u32,
    obs_sum: f64,
    mis_sum: f64,
}

fn person_level_draw(
    draw: &DrawView<'_>,
    data: &ModelData,
    spec: &ModelSpec,
    observed_pos: &HashMap<HouseholdId, usize>,
    rng: &mut ChaCha8Rng,
) -> (f64, Vec<HouseholdContribution>) {
    let sigma_y = draw.sigma_y();
    let sigma_alpha = draw.sigma_alpha();
    let mut total = 0.0;
    let mut n_total = 0u64;
    let mut parts = Vec::with_capacity(data.frame.len());
    for cov in &data.frame {
        if cov.n_group == 0 {
            continue;
        }
        let (n_obs, obs_sum, alpha) = match observed_pos.get(&cov.household_id) {
            Some(&col) => {
                let obs = &data.observed[col];
                (obs.ys.len() as u32, obs.ys.iter().sum::<f64>(), draw.alpha(col))
            }
            None => {
                let mean = draw.linear_predictor(&raw_covs(spec, cov));
                let z: f64 = StandardNormal.sample(rng);
                (0, 0.0, mean + sigma_alpha * z)
            }
        };
        let n_mis = cov.n_group - n_obs;
        let mut mis_sum = 0.0;
        for _ in 0..n_mis {
            let z: f64 = StandardNormal.sample(rng);
            mis_sum += alpha + sigma_y * z;
        }
        total += obs_sum + mis_sum;
        n_total += cov.n_group as u64;
        parts.push(HouseholdContribution { n_group: cov.n_group, n_obs, obs_sum, mis_sum });
    }
    (total / n_total as f64, parts)
}

fn household_level_draw(
    draw: &DrawView<'_>,
    data: &ModelData,
    spec: &ModelSpec,
    observed_pos: &HashMap<HouseholdId, usize>,
    rng: &mut ChaCha8Rng,
) -> f64 {
    // the estimand is mean household consumption on the raw scale unless
    // the log-scale mean was explicitly requested
    let log_mean = spec.log_response && spec.report_log_scale_mean;
    let sigma_t = draw.sigma_y();
    let mut total = 0.0;
    for cov in &data.frame {
        let t = match observed_pos.get(&cov.household_id) {
            Some(&col) => {
                let t = data.observed[col].ys[0];
                if log_mean {
                    t.ln()
                } else {
                    t
                }
            }
            None => {
                let mean = draw.linear_predictor(&raw_covs(spec, cov));
                let scale =
                    if spec.heteroscedastic { cov.n_under50 as f64 * sigma_t } else { sigma_t };
                let z: f64 = StandardNormal.sample(rng);
                let r = mean + scale * z;
                if spec.log_response && !log_mean {
                    r.exp()
                } else {
                    r
                }
            }
        };
        total += t;
    }
    total / data.frame.len() as f64
}

fn raw_covs(spec: &ModelSpec, cov: &FrameHouseholdCov) -> Vec<f64> {
    let mut out = Vec::new();
    if spec.include_household_size_terms {
        let s = cov.n_under50 as f64;
        out.push(s);
        out.push(s * s);
    }
    if spec.include_group_size_terms {
        let g = cov.n_group as f64;
        out.push(g);
        out.push(g * g);
    }
    out
}

/// Simulate the finite population mean from every retained posterior draw.
///
/// Observed households keep their data and impute the remaining
/// `N_h - n_h` members from their intercept draw; unobserved households
/// draw a fresh intercept from the coefficient draws first. At household
/// level, unobserved totals come from the (possibly log-scale) model and
/// the estimand is the mean of the raw totals.
pub fn finite_population_mean_draws(
    posterior: &PosteriorDraws,
    data: &ModelData,
    rng: &mut ChaCha8Rng,
) -> Result<FinitePopPosterior, FitError> {
    if posterior.total_kept() < 100 {
        return Err(FitError::InputError(format!(
            "need at least 100 retained draws, have {}",
            posterior.total_kept()
        )));
    }
    let ids: Vec<HouseholdId> = data.observed.iter().map(|h| h.household_id).collect();
    if posterior.observed_households != ids {
        return Err(FitError::InputError(
            "posterior and data disagree on the observed households".into(),
        ));
    }
    if data.level != posterior.spec.response_level {
        return Err(FitError::InputError("data level does not match the fit".into()));
    }
    let observed_pos: HashMap<HouseholdId, usize> =
        ids.iter().enumerate().map(|(i, &h)| (h, i)).collect();

    let mut draws = Vec::with_capacity(posterior.total_kept());
    match data.level {
        ResponseLevel::Person => {
            if data.frame.iter().all(|c| c.n_group == 0) {
                return Err(FitError::InputError("no eligible persons in the frame".into()));
            }
            for draw in posterior.draw_views() {
                let (ybar, _) = person_level_draw(&draw, data, &posterior.spec, &observed_pos, rng);
                draws.push(ybar);
            }
        }
        ResponseLevel::Household => {
            for draw in posterior.draw_views() {
                draws.push(household_level_draw(&draw, data, &posterior.spec, &observed_pos, rng));
            }
        }
    }
    Ok(FinitePopPosterior::from_draws(draws))
}

/// Closed-form variance of an SRS mean with its finite population
/// correction: `(1 - n/N) * S^2/n` with `S^2 = sum (y - Ybar)^2 / (N-1)`.
pub fn srs_fpc_variance(population_values: &[f64], n: u32) -> Result<f64, FitError> {
    let n_pop = population_values.len() as u32;
    if n > n_pop {
        return Err(FitError::InputError(format!("n = {n} exceeds population size {n_pop}")));
    }
    if n < 2 {
        return Err(FitError::InputError("need n >= 2".into()));
    }
    let s2 = stats::sample_variance(population_values);
    Ok((1.0 - n as f64 / n_pop as f64) * s2 / n as f64)
}

/// Model-based design effect: posterior variance of the finite population
/// mean over the closed-form SRS variance at the same n.
pub fn model_design_effect(
    fp: &FinitePopPosterior,
    population_values: &[f64],
    n: u32,
) -> Result<(f64, f64), FitError> {
    let denom = srs_fpc_variance(population_values, n)?;
    if denom.is_nan() || denom <= 0.0 {
        return Err(FitError::InputError("reference variance is zero".into()));
    }
    let deff = fp.variance / denom;
    let n_eff = if deff > 0.0 { n as f64 / deff } else { f64::INFINITY };
    Ok((deff, n_eff))
}

// ---------------------------------------------------------------------------
// flat-prior i.i.d. Normal fit for direct SRS of persons
// ---------------------------------------------------------------------------

/// Posterior draws of the i.i.d. Normal model under the flat prior
/// `p(mu, sigma^2) ~ 1/sigma^2`, drawn directly (no MCMC needed).
#[derive(Debug, Clone)]
pub struct IidPosterior {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

pub fn fit_iid_normal_flat(
    ys: &[f64],
    n_draws: u32,
    rng: &mut ChaCha8Rng,
) -> Result<IidPosterior, FitError> {
    let n = ys.len();
    if n < 2 {
        return Err(FitError::InsufficientData("need at least 2 observations".into()));
    }
    let ybar = stats::mean(ys);
    let s2 = stats::sample_variance(ys);
    let mut mu = Vec::with_capacity(n_draws as usize);
    let mut sigma = Vec::with_capacity(n_draws as usize);
    let chi2 = Gamma::new((n as f64 - 1.0) / 2.0, 2.0)
        .map_err(|e| FitError::Numerical(format!("chi-square: {e}")))?;
    for _ in 0..n_draws {
        let s = if s2 > 0.0 {
            let c: f64 = chi2.sample(rng);
            ((n as f64 - 1.0) * s2 / c).sqrt()
        } else {
            0.0
        };
        let z: f64 = StandardNormal.sample(rng);
        mu.push(ybar + s / (n as f64).sqrt() * z);
        sigma.push(s);
    }
    Ok(IidPosterior { mu, sigma })
}

/// Finite population mean draws under the i.i.d. fit: the observed total
/// plus `N - n` posterior-predictive values per draw.
pub fn iid_fp_mean_draws(
    posterior: &IidPosterior,
    obs_sum: f64,
    n_obs: u32,
    n_pop: u32,
    rng: &mut ChaCha8Rng,
) -> Result<FinitePopPosterior, FitError> {
    if n_obs > n_pop {
        return Err(FitError::InputError("sample larger than population".into()));
    }
    let n_mis = n_pop - n_obs;
    let mut draws = Vec::with_capacity(posterior.mu.len());
    for (mu, sigma) in posterior.mu.iter().zip(&posterior.sigma) {
        let mut total = obs_sum;
        for _ in 0..n_mis {
            let z: f64 = StandardNormal.sample(rng);
            total += mu + sigma * z;
        }
        draws.push(total / n_pop as f64);
    }
    Ok(FinitePopPosterior::from_draws(draws))
}

// ---------------------------------------------------------------------------
// calibration study
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct CalibrationRecord {
    pub rep: u32,
    pub posterior_mean: f64,
    pub posterior_variance: f64,
    pub flags: Vec<String>,
}

/// Output of [`calibration_study`]: per-replication posterior summaries and
/// the aggregate comparison. `ratio` is mean posterior variance over the
/// variance of posterior means; a calibrated model keeps it near 1.
#[derive(Debug, Clone)]
pub struct CalibrationReport {
    pub records: Vec<CalibrationRecord>,
    pub variance_of_posterior_means: f64,
    pub mean_posterior_variance: f64,
    pub ratio: f64,
    /// Closed-form SRS variance with FPC, for SRS-of-persons plans.
    pub srs_reference: Option<f64>,
    pub failed: u32,
}

/// Repeatedly sample from a fixed population under one plan, fit the model,
/// and collect the posterior mean and variance of the finite population
/// mean. Fit failures are counted and skipped. Meaningful calibration
/// ratios need on the order of 50+ replications.
pub fn calibration_study(
    frame: &PopulationFrame,
    plan: &SamplingPlan,
    spec: &ModelSpec,
    settings: &McmcSettings,
    replications: u32,
    master_seed: u64,
) -> Result<CalibrationReport, FitError> {
    plan.validate()?;
    if replications == 0 {
        return Err(FitError::InputError("need at least one replication".into()));
    }
    let population_values = frame.population_values(&plan.module);
    if population_values.is_empty() {
        return Err(FitError::InputError(format!(
            "no values for outcome {} in the frame",
            plan.module.outcome_name
        )));
    }

    let mut records = Vec::new();
    let mut failed = 0u32;
    for rep in 1..=replications {
        let rep_seed = seed::derive(master_seed, seed::indexed_tag(tags::REPLICATION, rep as u64));
        match calibration_rep(frame, plan, spec, settings, rep_seed) {
            Ok((mean, variance, flags)) => {
                records.push(CalibrationRecord { rep, posterior_mean: mean, posterior_variance: variance, flags })
            }
            Err(_) => failed += 1,
        }
    }
    if records.is_empty() {
        return Err(FitError::InsufficientData("every calibration replication failed".into()));
    }

    let means: Vec<f64> = records.iter().map(|r| r.posterior_mean).collect();
    let vars: Vec<f64> = records.iter().map(|r| r.posterior_variance).collect();
    let variance_of_posterior_means =
        if means.len() > 1 { stats::sample_variance(&means) } else { 0.0 };
    let mean_posterior_variance = stats::mean(&vars);
    let ratio = if variance_of_posterior_means > 0.0 {
        mean_posterior_variance / variance_of_posterior_means
    } else {
        f64::NAN
    };
    let srs_reference = if plan.scheme == SchemeId::SrsPersons {
        let n = plan.module.n_target.min(population_values.len() as u32);
        srs_fpc_variance(&population_values, n).ok()
    } else {
        None
    };

    Ok(CalibrationReport {
        records,
        variance_of_posterior_means,
        mean_posterior_variance,
        ratio,
        srs_reference,
        failed,
    })
}

fn calibration_rep(
    frame: &PopulationFrame,
    plan: &SamplingPlan,
    spec: &ModelSpec,
    settings: &McmcSettings,
    rep_seed: u64,
) -> Result<(f64, f64, Vec<String>), FitError> {
    let mut sample_rng = seed::rng_from(seed::derive(rep_seed, tags::STAGE2));
    match plan.scheme {
        SchemeId::SrsPersons => {
            let stage2 = sampler::srs_persons(frame, &plan.module, plan.module.n_target, &mut sample_rng)?;
            let ys: Vec<f64> = stage2
                .selected
                .iter()
                .filter_map(|pid| frame.person(*pid).and_then(|p| p.outcome(&plan.module.outcome_name)))
                .collect();
            if ys.len() != stage2.selected.len() {
                return Err(FitError::InputError("missing outcomes in SRS-of-persons sample".into()));
            }
            let mut fit_rng = seed::rng_from(seed::derive(rep_seed, tags::MCMC));
            let n_draws = settings.keep * settings.chains;
            let posterior = fit_iid_normal_flat(&ys, n_draws, &mut fit_rng)?;
            let index = frame.group_index(plan.module.target_group);
            let mut fp_rng = seed::rng_from(seed::derive(rep_seed, tags::FP_DRAWS));
            let fp = iid_fp_mean_draws(
                &posterior,
                ys.iter().sum(),
                ys.len() as u32,
                index.total,
                &mut fp_rng,
            )?;
            Ok((fp.mean, fp.variance, Vec::new()))
        }
        _ => {
            let mut stage1_rng = seed::rng_from(seed::derive(rep_seed, tags::STAGE1_SRS));
            let (data, census) = match plan.scheme {
                SchemeId::SrsSystematic | SchemeId::SrsStratified => {
                    let stage1 =
                        sampler::srs_households(frame, plan.stage1_draws, &mut stage1_rng)?;
                    if plan.module.level == ModuleLevel::Household {
                        let heads = sampler::select_household_heads(frame, &stage1);
                        (
                            ModelData::from_household_sample(
                                frame,
                                &plan.module,
                                &stage1.unique_households(),
                            )?,
                            heads.census,
                        )
                    } else {
                        let stage2 = if plan.scheme == SchemeId::SrsSystematic {
                            sampler::systematic_within(frame, &stage1, &plan.module, &mut sample_rng)?
                        } else {
                            sampler::stratified_within(frame, &stage1, &plan.module, &mut sample_rng)?
                        };
                        (ModelData::from_person_sample(frame, &plan.module, &stage2)?, stage2.census)
                    }
                }
                SchemeId::PpsOnePerDraw => {
                    let mut pps_rng = seed::rng_from(seed::derive(rep_seed, tags::STAGE1_PPS));
                    let stage1 = sampler::ppswr_households(
                        frame,
                        plan.stage1_draws,
                        sampler::under50_size,
                        "n_total_under50",
                        &mut pps_rng,
                    )?;
                    if plan.module.level == ModuleLevel::Household {
                        (
                            ModelData::from_household_sample(
                                frame,
                                &plan.module,
                                &stage1.unique_households(),
                            )?,
                            false,
                        )
                    } else {
                        let stage2 =
                            sampler::pps_within(frame, &stage1, &plan.module, &mut sample_rng)?;
                        (ModelData::from_person_sample(frame, &plan.module, &stage2)?, false)
                    }
                }
                SchemeId::SrsPersons => unreachable!("handled above"),
            };
            let mut fit_rng = seed::rng_from(seed::derive(rep_seed, tags::MCMC));
            let posterior = mcmc_fit(&data, spec, settings, &mut fit_rng)?;
            let mut fp_rng = seed::rng_from(seed::derive(rep_seed, tags::FP_DRAWS));
            let fp = finite_population_mean_draws(&posterior, &data, &mut fp_rng)?;
            let mut flags = Vec::new();
            if !posterior.diagnostics.converged {
                flags.push(crate::design_est::flags::RHAT_HIGH.to_string());
            }
            if census {
                flags.push(crate::design_est::flags::CENSUS.to_string());
            }
            Ok((fp.mean, fp.variance, flags))
        }
    }
}
