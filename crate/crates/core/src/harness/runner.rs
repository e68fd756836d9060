//! The replication loop.
//!
//! Each replication derives its own seed from the master seed, draws every
//! scheme's samples, and produces one estimate record per scheme x module x
//! paradigm. Replications run on a worker pool; because all randomness
//! flows from per-replication seeds and results are merged in replication
//! order, output bytes do not depend on the worker count. The
//! `FRAME_SAMPLER_THREADS` environment variable caps the pool.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use crate::design_est::{self, flags, EstimateRecord, InferenceKind};
use crate::frame::{ModuleLevel, PopulationFrame, SurveyModuleSpec};
use crate::io;
use crate::model_est::{self, McmcSettings, ModelData, ModelSpec};
use crate::popgen;
use crate::sampler::{self, SchemeId, StageIISample, StageISample};
use crate::seed::{self, tags};
use crate::weights::{self, SchemeInclusionTable, SrsSchemeKind, WeightedSample};

use super::config::{
    ExperimentSettings, PopulationMode, PopulationSource, ResolvedExperiment,
};
use super::summary::{self, SummaryRow};
use super::HarnessError;

/// Everything a finished run produces.
#[derive(Debug)]
pub struct RunArtifacts {
    pub records: Vec<EstimateRecord>,
    pub true_means: BTreeMap<(u32, String), f64>,
    pub summary: Vec<SummaryRow>,
    /// Grid cells that failed outright (no row emitted).
    pub flagged_failures: u32,
    /// Largest relative gap between the exact and approximate PPS
    /// inclusion probabilities seen across the run; the weights use the
    /// approximation, so this bounds the error it introduces.
    pub max_pps_inclusion_gap: Option<f64>,
    pub manifest_csv: Option<String>,
    pub weighted_csv: Option<String>,
}

struct ModuleState {
    spec: SurveyModuleSpec,
    population_values: Vec<f64>,
    true_mean: Option<f64>,
    tables: BTreeMap<SchemeId, SchemeInclusionTable>,
}

struct PopulationState {
    frame: PopulationFrame,
    modules: Vec<ModuleState>,
}

impl PopulationState {
    fn build(
        frame: PopulationFrame,
        modules: &[SurveyModuleSpec],
        settings: &ExperimentSettings,
        table_seed: u64,
    ) -> Result<PopulationState, HarnessError> {
        let mut module_states = Vec::with_capacity(modules.len());
        for (mi, spec) in modules.iter().enumerate() {
            let population_values = frame.population_values(spec);
            let true_mean = frame.true_mean(spec);
            let mut tables = BTreeMap::new();
            if spec.level == ModuleLevel::Person {
                for (si, scheme) in settings.schemes.iter().enumerate() {
                    let kind = match scheme {
                        SchemeId::SrsSystematic => SrsSchemeKind::Systematic,
                        SchemeId::SrsStratified => SrsSchemeKind::Stratified,
                        _ => continue,
                    };
                    let tag = seed::indexed_tag(tags::WEIGHT_MC, (si as u64) * 64 + mi as u64);
                    let mut rng = seed::rng_from(seed::derive(table_seed, tag));
                    let table = weights::srs_scheme_inclusion_table(
                        &frame,
                        spec,
                        settings.stage1_draws,
                        kind,
                        settings.weight_mc_reps,
                        &mut rng,
                    )?;
                    tables.insert(*scheme, table);
                }
            }
            module_states.push(ModuleState {
                spec: spec.clone(),
                population_values,
                true_mean,
                tables,
            });
        }
        Ok(PopulationState { frame, modules: module_states })
    }
}

#[derive(Default)]
struct RepOutput {
    records: Vec<EstimateRecord>,
    truths: Vec<((u32, String), f64)>,
    flagged_failures: u32,
    max_pps_inclusion_gap: Option<f64>,
    manifest: String,
    weighted: String,
}

impl RepOutput {
    fn note_pps_gap(&mut self, gap: f64) {
        let current = self.max_pps_inclusion_gap.unwrap_or(0.0);
        if gap > current || self.max_pps_inclusion_gap.is_none() {
            self.max_pps_inclusion_gap = Some(gap.max(current));
        }
    }
}

fn cells_per_rep(exp: &ResolvedExperiment) -> u32 {
    let paradigms = exp.settings.inference.kinds().len() as u32;
    let mut cells = 0;
    for scheme in &exp.settings.schemes {
        for module in &exp.modules {
            if module.level == ModuleLevel::Household && *scheme == SchemeId::SrsPersons {
                continue;
            }
            cells += paradigms;
        }
    }
    cells
}

/// Resolve the worker count: the config value capped by
/// `FRAME_SAMPLER_THREADS` when set.
fn thread_count(configured: Option<usize>) -> Option<usize> {
    let cap = std::env::var("FRAME_SAMPLER_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1);
    apply_thread_cap(configured, cap)
}

fn apply_thread_cap(configured: Option<usize>, cap: Option<usize>) -> Option<usize> {
    match (configured, cap) {
        (Some(c), Some(e)) => Some(c.min(e)),
        (Some(c), None) => Some(c),
        (None, cap) => cap,
    }
}

/// Run the configured experiment and aggregate all replications.
pub fn run_experiment(exp: &ResolvedExperiment) -> Result<RunArtifacts, HarnessError> {
    let settings = &exp.settings;

    let mut pool_builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count(settings.threads) {
        pool_builder = pool_builder.num_threads(n);
    }
    let pool = pool_builder.build().map_err(|e| HarnessError::Pool(e.to_string()))?;

    let fixed_state: Option<Arc<PopulationState>> = match settings.population_mode {
        PopulationMode::Fixed => {
            let frame = match &exp.population {
                PopulationSource::Generator(g) => {
                    popgen::generate_population(g, settings.master_seed)?
                }
                PopulationSource::Csv { frame } => frame.clone(),
            };
            let table_seed = seed::derive(settings.master_seed, tags::WEIGHT_MC);
            Some(Arc::new(PopulationState::build(frame, &exp.modules, settings, table_seed)?))
        }
        PopulationMode::Regenerate => {
            if !matches!(exp.population, PopulationSource::Generator(_)) {
                return Err(HarnessError::Config(
                    "regenerate mode requires a generator configuration".into(),
                ));
            }
            None
        }
    };

    let outputs: Vec<RepOutput> = pool.install(|| {
        (1..=settings.replications)
            .into_par_iter()
            .map(|rep| {
                let rep_seed = seed::derive(
                    settings.master_seed,
                    seed::indexed_tag(tags::REPLICATION, rep as u64),
                );
                let state = match &fixed_state {
                    Some(shared) => Arc::clone(shared),
                    None => {
                        let generator = match &exp.population {
                            PopulationSource::Generator(g) => g,
                            PopulationSource::Csv { .. } => unreachable!("checked above"),
                        };
                        let frame = match popgen::generate_population(generator, rep_seed) {
                            Ok(f) => f,
                            Err(_) => {
                                return RepOutput {
                                    flagged_failures: cells_per_rep(exp),
                                    ..RepOutput::default()
                                }
                            }
                        };
                        let table_seed = seed::derive(rep_seed, tags::WEIGHT_MC);
                        match PopulationState::build(frame, &exp.modules, settings, table_seed) {
                            Ok(s) => Arc::new(s),
                            Err(_) => {
                                return RepOutput {
                                    flagged_failures: cells_per_rep(exp),
                                    ..RepOutput::default()
                                }
                            }
                        }
                    }
                };
                run_replication(rep, rep_seed, &state, exp)
            })
            .collect()
    });

    let mut records = Vec::new();
    let mut true_means = BTreeMap::new();
    let mut flagged_failures = 0;
    let mut max_pps_inclusion_gap: Option<f64> = None;
    let mut manifest = String::new();
    let mut weighted = String::new();
    for out in outputs {
        records.extend(out.records);
        true_means.extend(out.truths);
        flagged_failures += out.flagged_failures;
        if let Some(g) = out.max_pps_inclusion_gap {
            max_pps_inclusion_gap = Some(max_pps_inclusion_gap.unwrap_or(0.0).max(g));
        }
        manifest.push_str(&out.manifest);
        weighted.push_str(&out.weighted);
    }
    records.sort_by(|a, b| {
        (a.replication_id, a.scheme.as_str(), &a.module_name, a.inference).cmp(&(
            b.replication_id,
            b.scheme.as_str(),
            &b.module_name,
            b.inference,
        ))
    });

    let summary = summary::summarize_results(&records, Some(&true_means))?;

    Ok(RunArtifacts {
        records,
        true_means,
        summary,
        flagged_failures,
        max_pps_inclusion_gap,
        manifest_csv: settings
            .write_samples
            .then(|| format!("{}{}", io::sample_manifest_header(), manifest)),
        weighted_csv: settings
            .write_samples
            .then(|| format!("{}{}", io::weighted_sample_header(), weighted)),
    })
}

fn run_replication(
    rep: u32,
    rep_seed: u64,
    state: &PopulationState,
    exp: &ResolvedExperiment,
) -> RepOutput {
    let settings = &exp.settings;
    let frame = &state.frame;
    let mut out = RepOutput::default();

    for module_state in &state.modules {
        if let Some(t) = module_state.true_mean {
            out.truths.push(((rep, module_state.spec.module_name.clone()), t));
        }
    }

    // stage-I draws, one per scheme slot (PPS shared by its modules)
    let mut srs_stage1: BTreeMap<usize, StageISample> = BTreeMap::new();
    let mut pps_stage1: Option<StageISample> = None;
    for (si, scheme) in settings.schemes.iter().enumerate() {
        match scheme {
            SchemeId::SrsSystematic | SchemeId::SrsStratified => {
                let mut rng = seed::rng_from(seed::derive(
                    rep_seed,
                    seed::indexed_tag(tags::STAGE1_SRS, si as u64),
                ));
                if let Ok(s) = sampler::srs_households(frame, settings.stage1_draws, &mut rng) {
                    srs_stage1.insert(si, s);
                }
            }
            SchemeId::PpsOnePerDraw => {
                if pps_stage1.is_none() {
                    let mut rng = seed::rng_from(seed::derive(rep_seed, tags::STAGE1_PPS));
                    pps_stage1 = sampler::ppswr_households(
                        frame,
                        settings.stage1_draws,
                        sampler::under50_size,
                        "n_total_under50",
                        &mut rng,
                    )
                    .ok();
                }
            }
            SchemeId::SrsPersons => {}
        }
    }

    for (si, &scheme) in settings.schemes.iter().enumerate() {
        for (mi, module_state) in state.modules.iter().enumerate() {
            let module = &module_state.spec;
            if module.level == ModuleLevel::Household && scheme == SchemeId::SrsPersons {
                continue;
            }
            run_cell(
                rep, rep_seed, si, scheme, mi, module_state, module, state, exp, &srs_stage1,
                &pps_stage1, &mut out,
            );
        }
    }

    out
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    rep: u32,
    rep_seed: u64,
    si: usize,
    scheme: SchemeId,
    mi: usize,
    module_state: &ModuleState,
    module: &SurveyModuleSpec,
    state: &PopulationState,
    exp: &ResolvedExperiment,
    srs_stage1: &BTreeMap<usize, StageISample>,
    pps_stage1: &Option<StageISample>,
    out: &mut RepOutput,
) {
    let settings = &exp.settings;
    let frame = &state.frame;
    let paradigms = settings.inference.kinds();
    let n_paradigms = paradigms.len() as u32;
    let cell_tag = (si as u64) * 64 + mi as u64;

    // realize the sample for this scheme x module
    let (stage1, stage2, mut base_flags): (Option<StageISample>, StageIISample, Vec<String>) =
        match module.level {
            ModuleLevel::Household => {
                let stage1 = match scheme {
                    SchemeId::PpsOnePerDraw => match pps_stage1 {
                        Some(s) => s.clone(),
                        None => {
                            out.flagged_failures += n_paradigms;
                            return;
                        }
                    },
                    SchemeId::SrsSystematic | SchemeId::SrsStratified => {
                        // pair the SRS household count to the unique PPS
                        // households; draw a probe PPS sample if the PPS
                        // scheme is not in the run
                        let unique = match pps_stage1 {
                            Some(s) => s.n_unique() as u32,
                            None => {
                                let mut rng = seed::rng_from(seed::derive(
                                    rep_seed,
                                    seed::indexed_tag(tags::PAIRED_HOUSEHOLD, 64 + si as u64),
                                ));
                                match sampler::ppswr_households(
                                    frame,
                                    settings.stage1_draws,
                                    sampler::under50_size,
                                    "n_total_under50",
                                    &mut rng,
                                ) {
                                    Ok(probe) => probe.n_unique() as u32,
                                    Err(_) => settings.stage1_draws,
                                }
                            }
                        };
                        let mut rng = seed::rng_from(seed::derive(
                            rep_seed,
                            seed::indexed_tag(tags::PAIRED_HOUSEHOLD, si as u64),
                        ));
                        match sampler::srs_households(frame, unique, &mut rng) {
                            Ok(s) => s,
                            Err(_) => {
                                out.flagged_failures += n_paradigms;
                                return;
                            }
                        }
                    }
                    SchemeId::SrsPersons => unreachable!("filtered by caller"),
                };
                let heads = sampler::select_household_heads(frame, &stage1);
                let mut flags = vec![flags::RAW_VARIANCE.to_string()];
                if let StageISample::SrsWor { whole_frame: true, .. } = stage1 {
                    flags.push(flags::WHOLE_FRAME.to_string());
                }
                (Some(stage1), heads, flags)
            }
            ModuleLevel::Person => {
                let mut rng =
                    seed::rng_from(seed::derive(rep_seed, seed::indexed_tag(tags::STAGE2, cell_tag)));
                let drawn = match scheme {
                    SchemeId::SrsSystematic => srs_stage1
                        .get(&si)
                        .ok_or(())
                        .and_then(|s1| {
                            sampler::systematic_within(frame, s1, module, &mut rng).map_err(|_| ())
                        })
                        .map(|s2| (srs_stage1.get(&si).cloned(), s2)),
                    SchemeId::SrsStratified => srs_stage1
                        .get(&si)
                        .ok_or(())
                        .and_then(|s1| {
                            sampler::stratified_within(frame, s1, module, &mut rng).map_err(|_| ())
                        })
                        .map(|s2| (srs_stage1.get(&si).cloned(), s2)),
                    SchemeId::PpsOnePerDraw => pps_stage1
                        .as_ref()
                        .ok_or(())
                        .and_then(|s1| {
                            sampler::pps_within(frame, s1, module, &mut rng).map_err(|_| ())
                        })
                        .map(|s2| (pps_stage1.clone(), s2)),
                    SchemeId::SrsPersons => {
                        let mut rng = seed::rng_from(seed::derive(
                            rep_seed,
                            seed::indexed_tag(tags::SRS_PERSONS, cell_tag),
                        ));
                        sampler::srs_persons(frame, module, module.n_target, &mut rng)
                            .map(|s2| (None, s2))
                            .map_err(|_| ())
                    }
                };
                let (stage1, stage2) = match drawn {
                    Ok(pair) => pair,
                    Err(()) => {
                        out.flagged_failures += n_paradigms;
                        return;
                    }
                };
                let mut flags = Vec::new();
                if stage2.census {
                    flags.push(flags::CENSUS.to_string());
                }
                if let Some(StageISample::SrsWor { whole_frame: true, .. }) = stage1 {
                    flags.push(flags::WHOLE_FRAME.to_string());
                }
                (stage1, stage2, flags)
            }
        };
    base_flags.sort();
    base_flags.dedup();

    // attach weights once; both paradigms read the realized sample from it
    let weighted = weights::design_weights(
        frame,
        module,
        scheme,
        stage1.as_ref(),
        &stage2,
        module_state.tables.get(&scheme),
    );

    if settings.write_samples {
        out.manifest.push_str(&io::sample_manifest_rows(
            frame,
            scheme,
            module,
            stage1.as_ref(),
            &stage2,
        ));
        if let Ok(ws) = &weighted {
            out.weighted.push_str(&io::weighted_sample_rows(ws));
        }
    }

    // diagnostic: how far the approximate PPS inclusion probability (the
    // one the weights use) sits from the exact closed form
    if scheme == SchemeId::PpsOnePerDraw && module.level == ModuleLevel::Person {
        if let Some(StageISample::PpsWr { sizes, size_total, m_draws, .. }) = &stage1 {
            let m_eff = stage2
                .retained_draws
                .as_ref()
                .map(|r| r.values().sum::<u32>())
                .unwrap_or(*m_draws);
            let index = frame.group_index(module.target_group);
            for (hid, x) in sizes {
                let n_h = index.count_in(*hid);
                if n_h == 0 {
                    continue;
                }
                let (exact, approx) = weights::pps_inclusion(x / size_total, 1, n_h, m_eff);
                if exact > 0.0 {
                    out.note_pps_gap(approx / exact - 1.0);
                }
            }
        }
    }

    for paradigm in paradigms {
        let record = match paradigm {
            InferenceKind::Design => design_record(
                rep,
                scheme,
                module,
                &weighted,
                &base_flags,
            ),
            InferenceKind::Model => model_record(
                rep, rep_seed, cell_tag, scheme, module, module_state, frame, exp, &stage1,
                &stage2, &base_flags,
            ),
        };
        match record {
            Some(r) => out.records.push(r),
            None => out.flagged_failures += 1,
        }
    }
}

fn design_record(
    rep: u32,
    scheme: SchemeId,
    module: &SurveyModuleSpec,
    weighted: &Result<WeightedSample, weights::WeightError>,
    base_flags: &[String],
) -> Option<EstimateRecord> {
    let ws = weighted.as_ref().ok()?;
    let estimate = design_est::hajek_mean(ws).ok()?;
    let variance = design_est::wr_linearized_variance(ws).ok()?;
    let mut flags = base_flags.to_vec();
    let (deff, n_eff) = if module.level == ModuleLevel::Household {
        (None, None)
    } else {
        match design_est::srs_wr_reference_variance(ws) {
            Ok(v_srs) if v_srs > 0.0 => match design_est::design_effect(variance, v_srs, ws.n() as u32) {
                Ok((d, ne)) => (Some(d), Some(ne)),
                Err(_) => {
                    flags.push(flags::VSRS_ZERO.to_string());
                    (None, None)
                }
            },
            Ok(_) => {
                flags.push(flags::VSRS_ZERO.to_string());
                (None, None)
            }
            Err(_) => {
                flags.push(flags::VSRS_ZERO.to_string());
                (None, None)
            }
        }
    };
    Some(EstimateRecord {
        replication_id: rep,
        scheme,
        module_name: module.module_name.clone(),
        inference: InferenceKind::Design,
        n: ws.n() as u32,
        estimate,
        variance,
        deff,
        n_eff,
        flags,
    })
}

#[allow(clippy::too_many_arguments)]
fn model_record(
    rep: u32,
    rep_seed: u64,
    cell_tag: u64,
    scheme: SchemeId,
    module: &SurveyModuleSpec,
    module_state: &ModuleState,
    frame: &PopulationFrame,
    exp: &ResolvedExperiment,
    stage1: &Option<StageISample>,
    stage2: &StageIISample,
    base_flags: &[String],
) -> Option<EstimateRecord> {
    let settings = &exp.settings;
    let mcmc: McmcSettings = settings.mcmc;
    let mut flags = base_flags.to_vec();

    let (fp, n) = if scheme == SchemeId::SrsPersons {
        let ys: Vec<f64> = stage2
            .selected
            .iter()
            .filter_map(|pid| frame.person(*pid).and_then(|p| p.outcome(&module.outcome_name)))
            .collect();
        if ys.len() != stage2.selected.len() || ys.len() < 2 {
            return None;
        }
        let mut fit_rng = seed::rng_from(seed::derive(
            rep_seed,
            seed::indexed_tag(tags::MCMC, cell_tag),
        ));
        let posterior =
            model_est::fit_iid_normal_flat(&ys, mcmc.keep * mcmc.chains, &mut fit_rng).ok()?;
        let mut fp_rng = seed::rng_from(seed::derive(
            rep_seed,
            seed::indexed_tag(tags::FP_DRAWS, cell_tag),
        ));
        let total_eligible = module_state.population_values.len() as u32;
        let fp = model_est::iid_fp_mean_draws(
            &posterior,
            ys.iter().sum(),
            ys.len() as u32,
            total_eligible,
            &mut fp_rng,
        )
        .ok()?;
        (fp, ys.len() as u32)
    } else {
        let (data, spec): (ModelData, ModelSpec) = match module.level {
            ModuleLevel::Person => (
                ModelData::from_person_sample(frame, module, stage2).ok()?,
                ModelSpec::person_ignorable(),
            ),
            ModuleLevel::Household => {
                let s1 = stage1.as_ref()?;
                (
                    ModelData::from_household_sample(frame, module, &s1.unique_households())
                        .ok()?,
                    exp.household_model.clone(),
                )
            }
        };
        let n = match module.level {
            ModuleLevel::Person => stage2.selected.len() as u32,
            ModuleLevel::Household => data.observed.len() as u32,
        };
        let mut fit_rng = seed::rng_from(seed::derive(
            rep_seed,
            seed::indexed_tag(tags::MCMC, cell_tag),
        ));
        let posterior = model_est::mcmc_fit(&data, &spec, &mcmc, &mut fit_rng).ok()?;
        if !posterior.diagnostics.converged {
            flags.push(flags::RHAT_HIGH.to_string());
        }
        let mut fp_rng = seed::rng_from(seed::derive(
            rep_seed,
            seed::indexed_tag(tags::FP_DRAWS, cell_tag),
        ));
        let fp = model_est::finite_population_mean_draws(&posterior, &data, &mut fp_rng).ok()?;
        (fp, n)
    };

    let (deff, n_eff) = if module.level == ModuleLevel::Household {
        (None, None)
    } else {
        match model_est::model_design_effect(&fp, &module_state.population_values, n) {
            Ok((d, ne)) => (Some(d), Some(ne)),
            Err(_) => {
                flags.push(flags::VSRS_ZERO.to_string());
                (None, None)
            }
        }
    };
    flags.sort();
    flags.dedup();

    Some(EstimateRecord {
        replication_id: rep,
        scheme,
        module_name: module.module_name.clone(),
        inference: InferenceKind::Model,
        n,
        estimate: fp.mean,
        variance: fp.variance,
        deff,
        n_eff,
        flags,
    })
}

/// Write results, true means, summary, and (when requested) the sample
/// files under `out_dir`.
pub fn write_artifacts(artifacts: &RunArtifacts, out_dir: &Path) -> Result<(), HarnessError> {
    io::write_text(&out_dir.join("results.csv"), &io::results_to_csv(&artifacts.records))?;
    io::write_text(&out_dir.join("true_means.csv"), &io::true_means_to_csv(&artifacts.true_means))?;
    io::write_text(&out_dir.join("summary.csv"), &summary::summary_to_csv(&artifacts.summary))?;
    if let Some(m) = &artifacts.manifest_csv {
        io::write_text(&out_dir.join("samples.csv"), m)?;
    }
    if let Some(w) = &artifacts.weighted_csv {
        io::write_text(&out_dir.join("weighted_samples.csv"), w)?;
    }
    Ok(())
}
