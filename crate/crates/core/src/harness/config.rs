//! Plain-text configuration: `key = value` lines, `#` comments, and
//! `[section]` blocks.
//!
//! Demography keys live at the top level (`n_households`, `size_dist`,
//! `size_lambda`, `age_probs`, `p_female`, ...). Each generated outcome has
//! an `[outcome.<name>]` block whose keys decide the model: `sigma_alpha` +
//! `sigma_y` for person outcomes, `sigma_t` (+ `log_scale`) for household
//! consumption. Survey modules can be overridden or added with
//! `[module.<name>]` blocks; the `[experiment]` block holds the run grid
//! and the `[calibration]` block the calibration-study plan. Paths are
//! resolved relative to the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::design_est::InferenceKind;
use crate::frame::{ModuleLevel, PopulationFrame, SurveyModuleSpec, TargetGroup};
use crate::model_est::{McmcSettings, ModelSpec};
use crate::popgen::{
    ConsumptionParams, DemographyParams, GeneratorConfig, OutcomeConfig, PersonOutcomeParams,
    SizeDistribution,
};
use crate::sampler::SchemeId;

use super::HarnessError;

/// Parsed but untyped config: section -> key -> (value, line).
#[derive(Debug, Default)]
pub struct RawConfig {
    sections: BTreeMap<String, BTreeMap<String, (String, usize)>>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<RawConfig, HarnessError> {
        let mut sections: BTreeMap<String, BTreeMap<String, (String, usize)>> = BTreeMap::new();
        let mut current = String::new();
        sections.entry(String::new()).or_default();
        for (i, raw_line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = match raw_line.find('#') {
                Some(pos) => &raw_line[..pos],
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| {
                        HarnessError::Config(format!("line {line_no}: unterminated section header"))
                    })?
                    .trim();
                if name.is_empty() {
                    return Err(HarnessError::Config(format!(
                        "line {line_no}: empty section name"
                    )));
                }
                current = name.to_string();
                sections.entry(current.clone()).or_default();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                HarnessError::Config(format!("line {line_no}: expected `key = value`"))
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(HarnessError::Config(format!("line {line_no}: empty key")));
            }
            let section = sections.entry(current.clone()).or_default();
            if section.insert(key.clone(), (value, line_no)).is_some() {
                return Err(HarnessError::Config(format!(
                    "line {line_no}: duplicate key `{key}`"
                )));
            }
        }
        Ok(RawConfig { sections })
    }

    fn section(&self, name: &str) -> Option<&BTreeMap<String, (String, usize)>> {
        self.sections.get(name)
    }

    fn sections_with_prefix<'a>(
        &'a self,
        prefix: &'a str,
    ) -> impl Iterator<Item = (&'a str, &'a BTreeMap<String, (String, usize)>)> {
        self.sections
            .iter()
            .filter_map(move |(name, body)| name.strip_prefix(prefix).map(|rest| (rest, body)))
    }
}

fn get<'a>(
    section: &'a BTreeMap<String, (String, usize)>,
    key: &str,
) -> Option<&'a str> {
    section.get(key).map(|(v, _)| v.as_str())
}

fn parse_value<T: std::str::FromStr>(
    section: &BTreeMap<String, (String, usize)>,
    key: &str,
    what: &str,
) -> Result<Option<T>, HarnessError> {
    match section.get(key) {
        None => Ok(None),
        Some((v, line)) => v.parse::<T>().map(Some).map_err(|_| {
            HarnessError::Config(format!("line {line}: `{key}` must be {what}, got `{v}`"))
        }),
    }
}

fn require<T>(value: Option<T>, key: &str, context: &str) -> Result<T, HarnessError> {
    value.ok_or_else(|| HarnessError::Config(format!("missing key `{key}` in {context}")))
}

fn parse_bool(
    section: &BTreeMap<String, (String, usize)>,
    key: &str,
) -> Result<Option<bool>, HarnessError> {
    match section.get(key) {
        None => Ok(None),
        Some((v, line)) => match v.as_str() {
            "true" | "1" => Ok(Some(true)),
            "false" | "0" => Ok(Some(false)),
            other => Err(HarnessError::Config(format!(
                "line {line}: `{key}` must be true/false, got `{other}`"
            ))),
        },
    }
}

// ---------------------------------------------------------------------------
// typed config
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InferenceSelection {
    Design,
    Model,
    Both,
}

impl InferenceSelection {
    pub fn kinds(self) -> Vec<InferenceKind> {
        match self {
            InferenceSelection::Design => vec![InferenceKind::Design],
            InferenceSelection::Model => vec![InferenceKind::Model],
            InferenceSelection::Both => vec![InferenceKind::Design, InferenceKind::Model],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PopulationMode {
    /// One population for the whole run; replications resample it.
    Fixed,
    /// A fresh population per replication.
    Regenerate,
}

#[derive(Debug, Clone)]
pub struct ExperimentSettings {
    pub replications: u32,
    pub master_seed: u64,
    pub schemes: Vec<SchemeId>,
    pub inference: InferenceSelection,
    pub population_mode: PopulationMode,
    /// n_I for the SRS schemes and m_I for PPS.
    pub stage1_draws: u32,
    pub mcmc: McmcSettings,
    pub weight_mc_reps: u32,
    pub threads: Option<usize>,
    pub write_samples: bool,
    /// Report the household estimand on the log scale instead of raw
    /// consumption.
    pub consumption_mean_log: bool,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        ExperimentSettings {
            replications: 500,
            master_seed: 0,
            schemes: vec![SchemeId::SrsSystematic, SchemeId::SrsStratified, SchemeId::PpsOnePerDraw],
            inference: InferenceSelection::Design,
            population_mode: PopulationMode::Fixed,
            stage1_draws: 300,
            mcmc: McmcSettings::default(),
            weight_mc_reps: 2000,
            threads: None,
            write_samples: false,
            consumption_mean_log: false,
        }
    }
}

#[derive(Debug, Clone)]
pub enum PopulationSource {
    Generator(GeneratorConfig),
    Csv { frame: PopulationFrame },
}

#[derive(Debug, Clone)]
pub struct CalibrationSettings {
    pub scheme: SchemeId,
    pub module_name: String,
    pub replications: u32,
}

/// Fully parsed configuration file.
#[derive(Debug)]
pub struct ConfigFile {
    pub generator: Option<GeneratorConfig>,
    pub modules: Vec<SurveyModuleSpec>,
    pub settings: ExperimentSettings,
    pub module_names: Vec<String>,
    pub population_csv: Option<PathBuf>,
    pub household_csv: Option<PathBuf>,
    pub calibration: Option<CalibrationSettings>,
}

/// A runnable experiment: population source plus the resolved module list.
#[derive(Debug)]
pub struct ResolvedExperiment {
    pub population: PopulationSource,
    pub modules: Vec<SurveyModuleSpec>,
    pub settings: ExperimentSettings,
    /// Model used for the household survey module fits.
    pub household_model: ModelSpec,
    pub calibration: Option<CalibrationSettings>,
}

pub fn load_config_file(path: &Path) -> Result<ConfigFile, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        HarnessError::Config(format!("cannot read config {}: {e}", path.display()))
    })?;
    let raw = RawConfig::parse(&text)?;
    parse_typed(&raw, path)
}

fn parse_typed(raw: &RawConfig, path: &Path) -> Result<ConfigFile, HarnessError> {
    let top = raw.section("").expect("top-level section exists");

    // demography, present iff any of its keys are
    let generator = if top.contains_key("n_households") {
        Some(parse_generator(raw, top)?)
    } else {
        None
    };

    // custom module blocks
    let mut custom_modules: BTreeMap<String, SurveyModuleSpec> = BTreeMap::new();
    for (name, body) in raw.sections_with_prefix("module.") {
        let group_name = require(get(body, "group"), "group", &format!("[module.{name}]"))?;
        let group = TargetGroup::from_name(group_name).ok_or_else(|| {
            HarnessError::Config(format!("[module.{name}]: unknown group `{group_name}`"))
        })?;
        let n_target: u32 =
            require(parse_value(body, "n_target", "a positive integer")?, "n_target", &format!("[module.{name}]"))?;
        let outcome = require(get(body, "outcome"), "outcome", &format!("[module.{name}]"))?;
        let level = match get(body, "level") {
            None => {
                if group == TargetGroup::HouseholdHeads {
                    ModuleLevel::Household
                } else {
                    ModuleLevel::Person
                }
            }
            Some(v) => ModuleLevel::from_name(v).ok_or_else(|| {
                HarnessError::Config(format!("[module.{name}]: level must be person|household"))
            })?,
        };
        let spec = SurveyModuleSpec::new(name, group, n_target, outcome, level)
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        custom_modules.insert(name.to_string(), spec);
    }

    // experiment block
    let empty = BTreeMap::new();
    let exp = raw.section("experiment").unwrap_or(&empty);
    let mut settings = ExperimentSettings::default();
    if let Some(r) = parse_value::<u32>(exp, "reps", "a positive integer")? {
        if r == 0 {
            return Err(HarnessError::Config("reps must be >= 1".into()));
        }
        settings.replications = r;
    }
    if let Some(s) = parse_value::<u64>(exp, "seed", "an unsigned integer")? {
        settings.master_seed = s;
    }
    if let Some(list) = get(exp, "schemes") {
        let mut schemes = Vec::new();
        for tok in list.split_whitespace() {
            let scheme = SchemeId::from_name(tok)
                .ok_or_else(|| HarnessError::Config(format!("unknown scheme `{tok}`")))?;
            if schemes.contains(&scheme) {
                return Err(HarnessError::Config(format!("scheme `{tok}` listed twice")));
            }
            schemes.push(scheme);
        }
        if schemes.is_empty() {
            return Err(HarnessError::Config("schemes list is empty".into()));
        }
        settings.schemes = schemes;
    }
    if let Some(v) = get(exp, "inference") {
        settings.inference = match v {
            "design" => InferenceSelection::Design,
            "model" => InferenceSelection::Model,
            "both" => InferenceSelection::Both,
            other => {
                return Err(HarnessError::Config(format!(
                    "inference must be design|model|both, got `{other}`"
                )))
            }
        };
    }
    if let Some(v) = get(exp, "population_mode") {
        settings.population_mode = match v {
            "fixed" => PopulationMode::Fixed,
            "regenerate" => PopulationMode::Regenerate,
            other => {
                return Err(HarnessError::Config(format!(
                    "population_mode must be fixed|regenerate, got `{other}`"
                )))
            }
        };
    }
    if let Some(v) = parse_value::<u32>(exp, "stage1_draws", "a positive integer")? {
        if v == 0 {
            return Err(HarnessError::Config("stage1_draws must be >= 1".into()));
        }
        settings.stage1_draws = v;
    }
    let burn = parse_value::<u32>(exp, "mcmc_burn_in", "a nonnegative integer")?
        .unwrap_or(settings.mcmc.burn_in);
    let total = parse_value::<u32>(exp, "mcmc_iters", "a positive integer")?
        .unwrap_or(burn + settings.mcmc.keep * settings.mcmc.thin);
    let thin =
        parse_value::<u32>(exp, "mcmc_thin", "a positive integer")?.unwrap_or(settings.mcmc.thin);
    let chains = parse_value::<u32>(exp, "mcmc_chains", "a positive integer")?
        .unwrap_or(settings.mcmc.chains);
    if total <= burn {
        return Err(HarnessError::Config("mcmc_iters must exceed mcmc_burn_in".into()));
    }
    if thin == 0 || chains == 0 {
        return Err(HarnessError::Config("mcmc_thin and mcmc_chains must be >= 1".into()));
    }
    settings.mcmc = McmcSettings { burn_in: burn, keep: (total - burn) / thin, thin, chains };
    if settings.mcmc.keep == 0 {
        return Err(HarnessError::Config("mcmc settings retain no draws".into()));
    }
    if let Some(v) = parse_value::<u32>(exp, "weight_mc_reps", "a positive integer")? {
        if v == 0 {
            return Err(HarnessError::Config("weight_mc_reps must be >= 1".into()));
        }
        settings.weight_mc_reps = v;
    }
    settings.threads = parse_value::<usize>(exp, "threads", "a positive integer")?;
    if settings.threads == Some(0) {
        return Err(HarnessError::Config("threads must be >= 1".into()));
    }
    if let Some(b) = parse_bool(exp, "write_samples")? {
        settings.write_samples = b;
    }
    if let Some(b) = parse_bool(exp, "consumption_mean_log")? {
        settings.consumption_mean_log = b;
    }

    // module list
    let builtin = SurveyModuleSpec::default_modules();
    let module_names: Vec<String> = match get(exp, "modules") {
        Some(list) => list.split_whitespace().map(|s| s.to_string()).collect(),
        None => builtin.iter().map(|m| m.module_name.clone()).collect(),
    };
    if module_names.is_empty() {
        return Err(HarnessError::Config("modules list is empty".into()));
    }
    if module_names.len() > 64 {
        // per-cell seed tags pack the module index into 6 bits
        return Err(HarnessError::Config("at most 64 modules per run".into()));
    }
    {
        let mut seen = std::collections::BTreeSet::new();
        for name in &module_names {
            if !seen.insert(name) {
                return Err(HarnessError::Config(format!("module `{name}` listed twice")));
            }
        }
    }
    let mut modules = Vec::new();
    for name in &module_names {
        let spec = custom_modules
            .get(name)
            .cloned()
            .or_else(|| builtin.iter().find(|m| &m.module_name == name).cloned())
            .ok_or_else(|| {
                HarnessError::Config(format!(
                    "unknown module `{name}` (not builtin, no [module.{name}] block)"
                ))
            })?;
        modules.push(spec);
    }

    let base = path.parent().unwrap_or(Path::new("."));
    let population_csv = get(exp, "population_csv").map(|p| base.join(p));
    let household_csv = get(exp, "household_csv").map(|p| base.join(p));

    // calibration block
    let calibration = match raw.section("calibration") {
        None => None,
        Some(body) => {
            let scheme_name = require(get(body, "scheme"), "scheme", "[calibration]")?;
            let scheme = SchemeId::from_name(scheme_name).ok_or_else(|| {
                HarnessError::Config(format!("[calibration]: unknown scheme `{scheme_name}`"))
            })?;
            let module_name =
                require(get(body, "module"), "module", "[calibration]")?.to_string();
            let replications =
                parse_value::<u32>(body, "reps", "a positive integer")?.unwrap_or(200);
            Some(CalibrationSettings { scheme, module_name, replications })
        }
    };

    Ok(ConfigFile {
        generator,
        modules,
        settings,
        module_names,
        population_csv,
        household_csv,
        calibration,
    })
}

fn parse_generator(
    raw: &RawConfig,
    top: &BTreeMap<String, (String, usize)>,
) -> Result<GeneratorConfig, HarnessError> {
    let n_households: u32 =
        require(parse_value(top, "n_households", "a positive integer")?, "n_households", "demography")?;
    let size_distribution = match get(top, "size_dist").unwrap_or("truncated_poisson") {
        "fixed" => {
            let k = require(parse_value(top, "size_fixed", "a positive integer")?, "size_fixed", "demography")?;
            SizeDistribution::Fixed(k)
        }
        "truncated_poisson" => SizeDistribution::TruncatedPoisson {
            lambda: require(parse_value(top, "size_lambda", "a number")?, "size_lambda", "demography")?,
            min: parse_value(top, "size_min", "a positive integer")?.unwrap_or(1),
            max: parse_value(top, "size_max", "a positive integer")?,
        },
        "empirical" => {
            let hist_text = require(get(top, "size_hist"), "size_hist", "demography")?;
            let mut hist = Vec::new();
            for tok in hist_text.split_whitespace() {
                let (k, p) = tok.split_once(':').ok_or_else(|| {
                    HarnessError::Config(format!("size_hist entries look like `size:prob`, got `{tok}`"))
                })?;
                let k: u32 = k.parse().map_err(|_| {
                    HarnessError::Config(format!("bad size in size_hist entry `{tok}`"))
                })?;
                let p: f64 = p.parse().map_err(|_| {
                    HarnessError::Config(format!("bad probability in size_hist entry `{tok}`"))
                })?;
                hist.push((k, p));
            }
            SizeDistribution::Empirical(hist)
        }
        other => {
            return Err(HarnessError::Config(format!(
                "size_dist must be fixed|truncated_poisson|empirical, got `{other}`"
            )))
        }
    };
    let age_text = require(get(top, "age_probs"), "age_probs", "demography")?;
    let probs: Vec<f64> = age_text
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| HarnessError::Config("age_probs must be five numbers".into()))?;
    if probs.len() != 5 {
        return Err(HarnessError::Config(format!(
            "age_probs needs exactly 5 entries, got {}",
            probs.len()
        )));
    }
    let age_band_probabilities = [probs[0], probs[1], probs[2], probs[3], probs[4]];
    let p_female = parse_value::<f64>(top, "p_female", "a probability")?.unwrap_or(0.5);

    let mut outcomes = BTreeMap::new();
    for (name, body) in raw.sections_with_prefix("outcome.") {
        let mu: f64 = require(parse_value(body, "mu", "a number")?, "mu", &format!("[outcome.{name}]"))?;
        let beta1 = parse_value::<f64>(body, "beta1", "a number")?.unwrap_or(0.0);
        let beta2 = parse_value::<f64>(body, "beta2", "a number")?.unwrap_or(0.0);
        let has_person = body.contains_key("sigma_alpha") || body.contains_key("sigma_y");
        let has_household = body.contains_key("sigma_t");
        let outcome = match (has_person, has_household) {
            (true, false) => {
                let sigma_alpha: f64 = require(
                    parse_value(body, "sigma_alpha", "a nonnegative number")?,
                    "sigma_alpha",
                    &format!("[outcome.{name}]"),
                )?;
                let sigma_y: f64 = require(
                    parse_value(body, "sigma_y", "a nonnegative number")?,
                    "sigma_y",
                    &format!("[outcome.{name}]"),
                )?;
                let group = match get(body, "group") {
                    None => TargetGroup::Under50All,
                    Some(g) => TargetGroup::from_name(g).ok_or_else(|| {
                        HarnessError::Config(format!("[outcome.{name}]: unknown group `{g}`"))
                    })?,
                };
                OutcomeConfig::Person {
                    group,
                    params: PersonOutcomeParams { mu, beta1, beta2, sigma_alpha, sigma_y },
                }
            }
            (false, true) => {
                let sigma_t: f64 = require(
                    parse_value(body, "sigma_t", "a nonnegative number")?,
                    "sigma_t",
                    &format!("[outcome.{name}]"),
                )?;
                let log_scale = parse_bool(body, "log_scale")?.unwrap_or(false);
                OutcomeConfig::Household {
                    params: ConsumptionParams { mu, beta1, beta2, sigma_t, log_scale },
                }
            }
            (true, true) => {
                return Err(HarnessError::Config(format!(
                    "[outcome.{name}]: give either sigma_alpha/sigma_y or sigma_t, not both"
                )))
            }
            (false, false) => {
                return Err(HarnessError::Config(format!(
                    "[outcome.{name}]: needs sigma_alpha/sigma_y (person) or sigma_t (household)"
                )))
            }
        };
        outcomes.insert(name.to_string(), outcome);
    }

    Ok(GeneratorConfig {
        demography: DemographyParams {
            n_households,
            size_distribution,
            age_band_probabilities,
            p_female,
        },
        outcomes,
    })
}

/// Resolve a parsed config into a runnable experiment: load the population
/// CSVs if configured, otherwise keep the generator.
pub fn resolve(config: ConfigFile) -> Result<ResolvedExperiment, HarnessError> {
    let household_log_scale = config
        .generator
        .as_ref()
        .and_then(|g| {
            g.outcomes.values().find_map(|o| match o {
                OutcomeConfig::Household { params } => Some(params.log_scale),
                _ => None,
            })
        })
        .unwrap_or(true);

    let population = match &config.population_csv {
        Some(persons_path) => {
            if config.settings.population_mode == PopulationMode::Regenerate {
                return Err(HarnessError::Config(
                    "population_mode = regenerate needs a generator, not a population CSV".into(),
                ));
            }
            let frame =
                crate::io::read_population(persons_path, config.household_csv.as_deref())?;
            let report = frame.validate();
            if !report.is_clean() {
                return Err(HarnessError::Config(format!(
                    "population file invalid:\n{report}"
                )));
            }
            PopulationSource::Csv { frame }
        }
        None => {
            let generator = config.generator.clone().ok_or_else(|| {
                HarnessError::Config(
                    "config needs demography keys (n_households, ...) or a population_csv".into(),
                )
            })?;
            PopulationSource::Generator(generator)
        }
    };

    for module in &config.modules {
        if module.level == ModuleLevel::Household
            && config.settings.schemes.contains(&SchemeId::SrsPersons)
            && config.settings.schemes.len() == 1
        {
            return Err(HarnessError::Config(format!(
                "module `{}` is household-level and cannot run under srs_persons",
                module.module_name
            )));
        }
    }

    let mut household_model = ModelSpec::household_consumption(household_log_scale);
    household_model.report_log_scale_mean = config.settings.consumption_mean_log;

    Ok(ResolvedExperiment {
        population,
        modules: config.modules,
        settings: config.settings,
        household_model,
        calibration: config.calibration,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_config(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    const BASE: &str = "\
n_households = 40\n\
size_dist = truncated_poisson\n\
size_lambda = 4.0\n\
size_max = 10\n\
age_probs = 0.05 0.15 0.25 0.40 0.15\n\
p_female = 0.5\n\
\n\
[outcome.hemoglobin]\n\
group = under_50_all\n\
mu = 11.0\n\
beta1 = 0.1\n\
sigma_alpha = 1.0\n\
sigma_y = 1.0\n\
\n\
[outcome.consumption]\n\
mu = 9.0\n\
beta1 = 0.05\n\
sigma_t = 0.4\n\
log_scale = true\n";

    #[test]
    fn parses_full_config() {
        let text = format!(
            "{BASE}\n[experiment]\nreps = 7\nseed = 42\nschemes = srs_systematic pps_one_per_draw\n\
             modules = blood_under5 household_survey\ninference = both\npopulation_mode = fixed\n\
             stage1_draws = 20\nmcmc_iters = 500\nmcmc_burn_in = 100\nweight_mc_reps = 300\n"
        );
        let f = write_config(&text);
        let cfg = load_config_file(f.path()).unwrap();
        assert_eq!(cfg.settings.replications, 7);
        assert_eq!(cfg.settings.master_seed, 42);
        assert_eq!(cfg.settings.schemes, vec![SchemeId::SrsSystematic, SchemeId::PpsOnePerDraw]);
        assert_eq!(cfg.modules.len(), 2);
        assert_eq!(cfg.settings.mcmc.burn_in, 100);
        assert_eq!(cfg.settings.mcmc.keep, 400);
        assert_eq!(cfg.settings.weight_mc_reps, 300);
        let gen = cfg.generator.as_ref().unwrap();
        assert_eq!(gen.demography.n_households, 40);
        assert_eq!(gen.outcomes.len(), 2);
        let resolved = resolve(cfg).unwrap();
        assert!(matches!(resolved.population, PopulationSource::Generator(_)));
        assert!(resolved.household_model.log_response);
    }

    #[test]
    fn comments_and_blanks_are_ignored() {
        let text = "# header\nn_households = 5 # trailing\n\nsize_dist = fixed\nsize_fixed = 3\n\
                    age_probs = 0.2 0.2 0.2 0.2 0.2\n";
        let f = write_config(text);
        let cfg = load_config_file(f.path()).unwrap();
        assert_eq!(cfg.generator.unwrap().demography.n_households, 5);
    }

    #[test]
    fn custom_module_blocks_resolve() {
        let text = format!(
            "{BASE}\n[module.blood_tiny]\ngroup = children_6_59m\nn_target = 25\noutcome = hemoglobin\n\
             \n[experiment]\nmodules = blood_tiny\n"
        );
        let f = write_config(&text);
        let cfg = load_config_file(f.path()).unwrap();
        assert_eq!(cfg.modules.len(), 1);
        assert_eq!(cfg.modules[0].n_target, 25);
        assert_eq!(cfg.modules[0].level, ModuleLevel::Person);
    }

    #[test]
    fn unknown_module_is_an_error() {
        let text = format!("{BASE}\n[experiment]\nmodules = nonexistent\n");
        let f = write_config(&text);
        assert!(load_config_file(f.path()).is_err());
    }

    #[test]
    fn duplicate_key_is_an_error() {
        let f = write_config("n_households = 5\nn_households = 6\nsize_dist = fixed\nsize_fixed = 2\nage_probs = 0.2 0.2 0.2 0.2 0.2\n");
        assert!(load_config_file(f.path()).is_err());
    }

    #[test]
    fn bad_scheme_name_is_an_error() {
        let text = format!("{BASE}\n[experiment]\nschemes = srs_clustered\n");
        let f = write_config(&text);
        assert!(load_config_file(f.path()).is_err());
    }

    #[test]
    fn missing_generator_and_csv_fails_resolution() {
        let f = write_config("[experiment]\nreps = 2\n");
        let cfg = load_config_file(f.path()).unwrap();
        assert!(resolve(cfg).is_err());
    }

    #[test]
    fn calibration_block_parses() {
        let text = format!(
            "{BASE}\n[calibration]\nscheme = srs_systematic\nmodule = blood_under5\nreps = 50\n"
        );
        let f = write_config(&text);
        let cfg = load_config_file(f.path()).unwrap();
        let cal = cfg.calibration.unwrap();
        assert_eq!(cal.scheme, SchemeId::SrsSystematic);
        assert_eq!(cal.replications, 50);
    }
}
