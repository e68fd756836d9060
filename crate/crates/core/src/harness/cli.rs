//! Command-line interface.
//!
//! Exit codes: 0 on success, 1 on input errors (bad flags, unreadable or
//! invalid configs and populations), 2 on runtime failures.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::harness::{config, runner, summary};
use crate::io;
use crate::model_est::{self, ModelSpec};
use crate::popgen;
use crate::sampler::SamplingPlan;

#[derive(Parser)]
#[command(
    name = "frame-sampler",
    about = "Two-stage household survey sampling simulator",
    version,
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic population and write population/households CSVs.
    Popgen {
        /// Config file with demography and outcome blocks.
        #[arg(long)]
        config: PathBuf,
        /// Master seed; overrides the config's experiment seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the replication experiment and write results, true means, and a
    /// summary.
    Simulate {
        /// Config file with demography, modules, and the experiment block.
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the posterior-calibration study for one scheme and module.
    Calibrate {
        /// Config file including a [calibration] block.
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize an existing results CSV.
    Summarize {
        /// Results CSV produced by `simulate`.
        #[arg(long = "in")]
        input: PathBuf,
        /// Summary CSV to write.
        #[arg(long)]
        out: PathBuf,
        /// Optional true-means CSV enabling the bias column.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Check a population file against the frame invariants.
    Validate {
        /// Population CSV (persons).
        #[arg(long)]
        population: PathBuf,
        /// Optional household outcome CSV.
        #[arg(long)]
        households: Option<PathBuf>,
    },
}

/// Parse arguments and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(CliError::Input(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            2
        }
    }
}

enum CliError {
    Input(String),
    Runtime(String),
}

fn input<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Input(e.to_string())
}

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Popgen { config, seed, out } => {
            let cfg = config::load_config_file(&config).map_err(input)?;
            let generator = cfg.generator.ok_or_else(|| {
                CliError::Input(format!(
                    "{}: no demography keys (n_households, ...)",
                    config.display()
                ))
            })?;
            let seed = seed.unwrap_or(cfg.settings.master_seed);
            let frame = popgen::generate_population(&generator, seed).map_err(runtime)?;
            io::write_population_files(&frame, &out).map_err(runtime)?;
            println!(
                "wrote {} households, {} persons to {}",
                frame.n_households(),
                frame.persons().len(),
                out.display()
            );
            Ok(())
        }
        Command::Simulate { config, out } => {
            let cfg = config::load_config_file(&config).map_err(input)?;
            let resolved = config::resolve(cfg).map_err(input)?;
            let artifacts = runner::run_experiment(&resolved).map_err(runtime)?;
            runner::write_artifacts(&artifacts, &out).map_err(runtime)?;
            println!(
                "wrote {} result rows ({} flagged failures) to {}",
                artifacts.records.len(),
                artifacts.flagged_failures,
                out.display()
            );
            if let Some(gap) = artifacts.max_pps_inclusion_gap {
                println!("max relative gap of approximate vs exact PPS inclusion: {gap:.6}");
            }
            Ok(())
        }
        Command::Calibrate { config, out } => {
            let cfg = config::load_config_file(&config).map_err(input)?;
            let resolved = config::resolve(cfg).map_err(input)?;
            let cal = resolved.calibration.clone().ok_or_else(|| {
                CliError::Input(format!("{}: missing [calibration] block", config.display()))
            })?;
            let module = resolved
                .modules
                .iter()
                .find(|m| m.module_name == cal.module_name)
                .cloned()
                .ok_or_else(|| {
                    CliError::Input(format!(
                        "[calibration]: module `{}` is not in the module list",
                        cal.module_name
                    ))
                })?;
            let frame = match &resolved.population {
                config::PopulationSource::Generator(g) => {
                    popgen::generate_population(g, resolved.settings.master_seed)
                        .map_err(runtime)?
                }
                config::PopulationSource::Csv { frame } => frame.clone(),
            };
            let spec = match module.level {
                crate::frame::ModuleLevel::Person => ModelSpec::person_ignorable(),
                crate::frame::ModuleLevel::Household => resolved.household_model.clone(),
            };
            let plan = SamplingPlan {
                scheme: cal.scheme,
                module,
                stage1_draws: resolved.settings.stage1_draws,
            };
            let report = model_est::calibration_study(
                &frame,
                &plan,
                &spec,
                &resolved.settings.mcmc,
                cal.replications,
                resolved.settings.master_seed,
            )
            .map_err(runtime)?;
            io::write_text(&out.join("calibration.csv"), &calibration_to_csv(&report))
                .map_err(runtime)?;
            println!(
                "wrote {} calibration records ({} failed) to {}; ratio = {}",
                report.records.len(),
                report.failed,
                out.display(),
                report.ratio
            );
            Ok(())
        }
        Command::Summarize { input: in_path, out, truth } => {
            let records = io::read_results(&in_path).map_err(input)?;
            let truths = match truth {
                Some(p) => Some(io::read_true_means(&p).map_err(input)?),
                None => None,
            };
            let rows =
                summary::summarize_results(&records, truths.as_ref()).map_err(runtime)?;
            io::write_text(&out, &summary::summary_to_csv(&rows)).map_err(runtime)?;
            println!("wrote {} summary rows to {}", rows.len(), out.display());
            Ok(())
        }
        Command::Validate { population, households } => {
            let frame =
                io::read_population(&population, households.as_deref()).map_err(input)?;
            let report = frame.validate();
            if report.is_clean() {
                println!(
                    "{}: valid ({} households, {} persons)",
                    population.display(),
                    frame.n_households(),
                    frame.persons().len()
                );
                Ok(())
            } else {
                Err(CliError::Input(format!("{}:\n{report}", population.display())))
            }
        }
    }
}

/// Calibration report: record rows followed by a `#`-prefixed summary
/// block.
pub fn calibration_to_csv(report: &model_est::CalibrationReport) -> String {
    let mut out = String::from("rep,posterior_mean,posterior_variance,flags\n");
    for r in &report.records {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.rep,
            r.posterior_mean,
            r.posterior_variance,
            r.flags.join(";")
        );
    }
    let _ = writeln!(out, "# summary");
    let _ = writeln!(out, "# records,{}", report.records.len());
    let _ = writeln!(out, "# failed,{}", report.failed);
    let _ = writeln!(out, "# variance_of_posterior_means,{}", report.variance_of_posterior_means);
    let _ = writeln!(out, "# mean_posterior_variance,{}", report.mean_posterior_variance);
    let _ = writeln!(out, "# ratio,{}", report.ratio);
    if let Some(v) = report.srs_reference {
        let _ = writeln!(out, "# srs_reference_variance,{v}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn config_file(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    const SMOKE: &str = "\
n_households = 25\nsize_dist = fixed\nsize_fixed = 4\n\
age_probs = 0.05 0.15 0.25 0.40 0.15\np_female = 0.5\n\
[outcome.hemoglobin]\ngroup = under_50_all\nmu = 11\nsigma_alpha = 0.8\nsigma_y = 1.0\n\
[module.blood_tiny]\ngroup = under_50_all\nn_target = 20\noutcome = hemoglobin\n\
[experiment]\nreps = 1\nseed = 3\nschemes = srs_systematic\nmodules = blood_tiny\n\
inference = design\nstage1_draws = 8\nweight_mc_reps = 100\n";

    #[test]
    fn unknown_flag_exits_one() {
        assert_eq!(run(["frame-sampler", "--bogus"]), 1);
        assert_eq!(run(["frame-sampler", "simulate", "--nope", "x"]), 1);
    }

    #[test]
    fn help_exits_zero() {
        assert_eq!(run(["frame-sampler", "--help"]), 0);
        assert_eq!(run(["frame-sampler", "simulate", "--help"]), 0);
    }

    #[test]
    fn missing_config_exits_one() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        assert_eq!(
            run([
                "frame-sampler",
                "simulate",
                "--config",
                "/nonexistent/config.conf",
                "--out",
                out.to_str().unwrap()
            ]),
            1
        );
    }

    #[test]
    fn popgen_validate_simulate_summarize_round_trip() {
        let cfg = config_file(SMOKE);
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let cfg_path = cfg.path().to_str().unwrap().to_string();

        assert_eq!(
            run(["frame-sampler", "popgen", "--config", &cfg_path, "--out", out.to_str().unwrap()]),
            0
        );
        let pop = out.join("population.csv");
        assert_eq!(
            run(["frame-sampler", "validate", "--population", pop.to_str().unwrap()]),
            0
        );

        assert_eq!(
            run(["frame-sampler", "simulate", "--config", &cfg_path, "--out", out.to_str().unwrap()]),
            0
        );
        let results = out.join("results.csv");
        assert!(results.exists());
        assert!(out.join("summary.csv").exists());
        assert!(out.join("true_means.csv").exists());

        let summary2 = out.join("summary2.csv");
        assert_eq!(
            run([
                "frame-sampler",
                "summarize",
                "--in",
                results.to_str().unwrap(),
                "--out",
                summary2.to_str().unwrap(),
                "--truth",
                out.join("true_means.csv").to_str().unwrap(),
            ]),
            0
        );
        let s1 = std::fs::read_to_string(out.join("summary.csv")).unwrap();
        let s2 = std::fs::read_to_string(summary2).unwrap();
        assert_eq!(s1, s2, "summarize reproduces the run summary");
    }

    #[test]
    fn calibrate_writes_report_with_summary_block() {
        let text = format!(
            "{SMOKE}mcmc_iters = 250\nmcmc_burn_in = 100\nmcmc_chains = 1\n\
             [calibration]\nscheme = srs_systematic\nmodule = blood_tiny\nreps = 2\n"
        );
        let cfg = config_file(&text);
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(
            run([
                "frame-sampler",
                "calibrate",
                "--config",
                cfg.path().to_str().unwrap(),
                "--out",
                dir.path().to_str().unwrap()
            ]),
            0
        );
        let report = std::fs::read_to_string(dir.path().join("calibration.csv")).unwrap();
        assert!(report.starts_with("rep,posterior_mean,posterior_variance,flags\n"));
        assert!(report.contains("# summary"));
        assert!(report.contains("# records,2"));
        assert!(report.contains("# ratio,"));
    }

    #[test]
    fn validate_rejects_malformed_population() {
        let mut bad = tempfile::NamedTempFile::new().unwrap();
        // two heads in household 1
        bad.write_all(
            b"household_id,person_id,age_months,sex,is_head\n1,1,300,M,1\n1,2,200,F,1\n",
        )
        .unwrap();
        assert_eq!(
            run(["frame-sampler", "validate", "--population", bad.path().to_str().unwrap()]),
            1
        );
    }
}
