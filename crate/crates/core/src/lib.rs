//! Simulation toolkit for comparing two-stage household survey designs.
//!
//! A village population of households and persons is generated from a
//! hierarchical Normal model (or loaded from CSV), sampled repeatedly under
//! several two-stage designs, and each sample is turned into an estimate of
//! the finite population mean together with a variance, a design effect, and
//! an effective sample size.
//!
//! Stage I selects households, either by simple random sampling without
//! replacement or by probability-proportional-to-size sampling with
//! replacement. Stage II selects persons within the sampled households
//! according to the survey module being simulated: proportional stratified
//! counts, a fractional-interval systematic sample, or one person per PPS
//! draw. Estimation runs in two paradigms: design-based (Hájek ratio mean
//! with a with-replacement linearized variance) and model-based (Gibbs
//! sampling of a random-intercept Normal model followed by posterior
//! simulation of the finite population mean).
//!
//! The crate is organized to mirror that pipeline:
//!
//! - [`frame`]: immutable population model (households, persons, target
//!   groups, survey modules) plus validation.
//! - [`popgen`]: synthetic population generation and generator calibration.
//! - [`sampler`]: stage-I and stage-II sampling procedures.
//! - [`weights`]: inclusion probabilities and design weights.
//! - [`design_est`]: design-based estimation, variances, design effects.
//! - [`model_est`]: Bayesian fits and finite-population posteriors.
//! - [`harness`]: experiment configuration, replication loop, CLI.
//! - [`io`]: the CSV formats shared by the tools.
//!
//! Every random procedure takes an explicit seeded RNG and the experiment
//! harness derives per-replication seeds with a splittable mix, so a run is
//! a pure function of its configuration.

pub mod design_est;
pub mod frame;
pub mod harness;
pub mod io;
pub mod model_est;
pub mod popgen;
pub mod sampler;
pub mod seed;
pub mod stats;
pub mod weights;
