//! Gibbs sampler for the random-intercept Normal models.
//!
//! Person level: `y_i ~ Normal(alpha_h, sigma_y)` with
//! `alpha_h ~ Normal(mu + X_h beta, sigma_alpha)`, where the household
//! covariates are the under-50 size and the module-group size with their
//! squares. Household level drops the intercept layer and models the
//! (optionally log) household total directly, with a known per-household
//! scale multiplier in the heteroscedastic variant.
//!
//! Every full conditional is conjugate: intercepts and coefficients are
//! Normal, variances are inverse-Gamma. Covariates are centered and scaled
//! by frame-wide moments inside the fitter (quadratic terms are nearly
//! collinear otherwise) and coefficients are transformed back to the
//! original scale before they are stored.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::diagnostics;
use super::{FitDiagnostics, FitError, ModelData, ResponseLevel};
use crate::seed;

/// Prior configuration. Coefficient priors are Normal with standard
/// deviation `coef_sd_scale * sd(response)` (or flat), variances are
/// inverse-Gamma(shape, rate).
#[derive(Debug, Clone, Copy)]
pub struct PriorConfig {
    pub coef_sd_scale: f64,
    pub flat_coefficients: bool,
    pub sigma_shape: f64,
    pub sigma_rate: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            coef_sd_scale: 1000.0,
            flat_coefficients: false,
            sigma_shape: 0.001,
            sigma_rate: 0.001,
        }
    }
}

/// What to fit: response level, scale, covariate set, priors, and optional
/// fixed variance components (used by the conjugate-subcase checks).
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub response_level: ResponseLevel,
    /// Household level only: model log(t_h) and exponentiate when imputing.
    pub log_response: bool,
    /// Household level, raw scale only: the residual standard deviation is
    /// the under-50 size times sigma_t. Size-zero households are
    /// deterministic under this model and are excluded from the likelihood.
    pub heteroscedastic: bool,
    /// Include under-50 size and its square in the intercept mean.
    pub include_household_size_terms: bool,
    /// Include the module-group size and its square (the ignorable fit).
    pub include_group_size_terms: bool,
    pub priors: PriorConfig,
    pub fixed_sigma_alpha: Option<f64>,
    pub fixed_sigma_y: Option<f64>,
    /// Household level with a log-scale fit: report the mean of the logs
    /// instead of the mean of the raw totals.
    pub report_log_scale_mean: bool,
}

impl ModelSpec {
    /// The person-level model fitted to every scheme's person samples.
    pub fn person_ignorable() -> Self {
        ModelSpec {
            response_level: ResponseLevel::Person,
            log_response: false,
            heteroscedastic: false,
            include_household_size_terms: true,
            include_group_size_terms: true,
            priors: PriorConfig::default(),
            fixed_sigma_alpha: None,
            fixed_sigma_y: None,
            report_log_scale_mean: false,
        }
    }

    /// The person-level generating model (no group-size terms).
    pub fn person_generating() -> Self {
        ModelSpec { include_group_size_terms: false, ..ModelSpec::person_ignorable() }
    }

    /// The household consumption model, on the log or raw scale.
    pub fn household_consumption(log_scale: bool) -> Self {
        ModelSpec {
            response_level: ResponseLevel::Household,
            log_response: log_scale,
            heteroscedastic: !log_scale,
            include_household_size_terms: true,
            include_group_size_terms: false,
            priors: PriorConfig::default(),
            fixed_sigma_alpha: None,
            fixed_sigma_y: None,
            report_log_scale_mean: false,
        }
    }
}

/// Chain controls. Each chain runs `burn_in + keep*thin` iterations and
/// retains `keep` draws.
#[derive(Debug, Clone, Copy)]
pub struct McmcSettings {
    pub burn_in: u32,
    pub keep: u32,
    pub thin: u32,
    pub chains: u32,
}

impl Default for McmcSettings {
    fn default() -> Self {
        McmcSettings { burn_in: 1000, keep: 2000, thin: 1, chains: 2 }
    }
}

/// Retained draws of one chain, on the original covariate scale.
#[derive(Debug, Clone)]
pub struct ChainDraws {
    pub mu: Vec<f64>,
    /// One vector per coefficient, parallel to `PosteriorDraws::coef_names`.
    pub beta: Vec<Vec<f64>>,
    /// Empty at household level.
    pub sigma_alpha: Vec<f64>,
    /// sigma_y at person level, sigma_t at household level.
    pub sigma_y: Vec<f64>,
    /// `alpha[h][s]` per observed household; empty at household level.
    pub alpha: Vec<Vec<f64>>,
}

/// Posterior draws with their provenance and convergence diagnostics.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub spec: ModelSpec,
    pub settings: McmcSettings,
    pub coef_names: Vec<String>,
    pub chains: Vec<ChainDraws>,
    /// Household ids of the alpha columns, in fit order.
    pub observed_households: Vec<crate::frame::HouseholdId>,
    pub diagnostics: FitDiagnostics,
}

impl PosteriorDraws {
    pub fn total_kept(&self) -> usize {
        self.chains.iter().map(|c| c.mu.len()).sum()
    }

    /// Concatenated draws of a scalar parameter across chains.
    pub fn concatenated(&self, f: impl Fn(&ChainDraws) -> &Vec<f64>) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total_kept());
        for c in &self.chains {
            out.extend_from_slice(f(c));
        }
        out
    }

    pub fn mu_draws(&self) -> Vec<f64> {
        self.concatenated(|c| &c.mu)
    }

    /// Iterate over retained draws across chains.
    pub fn draw_views(&self) -> impl Iterator<Item = DrawView<'_>> {
        self.chains
            .iter()
            .flat_map(|chain| (0..chain.mu.len()).map(move |idx| DrawView { chain, idx }))
    }

    /// Convert to the generator-calibration summary (mu, beta_*, sigma_*).
    pub fn to_summary(&self) -> Result<crate::popgen::PosteriorSummary, crate::popgen::PopgenError> {
        let mut map = std::collections::BTreeMap::new();
        map.insert("mu".to_string(), self.mu_draws());
        for (j, name) in self.coef_names.iter().enumerate() {
            map.insert(name.clone(), self.concatenated(|c| &c.beta[j]));
        }
        if self.spec.response_level == ResponseLevel::Person {
            map.insert("sigma_alpha".to_string(), self.concatenated(|c| &c.sigma_alpha));
            map.insert("sigma_y".to_string(), self.concatenated(|c| &c.sigma_y));
        } else {
            map.insert("sigma_t".to_string(), self.concatenated(|c| &c.sigma_y));
        }
        crate::popgen::PosteriorSummary::new(map)
    }
}

/// One retained draw.
#[derive(Debug, Clone, Copy)]
pub struct DrawView<'a> {
    chain: &'a ChainDraws,
    idx: usize,
}

impl DrawView<'_> {
    pub fn mu(&self) -> f64 {
        self.chain.mu[self.idx]
    }

    pub fn beta(&self, j: usize) -> f64 {
        self.chain.beta[j][self.idx]
    }

    pub fn n_coefs(&self) -> usize {
        self.chain.beta.len()
    }

    pub fn sigma_alpha(&self) -> f64 {
        self.chain.sigma_alpha[self.idx]
    }

    pub fn sigma_y(&self) -> f64 {
        self.chain.sigma_y[self.idx]
    }

    pub fn alpha(&self, column: usize) -> f64 {
        self.chain.alpha[column][self.idx]
    }

    /// Linear predictor mu + x'beta on the original covariate scale.
    pub fn linear_predictor(&self, covariates: &[f64]) -> f64 {
        let mut acc = self.mu();
        for (j, x) in covariates.iter().enumerate() {
            acc += self.beta(j) * x;
        }
        acc
    }
}

// ---------------------------------------------------------------------------
// conditional draws
// ---------------------------------------------------------------------------

/// Mean and standard deviation of the intercept conditional
/// `alpha_h | y, beta, sigmas` for a household with `n_h` observations
/// averaging `ybar`.
pub(crate) fn alpha_conditional(
    n_h: f64,
    ybar: f64,
    prior_mean: f64,
    sigma_y: f64,
    sigma_alpha: f64,
) -> (f64, f64) {
    let prec_y = if sigma_y > 0.0 { n_h / (sigma_y * sigma_y) } else { f64::INFINITY };
    let prec_a = if sigma_alpha > 0.0 { 1.0 / (sigma_alpha * sigma_alpha) } else { f64::INFINITY };
    if prec_y.is_infinite() {
        return (ybar, 0.0);
    }
    if prec_a.is_infinite() {
        return (prior_mean, 0.0);
    }
    let prec = prec_y + prec_a;
    ((prec_y * ybar + prec_a * prior_mean) / prec, (1.0 / prec).sqrt())
}

/// Draw `sigma^2 ~ InverseGamma(shape, rate)` and return sigma.
pub(crate) fn draw_inverse_gamma_sd(shape: f64, rate: f64, rng: &mut ChaCha8Rng) -> f64 {
    let gamma = Gamma::new(shape, 1.0 / rate).expect("valid gamma parameters");
    let g: f64 = gamma.sample(rng);
    (1.0 / g).sqrt()
}

/// One slice-sampling update (stepping out + shrinkage) of a positive
/// scalar with log-density `logf`, started at `s0` with initial width `w`.
pub(crate) fn slice_sample_positive(
    logf: impl Fn(f64) -> f64,
    s0: f64,
    w: f64,
    rng: &mut ChaCha8Rng,
) -> f64 {
    const FLOOR: f64 = 1e-12;
    let f0 = logf(s0);
    if !f0.is_finite() {
        return s0;
    }
    let level = f0 + rng.random::<f64>().max(f64::MIN_POSITIVE).ln();
    let mut lo = (s0 - w * rng.random::<f64>()).max(FLOOR);
    let mut hi = lo + w;
    for _ in 0..64 {
        if lo <= FLOOR || logf(lo) < level {
            break;
        }
        lo = (lo - w).max(FLOOR);
    }
    for _ in 0..64 {
        if logf(hi) < level {
            break;
        }
        hi += w;
    }
    for _ in 0..128 {
        let s = lo + rng.random::<f64>() * (hi - lo);
        if logf(s) >= level {
            return s;
        }
        if s < s0 {
            lo = s;
        } else {
            hi = s;
        }
    }
    s0
}

/// Draw from `Normal(A^{-1} b, A^{-1})` given the precision matrix A.
pub(crate) fn draw_mvn_precision(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<DVector<f64>, FitError> {
    let chol = Cholesky::new(a.clone())
        .ok_or_else(|| FitError::Numerical("coefficient precision not positive definite".into()))?;
    let mean = chol.solve(b);
    let z = DVector::from_iterator(b.len(), (0..b.len()).map(|_| {
        let v: f64 = StandardNormal.sample(rng);
        v
    }));
    let lt = chol.l().transpose();
    let noise = lt
        .solve_upper_triangular(&z)
        .ok_or_else(|| FitError::Numerical("triangular solve failed".into()))?;
    Ok(mean + noise)
}

// ---------------------------------------------------------------------------
// design matrix
// ---------------------------------------------------------------------------

struct Standardizer {
    names: Vec<String>,
    means: Vec<f64>,
    sds: Vec<f64>,
}

impl Standardizer {
    /// Centering and scaling use frame-wide moments; which columns are kept
    /// is decided on the households that actually enter the likelihood.
    /// A column that is (numerically) constant or a linear combination of
    /// the previously kept columns over the observed households carries no
    /// information: its coefficient would wander at prior scale and make
    /// imputation for households outside the observed support explode, so
    /// it is dropped from the fit. This happens whenever the sampled
    /// households span too few distinct sizes for the quadratic terms.
    fn from_data(data: &ModelData, spec: &ModelSpec) -> Standardizer {
        let raw_names = coef_names(spec);
        let frame_rows: Vec<Vec<f64>> = data
            .frame
            .iter()
            .map(|h| raw_covariates(spec, h.n_under50, h.n_group))
            .collect();
        let fit_rows: Vec<Vec<f64>> = data
            .observed
            .iter()
            .filter(|h| !(spec.heteroscedastic && h.n_under50 == 0))
            .map(|h| raw_covariates(spec, h.n_under50, h.n_group))
            .collect();
        let n_frame = frame_rows.len();
        let n_fit = fit_rows.len();
        let mut names = Vec::new();
        let mut means = Vec::new();
        let mut sds = Vec::new();
        let mut kept_basis: Vec<Vec<f64>> = Vec::new();
        for (j, name) in raw_names.iter().enumerate() {
            let frame_col: Vec<f64> = frame_rows.iter().map(|r| r[j]).collect();
            let m = frame_col.iter().sum::<f64>() / n_frame.max(1) as f64;
            let v = frame_col.iter().map(|x| (x - m) * (x - m)).sum::<f64>()
                / (n_frame.max(2) - 1) as f64;
            let sd = v.sqrt();
            if sd <= 1e-9 {
                continue;
            }
            // orthogonalize the standardized fit column against kept ones
            // (and the intercept, via centering on the fit rows)
            let col: Vec<f64> = fit_rows.iter().map(|r| (r[j] - m) / sd).collect();
            let fit_mean = col.iter().sum::<f64>() / n_fit.max(1) as f64;
            let mut resid: Vec<f64> = col.iter().map(|x| x - fit_mean).collect();
            for basis in &kept_basis {
                let dot: f64 = resid.iter().zip(basis).map(|(a, b)| a * b).sum();
                for (r, b) in resid.iter_mut().zip(basis) {
                    *r -= dot * b;
                }
            }
            let norm2: f64 = resid.iter().map(|r| r * r).sum();
            if norm2 / n_fit.max(1) as f64 <= 1e-8 {
                continue;
            }
            let norm = norm2.sqrt();
            kept_basis.push(resid.into_iter().map(|r| r / norm).collect());
            names.push(name.clone());
            means.push(m);
            sds.push(sd);
        }
        Standardizer { names, means, sds }
    }

    fn width(&self) -> usize {
        self.names.len() + 1
    }

    /// Standardized design row [1, (x - mean)/sd, ...] for kept columns.
    fn row(&self, spec: &ModelSpec, n_under50: u32, n_group: u32) -> Vec<f64> {
        let raw_names = coef_names(spec);
        let raw = raw_covariates(spec, n_under50, n_group);
        let mut out = Vec::with_capacity(self.width());
        out.push(1.0);
        for (name, mean, sd) in self.names.iter().zip(&self.means).zip(&self.sds).map(
            |((n, m), s)| (n, m, s),
        ) {
            let j = raw_names.iter().position(|r| r == name).expect("kept column");
            out.push((raw[j] - mean) / sd);
        }
        out
    }

    /// Back-transform standardized coefficients to the original scale,
    /// filling dropped columns with zero. Returns (mu, betas over the full
    /// coefficient list of the spec).
    fn original_scale(&self, spec: &ModelSpec, z: &DVector<f64>) -> (f64, Vec<f64>) {
        let raw_names = coef_names(spec);
        let mut mu = z[0];
        let mut betas = vec![0.0; raw_names.len()];
        for (k, name) in self.names.iter().enumerate() {
            let j = raw_names.iter().position(|r| r == name).expect("kept column");
            let b = z[k + 1] / self.sds[k];
            betas[j] = b;
            mu -= b * self.means[k];
        }
        (mu, betas)
    }
}

/// Raw covariate columns implied by the spec, in a fixed order.
pub fn coef_names(spec: &ModelSpec) -> Vec<String> {
    let mut names = Vec::new();
    if spec.include_household_size_terms {
        names.push("beta_hh_size".to_string());
        names.push("beta_hh_size_sq".to_string());
    }
    if spec.include_group_size_terms {
        names.push("beta_group_size".to_string());
        names.push("beta_group_size_sq".to_string());
    }
    names
}

fn raw_covariates(spec: &ModelSpec, n_under50: u32, n_group: u32) -> Vec<f64> {
    let mut out = Vec::new();
    if spec.include_household_size_terms {
        let s = n_under50 as f64;
        out.push(s);
        out.push(s * s);
    }
    if spec.include_group_size_terms {
        let g = n_group as f64;
        out.push(g);
        out.push(g * g);
    }
    out
}

// ---------------------------------------------------------------------------
// the fit
// ---------------------------------------------------------------------------

/// Fit the model by Gibbs sampling and report convergence diagnostics.
pub fn mcmc_fit(
    data: &ModelData,
    spec: &ModelSpec,
    settings: &McmcSettings,
    rng: &mut ChaCha8Rng,
) -> Result<PosteriorDraws, FitError> {
    if settings.keep == 0 || settings.chains == 0 || settings.thin == 0 {
        return Err(FitError::InputError("keep, thin, and chains must be positive".into()));
    }
    if data.level != spec.response_level {
        return Err(FitError::InputError("data level does not match model spec".into()));
    }
    match spec.response_level {
        ResponseLevel::Person => {
            if data.observed.len() < 2 {
                return Err(FitError::InsufficientData(
                    "need at least 2 sampled households with observations".into(),
                ));
            }
            if data.observed.iter().any(|h| h.ys.is_empty()) {
                return Err(FitError::InsufficientData(
                    "observed household without observations".into(),
                ));
            }
        }
        ResponseLevel::Household => {
            let usable = data
                .observed
                .iter()
                .filter(|h| !(spec.heteroscedastic && h.n_under50 == 0))
                .count();
            if usable < 2 {
                return Err(FitError::InsufficientData(
                    "need at least 2 households with stochastic responses".into(),
                ));
            }
        }
    }

    let standardizer = Standardizer::from_data(data, spec);
    let mut chains = Vec::with_capacity(settings.chains as usize);
    for _ in 0..settings.chains {
        let chain_seed = rng.next_u64();
        let mut chain_rng = seed::rng_from(chain_seed);
        let chain = match spec.response_level {
            ResponseLevel::Person => {
                run_person_chain(data, spec, settings, &standardizer, &mut chain_rng)?
            }
            ResponseLevel::Household => {
                run_household_chain(data, spec, settings, &standardizer, &mut chain_rng)?
            }
        };
        chains.push(chain);
    }

    let coef_names = coef_names(spec);
    let mut monitored: Vec<(String, Vec<&[f64]>)> = Vec::new();
    monitored.push(("mu".to_string(), chains.iter().map(|c| c.mu.as_slice()).collect()));
    for (j, name) in coef_names.iter().enumerate() {
        monitored.push((name.clone(), chains.iter().map(|c| c.beta[j].as_slice()).collect()));
    }
    if spec.response_level == ResponseLevel::Person {
        if spec.fixed_sigma_alpha.is_none() {
            monitored.push((
                "sigma_alpha".to_string(),
                chains.iter().map(|c| c.sigma_alpha.as_slice()).collect(),
            ));
        }
        if spec.fixed_sigma_y.is_none() {
            monitored
                .push(("sigma_y".to_string(), chains.iter().map(|c| c.sigma_y.as_slice()).collect()));
        }
    } else {
        monitored.push(("sigma_t".to_string(), chains.iter().map(|c| c.sigma_y.as_slice()).collect()));
    }
    let mut rhat = std::collections::BTreeMap::new();
    let mut ess = std::collections::BTreeMap::new();
    for (name, views) in monitored {
        rhat.insert(name.clone(), diagnostics::split_rhat(&views));
        ess.insert(name, diagnostics::ess(&views));
    }
    let converged = rhat.values().all(|r| r.is_finite() && *r < 1.05);

    Ok(PosteriorDraws {
        spec: spec.clone(),
        settings: *settings,
        coef_names,
        chains,
        observed_households: data.observed.iter().map(|h| h.household_id).collect(),
        diagnostics: FitDiagnostics { rhat, ess, converged },
    })
}

fn response_sd(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 1.0;
    }
    let m = values.iter().sum::<f64>() / values.len() as f64;
    let v = values.iter().map(|y| (y - m) * (y - m)).sum::<f64>() / (values.len() - 1) as f64;
    let sd = v.sqrt();
    if sd > 0.0 {
        sd
    } else {
        1.0
    }
}

fn coefficient_prior_precision(spec: &ModelSpec, sd_y: f64) -> f64 {
    if spec.priors.flat_coefficients {
        0.0
    } else {
        let tau = spec.priors.coef_sd_scale * sd_y;
        1.0 / (tau * tau)
    }
}

fn run_person_chain(
    data: &ModelData,
    spec: &ModelSpec,
    settings: &McmcSettings,
    standardizer: &Standardizer,
    rng: &mut ChaCha8Rng,
) -> Result<ChainDraws, FitError> {
    let households = &data.observed;
    let n_households = households.len();
    let p = standardizer.width();

    let rows: Vec<Vec<f64>> = households
        .iter()
        .map(|h| standardizer.row(spec, h.n_under50, h.n_group))
        .collect();
    let ybars: Vec<f64> =
        households.iter().map(|h| h.ys.iter().sum::<f64>() / h.ys.len() as f64).collect();
    let counts: Vec<f64> = households.iter().map(|h| h.ys.len() as f64).collect();
    let n_obs: f64 = counts.iter().sum();
    let all_y: Vec<f64> = households.iter().flat_map(|h| h.ys.iter().copied()).collect();
    let sd_y = response_sd(&all_y);
    let lambda0 = coefficient_prior_precision(spec, sd_y);
    let (a0, b0) = (spec.priors.sigma_shape, spec.priors.sigma_rate);

    // initial state
    let mut alpha: Vec<f64> = ybars.clone();
    let mut z = DVector::zeros(p);
    z[0] = all_y.iter().sum::<f64>() / all_y.len() as f64;
    let mut sigma_alpha = spec.fixed_sigma_alpha.unwrap_or(sd_y.max(1e-3));
    let mut sigma_y = spec.fixed_sigma_y.unwrap_or(sd_y.max(1e-3));

    let total_iters = settings.burn_in as usize + (settings.keep * settings.thin) as usize;
    let keep = settings.keep as usize;
    let mut out = ChainDraws {
        mu: Vec::with_capacity(keep),
        beta: vec![Vec::with_capacity(keep); coef_names(spec).len()],
        sigma_alpha: Vec::with_capacity(keep),
        sigma_y: Vec::with_capacity(keep),
        alpha: vec![Vec::with_capacity(keep); n_households],
    };

    for iter in 0..total_iters {
        // (mu, beta) | y, sigmas, with the intercepts integrated out:
        // ybar_h | beta ~ Normal(x_h'beta, sqrt(sigma_alpha^2 + sigma_y^2/n_h)).
        // Blocking (beta, alpha) this way removes the heavy beta-alpha
        // autocorrelation of the one-at-a-time scan, which matters when
        // most households carry only one or two observations.
        let mut a = DMatrix::zeros(p, p);
        let mut b = DVector::zeros(p);
        for h in 0..n_households {
            let v = (sigma_alpha * sigma_alpha + sigma_y * sigma_y / counts[h]).max(1e-300);
            let w = 1.0 / v;
            for j in 0..p {
                b[j] += w * rows[h][j] * ybars[h];
                for k in 0..p {
                    a[(j, k)] += w * rows[h][j] * rows[h][k];
                }
            }
        }
        for j in 0..p {
            a[(j, j)] += lambda0;
        }
        z = draw_mvn_precision(&a, &b, rng)?;

        // alpha_h | beta, y, sigmas
        for h in 0..n_households {
            let prior_mean = rows[h].iter().zip(z.iter()).map(|(a, b)| a * b).sum::<f64>();
            let (mean, sd) = alpha_conditional(counts[h], ybars[h], prior_mean, sigma_y, sigma_alpha);
            let eps: f64 = StandardNormal.sample(rng);
            alpha[h] = mean + sd * eps;
        }

        // sigma_alpha | rest
        if spec.fixed_sigma_alpha.is_none() {
            let ss: f64 = (0..n_households)
                .map(|h| {
                    let m = rows[h].iter().zip(z.iter()).map(|(a, b)| a * b).sum::<f64>();
                    (alpha[h] - m) * (alpha[h] - m)
                })
                .sum();
            sigma_alpha =
                draw_inverse_gamma_sd(a0 + n_households as f64 / 2.0, b0 + ss / 2.0, rng);
        }

        // sigma_y | rest
        if spec.fixed_sigma_y.is_none() {
            let ss: f64 = households
                .iter()
                .enumerate()
                .map(|(h, hh)| hh.ys.iter().map(|y| (y - alpha[h]) * (y - alpha[h])).sum::<f64>())
                .sum();
            sigma_y = draw_inverse_gamma_sd(a0 + n_obs / 2.0, b0 + ss / 2.0, rng);
        }

        // Interweaving move for sigma_alpha: with mostly singleton
        // households the centered chain random-walks along the
        // sigma_alpha/sigma_y ridge. Re-express the intercepts as
        // alpha_h = x_h'beta + sigma_alpha*eta_h, draw sigma_alpha from its
        // conditional in that parameterization (the etas are the fixed
        // quantities there), and map the intercepts back.
        if spec.fixed_sigma_alpha.is_none() && sigma_alpha > 0.0 && sigma_y > 0.0 {
            let prior_means: Vec<f64> = (0..n_households)
                .map(|h| rows[h].iter().zip(z.iter()).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            let eta: Vec<f64> =
                (0..n_households).map(|h| (alpha[h] - prior_means[h]) / sigma_alpha).collect();
            // likelihood in s: residual y - x'beta regressed on eta
            let mut lin = 0.0; // sum_h n_h * eta_h * (ybar_h - x_h'beta)
            let mut quad = 0.0; // sum_h n_h * eta_h^2
            for h in 0..n_households {
                lin += counts[h] * eta[h] * (ybars[h] - prior_means[h]);
                quad += counts[h] * eta[h] * eta[h];
            }
            if quad.is_finite() && quad > 0.0 {
                let sy2 = sigma_y * sigma_y;
                let logf = |s: f64| {
                    -(quad * s * s - 2.0 * lin * s) / (2.0 * sy2)
                        - (2.0 * a0 + 1.0) * s.ln()
                        - b0 / (s * s)
                };
                let width = (sigma_alpha * 0.5).max(1e-3);
                let s = slice_sample_positive(logf, sigma_alpha, width, rng);
                if s.is_finite() && s > 0.0 {
                    for h in 0..n_households {
                        alpha[h] = prior_means[h] + s * eta[h];
                    }
                    sigma_alpha = s;
                }
            }
        }

        if iter >= settings.burn_in as usize
            && (iter - settings.burn_in as usize).is_multiple_of(settings.thin as usize)
        {
            let (mu, betas) = standardizer.original_scale(spec, &z);
            out.mu.push(mu);
            for (j, b) in betas.iter().enumerate() {
                out.beta[j].push(*b);
            }
            out.sigma_alpha.push(sigma_alpha);
            out.sigma_y.push(sigma_y);
            for (column, value) in out.alpha.iter_mut().zip(&alpha) {
                column.push(*value);
            }
        }
    }

    Ok(out)
}

fn run_household_chain(
    data: &ModelData,
    spec: &ModelSpec,
    settings: &McmcSettings,
    standardizer: &Standardizer,
    rng: &mut ChaCha8Rng,
) -> Result<ChainDraws, FitError> {
    // usable households: positive scale under the heteroscedastic model
    let usable: Vec<&super::ObservedHousehold> = data
        .observed
        .iter()
        .filter(|h| !(spec.heteroscedastic && h.n_under50 == 0))
        .collect();
    let n = usable.len();
    let p = standardizer.width();

    let mut responses = Vec::with_capacity(n);
    for h in &usable {
        let t = h.ys[0];
        let r = if spec.log_response {
            if t <= 0.0 {
                return Err(FitError::InputError(format!(
                    "log response requires positive totals (household {})",
                    h.household_id
                )));
            }
            t.ln()
        } else {
            t
        };
        responses.push(r);
    }
    let scales: Vec<f64> = usable
        .iter()
        .map(|h| if spec.heteroscedastic { h.n_under50 as f64 } else { 1.0 })
        .collect();

    let rows: Vec<Vec<f64>> = usable
        .iter()
        .map(|h| standardizer.row(spec, h.n_under50, h.n_group))
        .collect();
    // weighted cross-products with weights 1/c_h^2
    let mut xtwx = DMatrix::zeros(p, p);
    let mut xtwr = DVector::zeros(p);
    for i in 0..n {
        let w = 1.0 / (scales[i] * scales[i]);
        for j in 0..p {
            xtwr[j] += rows[i][j] * responses[i] * w;
            for k in 0..p {
                xtwx[(j, k)] += rows[i][j] * rows[i][k] * w;
            }
        }
    }

    let sd_r = response_sd(&responses);
    let lambda0 = coefficient_prior_precision(spec, sd_r);
    let (a0, b0) = (spec.priors.sigma_shape, spec.priors.sigma_rate);

    let mut z = DVector::zeros(p);
    z[0] = responses.iter().sum::<f64>() / n as f64;
    let mut sigma_t = spec.fixed_sigma_y.unwrap_or(sd_r.max(1e-3));

    let total_iters = settings.burn_in as usize + (settings.keep * settings.thin) as usize;
    let keep = settings.keep as usize;
    let mut out = ChainDraws {
        mu: Vec::with_capacity(keep),
        beta: vec![Vec::with_capacity(keep); coef_names(spec).len()],
        sigma_alpha: Vec::new(),
        sigma_y: Vec::with_capacity(keep),
        alpha: Vec::new(),
    };

    for iter in 0..total_iters {
        // (mu, beta) | sigma_t
        let prec = 1.0 / (sigma_t * sigma_t).max(1e-300);
        let mut a = &xtwx * prec;
        for j in 0..p {
            a[(j, j)] += lambda0;
        }
        let b = &xtwr * prec;
        z = draw_mvn_precision(&a, &b, rng)?;

        // sigma_t | beta
        if spec.fixed_sigma_y.is_none() {
            let ss: f64 = (0..n)
                .map(|i| {
                    let m = rows[i].iter().zip(z.iter()).map(|(a, b)| a * b).sum::<f64>();
                    let e = (responses[i] - m) / scales[i];
                    e * e
                })
                .sum();
            sigma_t = draw_inverse_gamma_sd(a0 + n as f64 / 2.0, b0 + ss / 2.0, rng);
        }

        if iter >= settings.burn_in as usize
            && (iter - settings.burn_in as usize).is_multiple_of(settings.thin as usize)
        {
            let (mu, betas) = standardizer.original_scale(spec, &z);
            out.mu.push(mu);
            for (j, b) in betas.iter().enumerate() {
                out.beta[j].push(*b);
            }
            out.sigma_y.push(sigma_t);
        }
    }

    Ok(out)
}
