//! Design-based estimation: Hájek ratio mean, with-replacement linearized
//! variance, the SRS reference variance, and design effects.
//!
//! Variances deliberately carry no finite population correction: first-stage
//! units are treated as drawn with replacement, which is the convention the
//! design effects are defined under. The linearized variance aggregates
//! weighted residuals to PSU totals, so clustering shows up through the
//! between-PSU spread.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::sampler::SchemeId;
use crate::weights::WeightedSample;

#[derive(Debug, Error)]
pub enum EstError {
    #[error("empty sample")]
    EmptySample,
    #[error("variance needs at least {needed} {unit}, got {got}")]
    DegreesOfFreedom { needed: usize, got: usize, unit: &'static str },
    #[error("reference variance is zero; design effect undefined")]
    DegenerateReference,
    #[error("weights must be positive and finite")]
    BadWeights,
}

/// Which estimation paradigm produced a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum InferenceKind {
    Design,
    Model,
}

impl InferenceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            InferenceKind::Design => "design",
            InferenceKind::Model => "model",
        }
    }

    pub fn from_name(s: &str) -> Option<InferenceKind> {
        match s {
            "design" => Some(InferenceKind::Design),
            "model" => Some(InferenceKind::Model),
            _ => None,
        }
    }
}

/// Row-level flags carried through the results CSV.
pub mod flags {
    /// Every eligible person in the sampled households was taken.
    pub const CENSUS: &str = "census";
    /// The stage-I request covered the whole frame.
    pub const WHOLE_FRAME: &str = "whole_frame";
    /// Reference variance was zero; deff undefined.
    pub const VSRS_ZERO: &str = "vsrs_zero";
    /// MCMC did not converge (split-Rhat above threshold).
    pub const RHAT_HIGH: &str = "rhat_high";
    /// Household-survey rows compare raw variances; no deff by design.
    pub const RAW_VARIANCE: &str = "raw_variance";

    /// Flags that disqualify a row from summary statistics.
    pub fn is_fatal(flag: &str) -> bool {
        flag == VSRS_ZERO || flag.starts_with("error:")
    }
}

/// One estimate with its provenance, as written to the results CSV.
#[derive(Debug, Clone)]
pub struct EstimateRecord {
    pub replication_id: u32,
    pub scheme: SchemeId,
    pub module_name: String,
    pub inference: InferenceKind,
    /// Realized sample size (distinct observed units).
    pub n: u32,
    pub estimate: f64,
    pub variance: f64,
    pub deff: Option<f64>,
    pub n_eff: Option<f64>,
    pub flags: Vec<String>,
}

impl EstimateRecord {
    pub fn is_fatal(&self) -> bool {
        self.flags.iter().any(|f| flags::is_fatal(f))
    }
}

fn check_weights(sample: &WeightedSample) -> Result<(), EstError> {
    if sample.rows.is_empty() {
        return Err(EstError::EmptySample);
    }
    if sample.rows.iter().any(|r| !r.w.is_finite() || r.w <= 0.0) {
        return Err(EstError::BadWeights);
    }
    Ok(())
}

/// Hájek ratio estimator of the mean: `sum(w*y) / sum(w)`.
pub fn hajek_mean(sample: &WeightedSample) -> Result<f64, EstError> {
    check_weights(sample)?;
    let wsum: f64 = sample.rows.iter().map(|r| r.w).sum();
    let wysum: f64 = sample.rows.iter().map(|r| r.w * r.y).sum();
    Ok(wysum / wsum)
}

/// With-replacement linearized variance of the Hájek mean.
///
/// Residuals `e_i = y_i - yhat` are aggregated to PSU totals
/// `u_h = sum_{i in h} w_i e_i`; with m PSUs the estimate is
/// `m/(m-1) * sum_h (u_h - ubar)^2 / (sum_i w_i)^2`. `ubar` is analytically
/// zero for the Hájek mean but retained for numerical symmetry.
pub fn wr_linearized_variance(sample: &WeightedSample) -> Result<f64, EstError> {
    check_weights(sample)?;
    let yhat = hajek_mean(sample)?;
    let mut psu_totals: BTreeMap<u64, f64> = BTreeMap::new();
    for r in &sample.rows {
        *psu_totals.entry(r.psu_id).or_insert(0.0) += r.w * (r.y - yhat);
    }
    let m = psu_totals.len();
    if m < 2 {
        return Err(EstError::DegreesOfFreedom { needed: 2, got: m, unit: "PSUs" });
    }
    let ubar: f64 = psu_totals.values().sum::<f64>() / m as f64;
    let ss: f64 = psu_totals.values().map(|u| (u - ubar) * (u - ubar)).sum();
    let wsum: f64 = sample.rows.iter().map(|r| r.w).sum();
    Ok((m as f64 / (m as f64 - 1.0)) * ss / (wsum * wsum))
}

/// Reference variance under SRS-with-replacement at the same n: `s2/n` with
/// the weighted population-variance estimate
/// `s2 = n/(n-1) * sum(w*(y-yhat)^2) / sum(w)`.
pub fn srs_wr_reference_variance(sample: &WeightedSample) -> Result<f64, EstError> {
    check_weights(sample)?;
    let n = sample.rows.len();
    if n < 2 {
        return Err(EstError::DegreesOfFreedom { needed: 2, got: n, unit: "observations" });
    }
    let yhat = hajek_mean(sample)?;
    let wsum: f64 = sample.rows.iter().map(|r| r.w).sum();
    let wss: f64 = sample.rows.iter().map(|r| r.w * (r.y - yhat) * (r.y - yhat)).sum();
    let s2 = (n as f64 / (n as f64 - 1.0)) * wss / wsum;
    Ok(s2 / n as f64)
}

/// Design effect and effective sample size from the two variances.
pub fn design_effect(v_design: f64, v_srs: f64, n: u32) -> Result<(f64, f64), EstError> {
    if v_srs.is_nan() || v_srs <= 0.0 {
        return Err(EstError::DegenerateReference);
    }
    let deff = v_design / v_srs;
    let n_eff = if deff > 0.0 { n as f64 / deff } else { f64::INFINITY };
    Ok((deff, n_eff))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::{HouseholdId, PersonId};
    use crate::weights::{WeightedRow, WeightedSample};
    use approx::assert_relative_eq;

    fn sample(rows: Vec<(u64, f64, f64)>) -> WeightedSample {
        WeightedSample {
            scheme: SchemeId::SrsSystematic,
            module_name: "test".into(),
            rows: rows
                .into_iter()
                .enumerate()
                .map(|(i, (psu, y, w))| WeightedRow {
                    person_id: Some(PersonId(i as u32 + 1)),
                    household_id: HouseholdId(psu as u32),
                    psu_id: psu,
                    y,
                    w,
                })
                .collect(),
        }
    }

    #[test]
    fn hajek_equal_weights_is_mean() {
        let s = sample(vec![(1, 1.0, 2.0), (2, 2.0, 2.0), (3, 6.0, 2.0)]);
        assert_relative_eq!(hajek_mean(&s).unwrap(), 3.0);
    }

    #[test]
    fn hajek_single_row_returns_y() {
        let s = sample(vec![(1, 4.5, 7.0)]);
        assert_relative_eq!(hajek_mean(&s).unwrap(), 4.5);
    }

    #[test]
    fn hajek_weighted_hand_case() {
        let s = sample(vec![(1, 0.0, 1.0), (2, 3.0, 2.0)]);
        assert_relative_eq!(hajek_mean(&s).unwrap(), 2.0);
    }

    #[test]
    fn hajek_empty_errors() {
        let s = sample(vec![]);
        assert!(matches!(hajek_mean(&s), Err(EstError::EmptySample)));
    }

    #[test]
    fn hajek_scale_invariant_and_bounded() {
        let s = sample(vec![(1, 1.0, 0.5), (2, 5.0, 1.5), (3, 2.0, 2.5)]);
        let base = hajek_mean(&s).unwrap();
        let mut scaled = s.clone();
        for r in scaled.rows.iter_mut() {
            r.w *= 17.0;
        }
        assert_relative_eq!(hajek_mean(&scaled).unwrap(), base, epsilon = 1e-12);
        assert!((1.0..=5.0).contains(&base));
    }

    #[test]
    fn wr_variance_constant_y_is_zero() {
        let s = sample(vec![(1, 2.0, 1.0), (2, 2.0, 3.0), (3, 2.0, 0.5)]);
        assert_relative_eq!(wr_linearized_variance(&s).unwrap(), 0.0);
    }

    #[test]
    fn wr_variance_single_psu_errors() {
        let s = sample(vec![(1, 2.0, 1.0), (1, 3.0, 1.0)]);
        assert!(matches!(
            wr_linearized_variance(&s),
            Err(EstError::DegreesOfFreedom { .. })
        ));
    }

    #[test]
    fn wr_variance_equal_weight_psu_rows_match_textbook() {
        // one row per PSU and equal weights: reduces to s^2/n of the y's
        let ys = [1.0, 2.0, 4.0, 7.0];
        let s = sample(ys.iter().enumerate().map(|(i, &y)| (i as u64, y, 3.0)).collect());
        let v = wr_linearized_variance(&s).unwrap();
        let mean = ys.iter().sum::<f64>() / 4.0;
        let s2 = ys.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / 3.0;
        assert_relative_eq!(v, s2 / 4.0, epsilon = 1e-12);
        // this is also exactly the SRS reference in that case
        assert_relative_eq!(srs_wr_reference_variance(&s).unwrap(), v, epsilon = 1e-12);
    }

    #[test]
    fn srs_reference_constant_y_zero_and_df_error() {
        let s = sample(vec![(1, 5.0, 1.0), (2, 5.0, 2.0)]);
        assert_relative_eq!(srs_wr_reference_variance(&s).unwrap(), 0.0);
        let single = sample(vec![(1, 5.0, 1.0)]);
        assert!(matches!(
            srs_wr_reference_variance(&single),
            Err(EstError::DegreesOfFreedom { .. })
        ));
    }

    #[test]
    fn variances_scale_invariant_and_translation_equivariant() {
        let s = sample(vec![(1, 1.0, 0.5), (1, 3.0, 1.0), (2, 5.0, 1.5), (3, 2.0, 2.5)]);
        let v1 = wr_linearized_variance(&s).unwrap();
        let r1 = srs_wr_reference_variance(&s).unwrap();
        let mut t = s.clone();
        for row in t.rows.iter_mut() {
            row.w *= 0.125;
            row.y += 100.0;
        }
        assert_relative_eq!(wr_linearized_variance(&t).unwrap(), v1, epsilon = 1e-9);
        assert_relative_eq!(srs_wr_reference_variance(&t).unwrap(), r1, epsilon = 1e-9);
    }

    #[test]
    fn design_effect_hand_cases() {
        let (deff, n_eff) = design_effect(0.5, 0.5, 80).unwrap();
        assert_relative_eq!(deff, 1.0);
        assert_relative_eq!(n_eff, 80.0);
        let (deff, n_eff) = design_effect(1.0, 0.5, 100).unwrap();
        assert_relative_eq!(deff, 2.0);
        assert_relative_eq!(n_eff, 50.0);
        assert!(matches!(design_effect(1.0, 0.0, 10), Err(EstError::DegenerateReference)));
    }

    /// Variance-estimator oracle on a small fixed population: the mean of
    /// the with-replacement variance estimate over replications should be
    /// close to the empirical variance of the Hájek estimates. The stage-I
    /// sampling fraction must stay small because the estimator carries no
    /// finite population correction: it overestimates by roughly 1/(1-f)
    /// under without-replacement stage I. The full sweep at 1e4
    /// replications runs in the acceptance suite; this is a fast smoke
    /// version.
    #[test]
    fn wr_variance_tracks_empirical_variance() {
        use crate::frame::testutil::frame_from_ages;
        use crate::frame::{ModuleLevel, PopulationFrame, SurveyModuleSpec, TargetGroup};
        use crate::sampler;
        use crate::seed;
        use crate::weights;

        // households of 3-4 adults: with n_target = 4 the interval stays
        // in [1.5, 2], so every sampled household contributes at least one
        // person and the PSU count is always 2
        let specs: Vec<(u32, Vec<u32>)> =
            (1..=30).map(|i| (i, vec![300u32; 3 + (i as usize % 2)])).collect();
        let borrowed: Vec<(u32, &[u32])> =
            specs.iter().map(|(h, a)| (*h, a.as_slice())).collect();
        let frame = frame_from_ages(&borrowed);
        let (households, mut persons) = frame.into_parts();
        let mut rng = seed::rng_from(42);
        for p in persons.iter_mut() {
            use rand::Rng;
            let v: f64 = rng.random::<f64>() + f64::from(p.household_id.0 % 5) * 0.3;
            p.outcomes.insert("y".into(), v);
        }
        let frame = PopulationFrame::from_parts(households, persons);
        let md = SurveyModuleSpec::new("t", TargetGroup::Men15To49y, 4, "y", ModuleLevel::Person)
            .unwrap();
        let n_i = 2u32;
        let mut table_rng = seed::rng_from(43);
        let table = weights::srs_scheme_inclusion_table(
            &frame,
            &md,
            n_i,
            weights::SrsSchemeKind::Systematic,
            2000,
            &mut table_rng,
        )
        .unwrap();

        let reps = 4000;
        let mut estimates = Vec::with_capacity(reps);
        let mut variances = Vec::with_capacity(reps);
        let mut rng = seed::rng_from(44);
        for _ in 0..reps {
            let s1 = sampler::srs_households(&frame, n_i, &mut rng).unwrap();
            let s2 = sampler::systematic_within(&frame, &s1, &md, &mut rng).unwrap();
            let ws = weights::srs_scheme_person_weights(
                &frame,
                &md,
                SchemeId::SrsSystematic,
                &s2,
                &table,
            )
            .unwrap();
            estimates.push(hajek_mean(&ws).unwrap());
            variances.push(wr_linearized_variance(&ws).unwrap());
        }
        let emp = crate::stats::sample_variance(&estimates);
        let avg = crate::stats::mean(&variances);
        assert!(
            (avg - emp).abs() / emp < 0.25,
            "mean estimated variance {avg} vs empirical {emp}"
        );
    }
}
