//! Aggregation of replication results into per-cell summaries.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::design_est::{EstimateRecord, InferenceKind};
use crate::sampler::SchemeId;
use crate::stats;

use super::HarnessError;

/// One summary row per scheme x module x paradigm.
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub scheme: SchemeId,
    pub module_name: String,
    pub inference: InferenceKind,
    /// Rows that entered the statistics.
    pub rows: u32,
    /// Rows excluded for fatal flags (degenerate deff, failed fits).
    pub flagged: u32,
    pub median_deff: Option<f64>,
    pub iqr_deff: Option<f64>,
    pub median_n: f64,
    pub iqr_n: f64,
    pub median_n_eff: Option<f64>,
    pub iqr_n_eff: Option<f64>,
    pub mean_estimate: f64,
    /// Mean(estimate - true mean), when true means are available.
    pub bias: Option<f64>,
    pub empirical_variance: f64,
    pub mean_estimated_variance: f64,
}

/// Summarize results per scheme x module x paradigm. Rows carrying fatal
/// flags are excluded from the statistics and counted in `flagged`.
pub fn summarize_results(
    records: &[EstimateRecord],
    truth: Option<&BTreeMap<(u32, String), f64>>,
) -> Result<Vec<SummaryRow>, HarnessError> {
    if records.is_empty() {
        return Err(HarnessError::Summary("no result rows".into()));
    }
    let mut groups: BTreeMap<(&str, &str, InferenceKind), Vec<&EstimateRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.scheme.as_str(), r.module_name.as_str(), r.inference))
            .or_default()
            .push(r);
    }

    let mut out = Vec::new();
    for ((_, module, inference), rows) in groups {
        let (clean, fatal): (Vec<&&EstimateRecord>, Vec<&&EstimateRecord>) =
            rows.iter().partition(|r| !r.is_fatal());
        let flagged = fatal.len() as u32;
        if clean.is_empty() {
            continue;
        }
        let scheme = clean[0].scheme;

        let ns: Vec<f64> = clean.iter().map(|r| r.n as f64).collect();
        let estimates: Vec<f64> = clean.iter().map(|r| r.estimate).collect();
        let variances: Vec<f64> = clean.iter().map(|r| r.variance).collect();
        let deffs: Vec<f64> = clean.iter().filter_map(|r| r.deff).collect();
        let n_effs: Vec<f64> = clean.iter().filter_map(|r| r.n_eff).collect();

        let bias = truth.and_then(|t| {
            let diffs: Vec<f64> = clean
                .iter()
                .filter_map(|r| {
                    t.get(&(r.replication_id, r.module_name.clone()))
                        .map(|tm| r.estimate - tm)
                })
                .collect();
            if diffs.len() == clean.len() {
                Some(stats::mean(&diffs))
            } else {
                None
            }
        });

        out.push(SummaryRow {
            scheme,
            module_name: module.to_string(),
            inference,
            rows: clean.len() as u32,
            flagged,
            median_deff: (!deffs.is_empty()).then(|| stats::median(&deffs)),
            iqr_deff: (!deffs.is_empty()).then(|| stats::iqr(&deffs)),
            median_n: stats::median(&ns),
            iqr_n: stats::iqr(&ns),
            median_n_eff: (!n_effs.is_empty()).then(|| stats::median(&n_effs)),
            iqr_n_eff: (!n_effs.is_empty()).then(|| stats::iqr(&n_effs)),
            mean_estimate: stats::mean(&estimates),
            bias,
            empirical_variance: if estimates.len() > 1 {
                stats::sample_variance(&estimates)
            } else {
                0.0
            },
            mean_estimated_variance: stats::mean(&variances),
        });
    }
    if out.is_empty() {
        return Err(HarnessError::Summary("all result rows carry fatal flags".into()));
    }
    Ok(out)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn summary_header() -> &'static str {
    "scheme,module,inference,rows,flagged,median_deff,iqr_deff,median_n,iqr_n,median_n_eff,iqr_n_eff,mean_estimate,bias,empirical_variance,mean_estimated_variance\n"
}

pub fn summary_to_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(summary_header());
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.scheme.as_str(),
            r.module_name,
            r.inference.as_str(),
            r.rows,
            r.flagged,
            opt(r.median_deff),
            opt(r.iqr_deff),
            r.median_n,
            r.iqr_n,
            opt(r.median_n_eff),
            opt(r.iqr_n_eff),
            r.mean_estimate,
            opt(r.bias),
            r.empirical_variance,
            r.mean_estimated_variance
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(rep: u32, scheme: SchemeId, deff: Option<f64>, flags: Vec<String>) -> EstimateRecord {
        EstimateRecord {
            replication_id: rep,
            scheme,
            module_name: "m".into(),
            inference: InferenceKind::Design,
            n: 50,
            estimate: 2.0 + rep as f64 * 0.1,
            variance: 0.01,
            deff,
            n_eff: deff.map(|d| 50.0 / d),
            flags,
        }
    }

    #[test]
    fn single_row_summary_echoes_values() {
        let records = vec![record(1, SchemeId::SrsSystematic, Some(1.2), vec![])];
        let rows = summarize_results(&records, None).unwrap();
        assert_eq!(rows.len(), 1);
        let r = &rows[0];
        assert_eq!(r.rows, 1);
        assert_eq!(r.median_deff, Some(1.2));
        assert_eq!(r.iqr_deff, Some(0.0));
        assert_eq!(r.median_n, 50.0);
        assert_eq!(r.empirical_variance, 0.0);
    }

    #[test]
    fn identical_groups_summarize_identically() {
        let mut records = Vec::new();
        for rep in 1..=5 {
            records.push(record(rep, SchemeId::SrsSystematic, Some(1.1), vec![]));
            records.push(record(rep, SchemeId::SrsStratified, Some(1.1), vec![]));
        }
        let rows = summarize_results(&records, None).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].median_deff, rows[1].median_deff);
        assert_eq!(rows[0].mean_estimate, rows[1].mean_estimate);
    }

    #[test]
    fn fatal_flags_are_excluded_and_counted() {
        let records = vec![
            record(1, SchemeId::SrsSystematic, Some(1.0), vec![]),
            record(2, SchemeId::SrsSystematic, None, vec!["vsrs_zero".into()]),
            record(3, SchemeId::SrsSystematic, Some(2.0), vec!["census".into()]),
        ];
        let rows = summarize_results(&records, None).unwrap();
        assert_eq!(rows[0].rows, 2, "census is not fatal, vsrs_zero is");
        assert_eq!(rows[0].flagged, 1);
        assert_eq!(rows[0].median_deff, Some(1.5));
    }

    #[test]
    fn all_fatal_is_an_error() {
        let records = vec![record(1, SchemeId::SrsSystematic, None, vec!["vsrs_zero".into()])];
        assert!(summarize_results(&records, None).is_err());
    }

    #[test]
    fn bias_uses_true_means() {
        let records = vec![
            record(1, SchemeId::SrsSystematic, Some(1.0), vec![]),
            record(2, SchemeId::SrsSystematic, Some(1.0), vec![]),
        ];
        let mut truth = BTreeMap::new();
        truth.insert((1u32, "m".to_string()), 2.0);
        truth.insert((2u32, "m".to_string()), 2.0);
        let rows = summarize_results(&records, Some(&truth)).unwrap();
        // estimates are 2.1 and 2.2, so bias = 0.15
        approx::assert_relative_eq!(rows[0].bias.unwrap(), 0.15, epsilon = 1e-12);
    }
}
