//! Small numeric helpers shared across the estimators and the harness.

/// Arithmetic mean; NaN on empty input.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (n - 1 denominator); NaN when n < 2.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

/// Quantile by linear interpolation between order statistics on a sorted
/// slice (the convention used by most statistical software for `type = 7`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    assert!((0.0..=1.0).contains(&p), "quantile level out of [0,1]");
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Quantile of an unsorted slice; copies and sorts.
pub fn quantile(xs: &[f64], p: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("NaN in quantile input"));
    quantile_sorted(&v, p)
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

/// Interquartile range Q75 - Q25.
pub fn iqr(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("NaN in iqr input"));
    quantile_sorted(&v, 0.75) - quantile_sorted(&v, 0.25)
}

/// Binomial coefficient as f64, saturating at `cap`. Used to decide whether
/// exhaustive enumeration of stage-I subsets is feasible.
pub fn binomial_at_most(n: u64, k: u64, cap: f64) -> Option<f64> {
    if k > n {
        return Some(0.0);
    }
    let k = k.min(n - k);
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
        if acc > cap {
            return None;
        }
    }
    Some(acc)
}

/// Standard error of a binomial proportion estimate at `p` with `n` trials.
pub fn binomial_se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn mean_and_variance() {
        assert_relative_eq!(mean(&[1.0, 2.0, 3.0]), 2.0);
        assert_relative_eq!(sample_variance(&[1.0, 2.0, 3.0]), 1.0);
        assert!(sample_variance(&[1.0]).is_nan());
    }

    #[test]
    fn quantiles_interpolate() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_relative_eq!(quantile(&xs, 0.5), 2.5);
        assert_relative_eq!(quantile(&xs, 0.25), 1.75);
        assert_relative_eq!(quantile(&xs, 0.0), 1.0);
        assert_relative_eq!(quantile(&xs, 1.0), 4.0);
        assert_relative_eq!(median(&[5.0]), 5.0);
    }

    #[test]
    fn binomial_saturates() {
        assert_relative_eq!(binomial_at_most(5, 2, 1e5).unwrap(), 10.0);
        assert_relative_eq!(binomial_at_most(3, 5, 1e5).unwrap(), 0.0);
        assert!(binomial_at_most(300, 150, 1e5).is_none());
    }
}
