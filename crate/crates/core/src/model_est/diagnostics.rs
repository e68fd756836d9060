//! Convergence diagnostics: split-Rhat and effective sample size.

/// Split each chain in half and compute the potential scale reduction
/// factor over the resulting sequences. Constant chains give 1.
pub fn split_rhat(chains: &[&[f64]]) -> f64 {
    let splits = split(chains);
    if splits.is_empty() {
        return f64::NAN;
    }
    let n = splits[0].len() as f64;
    let m = splits.len() as f64;
    if n < 2.0 {
        return f64::NAN;
    }
    let means: Vec<f64> = splits.iter().map(|s| mean(s)).collect();
    let grand = mean(&means);
    let b = n / (m - 1.0).max(1.0) * means.iter().map(|x| (x - grand) * (x - grand)).sum::<f64>();
    let w = splits.iter().map(|s| variance(s)).sum::<f64>() / m;
    if w <= 0.0 {
        return if b <= 1e-300 { 1.0 } else { f64::INFINITY };
    }
    let var_hat = (n - 1.0) / n * w + b / n;
    (var_hat / w).sqrt()
}

/// Effective sample size from the combined-chain autocorrelations
/// (variogram estimator with the initial monotone positive-pair rule).
pub fn ess(chains: &[&[f64]]) -> f64 {
    let splits = split(chains);
    if splits.is_empty() {
        return f64::NAN;
    }
    let n = splits[0].len();
    let m = splits.len();
    let total = (n * m) as f64;
    if n < 4 {
        return total;
    }
    let means: Vec<f64> = splits.iter().map(|s| mean(s)).collect();
    let grand = mean(&means);
    let b = n as f64 / (m as f64 - 1.0).max(1.0)
        * means.iter().map(|x| (x - grand) * (x - grand)).sum::<f64>();
    let w = splits.iter().map(|s| variance(s)).sum::<f64>() / m as f64;
    let var_hat = (n as f64 - 1.0) / n as f64 * w + b / n as f64;
    if var_hat <= 0.0 {
        return total;
    }

    let mut rho_sum = 0.0;
    let mut t = 1usize;
    let mut prev_pair = f64::INFINITY;
    while t + 1 < n {
        let rho_t = 1.0 - variogram(&splits, t) / (2.0 * var_hat);
        let rho_t1 = 1.0 - variogram(&splits, t + 1) / (2.0 * var_hat);
        let pair = rho_t + rho_t1;
        if pair < 0.0 {
            break;
        }
        // enforce monotone decrease of successive pair sums
        let pair = pair.min(prev_pair);
        prev_pair = pair;
        rho_sum += pair;
        t += 2;
    }
    let tau = 1.0 + 2.0 * rho_sum;
    (total / tau).clamp(1.0, total)
}

fn variogram(splits: &[Vec<f64>], t: usize) -> f64 {
    let n = splits[0].len();
    let m = splits.len();
    let mut acc = 0.0;
    for s in splits {
        for k in 0..(n - t) {
            let d = s[k + t] - s[k];
            acc += d * d;
        }
    }
    acc / (m as f64 * (n - t) as f64)
}

fn split(chains: &[&[f64]]) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for &c in chains {
        let half = c.len() / 2;
        if half < 2 {
            continue;
        }
        out.push(c[..half].to_vec());
        out.push(c[half..2 * half].to_vec());
    }
    out
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}
