//! Chain diagnostics: effective sample size and simple summaries.

pub fn mean_sd(chain: &[f64]) -> (f64, f64) {
    let n = chain.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = chain.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = chain.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Effective sample size by Geyer's initial positive sequence: sum
/// consecutive autocovariance pairs until a pair goes non-positive.
pub fn effective_sample_size(chain: &[f64]) -> f64 {
    let n = chain.len();
    if n < 4 {
        return n as f64;
    }
    let mean = chain.iter().sum::<f64>() / n as f64;
    let gamma = |lag: usize| -> f64 {
        (0..n - lag)
            .map(|i| (chain[i] - mean) * (chain[i + lag] - mean))
            .sum::<f64>()
            / n as f64
    };
    let g0 = gamma(0);
    if g0 <= 0.0 {
        return n as f64;
    }
    let mut acc = g0;
    let mut lag = 1;
    while lag + 1 < n {
        let pair = gamma(lag) + gamma(lag + 1);
        if pair <= 0.0 {
            break;
        }
        acc += 2.0 * pair;
        lag += 2;
    }
    (n as f64 * g0 / acc).clamp(1.0, n as f64)
}

/// Empirical quantile by linear interpolation on the sorted sample.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    if n == 1 {
        return sorted[0];
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}
