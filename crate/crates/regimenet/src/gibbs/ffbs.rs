//! Forward filtering, backward sampling for the hidden regime path.
//!
//! The filter runs on normalized probabilities with log-space emissions, so
//! slices with hundreds of cells cannot underflow it. The prior over the
//! initial state is uniform over regimes; together with counting transitions
//! only inside the path this keeps the Dirichlet update of the transition
//! rows exactly conjugate.

use crate::dist::draw_categorical;
use crate::rng::RngStream;

#[derive(Debug, thiserror::Error)]
pub enum FfbsError {
    #[error("all regime emissions vanished at t = {t}")]
    DegenerateEmission { t: usize },
    #[error("empty path")]
    Empty,
}

/// Filtered probabilities p(s_t = l | x_{1..t}) for a T x L table of
/// log-emissions (row-major over t).
pub fn forward_filter(
    log_em: &[f64],
    xi: &[f64],
    regimes: usize,
) -> Result<Vec<f64>, FfbsError> {
    let t_len = log_em.len() / regimes;
    if t_len == 0 {
        return Err(FfbsError::Empty);
    }
    let mut filt = vec![0.0; t_len * regimes];
    let mut pred = vec![1.0 / regimes as f64; regimes];
    let mut logs = vec![0.0; regimes];
    for t in 0..t_len {
        for l in 0..regimes {
            logs[l] = pred[l].ln() + log_em[t * regimes + l];
        }
        let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            return Err(FfbsError::DegenerateEmission { t: t + 1 });
        }
        let mut total = 0.0;
        for l in 0..regimes {
            let v = (logs[l] - m).exp();
            filt[t * regimes + l] = v;
            total += v;
        }
        for l in 0..regimes {
            filt[t * regimes + l] /= total;
        }
        if t + 1 < t_len {
            for l in 0..regimes {
                pred[l] = (0..regimes)
                    .map(|g| filt[t * regimes + g] * xi[g * regimes + l])
                    .sum();
            }
        }
    }
    Ok(filt)
}

/// Joint draw of the full path given the filtered probabilities.
pub fn backward_sample(
    filt: &[f64],
    xi: &[f64],
    regimes: usize,
    rng: &mut RngStream,
) -> Result<Vec<usize>, FfbsError> {
    let t_len = filt.len() / regimes;
    if t_len == 0 {
        return Err(FfbsError::Empty);
    }
    let mut path = vec![0usize; t_len];
    let last = &filt[(t_len - 1) * regimes..t_len * regimes];
    path[t_len - 1] =
        draw_categorical(last, rng).map_err(|_| FfbsError::DegenerateEmission { t: t_len })?;
    let mut weights = vec![0.0; regimes];
    for t in (0..t_len - 1).rev() {
        let next = path[t + 1];
        for l in 0..regimes {
            weights[l] = filt[t * regimes + l] * xi[l * regimes + next];
        }
        path[t] = draw_categorical(&weights, rng)
            .map_err(|_| FfbsError::DegenerateEmission { t: t + 1 })?;
    }
    Ok(path)
}
