//! Synthetic panels from the full generative model, with the ground truth
//! retained for recovery tests and the correctness harness.

use crate::dist::DistError;
use crate::gibbs::prior_draw;
use crate::model::{NetworkPanel, PriorConfig, RegimeParams, ShrinkageState};
use crate::pooled::PooledParams;
use crate::rng::RngStream;
use serde::{Deserialize, Serialize};

/// Distribution of the first regime. The neutral simulator default is the
/// stationary law of the transition matrix; the inference model and the
/// correctness harness use the uniform law, which keeps the transition-row
/// update exactly conjugate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum InitialStateLaw {
    #[default]
    Stationary,
    Uniform,
}

/// Where the generating parameters come from.
pub enum TruthSpec {
    /// Draw parameters from the hierarchical prior.
    FromPrior(PriorConfig),
    /// Use the given parameters; the shrinkage state is carried through for
    /// bookkeeping only.
    Explicit(RegimeParams, ShrinkageState),
}

/// Everything used to generate a panel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimTruth {
    pub params: RegimeParams,
    pub shrink: ShrinkageState,
    pub s: Vec<usize>,
    pub d: Vec<u8>,
    pub seed: u64,
}

/// Stationary distribution of a stochastic matrix by fixed-point iteration;
/// for reducible or periodic matrices this returns the limit of the averaged
/// iterates started from uniform.
pub fn stationary_distribution(xi: &[f64], regimes: usize) -> Vec<f64> {
    let mut pi = vec![1.0 / regimes as f64; regimes];
    let mut next = vec![0.0; regimes];
    for _ in 0..10_000 {
        for l in 0..regimes {
            next[l] = (0..regimes).map(|g| pi[g] * xi[g * regimes + l]).sum();
        }
        // Average to damp oscillation on periodic chains.
        let mut diff = 0.0;
        for l in 0..regimes {
            let v = 0.5 * (pi[l] + next[l]);
            diff += (v - pi[l]).abs();
            pi[l] = v;
        }
        if diff < 1e-14 {
            break;
        }
    }
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|v| *v /= total);
    pi
}

/// Draw a regime path of length `t_len` from the Markov prior.
pub fn simulate_path(
    params: &RegimeParams,
    t_len: usize,
    init: InitialStateLaw,
    rng: &mut RngStream,
) -> Vec<usize> {
    let regimes = params.regimes();
    let initial = match init {
        InitialStateLaw::Stationary => stationary_distribution(&params.xi, regimes),
        InitialStateLaw::Uniform => vec![1.0 / regimes as f64; regimes],
    };
    let mut s = Vec::with_capacity(t_len);
    let mut current = crate::dist::draw_categorical(&initial, rng).unwrap_or(0);
    s.push(current);
    for _ in 1..t_len {
        current = crate::dist::draw_categorical(params.xi_row(current), rng).unwrap_or(current);
        s.push(current);
    }
    s
}

/// Covariate matrix: an intercept column followed by standard normal draws.
pub fn simulate_covariates(t_len: usize, q: usize, rng: &mut RngStream) -> Vec<f64> {
    let mut z = Vec::with_capacity(t_len * q);
    for _ in 0..t_len {
        z.push(1.0);
        for _ in 1..q {
            z.push(rng.standard_normal());
        }
    }
    z
}

/// Zero-inflated observations for a fixed path and covariates; returns
/// (x, d) time-major.
pub fn simulate_observations(
    dims: (usize, usize, usize),
    z: &[f64],
    q: usize,
    params: &RegimeParams,
    s: &[usize],
    rng: &mut RngStream,
) -> (Vec<u8>, Vec<u8>) {
    let cells = dims.0 * dims.1 * dims.2;
    let t_len = s.len();
    let mut x = vec![0u8; t_len * cells];
    let mut d = vec![0u8; t_len * cells];
    let mut psi = vec![0.0; cells];
    for t in 0..t_len {
        let l = s[t];
        crate::model::accumulate_linear_predictors(
            &z[t * q..(t + 1) * q],
            &params.marginals[l],
            &mut psi,
        );
        let rho = params.rho[l];
        for cell in 0..cells {
            let idx = t * cells + cell;
            if rng.u01() < rho {
                d[idx] = 1;
            } else {
                x[idx] = (rng.u01() < crate::model::sigmoid(psi[cell])) as u8;
            }
        }
    }
    (x, d)
}

/// Generate a synthetic panel with known truth.
pub fn simulate_panel(
    dims: (usize, usize, usize, usize, usize),
    truth: TruthSpec,
    init: InitialStateLaw,
    seed: u64,
) -> Result<(NetworkPanel, SimTruth), DistError> {
    let (i, j, k, t_len, q) = dims;
    let mut rng = RngStream::new(seed);
    let (params, shrink) = match truth {
        TruthSpec::FromPrior(prior) => prior_draw(&prior, [i, j, k, q], &mut rng)?,
        TruthSpec::Explicit(params, shrink) => (params, shrink),
    };
    let s = simulate_path(&params, t_len, init, &mut rng);
    let z = simulate_covariates(t_len, q, &mut rng);
    let (x, d) = simulate_observations((i, j, k), &z, q, &params, &s, &mut rng);
    let panel = NetworkPanel::new(dims, x, z).expect("simulated panel is valid");
    let truth = SimTruth { params, shrink, s, d, seed };
    Ok((panel, truth))
}

/// Synthetic panel from the pooled model.
pub fn simulate_pooled_panel(
    dims: (usize, usize, usize, usize, usize),
    params: &PooledParams,
    init: InitialStateLaw,
    seed: u64,
) -> (NetworkPanel, Vec<usize>) {
    let (i, j, k, t_len, q) = dims;
    let expanded = params.expand_to_regime_params([i, j, k, q]);
    let mut rng = RngStream::new(seed);
    let s = simulate_path(&expanded, t_len, init, &mut rng);
    let z = simulate_covariates(t_len, q, &mut rng);
    let (x, _) = simulate_observations((i, j, k), &z, q, &expanded, &s, &mut rng);
    (NetworkPanel::new(dims, x, z).expect("simulated panel is valid"), s)
}
