//! Four-block Gibbs sampler: (I) hidden path, allocations and Pólya-Gamma
//! draws; (II) the variance hierarchy; (III) PARAFAC marginals; (IV) the
//! zero-inflation probabilities and transition matrix; with identification
//! relabeling after every sweep.

pub mod dense;
pub mod ffbs;
mod gamma;

#[cfg(test)]
mod tests;

pub use gamma::{
    gamma_conditional_terms, sample_from_conditional, sample_gamma_marginal, GammaConditional,
    GammaError, Precision,
};

use crate::dist::{
    draw_beta, draw_dirichlet, draw_gamma, hmc_update, sample_gig, sample_pg1, DistError,
    GigParams,
};
use crate::model::{
    AugmentedState, ModelError, NetworkPanel, PriorConfig, RegimeParams, ShrinkageState,
};
use crate::rng::RngStream;
use crate::tensor::ParafacMarginals;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Substream block tags for the parallel per-slice draws.
const BLOCK_D: u8 = 1;
const BLOCK_OMEGA: u8 = 2;

/// Below this work size the per-slice loops run serially; results are
/// identical either way because every slice owns its substream.
const PAR_THRESHOLD: usize = 16_384;

#[derive(Debug, thiserror::Error)]
pub enum ChainError {
    #[error("numerical failure in block {block} at iteration {iteration}: {detail}")]
    Numerical {
        block: &'static str,
        iteration: usize,
        detail: String,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid chain configuration: {0}")]
    Config(String),
}

/// Chain driver configuration.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ChainConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub hmc_step: f64,
    pub hmc_nleap: usize,
    pub jitter: f64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            burn_in: 500,
            thin: 1,
            seed: 1,
            hmc_step: 0.15,
            hmc_nleap: 10,
            jitter: 1e-10,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<(), ChainError> {
        if self.burn_in >= self.iterations {
            return Err(ChainError::Config(format!(
                "burn_in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(ChainError::Config("thin must be >= 1".into()));
        }
        if !(self.hmc_step > 0.0) || self.hmc_nleap == 0 {
            return Err(ChainError::Config("HMC step and leap count must be positive".into()));
        }
        Ok(())
    }

    pub fn stored_draws(&self) -> usize {
        (self.iterations - self.burn_in).div_ceil(self.thin)
    }
}

/// Harness-only fault injection used by the correctness tests. `None` in all
/// production runs; `NoOp` goes through the injection plumbing but changes
/// nothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FaultInjection {
    #[default]
    None,
    NoOp,
    TauGigOrderPlusOne,
}

impl FaultInjection {
    fn tau_order_shift(&self) -> f64 {
        match self {
            FaultInjection::TauGigOrderPlusOne => 1.0,
            _ => 0.0,
        }
    }
}

/// Full sampler state.
#[derive(Debug, Clone)]
pub struct GibbsState {
    pub params: RegimeParams,
    pub shrink: ShrinkageState,
    pub aug: AugmentedState,
}

/// Stored snapshot of one post-burn-in iteration. The marginals are
/// flattened regime-major, then rank, then mode, then coordinate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Draw {
    pub iteration: usize,
    pub rho: Vec<f64>,
    pub xi: Vec<f64>,
    pub tau: f64,
    pub psi: Vec<f64>,
    pub w: Vec<f64>,
    pub lambda: Vec<f64>,
    pub gamma: Vec<f64>,
    pub s: Vec<usize>,
}

impl Draw {
    pub fn from_state(iteration: usize, state: &GibbsState) -> Self {
        Self {
            iteration,
            rho: state.params.rho.clone(),
            xi: state.params.xi.clone(),
            tau: state.shrink.tau,
            psi: state.shrink.psi.clone(),
            w: state.shrink.w.clone(),
            lambda: state.shrink.lambda.clone(),
            gamma: flatten_marginals(&state.params.marginals),
            s: state.aug.s.clone(),
        }
    }
}

/// Flattening order: regime-major, then rank, then mode, then coordinate.
pub fn flatten_marginals(marginals: &[ParafacMarginals]) -> Vec<f64> {
    let mut out = Vec::new();
    for marg in marginals {
        for r in 0..marg.rank() {
            for h in 0..4 {
                out.extend_from_slice(marg.factor(h, r));
            }
        }
    }
    out
}

/// Inverse of [`flatten_marginals`].
pub fn unflatten_marginals(
    flat: &[f64],
    regimes: usize,
    rank: usize,
    dims: [usize; 4],
) -> Vec<ParafacMarginals> {
    let mut out = Vec::with_capacity(regimes);
    let mut pos = 0;
    for _ in 0..regimes {
        let mut marg = ParafacMarginals::zeros(rank, dims);
        for r in 0..rank {
            for h in 0..4 {
                let n = dims[h];
                marg.factor_mut(h, r).copy_from_slice(&flat[pos..pos + n]);
                pos += n;
            }
        }
        out.push(marg);
    }
    out
}

// ---------------------------------------------------------------------------
// Block (I): hidden path, allocations, Pólya-Gamma variables.
// ---------------------------------------------------------------------------

/// Log-emissions for every (t, l), row-major over t, plus the per-regime
/// linear predictors that block (I) reuses.
fn emissions_and_predictors(
    panel: &NetworkPanel,
    params: &RegimeParams,
) -> (Vec<f64>, Vec<f64>) {
    let regimes = params.regimes();
    let cells = panel.cells();
    let mut em = vec![0.0; panel.t * regimes];
    let mut psi = vec![0.0; panel.t * regimes * cells];
    let work = panel.t * regimes * cells;
    let fill = |t: usize, em_row: &mut [f64], psi_row: &mut [f64]| {
        let z = panel.covariates(t);
        let xs = panel.slice(t);
        for l in 0..regimes {
            let slice = &mut psi_row[l * cells..(l + 1) * cells];
            crate::model::accumulate_linear_predictors(z, &params.marginals[l], slice);
            em_row[l] = crate::model::log_emission_from_psi(xs, params.rho[l], slice);
        }
    };
    if work < PAR_THRESHOLD {
        for t in 0..panel.t {
            let (em_row, psi_row) = (
                &mut em[t * regimes..(t + 1) * regimes],
                &mut psi[t * regimes * cells..(t + 1) * regimes * cells],
            );
            fill(t, em_row, psi_row);
        }
    } else {
        em.par_chunks_mut(regimes)
            .zip(psi.par_chunks_mut(regimes * cells))
            .enumerate()
            .for_each(|(t, (em_row, psi_row))| fill(t, em_row, psi_row));
    }
    (em, psi)
}

/// Exact joint draw of the regime path given data and parameters.
pub fn ffbs_states(
    panel: &NetworkPanel,
    params: &RegimeParams,
    rng: &mut RngStream,
) -> Result<Vec<usize>, ffbs::FfbsError> {
    let (em, _) = emissions_and_predictors(panel, params);
    let filt = ffbs::forward_filter(&em, &params.xi, params.regimes())?;
    ffbs::backward_sample(&filt, &params.xi, params.regimes(), rng)
}

/// Allocation draws: d = 0 wherever x = 1, otherwise Bernoulli with odds
/// rho : (1 - rho) / (1 + e^psi).
pub fn sample_d(
    panel: &NetworkPanel,
    params: &RegimeParams,
    s: &[usize],
    root: &RngStream,
    sweep: u64,
) -> Vec<u8> {
    let (_, psi) = emissions_and_predictors(panel, params);
    sample_d_with_psi_table(panel, params, s, &psi, root, sweep)
}

pub(crate) fn sample_d_with_psi_table(
    panel: &NetworkPanel,
    params: &RegimeParams,
    s: &[usize],
    psi: &[f64],
    root: &RngStream,
    sweep: u64,
) -> Vec<u8> {
    let cells = panel.cells();
    let regimes = params.regimes();
    let mut d = vec![0u8; panel.t * cells];
    let fill = |t: usize, out: &mut [u8]| {
        let l = s[t];
        let rho = params.rho[l];
        let xs = panel.slice(t);
        let psis = &psi[(t * regimes + l) * cells..(t * regimes + l + 1) * cells];
        let mut rng = root.substream(BLOCK_D, sweep, t as u64);
        for cell in 0..cells {
            out[cell] = if xs[cell] == 1 {
                0
            } else {
                let p1 = rho;
                let p0 = (1.0 - rho) * crate::model::sigmoid(-psis[cell]);
                (rng.u01() * (p1 + p0) < p1) as u8
            };
        }
    };
    if panel.t * cells < PAR_THRESHOLD {
        for (t, chunk) in d.chunks_mut(cells).enumerate() {
            fill(t, chunk);
        }
    } else {
        d.par_chunks_mut(cells)
            .enumerate()
            .for_each(|(t, chunk)| fill(t, chunk));
    }
    d
}

/// Pólya-Gamma draws PG(1, z' g) for every cell and time, with the
/// allocations marginalized out of the conditional.
pub fn sample_omega(
    panel: &NetworkPanel,
    params: &RegimeParams,
    s: &[usize],
    root: &RngStream,
    sweep: u64,
) -> Vec<f64> {
    let (_, psi) = emissions_and_predictors(panel, params);
    sample_omega_with_psi_table(panel, params.regimes(), s, &psi, root, sweep)
}

pub(crate) fn sample_omega_with_psi_table(
    panel: &NetworkPanel,
    regimes: usize,
    s: &[usize],
    psi: &[f64],
    root: &RngStream,
    sweep: u64,
) -> Vec<f64> {
    let cells = panel.cells();
    let mut omega = vec![0.0; panel.t * cells];
    let fill = |t: usize, out: &mut [f64]| {
        let l = s[t];
        let psis = &psi[(t * regimes + l) * cells..(t * regimes + l + 1) * cells];
        let mut rng = root.substream(BLOCK_OMEGA, sweep, t as u64);
        for cell in 0..cells {
            out[cell] = sample_pg1(psis[cell], &mut rng).expect("finite linear predictor");
        }
    };
    if panel.t * cells < PAR_THRESHOLD {
        for (t, chunk) in omega.chunks_mut(cells).enumerate() {
            fill(t, chunk);
        }
    } else {
        omega
            .par_chunks_mut(cells)
            .enumerate()
            .for_each(|(t, chunk)| fill(t, chunk));
    }
    omega
}

// ---------------------------------------------------------------------------
// Block (II): variance hierarchy.
// ---------------------------------------------------------------------------

/// Centered sum of squares of one marginal vector.
fn centered_ss(
    marg: &ParafacMarginals,
    prior: &PriorConfig,
    h: usize,
    r: usize,
    l: usize,
) -> f64 {
    marg.factor(h, r)
        .iter()
        .enumerate()
        .map(|(idx, &v)| {
            let c = v - prior.gamma_prior_mean(h, r, l, idx);
            c * c
        })
        .sum()
}

fn mode_dim_sum(marginals: &[ParafacMarginals]) -> usize {
    marginals[0].dims().iter().sum()
}

/// GiG parameters of the auxiliary level variable psi_r, with the global
/// variance integrated out of the conditional.
pub fn psi_conditional(
    params: &RegimeParams,
    shrink: &ShrinkageState,
    prior: &PriorConfig,
    r: usize,
) -> Result<GigParams, DistError> {
    let n = mode_dim_sum(&params.marginals) as f64;
    let l_count = params.regimes() as f64;
    let mut b = 0.0;
    for (l, marg) in params.marginals.iter().enumerate() {
        for h in 0..4 {
            b += centered_ss(marg, prior, h, r, l) / shrink.w_at(h, r, l);
        }
    }
    GigParams::new(2.0 * prior.b_tau, b, prior.alpha_bar - n * l_count / 2.0)
}

/// Draw the level variables and return the normalized phi.
pub fn sample_level_variances(
    params: &RegimeParams,
    shrink: &mut ShrinkageState,
    prior: &PriorConfig,
    rng: &mut RngStream,
) -> Result<Vec<f64>, DistError> {
    for r in 0..prior.rank {
        let g = psi_conditional(params, shrink, prior, r)?;
        shrink.psi[r] = sample_gig(&g, rng)?.max(1e-300);
    }
    Ok(shrink.phi())
}

/// GiG parameters of the global variance conditional.
pub fn tau_conditional(
    params: &RegimeParams,
    shrink: &ShrinkageState,
    prior: &PriorConfig,
    fault: FaultInjection,
) -> Result<GigParams, DistError> {
    let n = mode_dim_sum(&params.marginals) as f64;
    let l_count = params.regimes() as f64;
    let r_count = prior.rank as f64;
    let phi = shrink.phi();
    let mut b = 0.0;
    for (l, marg) in params.marginals.iter().enumerate() {
        for r in 0..prior.rank {
            for h in 0..4 {
                b += centered_ss(marg, prior, h, r, l) / (phi[r] * shrink.w_at(h, r, l));
            }
        }
    }
    let p = prior.a_tau() - n * l_count * r_count / 2.0 + fault.tau_order_shift();
    GigParams::new(2.0 * prior.b_tau, b, p)
}

pub fn sample_tau(
    params: &RegimeParams,
    shrink: &mut ShrinkageState,
    prior: &PriorConfig,
    fault: FaultInjection,
    rng: &mut RngStream,
) -> Result<(), DistError> {
    let g = tau_conditional(params, shrink, prior, fault)?;
    shrink.tau = sample_gig(&g, rng)?.max(1e-300);
    Ok(())
}

/// GiG parameters of one local variance conditional.
pub fn w_conditional(
    params: &RegimeParams,
    shrink: &ShrinkageState,
    prior: &PriorConfig,
    h: usize,
    r: usize,
    l: usize,
) -> Result<GigParams, DistError> {
    let marg = &params.marginals[l];
    let n_h = marg.dims()[h] as f64;
    let b = centered_ss(marg, prior, h, r, l) / (shrink.tau * shrink.phi_r(r));
    GigParams::new(shrink.lambda[l] * shrink.lambda[l], b, 1.0 - n_h / 2.0)
}

pub fn sample_w(
    params: &RegimeParams,
    shrink: &mut ShrinkageState,
    prior: &PriorConfig,
    rng: &mut RngStream,
) -> Result<(), DistError> {
    for l in 0..params.regimes() {
        for r in 0..prior.rank {
            for h in 0..4 {
                let g = w_conditional(params, shrink, prior, h, r, l)?;
                let v = sample_gig(&g, rng)?.max(1e-300);
                shrink.w_set(h, r, l, v);
            }
        }
    }
    Ok(())
}

/// Log-density and gradient of the lambda conditional on the unconstrained
/// scale eta = log(lambda):
///
/// ```text
/// log p(eta) = (a + m) eta - b e^eta - e^{2 eta} S / 2
/// ```
///
/// where `m` counts two per observed exponential variate (m = 8R in the
/// tensor model, 2 in the pooled one) and S sums those variates.
pub fn lambda_log_target(
    a_lambda: f64,
    b_lambda: f64,
    exp_weight: f64,
    w_sum: f64,
) -> (impl Fn(f64) -> f64, impl Fn(f64) -> f64) {
    let coef = a_lambda + exp_weight;
    let logp = move |eta: f64| coef * eta - b_lambda * eta.exp() - 0.5 * (2.0 * eta).exp() * w_sum;
    let grad = move |eta: f64| coef - b_lambda * eta.exp() - (2.0 * eta).exp() * w_sum;
    (logp, grad)
}

/// One HMC update per regime on log(lambda_l); returns accept flags.
pub fn sample_lambda(
    shrink: &mut ShrinkageState,
    prior: &PriorConfig,
    step: f64,
    nleap: usize,
    rng: &mut RngStream,
) -> Vec<bool> {
    let rank = prior.rank;
    let mut flags = Vec::with_capacity(prior.regimes);
    for l in 0..prior.regimes {
        let s: f64 = (0..rank)
            .flat_map(|r| (0..4).map(move |h| (h, r)))
            .map(|(h, r)| shrink.w_at(h, r, l))
            .sum();
        let (logp, grad) = lambda_log_target(prior.a_lambda[l], prior.b_lambda[l], 8.0 * rank as f64, s);
        let eta = shrink.lambda[l].ln();
        let res = hmc_update(&logp, &grad, eta, step, nleap, rng);
        shrink.lambda[l] = res.value.exp();
        flags.push(res.accepted);
    }
    flags
}

// ---------------------------------------------------------------------------
// Block (IV): zero-inflation probabilities and transition matrix.
// ---------------------------------------------------------------------------

/// Allocation counts (N1, N0) per regime.
pub fn allocation_counts(panel: &NetworkPanel, aug: &AugmentedState, regimes: usize) -> Vec<(usize, usize)> {
    let cells = panel.cells();
    let mut counts = vec![(0usize, 0usize); regimes];
    for t in 0..panel.t {
        let l = aug.s[t];
        let ones: usize = aug.d[t * cells..(t + 1) * cells]
            .iter()
            .map(|&v| v as usize)
            .sum();
        counts[l].0 += ones;
        counts[l].1 += cells - ones;
    }
    counts
}

pub fn sample_rho(
    panel: &NetworkPanel,
    aug: &AugmentedState,
    params: &mut RegimeParams,
    prior: &PriorConfig,
    rng: &mut RngStream,
) -> Result<(), DistError> {
    let counts = allocation_counts(panel, aug, params.regimes());
    for (l, &(n1, n0)) in counts.iter().enumerate() {
        params.rho[l] = draw_beta(n1 as f64 + prior.a_rho[l], n0 as f64 + prior.b_rho[l], rng)?;
    }
    Ok(())
}

/// Transition counts N_{g,l} over consecutive pairs of the path.
pub fn transition_counts(s: &[usize], regimes: usize) -> Vec<usize> {
    let mut counts = vec![0usize; regimes * regimes];
    for w in s.windows(2) {
        counts[w[0] * regimes + w[1]] += 1;
    }
    counts
}

pub fn sample_xi(
    s: &[usize],
    params: &mut RegimeParams,
    prior: &PriorConfig,
    rng: &mut RngStream,
) -> Result<(), DistError> {
    let regimes = params.regimes();
    let counts = transition_counts(s, regimes);
    for l in 0..regimes {
        let conc: Vec<f64> = (0..regimes)
            .map(|m| prior.xi_concentration[l][m] + counts[l * regimes + m] as f64)
            .collect();
        let row = draw_dirichlet(&conc, rng)?;
        params.xi[l * regimes..(l + 1) * regimes].copy_from_slice(&row);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Identification relabeling.
// ---------------------------------------------------------------------------

/// Sort regimes by descending rho (stable on ties) and apply the permutation
/// consistently to every regime-indexed quantity, including the path labels
/// and both axes of the transition matrix. Returns the permutation
/// (new index -> old index); identity permutation means no-op.
pub fn relabel(params: &mut RegimeParams, shrink: &mut ShrinkageState, s: &mut [usize]) -> Vec<usize> {
    let regimes = params.regimes();
    let mut order: Vec<usize> = (0..regimes).collect();
    order.sort_by(|&a, &b| params.rho[b].partial_cmp(&params.rho[a]).unwrap());
    if order.iter().enumerate().all(|(new, &old)| new == old) {
        return order;
    }
    let mut inverse = vec![0usize; regimes];
    for (new, &old) in order.iter().enumerate() {
        inverse[old] = new;
    }

    params.rho = order.iter().map(|&o| params.rho[o]).collect();
    params.marginals = order.iter().map(|&o| params.marginals[o].clone()).collect();
    let old_xi = params.xi.clone();
    for new_row in 0..regimes {
        for new_col in 0..regimes {
            params.xi[new_row * regimes + new_col] =
                old_xi[order[new_row] * regimes + order[new_col]];
        }
    }
    shrink.lambda = order.iter().map(|&o| shrink.lambda[o]).collect();
    let old_w = shrink.w.clone();
    for new_l in 0..regimes {
        for r in 0..shrink.psi.len() {
            for h in 0..4 {
                let src = (order[new_l] * shrink.psi.len() + r) * 4 + h;
                let dst = (new_l * shrink.psi.len() + r) * 4 + h;
                shrink.w[dst] = old_w[src];
            }
        }
    }
    for v in s.iter_mut() {
        *v = inverse[*v];
    }
    order
}

// ---------------------------------------------------------------------------
// Prior draws and initialization.
// ---------------------------------------------------------------------------

/// Joint draw of (RegimeParams, ShrinkageState) from the hierarchical prior,
/// already relabeled into the identified ordering.
pub fn prior_draw(
    prior: &PriorConfig,
    dims: [usize; 4],
    rng: &mut RngStream,
) -> Result<(RegimeParams, ShrinkageState), DistError> {
    let (rank, regimes) = (prior.rank, prior.regimes);
    let tau = draw_gamma(prior.a_tau(), prior.b_tau, rng)?;
    let phi = draw_dirichlet(&vec![prior.alpha_bar; rank], rng)?;
    let psi: Vec<f64> = phi.iter().map(|&p| (tau * p).max(1e-300)).collect();
    let mut lambda = Vec::with_capacity(regimes);
    for l in 0..regimes {
        lambda.push(draw_gamma(prior.a_lambda[l], prior.b_lambda[l], rng)?);
    }
    let mut w = vec![0.0; 4 * rank * regimes];
    let mut shrink = ShrinkageState::new(tau, psi, w.clone(), lambda.clone());
    for l in 0..regimes {
        let rate = 0.5 * lambda[l] * lambda[l];
        for r in 0..rank {
            for h in 0..4 {
                let v = rng.exp1() / rate;
                shrink.w_set(h, r, l, v.max(1e-300));
            }
        }
    }
    w.copy_from_slice(&shrink.w);

    let mut marginals = Vec::with_capacity(regimes);
    for l in 0..regimes {
        let mut marg = ParafacMarginals::zeros(rank, dims);
        for r in 0..rank {
            for h in 0..4 {
                let sd = (tau * phi[r] * shrink.w_at(h, r, l)).sqrt();
                let n_h = dims[h];
                for idx in 0..n_h {
                    let mean = prior.gamma_prior_mean(h, r, l, idx);
                    marg.factor_mut(h, r)[idx] = mean + sd * rng.standard_normal();
                }
            }
        }
        marginals.push(marg);
    }
    let mut rho = Vec::with_capacity(regimes);
    for l in 0..regimes {
        rho.push(draw_beta(prior.a_rho[l], prior.b_rho[l], rng)?);
    }
    let mut xi = vec![0.0; regimes * regimes];
    for l in 0..regimes {
        let row = draw_dirichlet(&prior.xi_concentration[l], rng)?;
        xi[l * regimes..(l + 1) * regimes].copy_from_slice(&row);
    }
    let mut params = RegimeParams { marginals, rho, xi };
    relabel(&mut params, &mut shrink, &mut []);
    Ok((params, shrink))
}

/// Deterministic-plus-noise initialization: the path follows network-density
/// quantiles (low density maps to the sparsest regime), marginals start near
/// zero, and every hierarchy component sits at its prior mean.
pub fn init_state(
    panel: &NetworkPanel,
    prior: &PriorConfig,
    rng: &mut RngStream,
) -> GibbsState {
    let (rank, regimes) = (prior.rank, prior.regimes);
    let dims = [panel.i, panel.j, panel.k, panel.q];

    let degrees = panel.degree_series();
    let mut order: Vec<usize> = (0..panel.t).collect();
    order.sort_by_key(|&t| (degrees[t], t));
    let mut s = vec![0usize; panel.t];
    for (pos, &t) in order.iter().enumerate() {
        s[t] = (pos * regimes) / panel.t;
    }

    let tau = prior.a_tau() / prior.b_tau;
    let psi = vec![tau / rank as f64; rank];
    let lambda: Vec<f64> = (0..regimes)
        .map(|l| prior.a_lambda[l] / prior.b_lambda[l])
        .collect();
    let mut shrink = ShrinkageState::new(tau, psi, vec![0.0; 4 * rank * regimes], lambda.clone());
    for l in 0..regimes {
        let mean_w = 2.0 / (lambda[l] * lambda[l]);
        for r in 0..rank {
            for h in 0..4 {
                shrink.w_set(h, r, l, mean_w);
            }
        }
    }

    let mut marginals = Vec::with_capacity(regimes);
    for _ in 0..regimes {
        let mut marg = ParafacMarginals::zeros(rank, dims);
        for r in 0..rank {
            for h in 0..4 {
                for v in marg.factor_mut(h, r) {
                    *v = 0.1 * rng.standard_normal();
                }
            }
        }
        marginals.push(marg);
    }

    let mut rho: Vec<f64> = (0..regimes)
        .map(|l| prior.a_rho[l] / (prior.a_rho[l] + prior.b_rho[l]))
        .collect();
    rho.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut xi = vec![0.0; regimes * regimes];
    for l in 0..regimes {
        let total: f64 = prior.xi_concentration[l].iter().sum();
        for m in 0..regimes {
            xi[l * regimes + m] = prior.xi_concentration[l][m] / total;
        }
    }

    let params = RegimeParams { marginals, rho, xi };
    let cells = panel.cells();
    let aug = AugmentedState {
        s,
        d: vec![0; panel.t * cells],
        omega: vec![0.25; panel.t * cells],
    };
    GibbsState { params, shrink, aug }
}

// ---------------------------------------------------------------------------
// Sweep and chain driver.
// ---------------------------------------------------------------------------

/// Per-sweep options; the fault injection is [`FaultInjection::None`] outside
/// the correctness harness.
#[derive(Debug, Clone, Copy)]
pub struct SweepOptions {
    pub hmc_step: f64,
    pub hmc_nleap: usize,
    pub jitter: f64,
    pub fault: FaultInjection,
}

/// Timing and acceptance bookkeeping from one sweep.
#[derive(Debug, Clone, Copy, Default)]
pub struct SweepStats {
    pub hmc_accepted: usize,
    pub hmc_total: usize,
    pub block_seconds: [f64; 4],
}

/// One full systematic sweep over all four blocks, ending with the
/// identification relabeling.
pub fn gibbs_sweep(
    state: &mut GibbsState,
    panel: &NetworkPanel,
    prior: &PriorConfig,
    opts: &SweepOptions,
    root: &RngStream,
    master: &mut RngStream,
    sweep_index: u64,
) -> Result<SweepStats, ChainError> {
    let mut stats = SweepStats::default();
    let iteration = sweep_index as usize;
    let wrap_dist = |block: &'static str| {
        move |e: DistError| ChainError::Numerical {
            block,
            iteration,
            detail: e.to_string(),
        }
    };

    // Block (I): s, D, Omega.
    let t0 = Instant::now();
    let (em, psi) = emissions_and_predictors(panel, &state.params);
    let filt = ffbs::forward_filter(&em, &state.params.xi, state.params.regimes()).map_err(|e| {
        ChainError::Numerical { block: "I/ffbs", iteration, detail: e.to_string() }
    })?;
    state.aug.s = ffbs::backward_sample(&filt, &state.params.xi, state.params.regimes(), master)
        .map_err(|e| ChainError::Numerical { block: "I/ffbs", iteration, detail: e.to_string() })?;
    state.aug.d = sample_d_with_psi_table(panel, &state.params, &state.aug.s, &psi, root, sweep_index);
    state.aug.omega =
        sample_omega_with_psi_table(panel, state.params.regimes(), &state.aug.s, &psi, root, sweep_index);
    stats.block_seconds[0] = t0.elapsed().as_secs_f64();

    // Block (II): variance hierarchy.
    let t1 = Instant::now();
    sample_level_variances(&state.params, &mut state.shrink, prior, master)
        .map_err(wrap_dist("II/psi"))?;
    sample_tau(&state.params, &mut state.shrink, prior, opts.fault, master)
        .map_err(wrap_dist("II/tau"))?;
    sample_w(&state.params, &mut state.shrink, prior, master).map_err(wrap_dist("II/w"))?;
    let flags = sample_lambda(&mut state.shrink, prior, opts.hmc_step, opts.hmc_nleap, master);
    stats.hmc_total += flags.len();
    stats.hmc_accepted += flags.iter().filter(|&&f| f).count();
    stats.block_seconds[1] = t1.elapsed().as_secs_f64();

    // Block (III): marginals, systematic scan l -> r -> h.
    let t2 = Instant::now();
    for l in 0..prior.regimes {
        for r in 0..prior.rank {
            for h in 0..4 {
                sample_gamma_marginal(
                    panel,
                    &state.aug,
                    &mut state.params,
                    &state.shrink,
                    prior,
                    h,
                    r,
                    l,
                    opts.jitter,
                    master,
                )
                .map_err(|e| ChainError::Numerical {
                    block: "III/gamma",
                    iteration,
                    detail: e.to_string(),
                })?;
            }
        }
    }
    stats.block_seconds[2] = t2.elapsed().as_secs_f64();

    // Block (IV): rho and Xi, then relabel.
    let t3 = Instant::now();
    sample_rho(panel, &state.aug, &mut state.params, prior, master)
        .map_err(wrap_dist("IV/rho"))?;
    sample_xi(&state.aug.s, &mut state.params, prior, master).map_err(wrap_dist("IV/xi"))?;
    relabel(&mut state.params, &mut state.shrink, &mut state.aug.s);
    stats.block_seconds[3] = t3.elapsed().as_secs_f64();

    debug_assert!(state.params.check_invariants().is_ok());
    debug_assert!(state.shrink.all_positive());
    debug_assert!(state.aug.check_allocation_invariant(panel).is_ok());
    Ok(stats)
}

/// Chain output: thinned post-burn-in draws plus run diagnostics.
#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub draws: Vec<Draw>,
    pub diagnostics: ChainDiagnostics,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub hmc_acceptance: f64,
    /// Final (possibly adapted) HMC step size.
    pub hmc_step: f64,
    /// Wall-clock seconds per block (I)-(IV).
    pub block_seconds: [f64; 4],
    /// Effective sample sizes for every scalar parameter chain.
    pub ess: Vec<(String, f64)>,
    /// Posterior mean and standard deviation per scalar parameter.
    pub summaries: Vec<(String, f64, f64)>,
}

/// Run the full Gibbs chain on a panel.
pub fn run_chain(
    panel: &NetworkPanel,
    prior: &PriorConfig,
    cfg: &ChainConfig,
) -> Result<ChainOutput, ChainError> {
    cfg.validate()?;
    prior.validate()?;
    let root = RngStream::new(cfg.seed);
    let mut master = RngStream::new(cfg.seed);
    let mut state = init_state(panel, prior, &mut master);

    let mut step = cfg.hmc_step;
    let mut window_acc = 0usize;
    let mut window_tot = 0usize;
    let mut total_acc = 0usize;
    let mut total_tot = 0usize;
    let mut block_seconds = [0.0; 4];
    let mut draws = Vec::with_capacity(cfg.stored_draws());

    for it in 0..cfg.iterations {
        let opts = SweepOptions {
            hmc_step: step,
            hmc_nleap: cfg.hmc_nleap,
            jitter: cfg.jitter,
            fault: FaultInjection::None,
        };
        let stats = gibbs_sweep(&mut state, panel, prior, &opts, &root, &mut master, it as u64)?;
        for (acc, add) in block_seconds.iter_mut().zip(stats.block_seconds) {
            *acc += add;
        }
        total_acc += stats.hmc_accepted;
        total_tot += stats.hmc_total;

        // Step-size adaptation toward the 0.65-0.85 acceptance window,
        // frozen after burn-in. A single shared step keeps the kernel
        // symmetric across regime labels.
        if it < cfg.burn_in {
            window_acc += stats.hmc_accepted;
            window_tot += stats.hmc_total;
            if window_tot >= 50 {
                let rate = window_acc as f64 / window_tot as f64;
                if rate < 0.65 {
                    step *= 0.9;
                } else if rate > 0.85 {
                    step *= 1.1;
                }
                window_acc = 0;
                window_tot = 0;
            }
        }

        if it >= cfg.burn_in && (it - cfg.burn_in) % cfg.thin == 0 {
            draws.push(Draw::from_state(it, &state));
        }
    }

    let diagnostics = build_diagnostics(
        &draws,
        total_acc as f64 / total_tot.max(1) as f64,
        step,
        block_seconds,
    );
    Ok(ChainOutput { draws, diagnostics })
}

fn build_diagnostics(
    draws: &[Draw],
    hmc_acceptance: f64,
    hmc_step: f64,
    block_seconds: [f64; 4],
) -> ChainDiagnostics {
    let mut ess = Vec::new();
    let mut summaries = Vec::new();
    let mut add = |name: String, chain: Vec<f64>| {
        let (mean, sd) = crate::diagnostics::mean_sd(&chain);
        ess.push((name.clone(), crate::diagnostics::effective_sample_size(&chain)));
        summaries.push((name, mean, sd));
    };
    if draws.is_empty() {
        return ChainDiagnostics {
            hmc_acceptance,
            hmc_step,
            block_seconds,
            ess,
            summaries,
        };
    }
    add("tau".into(), draws.iter().map(|d| d.tau).collect());
    for l in 0..draws[0].rho.len() {
        add(format!("rho[{}]", l + 1), draws.iter().map(|d| d.rho[l]).collect());
        add(
            format!("lambda[{}]", l + 1),
            draws.iter().map(|d| d.lambda[l]).collect(),
        );
    }
    for r in 0..draws[0].psi.len() {
        let chain: Vec<f64> = draws
            .iter()
            .map(|d| {
                let total: f64 = d.psi.iter().sum();
                d.psi[r] / total
            })
            .collect();
        add(format!("phi[{}]", r + 1), chain);
    }
    for idx in 0..draws[0].gamma.len() {
        add(
            format!("gamma[{idx}]"),
            draws.iter().map(|d| d.gamma[idx]).collect(),
        );
    }
    ChainDiagnostics {
        hmc_acceptance,
        hmc_step,
        block_seconds,
        ess,
        summaries,
    }
}
