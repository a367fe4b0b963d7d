//! Pooled benchmark model: one coefficient vector per regime shared across
//! all edges, with a reduced Gibbs sampler that reuses the hidden-path and
//! regime-observation blocks of the full model.

use crate::dist::{
    draw_beta, draw_dirichlet, draw_gamma, hmc_update, sample_gig, DistError, GigParams,
};
use crate::gibbs::{
    ffbs, lambda_log_target, ChainConfig, ChainError, SweepOptions,
};
use crate::model::{AugmentedState, NetworkPanel, PriorConfig, RegimeParams};
use crate::rng::RngStream;
use crate::tensor::ParafacMarginals;
use serde::{Deserialize, Serialize};

/// Pooled-model parameters: per-regime coefficient vector, local variance,
/// shrinkage scale, zero-inflation probability and the shared global
/// variance and transition matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PooledParams {
    /// Coefficients, regime-major rows of length Q.
    pub g: Vec<f64>,
    pub w: Vec<f64>,
    pub tau: f64,
    pub lambda: Vec<f64>,
    pub rho: Vec<f64>,
    pub xi: Vec<f64>,
    pub q: usize,
}

impl PooledParams {
    pub fn regimes(&self) -> usize {
        self.rho.len()
    }

    pub fn g_row(&self, l: usize) -> &[f64] {
        &self.g[l * self.q..(l + 1) * self.q]
    }

    pub fn xi_row(&self, l: usize) -> &[f64] {
        let n = self.regimes();
        &self.xi[l * n..(l + 1) * n]
    }

    pub fn predictor(&self, l: usize, z: &[f64]) -> f64 {
        self.g_row(l).iter().zip(z).map(|(a, b)| a * b).sum()
    }

    /// Expand the pooled coefficients into rank-one PARAFAC marginals with
    /// all-ones node factors, reproducing g_{ijkq} = g_q exactly.
    pub fn expand_to_regime_params(&self, dims: [usize; 4]) -> RegimeParams {
        let mut marginals = Vec::with_capacity(self.regimes());
        for l in 0..self.regimes() {
            let mut marg = ParafacMarginals::zeros(1, dims);
            marg.factor_mut(0, 0).fill(1.0);
            marg.factor_mut(1, 0).fill(1.0);
            marg.factor_mut(2, 0).fill(1.0);
            marg.factor_mut(3, 0).copy_from_slice(self.g_row(l));
            marginals.push(marg);
        }
        RegimeParams {
            marginals,
            rho: self.rho.clone(),
            xi: self.xi.clone(),
        }
    }
}

/// Log-emissions for every (t, l); with shared coefficients each slice
/// reduces to edge counts times two log-probabilities.
fn pooled_emissions(panel: &NetworkPanel, params: &PooledParams) -> Vec<f64> {
    let regimes = params.regimes();
    let cells = panel.cells();
    let degrees = panel.degree_series();
    let mut em = vec![0.0; panel.t * regimes];
    for t in 0..panel.t {
        let z = panel.covariates(t);
        let ones = degrees[t] as f64;
        let zeros = cells as f64 - ones;
        for l in 0..regimes {
            let psi = params.predictor(l, z);
            em[t * regimes + l] = ones * crate::model::log_edge_prob(1, params.rho[l], psi)
                + zeros * crate::model::log_edge_prob(0, params.rho[l], psi);
        }
    }
    em
}

pub fn ffbs_states_pooled(
    panel: &NetworkPanel,
    params: &PooledParams,
    rng: &mut RngStream,
) -> Result<Vec<usize>, ffbs::FfbsError> {
    let em = pooled_emissions(panel, params);
    let filt = ffbs::forward_filter(&em, &params.xi, params.regimes())?;
    ffbs::backward_sample(&filt, &params.xi, params.regimes(), rng)
}

/// Allocation and Pólya-Gamma draws re-use the tensor-model block with the
/// pooled predictors expanded per cell.
fn pooled_psi_table(panel: &NetworkPanel, params: &PooledParams) -> Vec<f64> {
    let regimes = params.regimes();
    let cells = panel.cells();
    let mut psi = vec![0.0; panel.t * regimes * cells];
    for t in 0..panel.t {
        let z = panel.covariates(t);
        for l in 0..regimes {
            let v = params.predictor(l, z);
            psi[(t * regimes + l) * cells..(t * regimes + l + 1) * cells].fill(v);
        }
    }
    psi
}

/// Gaussian full conditional of one pooled coefficient vector: precision
/// (tau w_l)^{-1} I_Q + sum_{t in T_l} (sum_cells omega) z z' and linear term
/// sum_t (sum_cells kappa - omega gbar... ) reduced to sum_t z (sum_cells
/// kappa) because the pooled model has no rank complement.
pub fn pooled_g_conditional(
    panel: &NetworkPanel,
    aug: &AugmentedState,
    params: &PooledParams,
    l: usize,
) -> (Vec<f64>, Vec<f64>) {
    let q = params.q;
    let cells = panel.cells();
    let prior_prec = 1.0 / (params.tau * params.w[l]);
    let mut prec = vec![0.0; q * q];
    let mut linear = vec![0.0; q];
    for d in 0..q {
        prec[d * q + d] = prior_prec;
    }
    for t in 0..panel.t {
        if aug.s[t] != l {
            continue;
        }
        let z = panel.covariates(t);
        let xs = panel.slice(t);
        let ds = &aug.d[t * cells..(t + 1) * cells];
        let os = &aug.omega[t * cells..(t + 1) * cells];
        let mut omega_sum = 0.0;
        let mut kappa_sum = 0.0;
        for cell in 0..cells {
            let at_risk = 1.0 - ds[cell] as f64;
            omega_sum += at_risk * os[cell];
            kappa_sum += at_risk * (xs[cell] as f64 - 0.5);
        }
        for (c, &zc) in z.iter().enumerate() {
            linear[c] += kappa_sum * zc;
            for (r, &zr) in z.iter().enumerate() {
                prec[c * q + r] += omega_sum * zr * zc;
            }
        }
    }
    (prec, linear)
}

/// Log of the Gaussian kernel -g'Pg/2 + b'g for the ratio checks.
pub fn pooled_g_log_kernel(prec: &[f64], linear: &[f64], g: &[f64]) -> f64 {
    let q = linear.len();
    let mut quad = 0.0;
    for c in 0..q {
        for r in 0..q {
            quad += g[r] * prec[c * q + r] * g[c];
        }
    }
    let lin: f64 = g.iter().zip(linear).map(|(a, b)| a * b).sum();
    -0.5 * quad + lin
}

pub fn sample_g_pooled(
    panel: &NetworkPanel,
    aug: &AugmentedState,
    params: &mut PooledParams,
    jitter: f64,
    rng: &mut RngStream,
) -> Result<(), ChainError> {
    for l in 0..params.regimes() {
        let (prec, linear) = pooled_g_conditional(panel, aug, params, l);
        let cond = crate::gibbs::GammaConditional {
            precision: crate::gibbs::Precision::Dense(prec),
            linear,
        };
        let draw = crate::gibbs::sample_from_conditional(&cond, jitter, rng).ok_or(
            ChainError::Numerical {
                block: "pooled/g",
                iteration: 0,
                detail: format!("factorization failure for regime {l}"),
            },
        )?;
        params.g[l * params.q..(l + 1) * params.q].copy_from_slice(&draw);
    }
    Ok(())
}

/// GiG parameters of the pooled global-variance conditional; the order picks
/// up -QL/2 from the Gaussian normalizing constants.
pub fn pooled_tau_conditional(params: &PooledParams, prior: &PriorConfig) -> Result<GigParams, DistError> {
    let q = params.q as f64;
    let l_count = params.regimes() as f64;
    let mut b = 0.0;
    for l in 0..params.regimes() {
        let ss: f64 = params.g_row(l).iter().map(|&v| v * v).sum();
        b += ss / params.w[l];
    }
    GigParams::new(2.0 * prior.b_tau, b, prior.a_tau() - q * l_count / 2.0)
}

pub fn pooled_w_conditional(params: &PooledParams, l: usize) -> Result<GigParams, DistError> {
    let q = params.q as f64;
    let ss: f64 = params.g_row(l).iter().map(|&v| v * v).sum();
    GigParams::new(
        params.lambda[l] * params.lambda[l],
        ss / params.tau,
        1.0 - q / 2.0,
    )
}

/// Draw tau, the local variances and the shrinkage scales. The lambda update
/// conditions on w_l (one exponential variate per regime) and runs the same
/// log-scale HMC kernel as the tensor model.
pub fn sample_variances_pooled(
    params: &mut PooledParams,
    prior: &PriorConfig,
    step: f64,
    nleap: usize,
    rng: &mut RngStream,
) -> Result<Vec<bool>, DistError> {
    let tau_gig = pooled_tau_conditional(params, prior)?;
    params.tau = sample_gig(&tau_gig, rng)?.max(1e-300);
    for l in 0..params.regimes() {
        let w_gig = pooled_w_conditional(params, l)?;
        params.w[l] = sample_gig(&w_gig, rng)?.max(1e-300);
    }
    let mut flags = Vec::with_capacity(params.regimes());
    for l in 0..params.regimes() {
        let (logp, grad) =
            lambda_log_target(prior.a_lambda[l], prior.b_lambda[l], 2.0, params.w[l]);
        let res = hmc_update(&logp, &grad, params.lambda[l].ln(), step, nleap, rng);
        params.lambda[l] = res.value.exp();
        flags.push(res.accepted);
    }
    Ok(flags)
}

/// Sort regimes by descending rho and permute every regime-indexed block.
pub fn relabel_pooled(params: &mut PooledParams, s: &mut [usize]) -> Vec<usize> {
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
    let q = params.q;
    let old_g = params.g.clone();
    for (new, &old) in order.iter().enumerate() {
        params.g[new * q..(new + 1) * q].copy_from_slice(&old_g[old * q..(old + 1) * q]);
    }
    params.rho = order.iter().map(|&o| params.rho[o]).collect();
    params.w = order.iter().map(|&o| params.w[o]).collect();
    params.lambda = order.iter().map(|&o| params.lambda[o]).collect();
    let old_xi = params.xi.clone();
    for nr in 0..regimes {
        for nc in 0..regimes {
            params.xi[nr * regimes + nc] = old_xi[order[nr] * regimes + order[nc]];
        }
    }
    for v in s.iter_mut() {
        *v = inverse[*v];
    }
    order
}

/// Prior draw of the pooled parameters, relabeled into the identified order.
pub fn pooled_prior_draw(
    prior: &PriorConfig,
    q: usize,
    rng: &mut RngStream,
) -> Result<PooledParams, DistError> {
    let regimes = prior.regimes;
    let tau = draw_gamma(prior.a_tau(), prior.b_tau, rng)?;
    let mut lambda = Vec::with_capacity(regimes);
    let mut w = Vec::with_capacity(regimes);
    let mut g = Vec::with_capacity(regimes * q);
    let mut rho = Vec::with_capacity(regimes);
    let mut xi = Vec::with_capacity(regimes * regimes);
    for l in 0..regimes {
        let lam = draw_gamma(prior.a_lambda[l], prior.b_lambda[l], rng)?;
        let wl = (rng.exp1() / (0.5 * lam * lam)).max(1e-300);
        let sd = (tau * wl).sqrt();
        for _ in 0..q {
            g.push(sd * rng.standard_normal());
        }
        lambda.push(lam);
        w.push(wl);
        rho.push(draw_beta(prior.a_rho[l], prior.b_rho[l], rng)?);
        xi.extend(draw_dirichlet(&prior.xi_concentration[l], rng)?);
    }
    let mut params = PooledParams { g, w, tau, lambda, rho, xi, q };
    relabel_pooled(&mut params, &mut []);
    Ok(params)
}

/// Complete-data log-likelihood of the pooled augmented model, mirroring the
/// tensor version with shared predictors.
pub fn complete_data_loglik_pooled(
    panel: &NetworkPanel,
    aug: &AugmentedState,
    params: &PooledParams,
) -> Result<f64, crate::model::ModelError> {
    aug.check_allocation_invariant(panel)?;
    let cells = panel.cells();
    let mut acc = -(params.regimes() as f64).ln();
    for w in aug.s.windows(2) {
        acc += params.xi_row(w[0])[w[1]].ln();
    }
    for t in 0..panel.t {
        let l = aug.s[t];
        let rho = params.rho[l];
        let psi = params.predictor(l, panel.covariates(t));
        let xs = panel.slice(t);
        let ds = &aug.d[t * cells..(t + 1) * cells];
        let os = &aug.omega[t * cells..(t + 1) * cells];
        for cell in 0..cells {
            let d = ds[cell] as f64;
            let kappa = (1.0 - d) * (xs[cell] as f64 - 0.5);
            acc += d * rho.ln() + (1.0 - d) * ((1.0 - rho).ln() - std::f64::consts::LN_2)
                - 0.5 * (1.0 - d) * os[cell] * psi * psi
                + kappa * psi;
        }
    }
    Ok(acc)
}

/// Log-prior of the pooled parameters.
pub fn log_prior_pooled(params: &PooledParams, prior: &PriorConfig) -> f64 {
    use statrs::function::gamma::ln_gamma;
    let mut acc = 0.0;
    let gamma_ln = |x: f64, shape: f64, rate: f64| {
        if x <= 0.0 {
            f64::NEG_INFINITY
        } else {
            shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
        }
    };
    acc += gamma_ln(params.tau, prior.a_tau(), prior.b_tau);
    for l in 0..params.regimes() {
        let var = params.tau * params.w[l];
        if var <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let ss: f64 = params.g_row(l).iter().map(|&v| v * v).sum();
        acc += -0.5 * params.q as f64 * (2.0 * std::f64::consts::PI * var).ln() - 0.5 * ss / var;
        let rate = 0.5 * params.lambda[l] * params.lambda[l];
        if params.w[l] <= 0.0 {
            return f64::NEG_INFINITY;
        }
        acc += rate.ln() - rate * params.w[l];
        acc += gamma_ln(params.lambda[l], prior.a_lambda[l], prior.b_lambda[l]);
        let rho = params.rho[l];
        if !(rho > 0.0 && rho < 1.0) {
            return f64::NEG_INFINITY;
        }
        let (a, b) = (prior.a_rho[l], prior.b_rho[l]);
        acc += ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b)
            + (a - 1.0) * rho.ln()
            + (b - 1.0) * (1.0 - rho).ln();
        let conc = &prior.xi_concentration[l];
        let a0: f64 = conc.iter().sum();
        acc += ln_gamma(a0) - conc.iter().map(|&c| ln_gamma(c)).sum::<f64>()
            + params
                .xi_row(l)
                .iter()
                .zip(conc)
                .map(|(&x, &c)| (c - 1.0) * x.ln())
                .sum::<f64>();
    }
    acc
}

/// One pooled Gibbs sweep: blocks (I), (II'), (IV) and the relabeling.
pub fn pooled_sweep(
    params: &mut PooledParams,
    aug: &mut AugmentedState,
    panel: &NetworkPanel,
    prior: &PriorConfig,
    opts: &SweepOptions,
    root: &RngStream,
    master: &mut RngStream,
    sweep_index: u64,
) -> Result<(usize, usize), ChainError> {
    let iteration = sweep_index as usize;
    let em = pooled_emissions(panel, params);
    let filt = ffbs::forward_filter(&em, &params.xi, params.regimes()).map_err(|e| {
        ChainError::Numerical { block: "I/ffbs", iteration, detail: e.to_string() }
    })?;
    aug.s = ffbs::backward_sample(&filt, &params.xi, params.regimes(), master).map_err(|e| {
        ChainError::Numerical { block: "I/ffbs", iteration, detail: e.to_string() }
    })?;
    let psi = pooled_psi_table(panel, params);
    let expanded = params.expand_to_regime_params([panel.i, panel.j, panel.k, panel.q]);
    aug.d = crate::gibbs::sample_d_with_psi_table(panel, &expanded, &aug.s, &psi, root, sweep_index);
    aug.omega = crate::gibbs::sample_omega_with_psi_table(
        panel,
        params.regimes(),
        &aug.s,
        &psi,
        root,
        sweep_index,
    );

    let flags = sample_variances_pooled(params, prior, opts.hmc_step, opts.hmc_nleap, master)
        .map_err(|e| ChainError::Numerical {
            block: "II/pooled-variances",
            iteration,
            detail: e.to_string(),
        })?;
    let accepted = flags.iter().filter(|&&f| f).count();

    sample_g_pooled(panel, aug, params, opts.jitter, master)?;

    // Block (IV) reuses the tensor-model updates through a thin wrapper.
    let counts = crate::gibbs::allocation_counts(panel, aug, params.regimes());
    for (l, &(n1, n0)) in counts.iter().enumerate() {
        params.rho[l] = draw_beta(
            n1 as f64 + prior.a_rho[l],
            n0 as f64 + prior.b_rho[l],
            master,
        )
        .map_err(|e| ChainError::Numerical {
            block: "IV/rho",
            iteration,
            detail: e.to_string(),
        })?;
    }
    let tcounts = crate::gibbs::transition_counts(&aug.s, params.regimes());
    let regimes = params.regimes();
    for l in 0..regimes {
        let conc: Vec<f64> = (0..regimes)
            .map(|m| prior.xi_concentration[l][m] + tcounts[l * regimes + m] as f64)
            .collect();
        let row = draw_dirichlet(&conc, master).map_err(|e| ChainError::Numerical {
            block: "IV/xi",
            iteration,
            detail: e.to_string(),
        })?;
        params.xi[l * regimes..(l + 1) * regimes].copy_from_slice(&row);
    }
    relabel_pooled(params, &mut aug.s);
    Ok((accepted, flags.len()))
}

/// Stored pooled draw.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PooledDraw {
    pub iteration: usize,
    pub g: Vec<f64>,
    pub w: Vec<f64>,
    pub tau: f64,
    pub lambda: Vec<f64>,
    pub rho: Vec<f64>,
    pub xi: Vec<f64>,
    pub s: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct PooledChainOutput {
    pub draws: Vec<PooledDraw>,
    pub hmc_acceptance: f64,
}

/// Run the pooled chain.
pub fn run_pooled_chain(
    panel: &NetworkPanel,
    prior: &PriorConfig,
    cfg: &ChainConfig,
) -> Result<PooledChainOutput, ChainError> {
    cfg.validate()?;
    prior.validate()?;
    let root = RngStream::new(cfg.seed);
    let mut master = RngStream::new(cfg.seed);

    // Density-quantile path initialization, matching the tensor chain.
    let init = crate::gibbs::init_state(panel, prior, &mut master);
    let mut params = PooledParams {
        g: vec![0.0; prior.regimes * panel.q],
        w: vec![1.0; prior.regimes],
        tau: prior.a_tau() / prior.b_tau,
        lambda: (0..prior.regimes)
            .map(|l| prior.a_lambda[l] / prior.b_lambda[l])
            .collect(),
        rho: init.params.rho.clone(),
        xi: init.params.xi.clone(),
        q: panel.q,
    };
    for v in params.g.iter_mut() {
        *v = 0.1 * master.standard_normal();
    }
    let mut aug = init.aug;

    let mut step = cfg.hmc_step;
    let mut window = (0usize, 0usize);
    let mut totals = (0usize, 0usize);
    let mut draws = Vec::with_capacity(cfg.stored_draws());
    for it in 0..cfg.iterations {
        let opts = SweepOptions {
            hmc_step: step,
            hmc_nleap: cfg.hmc_nleap,
            jitter: cfg.jitter,
            fault: crate::gibbs::FaultInjection::None,
        };
        let (acc, tot) =
            pooled_sweep(&mut params, &mut aug, panel, prior, &opts, &root, &mut master, it as u64)
                .map_err(|e| match e {
                    ChainError::Numerical { block, detail, .. } => ChainError::Numerical {
                        block,
                        iteration: it,
                        detail,
                    },
                    other => other,
                })?;
        totals.0 += acc;
        totals.1 += tot;
        if it < cfg.burn_in {
            window.0 += acc;
            window.1 += tot;
            if window.1 >= 50 {
                let rate = window.0 as f64 / window.1 as f64;
                if rate < 0.65 {
                    step *= 0.9;
                } else if rate > 0.85 {
                    step *= 1.1;
                }
                window = (0, 0);
            }
        }
        if it >= cfg.burn_in && (it - cfg.burn_in) % cfg.thin == 0 {
            draws.push(PooledDraw {
                iteration: it,
                g: params.g.clone(),
                w: params.w.clone(),
                tau: params.tau,
                lambda: params.lambda.clone(),
                rho: params.rho.clone(),
                xi: params.xi.clone(),
                s: aug.s.clone(),
            });
        }
    }
    Ok(PooledChainOutput {
        draws,
        hmc_acceptance: totals.0 as f64 / totals.1.max(1) as f64,
    })
}
