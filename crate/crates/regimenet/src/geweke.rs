//! Joint-distribution correctness testing for the samplers.
//!
//! Two ways of sampling the same joint law are compared: the
//! marginal-conditional route (independent draws of parameters from the
//! prior, then data from the model) and the successive-conditional route
//! (alternating one Gibbs sweep with a redraw of the data given the current
//! parameters). If every full conditional is exact the two collections agree
//! in distribution; the report compares first and second moments of a panel
//! of tracked statistics with Monte Carlo standard errors.
//!
//! The harness supports deliberate fault injection so its own power can be
//! demonstrated: an off-by-one order in the global-variance conditional must
//! blow the tau statistics far outside the acceptance band.

use crate::diagnostics::effective_sample_size;
use crate::gibbs::{
    gibbs_sweep, prior_draw, FaultInjection, GibbsState, SweepOptions,
};
use crate::model::{AugmentedState, NetworkPanel, PriorConfig, RegimeParams, ShrinkageState};
use crate::pooled::{pooled_prior_draw, pooled_sweep, PooledParams};
use crate::rng::RngStream;
use crate::simulate::{simulate_covariates, simulate_observations, simulate_path, InitialStateLaw};

#[derive(Debug, Clone)]
pub struct GewekeConfig {
    pub dims: (usize, usize, usize, usize, usize),
    pub prior: PriorConfig,
    pub sweeps: usize,
    /// Successive-conditional iterations discarded before recording.
    pub warmup: usize,
    pub hmc_step: f64,
    pub hmc_nleap: usize,
    pub seed: u64,
    pub fault: FaultInjection,
}

impl GewekeConfig {
    pub fn tiny(seed: u64, sweeps: usize, fault: FaultInjection) -> Self {
        Self {
            dims: (3, 3, 1, 10, 2),
            prior: PriorConfig::defaults(2, 2),
            sweeps,
            warmup: sweeps / 20,
            hmc_step: 0.2,
            hmc_nleap: 10,
            seed,
            fault,
        }
    }

    fn assert_exchangeable(&self) {
        let p = &self.prior;
        let all_eq = |v: &[f64]| v.windows(2).all(|w| w[0] == w[1]);
        assert!(
            all_eq(&p.a_lambda)
                && all_eq(&p.b_lambda)
                && all_eq(&p.a_rho)
                && all_eq(&p.b_rho)
                && p.xi_concentration.iter().all(|row| {
                    all_eq(row) && row[0] == p.xi_concentration[0][0]
                }),
            "the correctness harness requires regime-exchangeable priors"
        );
    }
}

/// One tracked statistic, compared on its mean and second moment.
#[derive(Debug, Clone)]
pub struct GewekeStat {
    pub name: String,
    pub mean_a: f64,
    pub mean_b: f64,
    pub se: f64,
    pub z: f64,
}

#[derive(Debug, Clone)]
pub struct GewekeReport {
    pub stats: Vec<GewekeStat>,
    pub samples: usize,
}

impl GewekeReport {
    pub fn max_abs_z(&self) -> f64 {
        self.stats.iter().map(|s| s.z.abs()).fold(0.0, f64::max)
    }

    /// Largest |z| among statistics whose name starts with the prefix.
    pub fn max_abs_z_for(&self, prefix: &str) -> f64 {
        self.stats
            .iter()
            .filter(|s| s.name.starts_with(prefix))
            .map(|s| s.z.abs())
            .fold(0.0, f64::max)
    }

    pub fn passes(&self, threshold: f64) -> bool {
        self.max_abs_z() <= threshold
    }
}

/// Indices of the four tracked marginal entries, spread over modes, ranks
/// and regimes and clamped into range.
fn tracked_gamma_entries(prior: &PriorConfig, dims: [usize; 4]) -> Vec<(usize, usize, usize, usize)> {
    let r2 = 1.min(prior.rank - 1);
    let l2 = 1.min(prior.regimes - 1);
    vec![
        (0, 0, 0, 0),
        (1, r2, l2, 1.min(dims[1] - 1)),
        (2, r2, 0, 0),
        (3, 0, l2, 1.min(dims[3] - 1)),
    ]
}

fn tensor_stats(
    params: &RegimeParams,
    shrink: &ShrinkageState,
    s: &[usize],
    entries: &[(usize, usize, usize, usize)],
) -> Vec<f64> {
    let mut out = vec![shrink.tau];
    out.extend_from_slice(&params.rho);
    out.extend_from_slice(&shrink.lambda);
    for &(h, r, l, idx) in entries {
        out.push(params.marginals[l].factor(h, r)[idx]);
    }
    let occ = s.iter().filter(|&&v| v == 0).count() as f64 / s.len() as f64;
    out.push(occ);
    out
}

fn tensor_stat_names(prior: &PriorConfig, entries: &[(usize, usize, usize, usize)]) -> Vec<String> {
    let mut names = vec!["tau".to_string()];
    for l in 0..prior.regimes {
        names.push(format!("rho[{}]", l + 1));
    }
    for l in 0..prior.regimes {
        names.push(format!("lambda[{}]", l + 1));
    }
    for &(h, r, l, idx) in entries {
        names.push(format!("gamma[h{}r{}l{}i{}]", h + 1, r + 1, l + 1, idx + 1));
    }
    names.push("occupancy[1]".to_string());
    names
}

/// Run both collections for the tensor model and compare their moments.
pub fn geweke_pair(cfg: &GewekeConfig) -> GewekeReport {
    cfg.assert_exchangeable();
    let (i, j, k, t_len, q) = cfg.dims;
    let dims4 = [i, j, k, q];
    let entries = tracked_gamma_entries(&cfg.prior, dims4);
    let names = tensor_stat_names(&cfg.prior, &entries);

    // Collection A: marginal-conditional, independent draws.
    let mut rng_a = RngStream::new(cfg.seed ^ 0x5EED_AAAA);
    let mut coll_a: Vec<Vec<f64>> = Vec::with_capacity(cfg.sweeps);
    for _ in 0..cfg.sweeps {
        let (params, shrink) = prior_draw(&cfg.prior, dims4, &mut rng_a).expect("prior draw");
        let s = simulate_path(&params, t_len, InitialStateLaw::Uniform, &mut rng_a);
        coll_a.push(tensor_stats(&params, &shrink, &s, &entries));
    }

    // Collection B: successive-conditional.
    let root = RngStream::new(cfg.seed);
    let mut master = RngStream::new(cfg.seed ^ 0x5EED_BBBB);
    let (mut params, mut shrink) = prior_draw(&cfg.prior, dims4, &mut master).expect("prior draw");
    let z = simulate_covariates(t_len, q, &mut master);
    let mut s = simulate_path(&params, t_len, InitialStateLaw::Uniform, &mut master);
    let (mut x, mut d) = simulate_observations((i, j, k), &z, q, &params, &s, &mut master);
    let cells = i * j * k;
    let mut coll_b: Vec<Vec<f64>> = Vec::with_capacity(cfg.sweeps);
    let opts = SweepOptions {
        hmc_step: cfg.hmc_step,
        hmc_nleap: cfg.hmc_nleap,
        jitter: 1e-10,
        fault: cfg.fault,
    };
    for sweep in 0..cfg.warmup + cfg.sweeps {
        let panel = NetworkPanel::new(cfg.dims, x.clone(), z.clone()).expect("valid panel");
        let mut state = GibbsState {
            params,
            shrink,
            aug: AugmentedState {
                s: s.clone(),
                d: d.clone(),
                omega: vec![0.25; t_len * cells],
            },
        };
        gibbs_sweep(&mut state, &panel, &cfg.prior, &opts, &root, &mut master, sweep as u64)
            .expect("sweep");
        params = state.params;
        shrink = state.shrink;
        // Data step: redraw the path, allocations and observations from the
        // model given the current parameters.
        s = simulate_path(&params, t_len, InitialStateLaw::Uniform, &mut master);
        let xd = simulate_observations((i, j, k), &z, q, &params, &s, &mut master);
        x = xd.0;
        d = xd.1;
        if sweep >= cfg.warmup {
            coll_b.push(tensor_stats(&params, &shrink, &s, &entries));
        }
    }

    compare_collections(&names, &coll_a, &coll_b)
}

/// Pooled-model variant of the harness.
pub fn geweke_pair_pooled(cfg: &GewekeConfig) -> GewekeReport {
    cfg.assert_exchangeable();
    let (i, j, k, t_len, q) = cfg.dims;
    let dims4 = [i, j, k, q];
    let regimes = cfg.prior.regimes;
    let mut names = vec!["tau".to_string()];
    for l in 0..regimes {
        names.push(format!("rho[{}]", l + 1));
        names.push(format!("lambda[{}]", l + 1));
        names.push(format!("w[{}]", l + 1));
        names.push(format!("g[{},1]", l + 1));
    }
    names.push("occupancy[1]".to_string());
    let stats = |p: &PooledParams, s: &[usize]| -> Vec<f64> {
        let mut out = vec![p.tau];
        for l in 0..regimes {
            out.push(p.rho[l]);
            out.push(p.lambda[l]);
            out.push(p.w[l]);
            out.push(p.g_row(l)[0]);
        }
        out.push(s.iter().filter(|&&v| v == 0).count() as f64 / s.len() as f64);
        out
    };

    let mut rng_a = RngStream::new(cfg.seed ^ 0x700D_AAAA);
    let mut coll_a = Vec::with_capacity(cfg.sweeps);
    for _ in 0..cfg.sweeps {
        let p = pooled_prior_draw(&cfg.prior, q, &mut rng_a).expect("prior draw");
        let expanded = p.expand_to_regime_params(dims4);
        let s = simulate_path(&expanded, t_len, InitialStateLaw::Uniform, &mut rng_a);
        coll_a.push(stats(&p, &s));
    }

    let root = RngStream::new(cfg.seed);
    let mut master = RngStream::new(cfg.seed ^ 0x700D_BBBB);
    let mut p = pooled_prior_draw(&cfg.prior, q, &mut master).expect("prior draw");
    let z = simulate_covariates(t_len, q, &mut master);
    let expanded = p.expand_to_regime_params(dims4);
    let mut s = simulate_path(&expanded, t_len, InitialStateLaw::Uniform, &mut master);
    let (mut x, mut d) = simulate_observations((i, j, k), &z, q, &expanded, &s, &mut master);
    let cells = i * j * k;
    let mut coll_b = Vec::with_capacity(cfg.sweeps);
    let opts = SweepOptions {
        hmc_step: cfg.hmc_step,
        hmc_nleap: cfg.hmc_nleap,
        jitter: 1e-10,
        fault: cfg.fault,
    };
    for sweep in 0..cfg.warmup + cfg.sweeps {
        let panel = NetworkPanel::new(cfg.dims, x.clone(), z.clone()).expect("valid panel");
        let mut aug = AugmentedState {
            s: s.clone(),
            d: d.clone(),
            omega: vec![0.25; t_len * cells],
        };
        pooled_sweep(&mut p, &mut aug, &panel, &cfg.prior, &opts, &root, &mut master, sweep as u64)
            .expect("pooled sweep");
        let expanded = p.expand_to_regime_params(dims4);
        s = simulate_path(&expanded, t_len, InitialStateLaw::Uniform, &mut master);
        let xd = simulate_observations((i, j, k), &z, q, &expanded, &s, &mut master);
        x = xd.0;
        d = xd.1;
        if sweep >= cfg.warmup {
            coll_b.push(stats(&p, &s));
        }
    }

    compare_collections(&names, &coll_a, &coll_b)
}

/// Moment comparison with iid standard errors on the independent collection
/// and autocorrelation-adjusted errors on the chain collection.
fn compare_collections(
    names: &[String],
    coll_a: &[Vec<f64>],
    coll_b: &[Vec<f64>],
) -> GewekeReport {
    let mut stats = Vec::new();
    let n_stats = names.len();
    for (si, name) in names.iter().enumerate() {
        for moment in 1..=2u32 {
            let a: Vec<f64> = coll_a.iter().map(|v| v[si].powi(moment as i32)).collect();
            let b: Vec<f64> = coll_b.iter().map(|v| v[si].powi(moment as i32)).collect();
            let (mean_a, sd_a) = crate::diagnostics::mean_sd(&a);
            let (mean_b, sd_b) = crate::diagnostics::mean_sd(&b);
            let se_a = sd_a / (a.len() as f64).sqrt();
            let ess_b = effective_sample_size(&b);
            let se_b = sd_b / ess_b.sqrt();
            let se = (se_a * se_a + se_b * se_b).sqrt();
            let z = if se > 0.0 { (mean_a - mean_b) / se } else { 0.0 };
            let label = if moment == 1 {
                format!("{name} mean")
            } else {
                format!("{name} m2")
            };
            stats.push(GewekeStat { name: label, mean_a, mean_b, se, z });
        }
    }
    debug_assert_eq!(stats.len(), 2 * n_stats);
    GewekeReport { stats, samples: coll_a.len() }
}
