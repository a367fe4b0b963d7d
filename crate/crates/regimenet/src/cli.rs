//! Command-line entry points: data simulation, fitting both samplers,
//! summarizing draw files and running the joint-distribution check.
//!
//! Exit codes: 0 success, 2 usage, 3 validation, 4 numerical failure.

use crate::gibbs::{run_chain, ChainConfig, ChainError, FaultInjection};
use crate::io::{self, IoError, RunManifest, GAMMA_LAYOUT_LEGEND};
use crate::model::{PriorConfig, RegimeParams, ShrinkageState};
use crate::pooled::run_pooled_chain;
use crate::rng::RngStream;
use crate::simulate::{simulate_panel, InitialStateLaw, TruthSpec};
use crate::tensor::ParafacMarginals;
use chrono::Utc;
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "REGIMENET_OUT";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Usage(#[from] clap::Error),
    #[error("{0}")]
    Validation(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(e) => {
                use clap::error::ErrorKind;
                match e.kind() {
                    ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                    _ => 2,
                }
            }
            CliError::Validation(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<ChainError> for CliError {
    fn from(e: ChainError) -> Self {
        match e {
            ChainError::Numerical { .. } => CliError::Numerical(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "regimenet",
    version,
    about = "Markov-switching zero-inflated tensor regression for temporal networks"
)]
pub struct Cli {
    /// Output directory (default: $REGIMENET_OUT or the working directory).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for the sampler (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic panel with known truth.
    Simulate(SimulateArgs),
    /// Fit the full tensor model.
    Fit(FitArgs),
    /// Fit the pooled benchmark model.
    FitPooled(FitArgs),
    /// Summarize a draw file into flat plot-ready tables.
    Summarize(SummarizeArgs),
    /// Run the joint-distribution correctness check.
    Geweke(GewekeArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long = "I")]
    pub i: usize,
    #[arg(long = "J")]
    pub j: usize,
    #[arg(long = "K")]
    pub k: usize,
    #[arg(long = "T")]
    pub t: usize,
    #[arg(long = "Q")]
    pub q: usize,
    #[arg(long = "L")]
    pub regimes: usize,
    #[arg(long = "R")]
    pub rank: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Explicit zero-inflation probabilities, descending (comma-separated).
    /// When absent the truth is drawn from the prior.
    #[arg(long, value_delimiter = ',')]
    pub rho: Option<Vec<f64>>,
    /// Self-transition probability used with --rho.
    #[arg(long, default_value_t = 0.9)]
    pub persistence: f64,
    /// Marginal-entry scale used with --rho.
    #[arg(long, default_value_t = 0.4)]
    pub coef_sd: f64,
}

#[derive(Args, Debug, Clone)]
pub struct FitArgs {
    #[arg(long)]
    pub panel: PathBuf,
    #[arg(long)]
    pub covariates: PathBuf,
    /// Flat key = value configuration file; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "R")]
    pub rank: Option<usize>,
    #[arg(long = "L")]
    pub regimes: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long = "burn-in")]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "hmc-step")]
    pub hmc_step: Option<f64>,
    #[arg(long = "hmc-nleap")]
    pub hmc_nleap: Option<usize>,
    #[arg(long)]
    pub jitter: Option<f64>,
    #[arg(long = "alpha-bar")]
    pub alpha_bar: Option<f64>,
    #[arg(long = "b-tau")]
    pub b_tau: Option<f64>,
    #[arg(long = "a-lambda", value_delimiter = ',')]
    pub a_lambda: Option<Vec<f64>>,
    #[arg(long = "b-lambda", value_delimiter = ',')]
    pub b_lambda: Option<Vec<f64>>,
    #[arg(long = "a-rho", value_delimiter = ',')]
    pub a_rho: Option<Vec<f64>>,
    #[arg(long = "b-rho", value_delimiter = ',')]
    pub b_rho: Option<Vec<f64>>,
    /// Symmetric Dirichlet concentration for the transition rows.
    #[arg(long = "xi-conc")]
    pub xi_conc: Option<f64>,
    /// Validate inputs and configuration, then exit without sampling.
    #[arg(long, default_value_t = false)]
    pub validate_only: bool,
}

#[derive(Args, Debug)]
pub struct SummarizeArgs {
    #[arg(long)]
    pub draws: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub panel: PathBuf,
    #[arg(long)]
    pub covariates: PathBuf,
}

#[derive(Args, Debug)]
pub struct GewekeArgs {
    #[arg(long, default_value_t = 20_000)]
    pub sweeps: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Fault to inject: none, noop or tau-order.
    #[arg(long, default_value = "none")]
    pub fault: String,
    /// Run the pooled-model harness instead of the tensor one.
    #[arg(long, default_value_t = false)]
    pub pooled: bool,
}

/// Parse and execute; library-level so the tests can drive it directly.
pub fn run_with_args<I, S>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    let out_dir = resolve_out_dir(cli.out.as_deref());
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::Validation(format!("cannot create output directory: {e}")))?;
    let threads = cli.threads.unwrap_or_else(num_threads_default);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Validation(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Simulate(args) => cmd_simulate(&out_dir, &args),
        Command::Fit(args) => cmd_fit(&out_dir, &args, threads, false),
        Command::FitPooled(args) => cmd_fit(&out_dir, &args, threads, true),
        Command::Summarize(args) => cmd_summarize(&out_dir, &args),
        Command::Geweke(args) => cmd_geweke(&out_dir, &args),
    })
}

fn resolve_out_dir(flag: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Ok(env) = std::env::var(OUT_DIR_ENV) {
        if !env.is_empty() {
            return PathBuf::from(env);
        }
    }
    PathBuf::from(".")
}

fn num_threads_default() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn cmd_simulate(out_dir: &Path, args: &SimulateArgs) -> Result<(), CliError> {
    let dims = (args.i, args.j, args.k, args.t, args.q);
    let truth = match &args.rho {
        None => TruthSpec::FromPrior(PriorConfig::defaults(args.rank, args.regimes)),
        Some(rho) => {
            if rho.len() != args.regimes {
                return Err(CliError::Validation(format!(
                    "--rho needs {} entries, got {}",
                    args.regimes,
                    rho.len()
                )));
            }
            let mut sorted = rho.clone();
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let (params, shrink) =
                explicit_truth(args, &sorted).map_err(CliError::Validation)?;
            TruthSpec::Explicit(params, shrink)
        }
    };
    let (panel, truth) = simulate_panel(dims, truth, InitialStateLaw::Stationary, args.seed)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    io::write_panel(&out_dir.join("panel.csv"), &panel)?;
    io::write_covariates(&out_dir.join("covariates.csv"), &panel)?;
    io::write_truth(&out_dir.join("truth.json"), &truth)?;
    println!(
        "simulated panel I={} J={} K={} T={} Q={} -> {}",
        args.i,
        args.j,
        args.k,
        args.t,
        args.q,
        out_dir.display()
    );
    Ok(())
}

/// Deterministic explicit truth: seeded normal marginals, persistent
/// transitions and pinned zero-inflation probabilities.
fn explicit_truth(
    args: &SimulateArgs,
    rho: &[f64],
) -> Result<(RegimeParams, ShrinkageState), String> {
    if rho.iter().any(|&r| !(0.0..=1.0).contains(&r)) {
        return Err("--rho entries must lie in [0, 1]".into());
    }
    let regimes = args.regimes;
    let mut rng = RngStream::new(args.seed ^ 0x7247_5554);
    let dims = [args.i, args.j, args.k, args.q];
    let mut marginals = Vec::with_capacity(regimes);
    for _ in 0..regimes {
        let mut marg = ParafacMarginals::zeros(args.rank, dims);
        for r in 0..args.rank {
            for h in 0..4 {
                for v in marg.factor_mut(h, r) {
                    *v = args.coef_sd * rng.standard_normal();
                }
            }
        }
        marginals.push(marg);
    }
    let stay = args.persistence.clamp(0.0, 1.0);
    let off = if regimes > 1 { (1.0 - stay) / (regimes - 1) as f64 } else { 0.0 };
    let mut xi = vec![off; regimes * regimes];
    for l in 0..regimes {
        xi[l * regimes + l] = stay;
    }
    let params = RegimeParams { marginals, rho: rho.to_vec(), xi };
    let shrink = ShrinkageState::new(
        1.0,
        vec![1.0 / args.rank as f64; args.rank],
        vec![args.coef_sd * args.coef_sd; 4 * args.rank * regimes],
        vec![1.0; regimes],
    );
    Ok((params, shrink))
}

fn resolve_fit_config(args: &FitArgs) -> Result<(PriorConfig, ChainConfig), CliError> {
    // Precedence: built-in defaults, then the config file, then flags.
    let mut file = FlatConfig::default();
    if let Some(path) = &args.config {
        file = FlatConfig::load(path)?;
    }
    let rank = args.rank.or(file.get_usize("rank")?).unwrap_or(2);
    let regimes = args.regimes.or(file.get_usize("regimes")?).unwrap_or(2);
    if rank == 0 || regimes == 0 {
        return Err(CliError::Validation("rank and regimes must be positive".into()));
    }
    let mut prior = PriorConfig::defaults(rank, regimes);
    if let Some(v) = args.alpha_bar.or(file.get_f64("alpha_bar")?) {
        prior.alpha_bar = v;
    }
    if let Some(v) = args.b_tau.or(file.get_f64("b_tau")?) {
        prior.b_tau = v;
    }
    let fill = |target: &mut Vec<f64>, src: &Option<Vec<f64>>| -> Result<(), CliError> {
        if let Some(v) = src {
            *target = if v.len() == 1 {
                vec![v[0]; regimes]
            } else if v.len() == regimes {
                v.clone()
            } else {
                return Err(CliError::Validation(format!(
                    "per-regime vector needs 1 or {regimes} entries, got {}",
                    v.len()
                )));
            };
        }
        Ok(())
    };
    fill(&mut prior.a_lambda, &args.a_lambda.clone().or(file.get_vec("a_lambda")?))?;
    fill(&mut prior.b_lambda, &args.b_lambda.clone().or(file.get_vec("b_lambda")?))?;
    fill(&mut prior.a_rho, &args.a_rho.clone().or(file.get_vec("a_rho")?))?;
    fill(&mut prior.b_rho, &args.b_rho.clone().or(file.get_vec("b_rho")?))?;
    if let Some(c) = args.xi_conc.or(file.get_f64("xi_conc")?) {
        prior.xi_concentration = vec![vec![c; regimes]; regimes];
    }
    prior
        .validate()
        .map_err(|e| CliError::Validation(e.to_string()))?;

    let mut chain = ChainConfig {
        seed: args.seed.or(file.get_u64("seed")?).unwrap_or(1),
        ..ChainConfig::default()
    };
    if let Some(v) = args.iterations.or(file.get_usize("iterations")?) {
        chain.iterations = v;
    }
    if let Some(v) = args.burn_in.or(file.get_usize("burn_in")?) {
        chain.burn_in = v;
    }
    if let Some(v) = args.thin.or(file.get_usize("thin")?) {
        chain.thin = v;
    }
    if let Some(v) = args.hmc_step.or(file.get_f64("hmc_step")?) {
        chain.hmc_step = v;
    }
    if let Some(v) = args.hmc_nleap.or(file.get_usize("hmc_nleap")?) {
        chain.hmc_nleap = v;
    }
    if let Some(v) = args.jitter.or(file.get_f64("jitter")?) {
        chain.jitter = v;
    }
    chain.validate().map_err(|e| CliError::Validation(e.to_string()))?;
    Ok((prior, chain))
}

fn cmd_fit(out_dir: &Path, args: &FitArgs, threads: usize, pooled: bool) -> Result<(), CliError> {
    let started_at = Utc::now().to_rfc3339();
    let panel = io::read_panel(&args.panel, &args.covariates)?;
    let (prior, chain) = resolve_fit_config(args)?;
    let dims = (panel.i, panel.j, panel.k, panel.t, panel.q);
    if args.validate_only {
        println!(
            "validated: panel I={} J={} K={} T={} Q={}, R={}, L={}, {} iterations",
            panel.i, panel.j, panel.k, panel.t, panel.q, prior.rank, prior.regimes, chain.iterations
        );
        return Ok(());
    }
    let command = if pooled { "fit-pooled" } else { "fit" };
    let (block_seconds, hmc_acceptance, stored) = if pooled {
        let out = run_pooled_chain(&panel, &prior, &chain)?;
        io::write_pooled_draws(&out_dir.join("draws.jsonl"), &out.draws)?;
        ([0.0; 4], out.hmc_acceptance, out.draws.len())
    } else {
        let out = run_chain(&panel, &prior, &chain)?;
        io::write_draws(&out_dir.join("draws.jsonl"), &out.draws)?;
        io::write_ess_table(&out_dir.join("ess.csv"), &out.diagnostics.ess)?;
        (
            out.diagnostics.block_seconds,
            out.diagnostics.hmc_acceptance,
            out.draws.len(),
        )
    };
    let manifest = RunManifest {
        command: command.into(),
        code_version: env!("CARGO_PKG_VERSION").into(),
        seed: chain.seed,
        dims,
        prior,
        chain,
        threads,
        started_at,
        finished_at: Utc::now().to_rfc3339(),
        block_seconds,
        hmc_acceptance,
        stored_draws: stored,
        gamma_layout: GAMMA_LAYOUT_LEGEND.into(),
    };
    io::write_manifest(&out_dir.join("manifest.json"), &manifest)?;
    println!(
        "{command}: {stored} draws stored (L={}, R={}, {} iterations) -> {}",
        manifest.prior.regimes,
        manifest.prior.rank,
        manifest.chain.iterations,
        out_dir.display()
    );
    Ok(())
}

fn cmd_summarize(out_dir: &Path, args: &SummarizeArgs) -> Result<(), CliError> {
    let manifest = io::read_manifest(&args.manifest)?;
    let panel = io::read_panel(&args.panel, &args.covariates)?;
    let draws = io::read_draws(&args.draws)?;
    if draws.is_empty() {
        return Err(CliError::Validation("draw file contains no records".into()));
    }
    let dims = [panel.i, panel.j, panel.k, panel.q];
    let (rank, regimes) = (manifest.prior.rank, manifest.prior.regimes);
    io::write_coefficient_summary(
        &out_dir.join("coefficient_summary.csv"),
        &draws,
        dims,
        rank,
        regimes,
    )?;
    io::write_regime_probs(&out_dir.join("regime_probs.csv"), &draws, regimes)?;
    io::write_rho_samples(&out_dir.join("rho_samples.csv"), &draws)?;
    io::write_degree_series(&out_dir.join("degree_series.csv"), &panel)?;
    // ESS recomputed from the stored draws so summarize stands alone.
    let mut ess = Vec::new();
    ess.push((
        "tau".to_string(),
        crate::diagnostics::effective_sample_size(&draws.iter().map(|d| d.tau).collect::<Vec<_>>()),
    ));
    for l in 0..regimes {
        ess.push((
            format!("rho[{}]", l + 1),
            crate::diagnostics::effective_sample_size(
                &draws.iter().map(|d| d.rho[l]).collect::<Vec<_>>(),
            ),
        ));
        ess.push((
            format!("lambda[{}]", l + 1),
            crate::diagnostics::effective_sample_size(
                &draws.iter().map(|d| d.lambda[l]).collect::<Vec<_>>(),
            ),
        ));
    }
    for idx in 0..draws[0].gamma.len() {
        ess.push((
            format!("gamma[{idx}]"),
            crate::diagnostics::effective_sample_size(
                &draws.iter().map(|d| d.gamma[idx]).collect::<Vec<_>>(),
            ),
        ));
    }
    io::write_ess_table(&out_dir.join("ess.csv"), &ess)?;
    println!(
        "summaries for {} draws -> {}",
        draws.len(),
        out_dir.display()
    );
    Ok(())
}

/// Flat `key = value` configuration file, parsed as TOML without tables.
#[derive(Default)]
struct FlatConfig {
    table: toml::Table,
}

impl FlatConfig {
    fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        let table: toml::Table = text
            .parse()
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        if table.values().any(|v| v.is_table()) {
            return Err(CliError::Validation(format!(
                "{}: configuration keys must be flat",
                path.display()
            )));
        }
        Ok(Self { table })
    }

    fn get_f64(&self, key: &str) -> Result<Option<f64>, CliError> {
        match self.table.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_float()
                .or_else(|| v.as_integer().map(|i| i as f64))
                .map(Some)
                .ok_or_else(|| CliError::Validation(format!("config key `{key}` must be numeric"))),
        }
    }

    fn get_usize(&self, key: &str) -> Result<Option<usize>, CliError> {
        match self.table.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_integer()
                .filter(|&i| i >= 0)
                .map(|i| Some(i as usize))
                .ok_or_else(|| {
                    CliError::Validation(format!("config key `{key}` must be a non-negative integer"))
                }),
        }
    }

    fn get_u64(&self, key: &str) -> Result<Option<u64>, CliError> {
        Ok(self.get_usize(key)?.map(|v| v as u64))
    }

    fn get_vec(&self, key: &str) -> Result<Option<Vec<f64>>, CliError> {
        match self.table.get(key) {
            None => Ok(None),
            Some(toml::Value::Array(items)) => {
                let vals: Option<Vec<f64>> = items
                    .iter()
                    .map(|v| v.as_float().or_else(|| v.as_integer().map(|i| i as f64)))
                    .collect();
                vals.map(Some).ok_or_else(|| {
                    CliError::Validation(format!("config key `{key}` must be a numeric array"))
                })
            }
            Some(v) => {
                let scalar = v
                    .as_float()
                    .or_else(|| v.as_integer().map(|i| i as f64))
                    .ok_or_else(|| {
                        CliError::Validation(format!("config key `{key}` must be numeric"))
                    })?;
                Ok(Some(vec![scalar]))
            }
        }
    }
}

fn cmd_geweke(out_dir: &Path, args: &GewekeArgs) -> Result<(), CliError> {
    let fault = match args.fault.as_str() {
        "none" => FaultInjection::None,
        "noop" => FaultInjection::NoOp,
        "tau-order" => FaultInjection::TauGigOrderPlusOne,
        other => {
            return Err(CliError::Validation(format!(
                "unknown fault `{other}` (expected none, noop or tau-order)"
            )))
        }
    };
    let cfg = crate::geweke::GewekeConfig::tiny(args.seed, args.sweeps, fault);
    let report = if args.pooled {
        crate::geweke::geweke_pair_pooled(&cfg)
    } else {
        crate::geweke::geweke_pair(&cfg)
    };
    let path = out_dir.join("geweke_report.csv");
    let mut text = String::from("statistic,mean_marginal,mean_successive,se,z\n");
    println!(
        "{:<24} {:>12} {:>12} {:>10} {:>7}",
        "statistic", "marginal", "successive", "se", "z"
    );
    for s in &report.stats {
        println!(
            "{:<24} {:>12.5} {:>12.5} {:>10.6} {:>7.2}",
            s.name, s.mean_a, s.mean_b, s.se, s.z
        );
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            s.name,
            io::fmt_f64(s.mean_a),
            io::fmt_f64(s.mean_b),
            io::fmt_f64(s.se),
            io::fmt_f64(s.z)
        ));
    }
    std::fs::write(&path, text)
        .map_err(|e| CliError::Validation(format!("cannot write report: {e}")))?;
    println!(
        "max |z| = {:.2} over {} statistics ({} samples per collection)",
        report.max_abs_z(),
        report.stats.len(),
        report.samples
    );
    Ok(())
}
