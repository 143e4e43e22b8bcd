//! Command-line entry point. All domain logic lives in the library; this
//! binary only translates flags into library calls and results into files
//! or stdout.
//!
//! Conventions shared by every subcommand:
//!
//! * Exit codes: 0 success, 2 usage error (bad flags / flag combinations),
//!   3 data error (unreadable or contract-violating input files), 4
//!   numerical failure (non-convergence, non-finite results).
//! * Every run prints its resolved seed and a sha256 digest of the resolved
//!   configuration, so any artifact can be traced to the exact invocation.
//! * `@somefile` on the command line expands to the whitespace-separated
//!   tokens of that plain-text file (lines starting with `#` are comments);
//!   later explicit flags override values from the file.
//! * `--threads` caps the worker pool; otherwise all cores are used.
//! * Outputs go under `--out`; inputs are never modified.

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

use pivopt::backtest::{
    emit_report, run_historical_backtest, run_implied_backtest, BacktestOpts,
};
use pivopt::calibration::{calibrate_implied, CalibrationProblem, PivObjective};
use pivopt::error::PivError;
use pivopt::estimation::{estimate_heston, mle_bs, mle_piv, FitResult, FittedModel, ReturnSeries, DEFAULT_WINDOW_RV, TRADING_DT};
use pivopt::market_data::{
    apply_liquidity_filter, load_option_chain, load_rate_series, write_option_chain,
    write_rate_series, RatePoint,
};
use pivopt::model::{BsParams, HestonParams, ModelTag, PivParams};
use pivopt::pricing::{
    bs_call_price, price_call_heston, price_call_heston_mc, price_call_piv_mc,
    price_call_piv_pde, ContractSpec, HestonQuad, PdeGridSpec,
};
use pivopt::sde::{
    dump_paths_csv, simulate_gbm_paths, simulate_heston_paths, simulate_r_paths_p,
    simulate_s_paths_q, SimConfig,
};
use pivopt::synth::{generate_synthetic_chain, GeneratorModel, SynthChainSpec};

#[derive(Parser, Debug)]
#[command(
    name = "pivopt",
    version,
    about = "Option pricing under Pearson-diffusion log returns, with Black-Scholes and Heston benchmarks",
    args_override_self = true
)]
struct Cli {
    /// Cap the worker thread pool (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Increase log verbosity on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Simulate paths of a model and write them to CSV.
    Simulate(SimulateArgs),
    /// Price one European call.
    Price(PriceArgs),
    /// Fit a model to a return or close series by (pseudo) maximum likelihood.
    Estimate(EstimateArgs),
    /// Calibrate a model to one day's option chain by least squares.
    Calibrate(CalibrateArgs),
    /// Run a historical or implied out-of-sample backtest.
    Backtest(BacktestArgs),
    /// Generate a synthetic option chain with a known data-generating model.
    SynthData(SynthArgs),
}

/// Model parameters, shared across subcommands. The diffusion accepts
/// either the identified pricing parameter `--kappa` alone or the full
/// physical vector `--theta --a --mu [--sigma]`.
#[derive(Args, Debug, Serialize, Clone)]
struct ModelParamArgs {
    /// Diffusion pricing parameter (kappa = theta * sigma^2 * a).
    #[arg(long)]
    kappa: Option<f64>,
    /// Diffusion mean-reversion rate.
    #[arg(long)]
    theta: Option<f64>,
    /// Diffusion tail parameter.
    #[arg(long)]
    a: Option<f64>,
    /// Diffusion long-run mean log return.
    #[arg(long)]
    mu: Option<f64>,
    /// Diffusion volatility scale (default 1, the estimation convention).
    #[arg(long)]
    sigma: Option<f64>,
    /// Black-Scholes volatility.
    #[arg(long)]
    sigma_bs: Option<f64>,
    /// Black-Scholes physical drift (simulation only).
    #[arg(long, default_value_t = 0.0)]
    drift_bs: f64,
    /// Heston variance mean-reversion rate.
    #[arg(long)]
    kappa_v: Option<f64>,
    /// Heston long-run variance.
    #[arg(long)]
    theta_v: Option<f64>,
    /// Heston volatility of variance.
    #[arg(long)]
    xi: Option<f64>,
    /// Heston spot-variance correlation.
    #[arg(long)]
    rho: Option<f64>,
    /// Heston initial variance.
    #[arg(long)]
    v0: Option<f64>,
    /// Heston physical drift (simulation only).
    #[arg(long, default_value_t = 0.0)]
    drift_h: f64,
}

impl ModelParamArgs {
    fn piv(&self) -> Result<PivParams, CliError> {
        let full = [self.theta, self.a, self.mu];
        match (self.kappa, full.iter().any(|x| x.is_some())) {
            (Some(_), true) => Err(CliError::usage(
                "give either --kappa or the full --theta/--a/--mu, not both",
            )),
            (Some(k), false) => Ok(PivParams::from_kappa(k)?),
            (None, _) => {
                let (Some(theta), Some(a), Some(mu)) = (self.theta, self.a, self.mu) else {
                    return Err(CliError::usage(
                        "diffusion model needs --kappa, or all of --theta --a --mu",
                    ));
                };
                Ok(PivParams::new(theta, a, mu, self.sigma.unwrap_or(1.0))?)
            }
        }
    }

    fn bs(&self) -> Result<BsParams, CliError> {
        let Some(sigma_bs) = self.sigma_bs else {
            return Err(CliError::usage("Black-Scholes model needs --sigma-bs"));
        };
        Ok(BsParams::new(sigma_bs, self.drift_bs)?)
    }

    fn heston(&self) -> Result<HestonParams, CliError> {
        let (Some(kappa_v), Some(theta_v), Some(xi), Some(rho), Some(v0)) =
            (self.kappa_v, self.theta_v, self.xi, self.rho, self.v0)
        else {
            return Err(CliError::usage(
                "Heston model needs --kappa-v --theta-v --xi --rho --v0",
            ));
        };
        Ok(HestonParams::new(kappa_v, theta_v, xi, rho, v0, self.drift_h)?)
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "lowercase")]
enum ModelArg {
    Piv,
    Bs,
    Heston,
}

impl From<ModelArg> for ModelTag {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Piv => ModelTag::Piv,
            ModelArg::Bs => ModelTag::Bs,
            ModelArg::Heston => ModelTag::Heston,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "lowercase")]
enum MeasureArg {
    /// Physical dynamics (estimation side).
    P,
    /// Risk-neutral dynamics (pricing side).
    Q,
}

#[derive(Args, Debug, Serialize)]
#[command(allow_negative_numbers = true)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value_t = ModelArg::Piv)]
    model: ModelArg,
    /// Measure for the diffusion model; BS and Heston always simulate
    /// prices, under Q when their physical drift equals the rate.
    #[arg(long, value_enum, default_value_t = MeasureArg::Q)]
    measure: MeasureArg,
    #[command(flatten)]
    params: ModelParamArgs,
    #[arg(long, default_value_t = 100.0)]
    s0: f64,
    #[arg(long, default_value_t = 0.05)]
    rate: f64,
    #[arg(long, default_value_t = 100)]
    paths: usize,
    /// Time steps; default 252 * horizon, at least 16.
    #[arg(long)]
    steps: Option<usize>,
    /// Horizon in years.
    #[arg(long, default_value_t = 1.0)]
    horizon: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = false)]
    antithetic: bool,
    /// Output directory; writes paths.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize, PartialEq)]
#[serde(rename_all = "lowercase")]
enum MethodArg {
    /// Monte Carlo (diffusion or Heston).
    Mc,
    /// Crank-Nicolson finite differences (diffusion).
    Pde,
    /// Characteristic function (Heston).
    Cf,
    /// Closed form (Black-Scholes).
    Closed,
}

#[derive(Args, Debug, Serialize)]
#[command(allow_negative_numbers = true)]
struct PriceArgs {
    #[arg(long, value_enum)]
    model: ModelArg,
    /// Pricing method; defaults to mc for the diffusion, closed for
    /// Black-Scholes, cf for Heston.
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    #[command(flatten)]
    params: ModelParamArgs,
    #[arg(long)]
    s0: f64,
    #[arg(long)]
    strike: f64,
    /// Time to maturity in years.
    #[arg(long)]
    ttm: f64,
    #[arg(long)]
    rate: f64,
    #[arg(long, default_value_t = 200_000)]
    paths: usize,
    /// Monte Carlo steps; default 252 * ttm, at least 16.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = false)]
    antithetic: bool,
}

#[derive(Args, Debug, Serialize)]
#[command(allow_negative_numbers = true)]
struct EstimateArgs {
    #[arg(long, value_enum)]
    model: ModelArg,
    /// CSV with header `return`: one per-period log-return increment per row.
    #[arg(long, conflicts_with = "closes")]
    returns: Option<PathBuf>,
    /// CSV with header `close`: price levels, converted to log returns.
    #[arg(long)]
    closes: Option<PathBuf>,
    /// Realized-variance proxy window for the Heston fit.
    #[arg(long, default_value_t = DEFAULT_WINDOW_RV)]
    window_rv: usize,
    /// Unused; present so every subcommand reports a seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Optional output directory; writes fit.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "lowercase")]
enum PivEngineArg {
    Pde,
    Mc,
}

#[derive(Args, Debug, Serialize)]
#[command(allow_negative_numbers = true)]
struct CalibrateArgs {
    #[arg(long)]
    chain: PathBuf,
    #[arg(long)]
    rates: PathBuf,
    #[arg(long, value_enum)]
    model: ModelArg,
    /// Trade date to calibrate on (default: the latest date in the chain).
    #[arg(long)]
    date: Option<chrono::NaiveDate>,
    /// Objective engine for the diffusion model.
    #[arg(long, value_enum, default_value_t = PivEngineArg::Pde)]
    engine: PivEngineArg,
    /// Monte Carlo paths when --engine mc.
    #[arg(long, default_value_t = 20_000)]
    paths: usize,
    /// Optional turnover-quantile screen applied to the day's quotes.
    #[arg(long)]
    liquidity_quantile: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Optional output directory; writes calibration.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "lowercase")]
enum ModeArg {
    Historical,
    Implied,
}

#[derive(Args, Debug, Serialize)]
#[command(allow_negative_numbers = true)]
struct BacktestArgs {
    #[arg(long, value_enum)]
    mode: ModeArg,
    #[arg(long)]
    chain: PathBuf,
    #[arg(long)]
    rates: PathBuf,
    /// Comma-separated subset of piv,bs,heston.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [ModelArg::Piv, ModelArg::Bs, ModelArg::Heston])]
    models: Vec<ModelArg>,
    /// Rolling estimation window in trading days (historical mode).
    #[arg(long, default_value_t = 90)]
    window: usize,
    /// Monte Carlo paths for diffusion pricing.
    #[arg(long, default_value_t = 200_000)]
    paths: usize,
    /// Turnover-quantile liquidity screen; see --no-liquidity-filter.
    #[arg(long, default_value_t = 0.7)]
    liquidity_quantile: f64,
    #[arg(long, default_value_t = false)]
    no_liquidity_filter: bool,
    /// Engine for implied-mode diffusion calibration and pricing.
    #[arg(long, value_enum, default_value_t = PivEngineArg::Pde)]
    piv_engine: PivEngineArg,
    #[arg(long, default_value_t = false)]
    no_antithetic: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report directory: moneyness_metrics.csv, maturity_metrics.csv,
    /// dm_tests.csv, run_meta.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
#[command(allow_negative_numbers = true)]
struct SynthArgs {
    #[arg(long, value_enum, default_value_t = ModelArg::Piv)]
    generator: ModelArg,
    #[command(flatten)]
    params: ModelParamArgs,
    #[arg(long, default_value_t = 100.0)]
    s0: f64,
    #[arg(long, default_value_t = 0.05)]
    rate: f64,
    #[arg(long, default_value = "2024-01-01")]
    start_date: chrono::NaiveDate,
    /// Number of consecutive trading days (weekdays).
    #[arg(long, default_value_t = 120)]
    days: usize,
    /// Comma-separated strike multiples of each day's close.
    #[arg(long, value_delimiter = ',', default_values_t = [0.85, 0.90, 0.95, 1.00, 1.05, 1.10, 1.15])]
    moneyness: Vec<f64>,
    /// Comma-separated expiry offsets in calendar days.
    #[arg(long, value_delimiter = ',', default_values_t = [7i64, 14, 28, 56, 84])]
    expiries: Vec<i64>,
    /// Multiplicative observation-noise standard deviation.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 50)]
    lot: u64,
    #[arg(long, default_value_t = 200)]
    contracts_min: u64,
    #[arg(long, default_value_t = 2000)]
    contracts_max: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; writes chain.csv and rates.csv.
    #[arg(long)]
    out: PathBuf,
}

// ---------------------------------------------------------------------------
// Error-to-exit-code mapping
// ---------------------------------------------------------------------------

#[derive(Debug)]
enum CliError {
    Usage(String),
    Lib(PivError),
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Lib(e) => match e {
                PivError::Numerical(_) | PivError::NonFinitePath { .. } => 4,
                _ => 3,
            },
        }
    }
}

impl From<PivError> for CliError {
    fn from(e: PivError) -> Self {
        CliError::Lib(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

// ---------------------------------------------------------------------------
// Entry
// ---------------------------------------------------------------------------

fn main() {
    std::process::exit(real_main());
}

fn real_main() -> i32 {
    let argv = match expand_argfiles(std::env::args().collect()) {
        Ok(v) => v,
        Err(msg) => {
            eprintln!("usage error: {msg}");
            return 2;
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.exit_code() == 0 { 0 } else { 2 };
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.verbose);
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("usage error: --threads must be at least 1");
            return 2;
        }
        // Ignore the error if a pool already exists (tests, repeat init).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match dispatch(cli.cmd) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

/// Replaces any `@file` argument by the whitespace-separated tokens of that
/// file; `#` starts a line comment.
fn expand_argfiles(argv: Vec<String>) -> Result<Vec<String>, String> {
    let mut out = Vec::with_capacity(argv.len());
    for arg in argv {
        if let Some(path) = arg.strip_prefix('@') {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read argument file {path}: {e}"))?;
            for line in text.lines() {
                let line = line.split('#').next().unwrap_or("");
                out.extend(line.split_whitespace().map(str::to_string));
            }
        } else {
            out.push(arg);
        }
    }
    Ok(out)
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .try_init();
}

/// Prints the reproducibility header: resolved seed and a digest of the
/// full resolved configuration.
fn print_run_header(cmd_name: &str, seed: u64, args: &impl Serialize) {
    let config = serde_json::json!({ "cmd": cmd_name, "args": args });
    let canonical = serde_json::to_string(&config).expect("serializable args");
    let digest = Sha256::digest(canonical.as_bytes());
    println!("seed: {seed}");
    println!("config-digest: sha256:{}", hex(&digest));
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn dispatch(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::Simulate(a) => simulate(a),
        Cmd::Price(a) => price(a),
        Cmd::Estimate(a) => estimate(a),
        Cmd::Calibrate(a) => calibrate(a),
        Cmd::Backtest(a) => backtest(a),
        Cmd::SynthData(a) => synth_data(a),
    }
}

// ---------------------------------------------------------------------------
// Subcommand implementations
// ---------------------------------------------------------------------------

fn simulate(a: SimulateArgs) -> Result<(), CliError> {
    print_run_header("simulate", a.seed, &a);
    let n_steps = a
        .steps
        .unwrap_or(((252.0 * a.horizon).ceil() as usize).max(16));
    let config = SimConfig::new(a.paths, n_steps, a.horizon, a.seed)?
        .with_antithetic(a.antithetic)
        .with_store_paths(true);
    let batch = match (a.model, a.measure) {
        (ModelArg::Piv, MeasureArg::P) => simulate_r_paths_p(&a.params.piv()?, &config)?,
        (ModelArg::Piv, MeasureArg::Q) => {
            simulate_s_paths_q(&a.params.piv()?, a.s0, a.rate, &config)?
        }
        (ModelArg::Bs, m) => {
            let p = a.params.bs()?;
            let drift = match m {
                MeasureArg::P => p.drift_bs,
                MeasureArg::Q => a.rate,
            };
            simulate_gbm_paths(p.sigma_bs, a.s0, drift, &config)?
        }
        (ModelArg::Heston, m) => {
            let p = a.params.heston()?;
            let drift = match m {
                MeasureArg::P => p.drift_h,
                MeasureArg::Q => a.rate,
            };
            simulate_heston_paths(&p, a.s0, drift, &config)?
        }
    };
    std::fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
    let out_file = a.out.join("paths.csv");
    dump_paths_csv(&batch, &out_file)?;
    println!("paths: {}", batch.n_paths());
    println!("terminal_mean: {}", batch.terminal_mean());
    println!("terminal_std_error: {}", batch.terminal_std_error());
    println!("wrote: {}", out_file.display());
    Ok(())
}

fn price(a: PriceArgs) -> Result<(), CliError> {
    print_run_header("price", a.seed, &a);
    let c = ContractSpec::new(a.s0, a.strike, a.ttm, a.rate)?;
    let method = a.method.unwrap_or(match a.model {
        ModelArg::Piv => MethodArg::Mc,
        ModelArg::Bs => MethodArg::Closed,
        ModelArg::Heston => MethodArg::Cf,
    });
    let mc_config = |paths: usize| -> Result<SimConfig, PivError> {
        let n_steps = a
            .steps
            .unwrap_or(((252.0 * a.ttm).ceil() as usize).max(16));
        Ok(SimConfig::new(paths, n_steps, a.ttm, a.seed)?.with_antithetic(a.antithetic))
    };
    let (price, std_error, method_name) = match (a.model, method) {
        (ModelArg::Piv, MethodArg::Mc) => {
            let r = price_call_piv_mc(&a.params.piv()?, &c, &mc_config(a.paths)?)?;
            (r.price, r.std_error, "mc")
        }
        (ModelArg::Piv, MethodArg::Pde) => {
            let p = a.params.piv()?;
            let grid = PdeGridSpec::auto(&p, &c)?;
            let r = price_call_piv_pde(&p, &c, &grid)?;
            (r.price, 0.0, "pde")
        }
        (ModelArg::Bs, MethodArg::Closed) => {
            (bs_call_price(a.params.bs()?.sigma_bs, &c)?, 0.0, "closed")
        }
        (ModelArg::Heston, MethodArg::Cf) => {
            let r = price_call_heston(&a.params.heston()?, &c, &HestonQuad::default())?;
            (r.price, 0.0, "cf")
        }
        (ModelArg::Heston, MethodArg::Mc) => {
            let r = price_call_heston_mc(&a.params.heston()?, &c, &mc_config(a.paths)?)?;
            (r.price, r.std_error, "mc")
        }
        (model, m) => {
            return Err(CliError::usage(format!(
                "method {m:?} is not available for model {model:?}"
            )));
        }
    };
    println!("method: {method_name}");
    println!("price: {price}");
    println!("std_error: {std_error}");
    Ok(())
}

/// Reads a one-column CSV (exact header match) into f64s.
fn load_column(path: &Path, header: &str) -> Result<Vec<f64>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == header => {}
        Some((_, h)) => {
            return Err(CliError::Lib(PivError::Parse {
                path: path.to_path_buf(),
                message: format!("expected header '{header}', found '{h}'"),
            }));
        }
        None => {
            return Err(CliError::Lib(PivError::Parse {
                path: path.to_path_buf(),
                message: "empty file".to_string(),
            }));
        }
    }
    let mut values = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let v: f64 = line.trim().parse().map_err(|e| {
            CliError::Lib(PivError::Parse {
                path: path.to_path_buf(),
                message: format!("row {}: bad number '{line}': {e}", i + 1),
            })
        })?;
        values.push(v);
    }
    Ok(values)
}

fn fit_to_json(fit: &FitResult) -> serde_json::Value {
    let params = match &fit.params {
        FittedModel::Piv(p) => serde_json::json!({
            "model": "piv", "theta": p.theta, "a": p.a, "mu": p.mu, "sigma": p.sigma,
            "kappa": p.kappa(),
        }),
        FittedModel::Bs(p) => serde_json::json!({
            "model": "bs", "sigma_bs": p.sigma_bs, "drift_bs": p.drift_bs,
        }),
        FittedModel::Heston(p) => serde_json::json!({
            "model": "heston", "kappa_v": p.kappa_v, "theta_v": p.theta_v,
            "xi": p.xi, "rho": p.rho, "v0": p.v0, "drift_h": p.drift_h,
        }),
    };
    serde_json::json!({
        "params": params,
        "objective": fit.nll,
        "converged": fit.converged,
        "iterations": fit.iterations,
        "boundary_hit": fit.boundary_hit,
    })
}

fn estimate(a: EstimateArgs) -> Result<(), CliError> {
    print_run_header("estimate", a.seed, &a);
    let series = match (&a.returns, &a.closes) {
        (Some(path), None) => {
            ReturnSeries::new(load_column(path, "return")?, TRADING_DT, path.display().to_string())?
        }
        (None, Some(path)) => ReturnSeries::from_closes(
            &load_column(path, "close")?,
            TRADING_DT,
            path.display().to_string(),
        )?,
        _ => return Err(CliError::usage("give exactly one of --returns or --closes")),
    };
    let fit = match a.model {
        ModelArg::Piv => mle_piv(&series)?,
        ModelArg::Bs => mle_bs(&series)?,
        ModelArg::Heston => estimate_heston(&series, a.window_rv)?,
    };
    let json = fit_to_json(&fit);
    println!("{}", serde_json::to_string_pretty(&json).expect("json"));
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let path = dir.join("fit.json");
        std::fs::write(&path, format!("{}\n", serde_json::to_string_pretty(&json).expect("json")))
            .map_err(|e| io_err(&path, e))?;
        println!("wrote: {}", path.display());
    }
    Ok(())
}

fn calibrate(a: CalibrateArgs) -> Result<(), CliError> {
    print_run_header("calibrate", a.seed, &a);
    let report = load_option_chain(&a.chain)?;
    if !report.rejected.is_empty() {
        log::warn!(
            "{}: {} rows rejected during load",
            a.chain.display(),
            report.rejected.len()
        );
    }
    let rates = load_rate_series(&a.rates)?.series;
    let date = match a.date {
        Some(d) => d,
        None => report
            .quotes
            .iter()
            .map(|q| q.trade_date)
            .max()
            .ok_or_else(|| CliError::Lib(PivError::invalid_input("chain has no valid quotes")))?,
    };
    let mut day: Vec<_> = report
        .quotes
        .iter()
        .filter(|q| q.trade_date == date)
        .cloned()
        .collect();
    if day.is_empty() {
        return Err(CliError::Lib(PivError::invalid_input(format!(
            "no quotes on {date} in {}",
            a.chain.display()
        ))));
    }
    if let Some(q) = a.liquidity_quantile {
        day = apply_liquidity_filter(&day, q)?;
    }
    let rate = rates.rate_on_or_before(date)?;
    let engine = match a.engine {
        PivEngineArg::Pde => PivObjective::Pde,
        PivEngineArg::Mc => PivObjective::Mc { n_paths: a.paths },
    };
    let n_quotes = day.len();
    let problem = CalibrationProblem::new(day, rate, ModelTag::from(a.model), a.seed)?
        .with_piv_engine(engine);
    let fit = calibrate_implied(&problem)?;
    let mut json = fit_to_json(&fit);
    json["date"] = serde_json::json!(date.to_string());
    json["n_quotes"] = serde_json::json!(n_quotes);
    json["rate"] = serde_json::json!(rate);
    println!("{}", serde_json::to_string_pretty(&json).expect("json"));
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let path = dir.join("calibration.json");
        std::fs::write(&path, format!("{}\n", serde_json::to_string_pretty(&json).expect("json")))
            .map_err(|e| io_err(&path, e))?;
        println!("wrote: {}", path.display());
    }
    Ok(())
}

fn backtest(a: BacktestArgs) -> Result<(), CliError> {
    print_run_header("backtest", a.seed, &a);
    let report = load_option_chain(&a.chain)?;
    if !report.rejected.is_empty() {
        log::warn!(
            "{}: {} rows rejected during load",
            a.chain.display(),
            report.rejected.len()
        );
    }
    let rates = load_rate_series(&a.rates)?.series;
    let models: Vec<ModelTag> = a.models.iter().map(|&m| m.into()).collect();
    let opts = BacktestOpts {
        liquidity_quantile: if a.no_liquidity_filter {
            None
        } else {
            Some(a.liquidity_quantile)
        },
        mc_paths: a.paths,
        antithetic: !a.no_antithetic,
        piv_engine: match a.piv_engine {
            PivEngineArg::Pde => PivObjective::Pde,
            PivEngineArg::Mc => PivObjective::Mc { n_paths: a.paths },
        },
    };
    let result = match a.mode {
        ModeArg::Historical => run_historical_backtest(
            &report.quotes,
            &rates,
            a.window,
            &models,
            a.seed,
            &opts,
        )?,
        ModeArg::Implied => {
            run_implied_backtest(&report.quotes, &rates, &models, a.seed, &opts)?
        }
    };
    let files = emit_report(&result, &a.out)?;
    println!(
        "evaluated {} dates ({} skipped), {} quote prices, {} fit failures",
        result.n_dates_evaluated,
        result.n_dates_skipped,
        result.errors.len(),
        result.fit_failures.len()
    );
    for (rank, (model, mae)) in result.mae_ranking().iter().enumerate() {
        println!("rank {}: {model} mae {mae}", rank + 1);
    }
    for f in files {
        println!("wrote: {}", f.display());
    }
    Ok(())
}

fn synth_data(a: SynthArgs) -> Result<(), CliError> {
    print_run_header("synth-data", a.seed, &a);
    let model = match a.generator {
        ModelArg::Piv => GeneratorModel::Piv(a.params.piv()?),
        ModelArg::Bs => GeneratorModel::Bs(a.params.bs()?),
        ModelArg::Heston => GeneratorModel::Heston(a.params.heston()?),
    };
    let spec = SynthChainSpec {
        model,
        s0: a.s0,
        rate: a.rate,
        start_date: a.start_date,
        n_trade_days: a.days,
        strike_moneyness: a.moneyness.clone(),
        expiry_offsets_days: a.expiries.clone(),
        noise_level: a.noise,
        lot_size: a.lot,
        contracts_range: (a.contracts_min, a.contracts_max),
    };
    let quotes = generate_synthetic_chain(&spec, a.seed)?;
    std::fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
    let chain_path = a.out.join("chain.csv");
    write_option_chain(&quotes, &chain_path)?;
    let rates_path = a.out.join("rates.csv");
    write_rate_series(
        &[RatePoint {
            date: a.start_date,
            yield_91d: a.rate,
        }],
        &rates_path,
    )?;
    println!("quotes: {}", quotes.len());
    println!("trade_days: {}", a.days);
    println!("wrote: {}", chain_path.display());
    println!("wrote: {}", rates_path.display());
    Ok(())
}

fn io_err(path: &Path, source: std::io::Error) -> CliError {
    CliError::Lib(PivError::Io {
        path: path.to_path_buf(),
        source,
    })
}
