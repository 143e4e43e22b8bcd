//! Euler-Maruyama path simulation for the log-return diffusion (both
//! measures), geometric Brownian motion, and Heston dynamics.
//!
//! Reproducibility contract: a `PathBatch` is a pure function of
//! `(parameters, SimConfig)`. Path `i` reads from RNG substream `i + 1`
//! (pairs share a stream under antithetic sampling), and results are
//! collected in path order, so output is bit-identical regardless of how
//! many rayon workers execute the batch.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use std::io::Write;
use std::path::Path;

use crate::error::{PivError, Result};
use crate::model::{piv_diffusion_unchecked, HestonParams, PivParams};
use crate::rng::substream;

/// Simulation run configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    /// Number of Monte Carlo paths.
    pub n_paths: usize,
    /// Time steps per path.
    pub n_steps: usize,
    /// Horizon in years.
    pub horizon_t: f64,
    /// Base seed; fully determines the batch.
    pub seed: u64,
    /// Pair paths as (draws, negated draws). Requires even `n_paths`.
    pub antithetic: bool,
    /// Record full paths (n_steps + 1 nodes each), not just terminals.
    pub store_paths: bool,
}

impl SimConfig {
    pub fn new(n_paths: usize, n_steps: usize, horizon_t: f64, seed: u64) -> Result<Self> {
        let c = Self {
            n_paths,
            n_steps,
            horizon_t,
            seed,
            antithetic: false,
            store_paths: false,
        };
        c.validate()?;
        Ok(c)
    }

    /// Daily-resolution default: `n_steps = max(16, ceil(252 * horizon_t))`.
    pub fn daily(n_paths: usize, horizon_t: f64, seed: u64) -> Result<Self> {
        let n_steps = (252.0 * horizon_t).ceil().max(16.0) as usize;
        Self::new(n_paths, n_steps, horizon_t, seed)
    }

    pub fn with_antithetic(mut self, on: bool) -> Self {
        self.antithetic = on;
        self
    }

    pub fn with_store_paths(mut self, on: bool) -> Self {
        self.store_paths = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 || self.n_steps == 0 {
            return Err(PivError::invalid_input(
                "n_paths and n_steps must be at least 1",
            ));
        }
        if !(self.horizon_t.is_finite() && self.horizon_t > 0.0) {
            return Err(PivError::invalid_input(format!(
                "horizon_t must be finite and > 0, got {}",
                self.horizon_t
            )));
        }
        if self.antithetic && self.n_paths % 2 != 0 {
            return Err(PivError::invalid_input(
                "antithetic sampling requires an even n_paths",
            ));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.horizon_t / self.n_steps as f64
    }
}

/// Probability measure a batch was simulated under.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measure {
    /// Physical (historical) measure.
    P,
    /// Risk-neutral pricing measure.
    Q,
}

/// Which process the values represent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProcessTag {
    /// Log return `R_t = ln(S_t / S_0)`, starts at 0.
    LogReturn,
    /// Price level `S_t`, strictly positive.
    Price,
}

/// Output of a simulation run.
#[derive(Debug, Clone)]
pub struct PathBatch {
    /// Terminal value of each path, in path order.
    pub terminal_values: Vec<f64>,
    /// Full paths (`n_paths x (n_steps + 1)`), present iff
    /// `SimConfig::store_paths` was set.
    pub paths: Option<Vec<Vec<f64>>>,
    pub measure: Measure,
    pub process: ProcessTag,
    /// Step size in years.
    pub dt: f64,
    pub n_steps: usize,
}

impl PathBatch {
    pub fn n_paths(&self) -> usize {
        self.terminal_values.len()
    }

    /// Sample mean of terminal values.
    pub fn terminal_mean(&self) -> f64 {
        self.terminal_values.iter().sum::<f64>() / self.n_paths() as f64
    }

    /// Standard error of the terminal mean (divisor n - 1).
    pub fn terminal_std_error(&self) -> f64 {
        let n = self.n_paths() as f64;
        let mean = self.terminal_mean();
        let var = self
            .terminal_values
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / (n - 1.0);
        (var / n).sqrt()
    }
}

/// Runs `kernel` over every path index with the substream/antithetic
/// conventions, in parallel, collecting results in path order.
fn drive<K>(
    config: &SimConfig,
    measure: Measure,
    process: ProcessTag,
    kernel: K,
) -> Result<PathBatch>
where
    K: Fn(usize, &mut ChaCha8Rng, f64) -> Result<(f64, Option<Vec<f64>>)> + Sync,
{
    config.validate()?;
    let per_path: Vec<(f64, Option<Vec<f64>>)> = (0..config.n_paths)
        .into_par_iter()
        .map(|i| {
            let (stream, sign) = if config.antithetic {
                ((i / 2 + 1) as u64, if i % 2 == 1 { -1.0 } else { 1.0 })
            } else {
                ((i + 1) as u64, 1.0)
            };
            let mut rng = substream(config.seed, stream);
            kernel(i, &mut rng, sign)
        })
        .collect::<Result<_>>()?;

    let mut terminal_values = Vec::with_capacity(config.n_paths);
    let mut paths = config.store_paths.then(|| Vec::with_capacity(config.n_paths));
    for (terminal, path) in per_path {
        terminal_values.push(terminal);
        if let (Some(all), Some(p)) = (&mut paths, path) {
            all.push(p);
        }
    }
    Ok(PathBatch {
        terminal_values,
        paths,
        measure,
        process,
        dt: config.dt(),
        n_steps: config.n_steps,
    })
}

/// Log-return level at which a path is treated as absorbed at zero stock
/// value. `exp(-700) ~ 1e-304`, so absorbed paths contribute nothing to any
/// call payoff and `S = s0 e^R` stays strictly positive in f64.
///
/// The floor matters under the pricing measure: the drift `-kappa (1 + R^2)`
/// is superlinear and downward, so once a path diffuses far enough negative,
/// the Euler recursion accelerates towards -infinity (and the continuous
/// process itself can reach S = 0 in finite time; the discounted price is
/// only a local martingale). Absorption replaces that runaway with a
/// pinned, deterministic state.
pub const R_ABSORB_FLOOR: f64 = -700.0;

/// One Euler path of `dR = drift(R) dt + sqrt(2 kappa (1 + R^2)) dB`, R_0 = 0.
fn euler_r_path<D>(
    path_idx: usize,
    drift: D,
    kappa: f64,
    config: &SimConfig,
    rng: &mut ChaCha8Rng,
    sign: f64,
    context: &'static str,
) -> Result<(f64, Option<Vec<f64>>)>
where
    D: Fn(f64) -> f64,
{
    let dt = config.dt();
    let sqrt_dt = dt.sqrt();
    let mut r = 0.0_f64;
    let mut path = config.store_paths.then(|| {
        let mut v = Vec::with_capacity(config.n_steps + 1);
        v.push(0.0);
        v
    });
    for step in 0..config.n_steps {
        let z: f64 = rng.sample(StandardNormal);
        let z = sign * z;
        r += drift(r) * dt + piv_diffusion_unchecked(kappa, r) * sqrt_dt * z;
        if !r.is_finite() {
            return Err(PivError::NonFinitePath {
                path: path_idx,
                step,
                context: context.to_string(),
            });
        }
        if r <= R_ABSORB_FLOOR {
            r = R_ABSORB_FLOOR;
            if let Some(p) = &mut path {
                while p.len() < config.n_steps + 1 {
                    p.push(r);
                }
            }
            break;
        }
        if let Some(p) = &mut path {
            p.push(r);
        }
    }
    Ok((r, path))
}

/// Log-return paths under the physical measure:
/// `dR = -theta (R - mu) dt + sigma sqrt(2 theta a (1 + R^2)) dB`.
pub fn simulate_r_paths_p(params: &PivParams, config: &SimConfig) -> Result<PathBatch> {
    params.validate()?;
    let theta = params.theta;
    let mu = params.mu;
    let kappa = params.kappa();
    drive(config, Measure::P, ProcessTag::LogReturn, |i, rng, sign| {
        euler_r_path(
            i,
            |r| -theta * (r - mu),
            kappa,
            config,
            rng,
            sign,
            "log-return path under P",
        )
    })
}

/// Log-return paths under the pricing measure:
/// `dR = (r - kappa (1 + R^2)) dt + sqrt(2 kappa (1 + R^2)) dW`.
///
/// Only `kappa = theta sigma^2 a` enters; `mu` is absent by construction.
pub fn simulate_r_paths_q(params: &PivParams, rate: f64, config: &SimConfig) -> Result<PathBatch> {
    params.validate()?;
    if !rate.is_finite() {
        return Err(PivError::invalid_input("rate must be finite"));
    }
    let kappa = params.kappa();
    drive(config, Measure::Q, ProcessTag::LogReturn, |i, rng, sign| {
        euler_r_path(
            i,
            |r| rate - kappa * (1.0 + r * r),
            kappa,
            config,
            rng,
            sign,
            "log-return path under Q",
        )
    })
}

/// Price paths under the pricing measure, `S_t = s0 exp(R_t)` with `R` from
/// [`simulate_r_paths_q`]. Simulating in log space makes positivity
/// structural and ties the price dynamics to the log-return dynamics by the
/// same discrete recursion (identical draws give `S = s0 e^R` bit-exactly).
pub fn simulate_s_paths_q(
    params: &PivParams,
    s0: f64,
    rate: f64,
    config: &SimConfig,
) -> Result<PathBatch> {
    if !(s0.is_finite() && s0 > 0.0) {
        return Err(PivError::invalid_input(format!(
            "s0 must be finite and > 0, got {s0}"
        )));
    }
    let mut batch = simulate_r_paths_q(params, rate, config)?;
    for v in &mut batch.terminal_values {
        *v = s0 * v.exp();
    }
    if let Some(paths) = &mut batch.paths {
        for p in paths {
            for v in p {
                *v = s0 * v.exp();
            }
        }
    }
    batch.process = ProcessTag::Price;
    Ok(batch)
}

/// GBM price paths under the pricing measure via the exact log-space update
/// `S_{k+1} = S_k exp((r - sigma^2/2) dt + sigma sqrt(dt) Z)`.
///
/// Takes the volatility scalar directly (zero allowed) so degenerate
/// deterministic-growth cases are representable.
pub fn simulate_gbm_paths(
    sigma_bs: f64,
    s0: f64,
    rate: f64,
    config: &SimConfig,
) -> Result<PathBatch> {
    if !(sigma_bs.is_finite() && sigma_bs >= 0.0) {
        return Err(PivError::invalid_input(format!(
            "sigma_bs must be finite and >= 0, got {sigma_bs}"
        )));
    }
    if !(s0.is_finite() && s0 > 0.0) {
        return Err(PivError::invalid_input(format!(
            "s0 must be finite and > 0, got {s0}"
        )));
    }
    if !rate.is_finite() {
        return Err(PivError::invalid_input("rate must be finite"));
    }
    drive(config, Measure::Q, ProcessTag::Price, |i, rng, sign| {
        let dt = config.dt();
        let sqrt_dt = dt.sqrt();
        let drift_term = (rate - 0.5 * sigma_bs * sigma_bs) * dt;
        let mut y = 0.0_f64;
        let mut path = config.store_paths.then(|| {
            let mut v = Vec::with_capacity(config.n_steps + 1);
            v.push(s0);
            v
        });
        for step in 0..config.n_steps {
            let z: f64 = rng.sample(StandardNormal);
            y += drift_term + sigma_bs * sqrt_dt * sign * z;
            if !y.is_finite() {
                return Err(PivError::NonFinitePath {
                    path: i,
                    step,
                    context: "GBM log path".to_string(),
                });
            }
            if let Some(p) = &mut path {
                p.push(s0 * y.exp());
            }
        }
        Ok((s0 * y.exp(), path))
    })
}

/// Heston price paths under the pricing measure: full-truncation Euler for
/// the variance, log-Euler for the price, shocks correlated through `rho`.
/// Per step the price shock is drawn first, then the orthogonal variance
/// component.
pub fn simulate_heston_paths(
    h: &HestonParams,
    s0: f64,
    rate: f64,
    config: &SimConfig,
) -> Result<PathBatch> {
    h.validate()?;
    if !(s0.is_finite() && s0 > 0.0) {
        return Err(PivError::invalid_input(format!(
            "s0 must be finite and > 0, got {s0}"
        )));
    }
    if !rate.is_finite() {
        return Err(PivError::invalid_input("rate must be finite"));
    }
    let rho_perp = (1.0 - h.rho * h.rho).sqrt();
    drive(config, Measure::Q, ProcessTag::Price, |i, rng, sign| {
        let dt = config.dt();
        let sqrt_dt = dt.sqrt();
        let mut y = 0.0_f64;
        let mut v = h.v0;
        let mut path = config.store_paths.then(|| {
            let mut p = Vec::with_capacity(config.n_steps + 1);
            p.push(s0);
            p
        });
        for step in 0..config.n_steps {
            let z1: f64 = rng.sample(StandardNormal);
            let zp: f64 = rng.sample(StandardNormal);
            let z1 = sign * z1;
            let z2 = h.rho * z1 + rho_perp * sign * zp;
            let v_pos = v.max(0.0);
            let vol = v_pos.sqrt();
            y += (rate - 0.5 * v_pos) * dt + vol * sqrt_dt * z1;
            v += h.kappa_v * (h.theta_v - v_pos) * dt + h.xi * vol * sqrt_dt * z2;
            if !(y.is_finite() && v.is_finite()) {
                return Err(PivError::NonFinitePath {
                    path: i,
                    step,
                    context: "Heston path".to_string(),
                });
            }
            if let Some(p) = &mut path {
                p.push(s0 * y.exp());
            }
        }
        Ok((s0 * y.exp(), path))
    })
}

/// Writes stored paths as CSV with columns `path_id,step,t,value`.
pub fn dump_paths_csv(batch: &PathBatch, out: &Path) -> Result<()> {
    let paths = batch.paths.as_ref().ok_or_else(|| {
        PivError::invalid_input("path dump requires a batch simulated with store_paths")
    })?;
    let file = std::fs::File::create(out).map_err(|e| PivError::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    let mut w = std::io::BufWriter::new(file);
    let write_err = |e: std::io::Error| PivError::Io {
        path: out.to_path_buf(),
        source: e,
    };
    writeln!(w, "path_id,step,t,value").map_err(write_err)?;
    for (pid, path) in paths.iter().enumerate() {
        for (step, value) in path.iter().enumerate() {
            writeln!(w, "{pid},{step},{},{value}", step as f64 * batch.dt).map_err(write_err)?;
        }
    }
    w.flush().map_err(write_err)?;
    Ok(())
}
