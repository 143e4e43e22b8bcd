//! Historical (statistical) parameter estimation from daily log returns.
//!
//! All three models are fitted by pseudo-maximum-likelihood on the Euler
//! discretisation of their transition densities:
//!
//! * [`mle_piv`] — the mean-reverting log-return diffusion. The likelihood
//!   depends on `(theta, sigma^2 a, mu)` only, so `sigma` is fixed at 1 and
//!   the optimiser works on the identified triple; see [`euler_pseudo_loglik`].
//! * [`mle_bs`] — closed-form Gaussian MLE for the Black-Scholes benchmark.
//! * [`estimate_heston`] — pseudo-MLE on a realized-variance proxy. The
//!   variance path is not observed, so it is replaced by a rolling mean of
//!   squared demeaned returns and the joint (return, variance-increment)
//!   likelihood is evaluated on non-overlapping windows. This is a
//!   deliberately simple, deterministic filter: it is adequate for benchmark
//!   parity but `xi` and `kappa_v` inherit a bias from squared-return
//!   sampling noise that shrinks only as `window_rv` grows. Callers who care
//!   about the variance dynamics should use a generous window.
//!
//! Every fit is a pure function of its inputs: repeated calls are
//! bit-identical, and independent fits (for example across rolling windows)
//! can safely run in parallel.

use std::f64::consts::TAU;

use chrono::NaiveDate;

use crate::error::{PivError, Result};
use crate::model::{BsParams, HestonParams, PivParams};
use crate::optim::{nelder_mead, NelderMeadOpts};

/// Minimum number of returns accepted by [`ReturnSeries`].
pub const MIN_SERIES_LEN: usize = 30;

/// Default realized-variance window for [`estimate_heston`] (one trading
/// month).
pub const DEFAULT_WINDOW_RV: usize = 21;

/// Years per daily observation under a 252-trading-day convention.
pub const TRADING_DT: f64 = 1.0 / 252.0;

/// A validated series of per-period log returns `ln(S_{k+1} / S_k)`.
///
/// The estimation routines treat the running sum of the returns (starting at
/// zero) as the sampled path of the log-return state variable.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnSeries {
    returns: Vec<f64>,
    dt: f64,
    instrument: String,
    date_range: Option<(NaiveDate, NaiveDate)>,
}

impl ReturnSeries {
    /// Validates and wraps a return series.
    ///
    /// Requirements: at least [`MIN_SERIES_LEN`] returns, all finite, not all
    /// equal (a constant series has zero variance and no model is
    /// identifiable from it), and `dt > 0`.
    pub fn new(returns: Vec<f64>, dt: f64, instrument: impl Into<String>) -> Result<Self> {
        if returns.len() < MIN_SERIES_LEN {
            return Err(PivError::invalid_input(format!(
                "return series has {} observations, need at least {MIN_SERIES_LEN}",
                returns.len()
            )));
        }
        if let Some(bad) = returns.iter().position(|r| !r.is_finite()) {
            return Err(PivError::invalid_input(format!(
                "return series contains a non-finite value at index {bad}"
            )));
        }
        if returns.iter().all(|&r| r == returns[0]) {
            return Err(PivError::invalid_input(
                "return series is constant (zero variance); no model is identifiable",
            ));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(PivError::invalid_input(format!(
                "dt must be finite and > 0, got {dt}"
            )));
        }
        Ok(Self {
            returns,
            dt,
            instrument: instrument.into(),
            date_range: None,
        })
    }

    /// Daily series under the 252-trading-day convention (`dt = 1/252`).
    pub fn daily(returns: Vec<f64>, instrument: impl Into<String>) -> Result<Self> {
        Self::new(returns, TRADING_DT, instrument)
    }

    /// Builds the series from consecutive closing prices
    /// (`returns[k] = ln(closes[k+1] / closes[k])`).
    pub fn from_closes(closes: &[f64], dt: f64, instrument: impl Into<String>) -> Result<Self> {
        if let Some(bad) = closes.iter().position(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(PivError::invalid_input(format!(
                "close price at index {bad} is not a positive finite number"
            )));
        }
        let returns = closes.windows(2).map(|w| (w[1] / w[0]).ln()).collect();
        Self::new(returns, dt, instrument)
    }

    /// Attaches the date range the returns were computed from.
    pub fn with_date_range(mut self, from: NaiveDate, to: NaiveDate) -> Result<Self> {
        if from > to {
            return Err(PivError::invalid_input(format!(
                "date range starts {from} after it ends {to}"
            )));
        }
        self.date_range = Some((from, to));
        Ok(self)
    }

    pub fn returns(&self) -> &[f64] {
        &self.returns
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }

    pub fn instrument(&self) -> &str {
        &self.instrument
    }

    pub fn date_range(&self) -> Option<(NaiveDate, NaiveDate)> {
        self.date_range
    }

    /// Sampled path of the log-return state: `[0, r_1, r_1 + r_2, ...]`
    /// (length `len() + 1`).
    pub fn cumulative(&self) -> Vec<f64> {
        let mut path = Vec::with_capacity(self.returns.len() + 1);
        let mut level = 0.0;
        path.push(level);
        for r in &self.returns {
            level += r;
            path.push(level);
        }
        path
    }
}

/// Fitted parameter vector, tagged by model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FittedModel {
    Piv(PivParams),
    Bs(BsParams),
    Heston(HestonParams),
}

impl FittedModel {
    pub fn as_piv(&self) -> Option<&PivParams> {
        match self {
            FittedModel::Piv(p) => Some(p),
            _ => None,
        }
    }

    pub fn as_bs(&self) -> Option<&BsParams> {
        match self {
            FittedModel::Bs(p) => Some(p),
            _ => None,
        }
    }

    pub fn as_heston(&self) -> Option<&HestonParams> {
        match self {
            FittedModel::Heston(p) => Some(p),
            _ => None,
        }
    }

    pub fn tag(&self) -> crate::model::ModelTag {
        match self {
            FittedModel::Piv(_) => crate::model::ModelTag::Piv,
            FittedModel::Bs(_) => crate::model::ModelTag::Bs,
            FittedModel::Heston(_) => crate::model::ModelTag::Heston,
        }
    }
}

/// Outcome of a fit: parameters, final negative log-likelihood and optimiser
/// diagnostics. `nll` is always finite (fits that cannot produce a finite
/// likelihood fail with an error instead).
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: FittedModel,
    /// Final negative log-likelihood (lower is better).
    pub nll: f64,
    /// Whether the optimiser met its tolerances (closed-form fits are always
    /// converged).
    pub converged: bool,
    /// Optimiser iterations (0 for closed-form fits).
    pub iterations: usize,
    /// Spread of objective values across the final simplex (0 for
    /// closed-form fits).
    pub simplex_spread: f64,
    /// True when a parameter had to be clipped to its admissible bounds.
    pub boundary_hit: bool,
}

/// Euler pseudo-log-likelihood of the log-return diffusion.
///
/// The running sum of the returns (starting at 0) is treated as the sampled
/// state path `R_0, R_1, ...`; each increment contributes the Gaussian
/// log-density of `R_{k+1}` given `R_k` with mean
/// `R_k - theta (R_k - mu) dt` and variance `2 theta sigma^2 a (1 + R_k^2) dt`.
///
/// The value depends on `(theta, a, mu, sigma)` only through
/// `(theta, sigma^2 a, mu)`: `loglik(theta, a, mu, sigma)` equals
/// `loglik(theta, sigma^2 a, mu, 1)` exactly. Extreme parameters that break
/// the density (overflowing variance and the like) yield `-inf`, which the
/// optimiser treats as an infinitely bad objective.
pub fn euler_pseudo_loglik(params: &PivParams, series: &ReturnSeries) -> f64 {
    piv_loglik_raw(params.theta, params.c(), params.mu, series.returns(), series.dt())
}

/// One Gaussian transition term per increment along the reconstructed level
/// path. `c = sigma^2 a`.
fn piv_loglik_raw(theta: f64, c: f64, mu: f64, returns: &[f64], dt: f64) -> f64 {
    let mut level = 0.0_f64;
    let mut ll = 0.0_f64;
    for &incr in returns {
        let mean_next = level + (-theta * (level - mu)) * dt;
        let var = 2.0 * theta * c * (1.0 + level * level) * dt;
        if !(var.is_finite() && var > 0.0) {
            return f64::NEG_INFINITY;
        }
        let next = level + incr;
        let dev = next - mean_next;
        ll += -0.5 * ((TAU * var).ln() + dev * dev / var);
        level = next;
    }
    ll
}

/// Fits the log-return diffusion by pseudo-MLE with `sigma` fixed at 1.
///
/// The optimiser works on `(ln theta, ln c, mu)` so positivity is built in,
/// restarting from the 8 corners of `theta in {0.5, 5}`, `c in {0.01, 1}`,
/// `mu in {-0.1, 0.1}`. The start with the lowest final negative
/// log-likelihood wins; exact ties go to the lexicographically smallest
/// `(theta, c, mu)`. Non-convergence is reported through
/// [`FitResult::converged`], not an error.
pub fn mle_piv(series: &ReturnSeries) -> Result<FitResult> {
    let opts = NelderMeadOpts::default();
    let returns = series.returns();
    let dt = series.dt();

    let mut best: Option<(f64, (f64, f64, f64), bool, usize, f64)> = None;
    for &theta0 in &[0.5_f64, 5.0] {
        for &c0 in &[0.01_f64, 1.0] {
            for &mu0 in &[-0.1_f64, 0.1] {
                let x0 = [theta0.ln(), c0.ln(), mu0];
                let res = nelder_mead(
                    |x| -piv_loglik_raw(x[0].exp(), x[1].exp(), x[2], returns, dt),
                    &x0,
                    &opts,
                )?;
                if !res.f_min.is_finite() {
                    continue;
                }
                let cand = (res.x_min[0].exp(), res.x_min[1].exp(), res.x_min[2]);
                let better = match &best {
                    None => true,
                    Some((bf, bp, ..)) => {
                        res.f_min < *bf || (res.f_min == *bf && cand < *bp)
                    }
                };
                if better {
                    best = Some((
                        res.f_min,
                        cand,
                        res.converged,
                        res.iterations,
                        res.simplex_spread,
                    ));
                }
            }
        }
    }

    let (nll, (theta, c, mu), converged, iterations, simplex_spread) =
        best.ok_or_else(|| {
            PivError::numerical("log-return fit: no start produced a finite likelihood")
        })?;
    // sigma = 1, so the second slot (a) carries the identified c = sigma^2 a.
    let params = PivParams::new(theta, c, mu, 1.0)?;
    Ok(FitResult {
        params: FittedModel::Piv(params),
        nll,
        converged,
        iterations,
        simplex_spread,
        boundary_hit: false,
    })
}

/// Closed-form Gaussian MLE for the Black-Scholes benchmark.
///
/// With per-period mean `m` and MLE variance `s^2` (divisor `n`) of the log
/// returns:
///
/// * `sigma_bs = s / sqrt(dt)`;
/// * `drift_bs = m / dt + sigma_bs^2 / 2` — the arithmetic drift of
///   `dS = drift_bs S dt + sigma_bs S dW`, whose log returns have mean
///   `(drift_bs - sigma_bs^2 / 2) dt` per period.
pub fn mle_bs(series: &ReturnSeries) -> Result<FitResult> {
    let returns = series.returns();
    let dt = series.dt();
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|&r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let sigma_bs = var.sqrt() / dt.sqrt();
    let drift_bs = mean / dt + 0.5 * sigma_bs * sigma_bs;
    let params = BsParams::new(sigma_bs, drift_bs)?;
    // Gaussian NLL at the MLE, on the same per-increment transition scale as
    // the other models' pseudo-likelihoods.
    let nll = 0.5 * n * ((TAU * var).ln() + 1.0);
    if !nll.is_finite() {
        return Err(PivError::numerical("Black-Scholes fit: non-finite likelihood"));
    }
    Ok(FitResult {
        params: FittedModel::Bs(params),
        nll,
        converged: true,
        iterations: 0,
        simplex_spread: 0.0,
        boundary_hit: false,
    })
}

/// Positive floor for proxy variances inside likelihoods.
const V_FLOOR: f64 = 1e-12;

/// Admissible box the Heston fit is clipped to; hits set
/// [`FitResult::boundary_hit`].
const HESTON_CLIP: [(f64, f64); 5] = [
    (1e-6, 500.0), // kappa_v
    (1e-10, 10.0), // theta_v
    (0.0, 50.0),   // xi
    (-1.0, 1.0),   // rho (tanh keeps it inside; clip is a safety net)
    (-10.0, 10.0), // drift_h
];

/// Fits the Heston benchmark by proxy-filtered pseudo-MLE.
///
/// The unobserved variance is proxied by a trailing rolling mean of squared
/// demeaned returns over `window_rv` observations, divided by `dt`. The
/// proxy is then sampled every `window_rv` steps — consecutive rolling
/// values share `window_rv - 1` of their terms, and transitions between
/// them would measure the smoothing window, not the variance dynamics — and
/// the joint Gaussian Euler likelihood of each (window return, proxy
/// increment) pair is maximised over `(kappa_v, theta_v, xi, rho, drift_h)`
/// with `v0` pinned to the first proxy value.
///
/// Requires `series.len() >= 5 * window_rv`. Parameters are clipped to an
/// admissible box afterwards; a clip is reported via
/// [`FitResult::boundary_hit`].
pub fn estimate_heston(series: &ReturnSeries, window_rv: usize) -> Result<FitResult> {
    if window_rv < 2 {
        return Err(PivError::invalid_input(format!(
            "window_rv must be at least 2, got {window_rv}"
        )));
    }
    let returns = series.returns();
    let n = returns.len();
    if n < 5 * window_rv {
        return Err(PivError::invalid_input(format!(
            "Heston fit needs at least 5 x window_rv = {} returns, got {n}",
            5 * window_rv
        )));
    }
    let dt = series.dt();
    let mean = returns.iter().sum::<f64>() / n as f64;

    // Trailing realized-variance proxy, one value per return index from
    // window_rv - 1 on; sampled every window_rv indices.
    let sq: Vec<f64> = returns.iter().map(|&r| (r - mean) * (r - mean) / dt).collect();
    let anchors: Vec<usize> = (window_rv - 1..n).step_by(window_rv).collect();
    let states: Vec<f64> = anchors
        .iter()
        .map(|&k| sq[k + 1 - window_rv..=k].iter().sum::<f64>() / window_rv as f64)
        .collect();
    let n_pairs = states.len() - 1;
    let big_dt = window_rv as f64 * dt;
    // Window log return paired with each proxy transition.
    let window_returns: Vec<f64> = (0..n_pairs)
        .map(|j| returns[anchors[j] + 1..=anchors[j + 1]].iter().sum::<f64>())
        .collect();

    let x0 = heston_start(&states, &window_returns, mean, dt, big_dt);
    let res = nelder_mead(
        |x| {
            let kappa_v = x[0].exp();
            let theta_v = x[1].exp();
            let xi = x[2].exp();
            let rho = x[3].tanh();
            let drift_h = x[4];
            -heston_pair_loglik(
                kappa_v,
                theta_v,
                xi,
                rho,
                drift_h,
                &states,
                &window_returns,
                big_dt,
            )
        },
        &x0,
        &NelderMeadOpts::default(),
    )?;
    if !res.f_min.is_finite() {
        return Err(PivError::numerical("Heston fit: no finite likelihood found"));
    }

    let raw = [
        res.x_min[0].exp(),
        res.x_min[1].exp(),
        res.x_min[2].exp(),
        res.x_min[3].tanh(),
        res.x_min[4],
    ];
    let mut clipped = raw;
    for (v, (lo, hi)) in clipped.iter_mut().zip(HESTON_CLIP) {
        *v = v.clamp(lo, hi);
    }
    let boundary_hit = raw
        .iter()
        .zip(&clipped)
        .any(|(r, c)| r.to_bits() != c.to_bits());

    let v0 = states[0].max(V_FLOOR);
    let params = HestonParams::new(clipped[0], clipped[1], clipped[2], clipped[3], v0, clipped[4])?;
    Ok(FitResult {
        params: FittedModel::Heston(params),
        nll: res.f_min,
        converged: res.converged,
        iterations: res.iterations,
        simplex_spread: res.simplex_spread,
        boundary_hit,
    })
}

/// Deterministic moment-matched starting point for the Heston fit, in the
/// optimiser's `(ln kappa_v, ln theta_v, ln xi, atanh rho, drift_h)`
/// coordinates.
fn heston_start(
    states: &[f64],
    window_returns: &[f64],
    mean_return: f64,
    dt: f64,
    big_dt: f64,
) -> [f64; 5] {
    let m = states.len() as f64;
    let theta0 = (states.iter().sum::<f64>() / m).clamp(1e-6, 4.0);

    // Lag-1 autocorrelation of the sampled proxy -> mean-reversion rate.
    let s_mean = states.iter().sum::<f64>() / m;
    let s_var = states.iter().map(|&s| (s - s_mean) * (s - s_mean)).sum::<f64>() / m;
    let s_cov = states
        .windows(2)
        .map(|w| (w[0] - s_mean) * (w[1] - s_mean))
        .sum::<f64>()
        / (m - 1.0);
    let phi = if s_var > 0.0 { s_cov / s_var } else { 0.5 };
    let kappa0 = (-phi.clamp(0.02, 0.98).ln() / big_dt).clamp(0.05, 50.0);

    // Residual spread of the proxy increments -> vol-of-vol.
    let n_pairs = states.len() - 1;
    let resid: Vec<f64> = (0..n_pairs)
        .map(|j| states[j + 1] - states[j] - kappa0 * (theta0 - states[j]) * big_dt)
        .collect();
    let resid_var = resid.iter().map(|&e| e * e).sum::<f64>() / n_pairs as f64;
    let xi0 = (resid_var / (theta0 * big_dt)).sqrt().clamp(1e-3, 5.0);

    // Correlation between window-return and proxy-increment innovations.
    let r_mean = window_returns.iter().sum::<f64>() / n_pairs as f64;
    let r_var = window_returns
        .iter()
        .map(|&r| (r - r_mean) * (r - r_mean))
        .sum::<f64>()
        / n_pairs as f64;
    let cross = window_returns
        .iter()
        .zip(&resid)
        .map(|(&r, &e)| (r - r_mean) * e)
        .sum::<f64>()
        / n_pairs as f64;
    let rho0 = if r_var > 0.0 && resid_var > 0.0 {
        (cross / (r_var * resid_var).sqrt()).clamp(-0.9, 0.9)
    } else {
        0.0
    };

    let drift0 = mean_return / dt + 0.5 * theta0;
    [
        kappa0.ln(),
        theta0.ln(),
        xi0.ln(),
        0.5 * ((1.0 + rho0) / (1.0 - rho0)).ln(),
        drift0,
    ]
}

/// Joint Gaussian log-density of the (window return, proxy increment) pairs
/// under the Euler discretisation at step `big_dt`.
#[allow(clippy::too_many_arguments)]
fn heston_pair_loglik(
    kappa_v: f64,
    theta_v: f64,
    xi: f64,
    rho: f64,
    drift_h: f64,
    states: &[f64],
    window_returns: &[f64],
    big_dt: f64,
) -> f64 {
    let one_minus_rho2 = 1.0 - rho * rho;
    if !(one_minus_rho2 > 0.0) {
        return f64::NEG_INFINITY;
    }
    let mut ll = 0.0_f64;
    for (j, &ret) in window_returns.iter().enumerate() {
        let v = states[j].max(V_FLOOR);
        let var_r = v * big_dt;
        let var_v = xi * xi * v * big_dt;
        if !(var_r > 0.0 && var_v > 0.0 && var_r.is_finite() && var_v.is_finite()) {
            return f64::NEG_INFINITY;
        }
        let z1 = (ret - (drift_h - 0.5 * v) * big_dt) / var_r.sqrt();
        let z2 = (states[j + 1] - v - kappa_v * (theta_v - v) * big_dt) / var_v.sqrt();
        ll += -(TAU).ln()
            - 0.5 * (var_r * var_v * one_minus_rho2).ln()
            - (z1 * z1 - 2.0 * rho * z1 * z2 + z2 * z2) / (2.0 * one_minus_rho2);
    }
    if ll.is_nan() {
        f64::NEG_INFINITY
    } else {
        ll
    }
}
