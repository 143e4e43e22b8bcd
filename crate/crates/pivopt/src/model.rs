//! Model parameter types and pointwise coefficient functions.
//!
//! The central object is [`PivParams`], the parameter vector of the Pearson
//! diffusion driving log returns,
//!
//! ```text
//! dR = -theta (R - mu) dt + sigma sqrt(2 theta a (1 + R^2)) dB,   R_0 = 0.
//! ```
//!
//! All formulas here depend on `sigma` and `a` only through the product
//! `c = sigma^2 a`; risk-neutral dynamics depend only on `kappa = theta c`.
//! The full four-vector is kept for reporting, the reductions for pricing
//! and estimation.

use crate::error::{PivError, Result};

/// Identifies one of the three competing pricing models in calibration,
/// backtests, reports, and the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelTag {
    Piv,
    Bs,
    Heston,
}

impl ModelTag {
    pub const ALL: [ModelTag; 3] = [ModelTag::Piv, ModelTag::Bs, ModelTag::Heston];
}

impl std::fmt::Display for ModelTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelTag::Piv => "piv",
            ModelTag::Bs => "bs",
            ModelTag::Heston => "heston",
        })
    }
}

impl std::str::FromStr for ModelTag {
    type Err = PivError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "piv" => Ok(ModelTag::Piv),
            "bs" => Ok(ModelTag::Bs),
            "heston" | "hs" => Ok(ModelTag::Heston),
            other => Err(PivError::invalid_input(format!(
                "unknown model tag '{other}' (expected piv, bs, or heston)"
            ))),
        }
    }
}

/// Parameters of the Pearson diffusion for log returns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PivParams {
    /// Mean-reversion rate (1/year).
    pub theta: f64,
    /// Shape coefficient of the quadratic squared diffusion (> 0).
    pub a: f64,
    /// Invariant mean of the log return.
    pub mu: f64,
    /// Volatility scale of log returns (> 0).
    pub sigma: f64,
}

impl PivParams {
    pub fn new(theta: f64, a: f64, mu: f64, sigma: f64) -> Result<Self> {
        let p = Self {
            theta,
            a,
            mu,
            sigma,
        };
        p.validate()?;
        Ok(p)
    }

    /// Canonical embedding of the identified pricing parameter:
    /// `kappa` maps to `(theta = kappa, a = 1, mu = 0, sigma = 1)`.
    pub fn from_kappa(kappa: f64) -> Result<Self> {
        Self::new(kappa, 1.0, 0.0, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta.is_finite() && self.theta > 0.0) {
            return Err(PivError::invalid_params(format!(
                "theta must be finite and > 0, got {}",
                self.theta
            )));
        }
        if !(self.a.is_finite() && self.a > 0.0) {
            return Err(PivError::invalid_params(format!(
                "a must be finite and > 0, got {}",
                self.a
            )));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(PivError::invalid_params(format!(
                "sigma must be finite and > 0, got {}",
                self.sigma
            )));
        }
        if !self.mu.is_finite() {
            return Err(PivError::invalid_params(format!(
                "mu must be finite, got {}",
                self.mu
            )));
        }
        Ok(())
    }

    /// Identified diffusion scale `c = sigma^2 a`.
    #[inline]
    pub fn c(&self) -> f64 {
        self.sigma * self.sigma * self.a
    }

    /// Identified pricing parameter `kappa = theta sigma^2 a`.
    #[inline]
    pub fn kappa(&self) -> f64 {
        self.theta * self.c()
    }
}

/// Black-Scholes benchmark parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BsParams {
    /// Annualized log-return volatility (> 0).
    pub sigma_bs: f64,
    /// Annualized arithmetic drift of the asset. Estimation output only;
    /// never used in pricing.
    pub drift_bs: f64,
}

impl BsParams {
    pub fn new(sigma_bs: f64, drift_bs: f64) -> Result<Self> {
        if !(sigma_bs.is_finite() && sigma_bs > 0.0) {
            return Err(PivError::invalid_params(format!(
                "sigma_bs must be finite and > 0, got {sigma_bs}"
            )));
        }
        if !drift_bs.is_finite() {
            return Err(PivError::invalid_params("drift_bs must be finite"));
        }
        Ok(Self { sigma_bs, drift_bs })
    }
}

/// Heston benchmark parameters (standard 1993 dynamics).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HestonParams {
    /// Variance mean-reversion rate (1/year).
    pub kappa_v: f64,
    /// Long-run variance (1/year).
    pub theta_v: f64,
    /// Volatility of variance.
    pub xi: f64,
    /// Correlation between asset and variance shocks, in [-1, 1].
    pub rho: f64,
    /// Initial variance (> 0).
    pub v0: f64,
    /// Annualized asset drift. Estimation output only; pricing is under Q.
    pub drift_h: f64,
}

impl HestonParams {
    pub fn new(
        kappa_v: f64,
        theta_v: f64,
        xi: f64,
        rho: f64,
        v0: f64,
        drift_h: f64,
    ) -> Result<Self> {
        let p = Self {
            kappa_v,
            theta_v,
            xi,
            rho,
            v0,
            drift_h,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.kappa_v.is_finite()
            && self.kappa_v > 0.0
            && self.theta_v.is_finite()
            && self.theta_v > 0.0
            && self.xi.is_finite()
            && self.xi >= 0.0
            && self.rho.is_finite()
            && (-1.0..=1.0).contains(&self.rho)
            && self.v0.is_finite()
            && self.v0 > 0.0
            && self.drift_h.is_finite();
        if ok {
            Ok(())
        } else {
            Err(PivError::invalid_params(format!("{self:?}")))
        }
    }

    /// Feller ratio `2 kappa_v theta_v / xi^2`, reported as a diagnostic.
    /// Values below 1 mean the variance process can touch zero.
    pub fn feller_ratio(&self) -> f64 {
        if self.xi == 0.0 {
            f64::INFINITY
        } else {
            2.0 * self.kappa_v * self.theta_v / (self.xi * self.xi)
        }
    }
}

fn check_finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(PivError::invalid_input(format!("{name} must be finite, got {v}")))
    }
}

/// Drift coefficient `-theta (r_val - mu)` of the log-return diffusion.
pub fn piv_drift(params: &PivParams, r_val: f64) -> Result<f64> {
    params.validate()?;
    check_finite("r_val", r_val)?;
    Ok(-params.theta * (r_val - params.mu))
}

/// Diffusion coefficient `sigma sqrt(2 theta a (1 + r_val^2))`.
///
/// Strictly positive for all real `r_val`; equals `sqrt(2 kappa (1 + r^2))`
/// expressed through the identified `kappa`.
pub fn piv_diffusion(params: &PivParams, r_val: f64) -> Result<f64> {
    params.validate()?;
    check_finite("r_val", r_val)?;
    Ok(piv_diffusion_unchecked(params.kappa(), r_val))
}

/// Diffusion coefficient from the identified `kappa` alone (hot path).
#[inline]
pub(crate) fn piv_diffusion_unchecked(kappa: f64, r_val: f64) -> f64 {
    (2.0 * kappa * (1.0 + r_val * r_val)).sqrt()
}

/// Market price of risk removing the discounted-price drift:
///
/// ```text
/// u(R) = (-r - theta (R - mu) + sigma^2 theta a (1 + R^2))
///        / (sigma sqrt(2 theta a (1 + R^2)))
/// ```
///
/// The denominator never vanishes since `1 + R^2 >= 1`.
pub fn girsanov_kernel_u(params: &PivParams, rate: f64, r_val: f64) -> Result<f64> {
    params.validate()?;
    check_finite("rate", rate)?;
    check_finite("r_val", r_val)?;
    let one_plus_r2 = 1.0 + r_val * r_val;
    let numer = -rate - params.theta * (r_val - params.mu) + params.kappa() * one_plus_r2;
    let denom = (2.0 * params.kappa() * one_plus_r2).sqrt();
    Ok(numer / denom)
}

/// Outcome of the Novikov-condition bound check.
#[derive(Debug, Clone, Copy)]
pub struct NovikovCheck {
    /// Constant `K` with `u(R)^2 <= K (1 + R^2)` for all real `R`.
    pub bound: f64,
    /// Whether the inequality held at every grid point.
    pub holds: bool,
    /// Largest observed ratio `u(R)^2 / (K (1 + R^2))` over the grid.
    pub max_ratio: f64,
}

/// Computes the bound constant
/// `K = 3 [ (mu theta - r)^2 / (2 sigma^2 theta a) + theta^2 / (2 sigma^2 theta a)
///        + sigma^2 a theta / 2 ]`
/// and verifies `u(R)^2 <= K (1 + R^2)` on the supplied grid.
///
/// A `false` verdict indicates an implementation bug: the inequality is a
/// theorem for valid parameters.
pub fn novikov_bound_check(params: &PivParams, rate: f64, r_grid: &[f64]) -> Result<NovikovCheck> {
    params.validate()?;
    check_finite("rate", rate)?;
    if r_grid.is_empty() {
        return Err(PivError::invalid_input("r_grid must be non-empty"));
    }
    for &r in r_grid {
        check_finite("r_grid entry", r)?;
    }
    let two_kappa = 2.0 * params.kappa();
    let term_rate = (params.mu * params.theta - rate).powi(2) / two_kappa;
    let term_theta = params.theta * params.theta / two_kappa;
    let term_kappa = params.kappa() / 2.0;
    let bound = 3.0 * (term_rate + term_theta + term_kappa);

    let mut holds = true;
    let mut max_ratio = 0.0_f64;
    for &r in r_grid {
        let u = girsanov_kernel_u(params, rate, r)?;
        let ratio = (u * u) / (bound * (1.0 + r * r));
        max_ratio = max_ratio.max(ratio);
        if ratio > 1.0 {
            holds = false;
        }
    }
    Ok(NovikovCheck {
        bound,
        holds,
        max_ratio,
    })
}
