//! European call pricers: Monte Carlo and finite differences for the
//! Pearson-diffusion model, closed form for Black-Scholes, and
//! characteristic-function integration for Heston.

mod bs;
mod heston;
mod mc;
mod pde;

pub use bs::{bs_call_price, price_call_bs};
pub use heston::{price_call_heston, price_calls_heston_batch, HestonQuad};
pub use mc::{price_call_heston_mc, price_call_piv_mc, price_calls_piv_mc_batch};
pub use pde::{price_call_piv_pde, PdeGridSpec};

use crate::error::{PivError, Result};

/// One European call contract to price at time zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractSpec {
    /// Spot price, > 0.
    pub s0: f64,
    /// Strike. Zero is accepted as a degenerate contract (payoff `S_T`),
    /// which the martingale diagnostics rely on.
    pub strike: f64,
    /// Time to maturity in years, > 0.
    pub ttm: f64,
    /// Continuously compounded risk-free rate.
    pub rate: f64,
}

impl ContractSpec {
    pub fn new(s0: f64, strike: f64, ttm: f64, rate: f64) -> Result<Self> {
        let c = Self {
            s0,
            strike,
            ttm,
            rate,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s0.is_finite() && self.s0 > 0.0) {
            return Err(PivError::invalid_input(format!(
                "s0 must be finite and > 0, got {}",
                self.s0
            )));
        }
        if !(self.strike.is_finite() && self.strike >= 0.0) {
            return Err(PivError::invalid_input(format!(
                "strike must be finite and >= 0, got {}",
                self.strike
            )));
        }
        if !(self.ttm.is_finite() && self.ttm > 0.0) {
            return Err(PivError::invalid_input(format!(
                "ttm must be finite and > 0, got {}",
                self.ttm
            )));
        }
        if !self.rate.is_finite() {
            return Err(PivError::invalid_input("rate must be finite"));
        }
        Ok(())
    }

    /// Discount factor `e^(-r T)`.
    pub fn discount(&self) -> f64 {
        (-self.rate * self.ttm).exp()
    }

    /// Lower no-arbitrage bound `max(s0 - K e^(-rT), 0)`.
    pub fn intrinsic_lower_bound(&self) -> f64 {
        (self.s0 - self.strike * self.discount()).max(0.0)
    }
}

/// How a price was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriceMethod {
    MonteCarlo,
    Pde,
    ClosedForm,
    CharacteristicFunction,
}

/// Solver-specific diagnostics attached to a price.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PriceDiagnostics {
    /// Paths used (Monte Carlo).
    pub n_paths: Option<usize>,
    /// (space nodes, time steps) for the PDE solver.
    pub grid: Option<(usize, usize)>,
    /// Quadrature nodes actually used (characteristic function).
    pub n_quad: Option<usize>,
    /// Residual of the method's internal consistency check, where one
    /// exists (PDE boundary influence; CF node-doubling difference).
    pub residual: Option<f64>,
}

/// A price with its sampling error (zero for deterministic methods).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriceResult {
    pub price: f64,
    pub std_error: f64,
    pub method: PriceMethod,
    pub diagnostics: PriceDiagnostics,
}
