//! Black-Scholes closed-form call pricing.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{PivError, Result};
use crate::pricing::{ContractSpec, PriceDiagnostics, PriceMethod, PriceResult};

/// Plain Black-Scholes call value. `sigma = 0` degenerates to the
/// discounted intrinsic value `max(s0 - K e^(-rT), 0)`.
pub fn bs_call_price(sigma: f64, c: &ContractSpec) -> Result<f64> {
    c.validate()?;
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(PivError::invalid_input(format!(
            "sigma must be finite and >= 0, got {sigma}"
        )));
    }
    if c.strike == 0.0 {
        // Payoff is S_T; discounted expectation is s0 for any volatility.
        return Ok(c.s0);
    }
    let sig_sqrt_t = sigma * c.ttm.sqrt();
    if sig_sqrt_t == 0.0 {
        return Ok(c.intrinsic_lower_bound());
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let d1 = ((c.s0 / c.strike).ln() + (c.rate + 0.5 * sigma * sigma) * c.ttm) / sig_sqrt_t;
    let d2 = d1 - sig_sqrt_t;
    Ok(c.s0 * normal.cdf(d1) - c.strike * c.discount() * normal.cdf(d2))
}

/// [`bs_call_price`] wrapped in the common result type.
pub fn price_call_bs(sigma: f64, c: &ContractSpec) -> Result<PriceResult> {
    let price = bs_call_price(sigma, c)?;
    Ok(PriceResult {
        price,
        std_error: 0.0,
        method: PriceMethod::ClosedForm,
        diagnostics: PriceDiagnostics::default(),
    })
}
