//! Monte Carlo call pricing from simulated terminal prices.

use crate::error::Result;
use crate::model::{HestonParams, PivParams};
use crate::pricing::{ContractSpec, PriceDiagnostics, PriceMethod, PriceResult};
use crate::sde::{simulate_heston_paths, simulate_s_paths_q, SimConfig};

/// Discounted mean and standard error of the call payoff over a terminal
/// sample. Under antithetic sampling the independent unit is the average
/// of a (draws, negated draws) pair, so the error is computed over pair
/// averages; the mean is unchanged by the regrouping.
fn discounted_call_stats(
    terminals: &[f64],
    strike: f64,
    discount: f64,
    antithetic: bool,
) -> (f64, f64) {
    let payoffs: Vec<f64> = if antithetic {
        terminals
            .chunks_exact(2)
            .map(|pair| 0.5 * ((pair[0] - strike).max(0.0) + (pair[1] - strike).max(0.0)))
            .collect()
    } else {
        terminals.iter().map(|&s| (s - strike).max(0.0)).collect()
    };
    let n = payoffs.len() as f64;
    if payoffs.len() < 2 {
        return (discount * payoffs[0], f64::INFINITY);
    }
    let mean = payoffs.iter().sum::<f64>() / n;
    // Two-pass variance avoids cancellation when payoffs are large and
    // nearly constant (e.g. the zero-strike martingale diagnostic).
    let var = payoffs
        .iter()
        .map(|&p| {
            let d = p - mean;
            d * d
        })
        .sum::<f64>()
        / (n - 1.0);
    let std_error = discount * (var / n).sqrt();
    (discount * mean, std_error)
}

fn mc_result(price: f64, std_error: f64, n_paths: usize) -> PriceResult {
    PriceResult {
        price,
        std_error,
        method: PriceMethod::MonteCarlo,
        diagnostics: PriceDiagnostics {
            n_paths: Some(n_paths),
            ..Default::default()
        },
    }
}

/// Prices a call under the log-return diffusion by simulating price paths
/// under the pricing measure and averaging the discounted payoff.
pub fn price_call_piv_mc(
    params: &PivParams,
    c: &ContractSpec,
    config: &SimConfig,
) -> Result<PriceResult> {
    c.validate()?;
    let sim = SimConfig {
        horizon_t: c.ttm,
        ..*config
    };
    let batch = simulate_s_paths_q(params, c.s0, c.rate, &sim)?;
    let (price, std_error) = discounted_call_stats(&batch.terminal_values, c.strike, c.discount(), sim.antithetic);
    Ok(mc_result(price, std_error, sim.n_paths))
}

/// Prices calls at several strikes from one shared set of paths (common
/// random numbers). All contracts share `s0`, `ttm`, and `rate`; sharing
/// paths makes prices exactly monotone in strike and is much faster than
/// independent runs.
pub fn price_calls_piv_mc_batch(
    params: &PivParams,
    s0: f64,
    rate: f64,
    ttm: f64,
    strikes: &[f64],
    config: &SimConfig,
) -> Result<Vec<PriceResult>> {
    let sim = SimConfig {
        horizon_t: ttm,
        ..*config
    };
    let probe = ContractSpec::new(s0, 0.0, ttm, rate)?;
    let batch = simulate_s_paths_q(params, s0, rate, &sim)?;
    let discount = probe.discount();
    strikes
        .iter()
        .map(|&k| {
            let c = ContractSpec::new(s0, k, ttm, rate)?;
            let (price, se) = discounted_call_stats(&batch.terminal_values, c.strike, discount, sim.antithetic);
            Ok(mc_result(price, se, sim.n_paths))
        })
        .collect()
}

/// Monte Carlo Heston call price (full-truncation Euler paths); reference
/// oracle for the characteristic-function pricer.
pub fn price_call_heston_mc(
    h: &HestonParams,
    c: &ContractSpec,
    config: &SimConfig,
) -> Result<PriceResult> {
    c.validate()?;
    let sim = SimConfig {
        horizon_t: c.ttm,
        ..*config
    };
    let batch = simulate_heston_paths(h, c.s0, c.rate, &sim)?;
    let (price, std_error) = discounted_call_stats(&batch.terminal_values, c.strike, c.discount(), sim.antithetic);
    Ok(mc_result(price, std_error, sim.n_paths))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pricing::bs_call_price;
    use crate::sde::simulate_gbm_paths;

    fn piv(theta: f64, a: f64, mu: f64, sigma: f64) -> PivParams {
        PivParams::new(theta, a, mu, sigma).unwrap()
    }

    #[test]
    fn zero_strike_recovers_spot_within_mc_error() {
        let params = piv(1.0, 0.02, 0.0, 1.0); // kappa = 0.02
        let c = ContractSpec::new(100.0, 0.0, 0.25, 0.05).unwrap();
        let config = SimConfig::new(100_000, 63, c.ttm, 17).unwrap();
        let r = price_call_piv_mc(&params, &c, &config).unwrap();
        assert!(
            (r.price - 100.0).abs() < 3.0 * r.std_error,
            "price {} se {}",
            r.price,
            r.std_error
        );
    }

    #[test]
    fn far_otm_option_is_worthless() {
        let params = piv(1.0, 0.02, 0.0, 1.0);
        let c = ContractSpec::new(100.0, 10_000.0, 0.1, 0.05).unwrap();
        let config = SimConfig::new(50_000, 26, c.ttm, 23).unwrap();
        let r = price_call_piv_mc(&params, &c, &config).unwrap();
        assert!(r.price <= 3.0 * r.std_error.max(1e-12), "price {}", r.price);
    }

    #[test]
    fn short_maturity_matches_gbm_limit() {
        // kappa = 0.02 over T = 0.1: log return stays near 0, so the model
        // is locally GBM with sigma_eff = sqrt(2 kappa) = 0.2.
        let params = piv(1.0, 0.02, 0.3, 1.0); // mu deliberately nonzero
        let c = ContractSpec::new(100.0, 100.0, 0.1, 0.05).unwrap();
        let config = SimConfig::new(200_000, 100, c.ttm, 41).unwrap();
        let r = price_call_piv_mc(&params, &c, &config).unwrap();
        let bs = bs_call_price(0.2, &c).unwrap();
        assert!(
            (r.price - bs).abs() / bs < 0.01,
            "mc {} vs bs {}",
            r.price,
            bs
        );
    }

    #[test]
    fn batch_prices_are_monotone_in_strike() {
        let params = piv(2.0, 0.04, 0.0, 1.0);
        let strikes: Vec<f64> = (0..30).map(|i| 70.0 + 2.0 * i as f64).collect();
        let config = SimConfig::new(20_000, 63, 0.25, 7).unwrap();
        let prices =
            price_calls_piv_mc_batch(&params, 100.0, 0.05, 0.25, &strikes, &config).unwrap();
        for w in prices.windows(2) {
            assert!(
                w[1].price <= w[0].price,
                "batch CRN prices must be ordered"
            );
        }
    }

    #[test]
    fn batch_agrees_with_single_contract_pricing() {
        let params = piv(2.0, 0.04, 0.0, 1.0);
        let config = SimConfig::new(10_000, 26, 0.1, 7).unwrap();
        let single = price_call_piv_mc(
            &params,
            &ContractSpec::new(100.0, 95.0, 0.1, 0.05).unwrap(),
            &config,
        )
        .unwrap();
        let batch =
            price_calls_piv_mc_batch(&params, 100.0, 0.05, 0.1, &[95.0], &config).unwrap();
        assert_eq!(single.price.to_bits(), batch[0].price.to_bits());
    }

    #[test]
    fn mu_invariance_is_bitwise() {
        let c = ContractSpec::new(100.0, 105.0, 0.25, 0.05).unwrap();
        let config = SimConfig::new(5_000, 63, c.ttm, 77).unwrap();
        let a = price_call_piv_mc(&piv(2.0, 0.04, 0.0, 1.0), &c, &config).unwrap();
        let b = price_call_piv_mc(&piv(2.0, 0.04, -0.25, 1.0), &c, &config).unwrap();
        assert_eq!(a.price.to_bits(), b.price.to_bits());
        assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
    }

    #[test]
    fn gbm_mc_matches_closed_form() {
        let c = ContractSpec::new(100.0, 100.0, 0.5, 0.05).unwrap();
        let config = SimConfig::new(200_000, 16, c.ttm, 99).unwrap();
        let batch = simulate_gbm_paths(0.2, c.s0, c.rate, &config).unwrap();
        let (price, se) =
            super::discounted_call_stats(&batch.terminal_values, c.strike, c.discount(), false);
        let bs = bs_call_price(0.2, &c).unwrap();
        assert!((price - bs).abs() < 3.0 * se, "mc {price} vs bs {bs} (se {se})");
    }

    #[test]
    fn antithetic_reduces_standard_error_for_smooth_payoff() {
        let params = piv(1.0, 0.02, 0.0, 1.0);
        let c = ContractSpec::new(100.0, 0.0, 0.5, 0.05).unwrap(); // linear payoff
        let plain_cfg = SimConfig::new(40_000, 126, c.ttm, 5).unwrap();
        let anti_cfg = plain_cfg.with_antithetic(true);
        let plain = price_call_piv_mc(&params, &c, &plain_cfg).unwrap();
        let anti = price_call_piv_mc(&params, &c, &anti_cfg).unwrap();
        assert!(
            anti.std_error < plain.std_error,
            "antithetic se {} vs plain {}",
            anti.std_error,
            plain.std_error
        );
    }
}
