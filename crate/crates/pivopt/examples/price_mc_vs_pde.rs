//! Prices European calls under the log-return diffusion with the two
//! independent engines — Monte Carlo and the Crank–Nicolson finite
//! difference solver — and cross-checks them against each other and
//! against the Black–Scholes small-kappa limit.
//!
//! For small kappa over short horizons, the diffusion behaves like
//! geometric Brownian motion with volatility sqrt(2 kappa), so the
//! Black–Scholes price with that volatility is a third, independent
//! reference.
//!
//! Run with: cargo run --release -p pivopt --example price_mc_vs_pde

use pivopt::model::PivParams;
use pivopt::pricing::{
    bs_call_price, price_call_piv_mc, price_call_piv_pde, ContractSpec, PdeGridSpec,
};
use pivopt::sde::SimConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let s0 = 100.0;
    let rate = 0.05;
    let ttm = 0.25;
    let n_paths = 100_000;
    let seed = 7;

    println!("s0 = {s0}, rate = {rate}, T = {ttm}, {n_paths} antithetic MC paths\n");
    println!(
        "{:>6} {:>7} {:>12} {:>12} {:>9} {:>8} {:>12}",
        "kappa", "strike", "mc", "pde", "|diff|", "diff/se", "bs(sqrt(2k))"
    );

    for &kappa in &[0.01, 0.04, 0.16] {
        let params = PivParams::from_kappa(kappa)?;
        for &strike in &[90.0, 100.0, 110.0] {
            let c = ContractSpec::new(s0, strike, ttm, rate)?;
            let config = SimConfig::daily(n_paths, ttm, seed)?.with_antithetic(true);
            let mc = price_call_piv_mc(&params, &c, &config)?;
            let grid = PdeGridSpec::auto(&params, &c)?;
            let pde = price_call_piv_pde(&params, &c, &grid)?;
            let bs = bs_call_price((2.0 * kappa).sqrt(), &c)?;
            let diff = (mc.price - pde.price).abs();
            println!(
                "{:>6} {:>7} {:>12.6} {:>12.6} {:>9.2e} {:>8.2} {:>12.6}",
                kappa,
                strike,
                mc.price,
                pde.price,
                diff,
                diff / mc.std_error,
                bs
            );
        }
    }

    println!("\nThe two engines share no code path: agreement within a few MC");
    println!("standard errors validates both. The last column shows the small-");
    println!("kappa Black-Scholes limit drifting away as kappa grows.");
    Ok(())
}
