//! Round trip: simulate a daily log-return series under the physical
//! measure, then recover the generator's parameters by maximum likelihood.
//!
//! The diffusion fit uses the exact transition-density-free quasi-likelihood
//! of the discretized dynamics; Black–Scholes is fitted in closed form; the
//! Heston fit is a method-of-moments approximation on a realized-variance
//! proxy (documented as such — its tolerances are wide by nature).
//!
//! Run with: cargo run --release -p pivopt --example estimate_from_returns

use pivopt::estimation::{estimate_heston, mle_bs, mle_piv, FittedModel, ReturnSeries, DEFAULT_WINDOW_RV, TRADING_DT};
use pivopt::model::PivParams;
use pivopt::sde::{simulate_r_paths_p, SimConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let truth = PivParams::new(2.0, 0.15, 0.05, 1.0)?;
    println!(
        "generator: theta = {}, a = {}, mu = {}, sigma = {} (kappa = {:.4})",
        truth.theta,
        truth.a,
        truth.mu,
        truth.sigma,
        truth.kappa()
    );

    // One long path observed daily: 20 years of trading days.
    let n_obs = 5040;
    let horizon = n_obs as f64 * TRADING_DT;
    let config = SimConfig::new(1, n_obs, horizon, 31)?.with_store_paths(true);
    let batch = simulate_r_paths_p(&truth, &config)?;
    let path = &batch.paths.as_ref().expect("stored")[0];
    let returns: Vec<f64> = path.windows(2).map(|w| w[1] - w[0]).collect();
    let series = ReturnSeries::new(returns, TRADING_DT, "simulated")?;
    println!("observations: {} daily increments\n", series.len());

    let piv = mle_piv(&series)?;
    if let FittedModel::Piv(p) = &piv.params {
        println!("diffusion fit      (converged: {}, iterations: {})", piv.converged, piv.iterations);
        println!("  theta   = {:>8.4}   (truth {})", p.theta, truth.theta);
        println!("  sigma^2a= {:>8.4}   (truth {})", p.sigma * p.sigma * p.a, truth.sigma * truth.sigma * truth.a);
        println!("  mu      = {:>8.4}   (truth {})", p.mu, truth.mu);
        println!("  kappa   = {:>8.4}   (truth {:.4})", p.kappa(), truth.kappa());
    }

    let bs = mle_bs(&series)?;
    if let FittedModel::Bs(p) = &bs.params {
        println!("\nBlack-Scholes fit  (closed form)");
        println!("  sigma_bs = {:>7.4}   (diffusion's effective vol sqrt(2 kappa) = {:.4})",
            p.sigma_bs, (2.0 * truth.kappa()).sqrt());
        println!("  drift_bs = {:>7.4}", p.drift_bs);
    }

    let heston = estimate_heston(&series, DEFAULT_WINDOW_RV)?;
    if let FittedModel::Heston(p) = &heston.params {
        println!("\nHeston moment fit  (realized-variance window {DEFAULT_WINDOW_RV}; approximate by design)");
        println!("  kappa_v = {:>8.4}   theta_v = {:.4}   xi = {:.4}", p.kappa_v, p.theta_v, p.xi);
        println!("  rho     = {:>8.4}   v0      = {:.4}", p.rho, p.v0);
    }

    println!("\nlog-likelihoods (lower nll is better on the same data):");
    println!("  diffusion nll = {:.2}", piv.nll);
    println!("  bs        nll = {:.2}", bs.nll);
    Ok(())
}
