//! Calibrates all three models to one day of synthetic option quotes by
//! least squares, working purely from prices — the implied route that the
//! implied-mode backtest repeats day by day.
//!
//! The chain is generated by the log-return diffusion, so the diffusion
//! model should fit near-exactly while Black–Scholes averages over the
//! smile and Heston absorbs some of it through its extra degrees of
//! freedom.
//!
//! Run with: cargo run --release -p pivopt --example calibrate_chain

use chrono::NaiveDate;
use pivopt::calibration::{calibrate_implied, CalibrationProblem};
use pivopt::estimation::FittedModel;
use pivopt::model::{ModelTag, PivParams};
use pivopt::synth::{generate_synthetic_chain, GeneratorModel, SynthChainSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let truth = PivParams::new(2.0, 0.15, 0.05, 1.0)?;
    let spec = SynthChainSpec {
        model: GeneratorModel::Piv(truth.clone()),
        s0: 100.0,
        rate: 0.05,
        start_date: NaiveDate::from_ymd_opt(2024, 1, 1).expect("valid date"),
        n_trade_days: 1,
        strike_moneyness: vec![0.90, 0.95, 0.98, 1.00, 1.02, 1.05, 1.10],
        expiry_offsets_days: vec![14, 28, 56],
        noise_level: 0.0,
        lot_size: 50,
        contracts_range: (200, 2000),
    };
    let quotes = generate_synthetic_chain(&spec, 12)?;
    println!(
        "chain: {} noise-free quotes generated by the diffusion with kappa = {:.3}\n",
        quotes.len(),
        truth.kappa()
    );

    for model in ModelTag::ALL {
        let problem = CalibrationProblem::new(quotes.clone(), spec.rate, model, 1)?;
        let fit = calibrate_implied(&problem)?;
        let rmse = (fit.nll / quotes.len() as f64).sqrt();
        println!("{model}: sse = {:.3e}, rmse/quote = {:.4}, iterations = {}", fit.nll, rmse, fit.iterations);
        match &fit.params {
            FittedModel::Piv(p) => println!("  kappa = {:.4} (truth {:.4})", p.kappa(), truth.kappa()),
            FittedModel::Bs(p) => println!(
                "  sigma_bs = {:.4} (effective vol sqrt(2 kappa) = {:.4})",
                p.sigma_bs,
                (2.0 * truth.kappa()).sqrt()
            ),
            FittedModel::Heston(p) => println!(
                "  kappa_v = {:.3}, theta_v = {:.4}, xi = {:.3}, rho = {:+.3}, v0 = {:.4}",
                p.kappa_v, p.theta_v, p.xi, p.rho, p.v0
            ),
        }
        println!();
    }

    println!("Price units matter: an rmse of 0.05 on a 100-unit underlying is");
    println!("5 bps of spot per quote. The diffusion's rmse is at numerical");
    println!("noise level because the chain is its own model class.");
    Ok(())
}
