//! End-to-end model comparison on synthetic data: generate an option
//! chain with a known generator, run the historical (fit on past returns)
//! and implied (fit on yesterday's prices) backtests for all three models,
//! and print error metrics, rankings, and Diebold–Mariano significance.
//!
//! Because the generator is the log-return diffusion, the diffusion model
//! should rank first — this is the oracle experiment that validates the
//! whole pipeline before pointing it at real data.
//!
//! Run with: cargo run --release -p pivopt --example backtest_synthetic

use chrono::NaiveDate;
use pivopt::backtest::{
    emit_report, run_historical_backtest, run_implied_backtest, BacktestOpts, BacktestReport,
};
use pivopt::market_data::{RatePoint, RateSeries};
use pivopt::model::{ModelTag, PivParams};
use pivopt::synth::{generate_synthetic_chain, GeneratorModel, SynthChainSpec};

fn summarize(name: &str, report: &BacktestReport) {
    println!("== {name} backtest ==");
    println!(
        "dates evaluated: {} (skipped {}), priced quotes: {}, fit failures: {}",
        report.n_dates_evaluated,
        report.n_dates_skipped,
        report.errors.len(),
        report.fit_failures.len()
    );
    println!("ranking by all-bucket mean absolute error:");
    for (rank, (model, mae)) in report.mae_ranking().iter().enumerate() {
        println!("  {}. {model:7} mae = {mae:.4}", rank + 1);
    }
    let significant: Vec<_> = report
        .dm_tests
        .iter()
        .filter(|d| d.bucket == "ALL" && d.p_value < 0.05)
        .collect();
    println!("Diebold-Mariano (ALL bucket, H1: first model more accurate):");
    if significant.is_empty() {
        println!("  no comparison significant at 5%");
    }
    for d in significant {
        println!(
            "  {} vs {} [{} loss]: stat = {:+.2}, p = {:.2e}, n = {}",
            d.model_a, d.model_b, d.loss, d.statistic, d.p_value, d.n
        );
    }
    println!();
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let truth = PivParams::new(2.0, 0.15, 0.05, 1.0)?;
    let spec = SynthChainSpec {
        model: GeneratorModel::Piv(truth),
        s0: 100.0,
        rate: 0.05,
        start_date: NaiveDate::from_ymd_opt(2024, 1, 1).expect("valid date"),
        n_trade_days: 60,
        strike_moneyness: vec![0.92, 0.96, 1.00, 1.04, 1.08],
        expiry_offsets_days: vec![7, 28, 84],
        noise_level: 0.0,
        lot_size: 50,
        contracts_range: (200, 2000),
    };
    println!(
        "generating {} trading days x {} strikes x {} expiries...",
        spec.n_trade_days,
        spec.strike_moneyness.len(),
        spec.expiry_offsets_days.len()
    );
    let quotes = generate_synthetic_chain(&spec, 5)?;
    let rates = RateSeries::new(vec![RatePoint {
        date: spec.start_date,
        yield_91d: spec.rate,
    }])?;

    let models = ModelTag::ALL;
    let opts = BacktestOpts {
        mc_paths: 20_000,
        ..BacktestOpts::default()
    };
    let out_root = std::path::Path::new("target/example-output/backtest_synthetic");

    // Historical mode: every model is re-fitted each day on the trailing
    // window of underlying closes, then prices tomorrow's quotes.
    let window = 40;
    let historical = run_historical_backtest(&quotes, &rates, window, &models, 2024, &opts)?;
    summarize(&format!("historical (window {window})"), &historical);
    for f in emit_report(&historical, &out_root.join("historical"))? {
        println!("wrote {}", f.display());
    }
    println!();

    // Implied mode: every model is re-calibrated each day to the previous
    // day's full chain, then prices today's quotes.
    let implied = run_implied_backtest(&quotes, &rates, &models, 2024, &opts)?;
    summarize("implied", &implied);
    for f in emit_report(&implied, &out_root.join("implied"))? {
        println!("wrote {}", f.display());
    }

    println!("\nmoneyness breakdown (implied mode):");
    println!("{:>8} {:>6} {:>6} {:>10} {:>12}", "model", "bucket", "count", "mae", "mse");
    for row in &implied.moneyness_metrics {
        println!(
            "{:>8} {:>6} {:>6} {:>10.4} {:>12.6}",
            row.model, row.bucket, row.count, row.mae, row.mse
        );
    }
    Ok(())
}
