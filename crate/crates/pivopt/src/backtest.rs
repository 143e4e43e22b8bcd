//! Out-of-sample pricing backtests over an option chain, plus the
//! forecast-accuracy statistics computed from them.
//!
//! Two evaluation designs:
//!
//! * **Historical**: on each evaluation date, fit every model by maximum
//!   likelihood on the trailing window of underlying closes (ending the day
//!   before), then price that date's quotes with the fitted physical-side
//!   parameters mapped into each model's pricing formula.
//! * **Implied**: on each evaluation date, calibrate every model by least
//!   squares to the previous trading date's quotes, then price the current
//!   date's quotes.
//!
//! Both produce a [`BacktestReport`]: the flat per-quote error records, MAE
//! and MSE tables by moneyness and maturity bucket, and Diebold-Mariano
//! comparisons per model pair. All randomness descends from the run seed
//! via per-(date, model) derived substreams, so reports are bit-reproducible
//! at a fixed thread-independent evaluation order (dates are processed in
//! parallel but reduced in date order).

use chrono::{Datelike, NaiveDate};
use rayon::prelude::*;
use serde_json::json;
use statrs::distribution::{ContinuousCDF, Normal};
use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::calibration::{calibrate_implied, CalibrationProblem, PivObjective};
use crate::error::{PivError, Result};
use crate::estimation::{
    estimate_heston, mle_bs, mle_piv, FittedModel, ReturnSeries, DEFAULT_WINDOW_RV,
    MIN_SERIES_LEN, TRADING_DT,
};
use crate::market_data::{
    apply_liquidity_filter, MaturityBucket, MoneynessBucket, OptionQuote, RateSeries,
    DEFAULT_LIQUIDITY_QUANTILE,
};
use crate::model::ModelTag;
use crate::pricing::{
    bs_call_price, price_call_piv_pde, price_calls_heston_batch, price_calls_piv_mc_batch,
    HestonQuad, PdeGridSpec,
};
use crate::rng::derive_seed;
use crate::sde::SimConfig;

/// One model's pricing error on one quote.
#[derive(Debug, Clone, PartialEq)]
pub struct PricingError {
    /// Index of the quote in the date-sorted filtered evaluation set;
    /// errors from different models on the same quote share this index.
    pub quote_idx: usize,
    pub trade_date: NaiveDate,
    pub expiry_date: NaiveDate,
    pub strike: f64,
    pub model: ModelTag,
    pub model_price: f64,
    pub market_price: f64,
    pub abs_error: f64,
    pub sq_error: f64,
    pub moneyness: MoneynessBucket,
    pub maturity: MaturityBucket,
}

impl PricingError {
    fn new(quote_idx: usize, q: &OptionQuote, model: ModelTag, model_price: f64) -> Self {
        let abs_error = (model_price - q.option_close).abs();
        Self {
            quote_idx,
            trade_date: q.trade_date,
            expiry_date: q.expiry_date,
            strike: q.strike,
            model,
            model_price,
            market_price: q.option_close,
            abs_error,
            sq_error: abs_error * abs_error,
            moneyness: q.moneyness(),
            maturity: q.maturity().expect("ttm validated at quote construction"),
        }
    }
}

/// Mean absolute and mean squared error of a non-empty error list.
pub fn compute_error_metrics(errors: &[PricingError]) -> Result<(f64, f64)> {
    if errors.is_empty() {
        return Err(PivError::invalid_input(
            "error metrics need at least one pricing error",
        ));
    }
    let n = errors.len() as f64;
    let mae = errors.iter().map(|e| e.abs_error).sum::<f64>() / n;
    let mse = errors.iter().map(|e| e.sq_error).sum::<f64>() / n;
    Ok((mae, mse))
}

/// Alternative hypothesis of the Diebold-Mariano test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DmAlternative {
    /// H1: series A has smaller loss (is more accurate); lower-tail p-value.
    Less,
    TwoSided,
}

/// Diebold-Mariano forecast-accuracy comparison at horizon 1.
///
/// The loss differential is `d_t = loss_a[t] - loss_b[t]`; the statistic is
/// `mean(d) / sqrt(var(d)/n)` with the divisor-`n` sample variance and no
/// autocovariance terms (daily one-step forecasts). P-values come from the
/// standard normal. Identical series (zero variance) are a degenerate input
/// and produce an error, not a p-value.
pub fn diebold_mariano(
    loss_a: &[f64],
    loss_b: &[f64],
    alternative: DmAlternative,
) -> Result<(f64, f64)> {
    if loss_a.len() != loss_b.len() {
        return Err(PivError::invalid_input(format!(
            "loss series lengths differ: {} vs {}",
            loss_a.len(),
            loss_b.len()
        )));
    }
    if loss_a.len() < 10 {
        return Err(PivError::invalid_input(format!(
            "Diebold-Mariano needs at least 10 observations, got {}",
            loss_a.len()
        )));
    }
    if loss_a.iter().chain(loss_b).any(|x| !x.is_finite()) {
        return Err(PivError::invalid_input("losses must be finite"));
    }
    let n = loss_a.len() as f64;
    let d: Vec<f64> = loss_a.iter().zip(loss_b).map(|(a, b)| a - b).collect();
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    if var == 0.0 {
        return Err(PivError::numerical(
            "degenerate loss differential: zero variance (identical loss series)",
        ));
    }
    let statistic = mean / (var / n).sqrt();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let p_value = match alternative {
        DmAlternative::Less => normal.cdf(statistic),
        DmAlternative::TwoSided => 2.0 * normal.cdf(-statistic.abs()),
    };
    Ok((statistic, p_value))
}

/// Loss function underlying a DM comparison row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Abs,
    Sq,
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Abs => "abs",
            LossKind::Sq => "sq",
        })
    }
}

/// One row of the per-bucket metrics tables.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub model: ModelTag,
    /// "OTM"/"ATM"/"ITM"/"ALL" or "A".."E".
    pub bucket: String,
    pub count: usize,
    /// Percent of this model's priced quotes falling in the bucket.
    pub proportion_pct: f64,
    pub mae: f64,
    pub mse: f64,
}

/// One row of the DM comparison table. `statistic < 0` favors `model_a`;
/// p-values are lower-tail ("model_a more accurate").
#[derive(Debug, Clone, PartialEq)]
pub struct DmRecord {
    pub model_a: ModelTag,
    pub model_b: ModelTag,
    pub bucket: String,
    pub loss: LossKind,
    pub n: usize,
    pub statistic: f64,
    pub p_value: f64,
}

/// Which backtest design produced a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BacktestMode {
    Historical { window_days: usize },
    Implied,
}

impl std::fmt::Display for BacktestMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BacktestMode::Historical { .. } => f.write_str("historical"),
            BacktestMode::Implied => f.write_str("implied"),
        }
    }
}

/// Tunables shared by both backtest modes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BacktestOpts {
    /// Chain-wide turnover screen before any evaluation; `None` disables.
    pub liquidity_quantile: Option<f64>,
    /// Monte Carlo paths for diffusion-model pricing in historical mode
    /// (and in implied mode when the MC engine is selected).
    pub mc_paths: usize,
    /// Antithetic pairing for those Monte Carlo prices.
    pub antithetic: bool,
    /// Engine for implied-mode diffusion calibration and pricing. The
    /// finite-difference default keeps the implied loop deterministic.
    pub piv_engine: PivObjective,
}

impl Default for BacktestOpts {
    fn default() -> Self {
        Self {
            liquidity_quantile: Some(DEFAULT_LIQUIDITY_QUANTILE),
            mc_paths: 200_000,
            antithetic: true,
            piv_engine: PivObjective::Pde,
        }
    }
}

/// Complete outcome of one backtest run.
#[derive(Debug, Clone)]
pub struct BacktestReport {
    pub mode: BacktestMode,
    pub seed: u64,
    pub models: Vec<ModelTag>,
    pub liquidity_quantile: Option<f64>,
    pub mc_paths: usize,
    pub antithetic: bool,
    pub n_quotes_input: usize,
    pub n_quotes_filtered: usize,
    pub n_dates_total: usize,
    pub n_dates_evaluated: usize,
    pub n_dates_skipped: usize,
    /// Model fits / calibrations that failed: (evaluation date, model, why).
    pub fit_failures: Vec<(NaiveDate, ModelTag, String)>,
    /// Pricing groups that failed: (date, model, quotes affected, why).
    pub price_failures: Vec<(NaiveDate, ModelTag, usize, String)>,
    /// Flat error records, date-major, models in request order within a date.
    pub errors: Vec<PricingError>,
    pub moneyness_metrics: Vec<MetricsRow>,
    pub maturity_metrics: Vec<MetricsRow>,
    pub dm_tests: Vec<DmRecord>,
    /// DM cells skipped for too few matched quotes or zero variance.
    pub dm_skipped: usize,
}

impl BacktestReport {
    /// ALL-bucket MAE for a model, if it priced any quotes.
    pub fn all_bucket_mae(&self, model: ModelTag) -> Option<f64> {
        self.moneyness_metrics
            .iter()
            .find(|r| r.model == model && r.bucket == "ALL")
            .map(|r| r.mae)
    }

    /// Models ordered by ascending ALL-bucket MAE (unpriced models last).
    pub fn mae_ranking(&self) -> Vec<(ModelTag, f64)> {
        let mut ranked: Vec<(ModelTag, f64)> = self
            .models
            .iter()
            .filter_map(|&m| self.all_bucket_mae(m).map(|mae| (m, mae)))
            .collect();
        ranked.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("finite MAE"));
        ranked
    }
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

fn validate_models(models: &[ModelTag]) -> Result<()> {
    if models.is_empty() {
        return Err(PivError::invalid_input("model list is empty"));
    }
    for (i, m) in models.iter().enumerate() {
        if models[..i].contains(m) {
            return Err(PivError::invalid_input(format!(
                "model {m} listed more than once"
            )));
        }
    }
    Ok(())
}

/// Per-date underlying closes from the full chain, strict about quotes on
/// one date disagreeing on the close (that is corrupt input, not noise).
fn underlying_calendar(quotes: &[OptionQuote]) -> Result<Vec<(NaiveDate, f64)>> {
    let mut by_date: BTreeMap<NaiveDate, f64> = BTreeMap::new();
    for q in quotes {
        match by_date.get(&q.trade_date) {
            None => {
                by_date.insert(q.trade_date, q.underlying_close);
            }
            Some(&c) if c == q.underlying_close => {}
            Some(&c) => {
                return Err(PivError::invalid_input(format!(
                    "inconsistent underlying close on {}: {c} vs {}",
                    q.trade_date, q.underlying_close
                )));
            }
        }
    }
    Ok(by_date.into_iter().collect())
}

/// Sorts the filtered quotes by (date, expiry, strike), assigns global
/// indices, and groups them by trade date.
fn eval_sets(filtered: &[OptionQuote]) -> Vec<(NaiveDate, Vec<(usize, OptionQuote)>)> {
    let mut sorted: Vec<OptionQuote> = filtered.to_vec();
    sorted.sort_by(|a, b| {
        (a.trade_date, a.expiry_date)
            .cmp(&(b.trade_date, b.expiry_date))
            .then(a.strike.partial_cmp(&b.strike).expect("finite strike"))
    });
    let mut days: Vec<(NaiveDate, Vec<(usize, OptionQuote)>)> = Vec::new();
    for (idx, q) in sorted.into_iter().enumerate() {
        match days.last_mut() {
            Some((d, list)) if *d == q.trade_date => list.push((idx, q)),
            _ => days.push((q.trade_date, vec![(idx, q)])),
        }
    }
    days
}

/// How to price the diffusion model's quotes.
enum PivPricer {
    Pde,
    Mc {
        n_paths: usize,
        antithetic: bool,
        seed: u64,
    },
}

/// Prices one date's quotes under one fitted model. Returns per quote
/// either the price or a failure message (group failures replicate the
/// message across the group's quotes).
fn price_day(
    fitted: &FittedModel,
    day: &[(usize, OptionQuote)],
    rate: f64,
    piv_pricer: &PivPricer,
) -> Vec<(usize, std::result::Result<f64, String>)> {
    match fitted {
        FittedModel::Bs(p) => day
            .iter()
            .map(|(idx, q)| {
                let r = q
                    .contract(rate)
                    .and_then(|c| bs_call_price(p.sigma_bs, &c))
                    .map_err(|e| e.to_string());
                (*idx, r)
            })
            .collect(),
        FittedModel::Piv(params) => match piv_pricer {
            PivPricer::Pde => day
                .iter()
                .map(|(idx, q)| {
                    let r = q
                        .contract(rate)
                        .and_then(|c| {
                            let grid = PdeGridSpec::auto(params, &c)?;
                            Ok(price_call_piv_pde(params, &c, &grid)?.price)
                        })
                        .map_err(|e| e.to_string());
                    (*idx, r)
                })
                .collect(),
            PivPricer::Mc {
                n_paths,
                antithetic,
                seed,
            } => {
                let mut out = Vec::with_capacity(day.len());
                for (ttm_days, group) in group_by_ttm(day) {
                    let ttm = group[0].1.ttm_years();
                    let s0 = group[0].1.underlying_close;
                    let strikes: Vec<f64> = group.iter().map(|(_, q)| q.strike).collect();
                    let priced = SimConfig::daily(*n_paths, ttm, derive_seed(*seed, ttm_days as u64))
                        .map(|c| c.with_antithetic(*antithetic))
                        .and_then(|config| {
                            price_calls_piv_mc_batch(params, s0, rate, ttm, &strikes, &config)
                        });
                    match priced {
                        Ok(res) => {
                            for (r, (idx, _)) in res.iter().zip(&group) {
                                out.push((*idx, Ok(r.price)));
                            }
                        }
                        Err(e) => {
                            let msg = e.to_string();
                            for (idx, _) in &group {
                                out.push((*idx, Err(msg.clone())));
                            }
                        }
                    }
                }
                out
            }
        },
        FittedModel::Heston(h) => {
            let quad = HestonQuad::default();
            let mut out = Vec::with_capacity(day.len());
            for (_ttm_days, group) in group_by_ttm(day) {
                let ttm = group[0].1.ttm_years();
                let s0 = group[0].1.underlying_close;
                let strikes: Vec<f64> = group.iter().map(|(_, q)| q.strike).collect();
                match price_calls_heston_batch(h, s0, rate, ttm, &strikes, &quad) {
                    Ok(res) => {
                        for (r, (idx, _)) in res.iter().zip(&group) {
                            out.push((*idx, Ok(r.price)));
                        }
                    }
                    Err(e) => {
                        let msg = e.to_string();
                        for (idx, _) in &group {
                            out.push((*idx, Err(msg.clone())));
                        }
                    }
                }
            }
            out
        }
    }
}

fn group_by_ttm(day: &[(usize, OptionQuote)]) -> Vec<(i64, Vec<(usize, &OptionQuote)>)> {
    let mut groups: Vec<(i64, Vec<(usize, &OptionQuote)>)> = Vec::new();
    for (idx, q) in day {
        match groups.iter_mut().find(|(t, _)| *t == q.ttm_days) {
            Some((_, g)) => g.push((*idx, q)),
            None => groups.push((q.ttm_days, vec![(*idx, q)])),
        }
    }
    groups
}

/// Everything one evaluation date contributes, in deterministic order.
struct DateOutcome {
    errors: Vec<PricingError>,
    fit_failures: Vec<(NaiveDate, ModelTag, String)>,
    price_failures: Vec<(NaiveDate, ModelTag, usize, String)>,
}

fn seed_for(seed: u64, date: NaiveDate, model_idx: usize) -> u64 {
    derive_seed(
        derive_seed(seed, date.num_days_from_ce() as u64),
        model_idx as u64,
    )
}

/// Turns per-quote price results into error records / failure entries.
fn record_outcomes(
    outcome: &mut DateOutcome,
    date: NaiveDate,
    model: ModelTag,
    day: &[(usize, OptionQuote)],
    priced: Vec<(usize, std::result::Result<f64, String>)>,
) {
    let mut fail_count = 0usize;
    let mut first_msg: Option<String> = None;
    for (idx, res) in priced {
        let q = &day.iter().find(|(i, _)| *i == idx).expect("index from same day").1;
        match res {
            Ok(p) => outcome.errors.push(PricingError::new(idx, q, model, p)),
            Err(msg) => {
                fail_count += 1;
                first_msg.get_or_insert(msg);
            }
        }
    }
    if fail_count > 0 {
        outcome
            .price_failures
            .push((date, model, fail_count, first_msg.unwrap_or_default()));
    }
}

// ---------------------------------------------------------------------------
// Drivers
// ---------------------------------------------------------------------------

/// Rolling-window maximum-likelihood backtest.
///
/// For evaluation date `t`, models are fitted on the `window_days` closes
/// strictly before `t` (so `window_days - 1` returns at `dt = 1/252`) and
/// then price date `t`'s filtered quotes: the diffusion by Monte Carlo
/// (`opts.mc_paths`, per-(date, model, expiry) derived seeds), Black-Scholes
/// in closed form, Heston by characteristic function. Dates with
/// insufficient history are skipped and counted; a window larger than the
/// whole chain yields an empty report rather than an error.
pub fn run_historical_backtest(
    quotes: &[OptionQuote],
    rates: &RateSeries,
    window_days: usize,
    models: &[ModelTag],
    seed: u64,
    opts: &BacktestOpts,
) -> Result<BacktestReport> {
    validate_models(models)?;
    if quotes.is_empty() {
        return Err(PivError::invalid_input("option chain is empty"));
    }
    if window_days < MIN_SERIES_LEN + 1 {
        return Err(PivError::invalid_input(format!(
            "window_days must be at least {} (needs {MIN_SERIES_LEN} returns), got {window_days}",
            MIN_SERIES_LEN + 1
        )));
    }
    let filtered = match opts.liquidity_quantile {
        Some(q) => apply_liquidity_filter(quotes, q)?,
        None => quotes.to_vec(),
    };
    let calendar = underlying_calendar(quotes)?;
    let days = eval_sets(&filtered);
    let by_date: BTreeMap<NaiveDate, &Vec<(usize, OptionQuote)>> =
        days.iter().map(|(d, v)| (*d, v)).collect();

    // Evaluation dates: calendar positions with a full window behind them.
    let eval_idx: Vec<usize> = (window_days..calendar.len()).collect();
    let outcomes: Vec<DateOutcome> = eval_idx
        .par_iter()
        .map(|&t| -> Result<DateOutcome> {
            let (date, _) = calendar[t];
            let mut outcome = DateOutcome {
                errors: Vec::new(),
                fit_failures: Vec::new(),
                price_failures: Vec::new(),
            };
            let Some(day) = by_date.get(&date) else {
                return Ok(outcome); // every quote of this date was filtered out
            };
            let closes: Vec<f64> = calendar[t - window_days..t].iter().map(|&(_, c)| c).collect();
            let series = ReturnSeries::from_closes(&closes, TRADING_DT, "underlying")?;
            let window_rv = DEFAULT_WINDOW_RV.min(series.len() / 5);
            let rate = rates.rate_on_or_before(date)?;
            for (model_idx, &model) in models.iter().enumerate() {
                let fit = match model {
                    ModelTag::Piv => mle_piv(&series),
                    ModelTag::Bs => mle_bs(&series),
                    ModelTag::Heston => estimate_heston(&series, window_rv),
                };
                let fitted = match fit {
                    Ok(f) => f.params,
                    Err(e) => {
                        outcome.fit_failures.push((date, model, e.to_string()));
                        continue;
                    }
                };
                let pricer = PivPricer::Mc {
                    n_paths: opts.mc_paths,
                    antithetic: opts.antithetic,
                    seed: seed_for(seed, date, model_idx),
                };
                let priced = price_day(&fitted, day, rate, &pricer);
                record_outcomes(&mut outcome, date, model, day, priced);
            }
            Ok(outcome)
        })
        .collect::<Result<Vec<_>>>()?;

    let n_dates_total = calendar.len();
    let n_dates_evaluated = eval_idx.len();
    Ok(assemble_report(
        BacktestMode::Historical { window_days },
        seed,
        models,
        opts,
        quotes.len(),
        filtered.len(),
        n_dates_total,
        n_dates_evaluated,
        n_dates_total - n_dates_evaluated,
        outcomes,
    ))
}

/// Previous-day implied calibration backtest.
///
/// For each filtered trading date after the first, every model is
/// calibrated by least squares on the previous trading date's quotes and
/// then prices the current date's quotes. Calibration failures drop that
/// (date, model) pair and are reported in the diagnostics. The diffusion
/// model uses `opts.piv_engine` for both the calibration objective and the
/// out-of-sample pricing, so the two stay consistent.
pub fn run_implied_backtest(
    quotes: &[OptionQuote],
    rates: &RateSeries,
    models: &[ModelTag],
    seed: u64,
    opts: &BacktestOpts,
) -> Result<BacktestReport> {
    validate_models(models)?;
    if quotes.is_empty() {
        return Err(PivError::invalid_input("option chain is empty"));
    }
    let filtered = match opts.liquidity_quantile {
        Some(q) => apply_liquidity_filter(quotes, q)?,
        None => quotes.to_vec(),
    };
    let days = eval_sets(&filtered);

    let eval_idx: Vec<usize> = (1..days.len()).collect();
    let outcomes: Vec<DateOutcome> = eval_idx
        .par_iter()
        .map(|&i| -> Result<DateOutcome> {
            let (prev_date, prev_quotes) = &days[i - 1];
            let (date, day) = &days[i];
            let mut outcome = DateOutcome {
                errors: Vec::new(),
                fit_failures: Vec::new(),
                price_failures: Vec::new(),
            };
            let prev_rate = rates.rate_on_or_before(*prev_date)?;
            let rate = rates.rate_on_or_before(*date)?;
            for (model_idx, &model) in models.iter().enumerate() {
                let base = seed_for(seed, *date, model_idx);
                let problem = CalibrationProblem::new(
                    prev_quotes.iter().map(|(_, q)| q.clone()).collect(),
                    prev_rate,
                    model,
                    derive_seed(base, 1),
                )?
                .with_piv_engine(opts.piv_engine);
                let fitted = match calibrate_implied(&problem) {
                    Ok(f) => f.params,
                    Err(e) => {
                        outcome.fit_failures.push((*date, model, e.to_string()));
                        continue;
                    }
                };
                let pricer = match opts.piv_engine {
                    PivObjective::Pde => PivPricer::Pde,
                    PivObjective::Mc { n_paths } => PivPricer::Mc {
                        n_paths,
                        antithetic: opts.antithetic,
                        seed: derive_seed(base, 2),
                    },
                };
                let priced = price_day(&fitted, day, rate, &pricer);
                record_outcomes(&mut outcome, *date, model, day, priced);
            }
            Ok(outcome)
        })
        .collect::<Result<Vec<_>>>()?;

    let n_dates_total = days.len();
    let n_dates_evaluated = eval_idx.len();
    Ok(assemble_report(
        BacktestMode::Implied,
        seed,
        models,
        opts,
        quotes.len(),
        filtered.len(),
        n_dates_total,
        n_dates_evaluated,
        n_dates_total - n_dates_evaluated,
        outcomes,
    ))
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

#[allow(clippy::too_many_arguments)]
fn assemble_report(
    mode: BacktestMode,
    seed: u64,
    models: &[ModelTag],
    opts: &BacktestOpts,
    n_quotes_input: usize,
    n_quotes_filtered: usize,
    n_dates_total: usize,
    n_dates_evaluated: usize,
    n_dates_skipped: usize,
    outcomes: Vec<DateOutcome>,
) -> BacktestReport {
    let mut errors = Vec::new();
    let mut fit_failures = Vec::new();
    let mut price_failures = Vec::new();
    for mut o in outcomes {
        errors.append(&mut o.errors);
        fit_failures.append(&mut o.fit_failures);
        price_failures.append(&mut o.price_failures);
    }
    let (moneyness_metrics, maturity_metrics) = metrics_tables(models, &errors);
    let (dm_tests, dm_skipped) = dm_table(models, &errors);
    BacktestReport {
        mode,
        seed,
        models: models.to_vec(),
        liquidity_quantile: opts.liquidity_quantile,
        mc_paths: opts.mc_paths,
        antithetic: opts.antithetic,
        n_quotes_input,
        n_quotes_filtered,
        n_dates_total,
        n_dates_evaluated,
        n_dates_skipped,
        fit_failures,
        price_failures,
        errors,
        moneyness_metrics,
        maturity_metrics,
        dm_tests,
        dm_skipped,
    }
}

const MONEYNESS_ORDER: [MoneynessBucket; 3] = [
    MoneynessBucket::Otm,
    MoneynessBucket::Atm,
    MoneynessBucket::Itm,
];
const MATURITY_ORDER: [MaturityBucket; 5] = [
    MaturityBucket::A,
    MaturityBucket::B,
    MaturityBucket::C,
    MaturityBucket::D,
    MaturityBucket::E,
];

/// Builds both bucket tables. Only buckets a model actually populated get
/// rows. The moneyness ALL row is defined as the count-weighted combination
/// of the bucket rows (in OTM, ATM, ITM order), which makes the usual
/// "ALL = weighted average of buckets" check an exact float identity.
fn metrics_tables(
    models: &[ModelTag],
    errors: &[PricingError],
) -> (Vec<MetricsRow>, Vec<MetricsRow>) {
    let mut moneyness = Vec::new();
    let mut maturity = Vec::new();
    for &model in models {
        let es: Vec<&PricingError> = errors.iter().filter(|e| e.model == model).collect();
        if es.is_empty() {
            continue;
        }
        let total = es.len();
        let mut bucket_rows: Vec<MetricsRow> = Vec::new();
        for b in MONEYNESS_ORDER {
            let sel: Vec<PricingError> =
                es.iter().filter(|e| e.moneyness == b).map(|e| (*e).clone()).collect();
            if sel.is_empty() {
                continue;
            }
            let (mae, mse) = compute_error_metrics(&sel).expect("non-empty");
            bucket_rows.push(MetricsRow {
                model,
                bucket: b.to_string(),
                count: sel.len(),
                proportion_pct: 100.0 * sel.len() as f64 / total as f64,
                mae,
                mse,
            });
        }
        let count_sum: usize = bucket_rows.iter().map(|r| r.count).sum();
        let wsum = |f: fn(&MetricsRow) -> f64| {
            bucket_rows.iter().map(|r| r.count as f64 * f(r)).sum::<f64>() / count_sum as f64
        };
        let all_row = MetricsRow {
            model,
            bucket: "ALL".to_string(),
            count: count_sum,
            proportion_pct: 100.0,
            mae: wsum(|r| r.mae),
            mse: wsum(|r| r.mse),
        };
        moneyness.extend(bucket_rows);
        moneyness.push(all_row);
        for b in MATURITY_ORDER {
            let sel: Vec<PricingError> =
                es.iter().filter(|e| e.maturity == b).map(|e| (*e).clone()).collect();
            if sel.is_empty() {
                continue;
            }
            let (mae, mse) = compute_error_metrics(&sel).expect("non-empty");
            maturity.push(MetricsRow {
                model,
                bucket: b.to_string(),
                count: sel.len(),
                proportion_pct: 100.0 * sel.len() as f64 / total as f64,
                mae,
                mse,
            });
        }
    }
    (moneyness, maturity)
}

/// DM comparisons for every model pair (request order), bucket, and loss.
/// Losses are matched per quote via `quote_idx`; quotes missing a price
/// from either model drop out of that pair. Cells with fewer than 10
/// matched quotes or a degenerate differential are skipped and counted.
fn dm_table(models: &[ModelTag], errors: &[PricingError]) -> (Vec<DmRecord>, usize) {
    let mut per_model: BTreeMap<ModelTag, Vec<&PricingError>> = BTreeMap::new();
    for e in errors {
        per_model.entry(e.model).or_default().push(e);
    }
    for v in per_model.values_mut() {
        v.sort_by_key(|e| e.quote_idx);
    }
    let mut buckets: Vec<String> = vec!["ALL".to_string()];
    buckets.extend(MONEYNESS_ORDER.iter().map(|b| b.to_string()));
    buckets.extend(MATURITY_ORDER.iter().map(|b| b.to_string()));

    let mut rows = Vec::new();
    let mut skipped = 0usize;
    for (i, &ma) in models.iter().enumerate() {
        for &mb in &models[i + 1..] {
            let (Some(ea), Some(eb)) = (per_model.get(&ma), per_model.get(&mb)) else {
                skipped += buckets.len() * 2;
                continue;
            };
            // Merge-join on quote_idx.
            let mut matched: Vec<(&PricingError, &PricingError)> = Vec::new();
            let (mut x, mut y) = (0usize, 0usize);
            while x < ea.len() && y < eb.len() {
                match ea[x].quote_idx.cmp(&eb[y].quote_idx) {
                    std::cmp::Ordering::Less => x += 1,
                    std::cmp::Ordering::Greater => y += 1,
                    std::cmp::Ordering::Equal => {
                        matched.push((ea[x], eb[y]));
                        x += 1;
                        y += 1;
                    }
                }
            }
            for bucket in &buckets {
                let in_bucket = |e: &PricingError| {
                    bucket == "ALL"
                        || e.moneyness.to_string() == *bucket
                        || e.maturity.to_string() == *bucket
                };
                let pairs: Vec<&(&PricingError, &PricingError)> =
                    matched.iter().filter(|(a, _)| in_bucket(a)).collect();
                for loss in [LossKind::Abs, LossKind::Sq] {
                    let pick = |e: &PricingError| match loss {
                        LossKind::Abs => e.abs_error,
                        LossKind::Sq => e.sq_error,
                    };
                    let la: Vec<f64> = pairs.iter().map(|(a, _)| pick(a)).collect();
                    let lb: Vec<f64> = pairs.iter().map(|(_, b)| pick(b)).collect();
                    match diebold_mariano(&la, &lb, DmAlternative::Less) {
                        Ok((statistic, p_value)) => rows.push(DmRecord {
                            model_a: ma,
                            model_b: mb,
                            bucket: bucket.clone(),
                            loss,
                            n: la.len(),
                            statistic,
                            p_value,
                        }),
                        Err(_) => skipped += 1,
                    }
                }
            }
        }
    }
    (rows, skipped)
}

// ---------------------------------------------------------------------------
// Emission
// ---------------------------------------------------------------------------

/// Writes the four report artifacts into `dir` (created if missing):
/// `moneyness_metrics.csv`, `maturity_metrics.csv`, `dm_tests.csv`,
/// `run_meta.json`. Floats are written with Rust's shortest round-trip
/// formatting, so parsing them back reproduces the exact values.
pub fn emit_report(report: &BacktestReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| PivError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;

    let write_metrics = |name: &str, rows: &[MetricsRow]| -> Result<PathBuf> {
        let path = dir.join(name);
        let mut out = String::from("model,bucket,count,proportion_pct,mae,mse\n");
        for r in rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.model, r.bucket, r.count, r.proportion_pct, r.mae, r.mse
            ));
        }
        std::fs::write(&path, out).map_err(io_err(&path))?;
        Ok(path)
    };
    let mut written = vec![
        write_metrics("moneyness_metrics.csv", &report.moneyness_metrics)?,
        write_metrics("maturity_metrics.csv", &report.maturity_metrics)?,
    ];

    let dm_path = dir.join("dm_tests.csv");
    let mut out = String::from("model_a,model_b,bucket,loss,n,statistic,p_value\n");
    for r in &report.dm_tests {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.model_a, r.model_b, r.bucket, r.loss, r.n, r.statistic, r.p_value
        ));
    }
    std::fs::write(&dm_path, out).map_err(io_err(&dm_path))?;
    written.push(dm_path);

    let meta = json!({
        "mode": report.mode.to_string(),
        "window_days": match report.mode {
            BacktestMode::Historical { window_days } => Some(window_days),
            BacktestMode::Implied => None,
        },
        "seed": report.seed,
        "models": report.models.iter().map(|m| m.to_string()).collect::<Vec<_>>(),
        "liquidity_quantile": report.liquidity_quantile,
        "mc_paths": report.mc_paths,
        "antithetic": report.antithetic,
        "n_quotes_input": report.n_quotes_input,
        "n_quotes_filtered": report.n_quotes_filtered,
        "n_dates_total": report.n_dates_total,
        "n_dates_evaluated": report.n_dates_evaluated,
        "n_dates_skipped": report.n_dates_skipped,
        "n_errors": report.errors.len(),
        "fit_failures": report.fit_failures.iter().map(|(d, m, msg)| {
            json!({"date": d.to_string(), "model": m.to_string(), "message": msg})
        }).collect::<Vec<_>>(),
        "price_failures": report.price_failures.iter().map(|(d, m, n, msg)| {
            json!({"date": d.to_string(), "model": m.to_string(), "quotes": n, "message": msg})
        }).collect::<Vec<_>>(),
        "dm_skipped": report.dm_skipped,
    });
    let meta_path = dir.join("run_meta.json");
    let mut f = std::fs::File::create(&meta_path).map_err(io_err(&meta_path))?;
    f.write_all(serde_json::to_string_pretty(&meta).expect("json").as_bytes())
        .map_err(io_err(&meta_path))?;
    f.write_all(b"\n").map_err(io_err(&meta_path))?;
    written.push(meta_path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BsParams, PivParams};
    use crate::synth::{generate_synthetic_chain, GeneratorModel, SynthChainSpec};
    use chrono::NaiveDate;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    #[test]
    fn metrics_means_and_jensen() {
        let q = OptionQuote::new(d("2024-01-10"), d("2024-01-24"), 100.0, 100.0, 3.0, 10, 50)
            .unwrap();
        let mk = |p: f64| PricingError::new(0, &q, ModelTag::Bs, p);
        let (mae, mse) = compute_error_metrics(&[mk(5.0)]).unwrap();
        assert_eq!((mae, mse), (2.0, 4.0));
        let (mae, mse) = compute_error_metrics(&[mk(4.0), mk(6.0)]).unwrap();
        assert_eq!((mae, mse), (2.0, 5.0));
        assert!(mae * mae <= mse);
        assert!(compute_error_metrics(&[]).is_err());
    }

    /// Fixed synthetic differential series: d_t has mean -0.5, sd 1.
    fn fixed_losses() -> (Vec<f64>, Vec<f64>) {
        // Deterministic pseudo-noise from a simple recurrence; recorded
        // behavior, not randomness.
        let mut z = Vec::with_capacity(100);
        let mut x: u64 = 12345;
        for _ in 0..100 {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let u = ((x >> 11) as f64) / ((1u64 << 53) as f64);
            z.push(u - 0.5);
        }
        // Normalize to mean 0, sd 1 exactly, then shift by -0.5.
        let n = z.len() as f64;
        let mean = z.iter().sum::<f64>() / n;
        let var = z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        let d: Vec<f64> = z.iter().map(|v| (v - mean) / sd - 0.5).collect();
        let loss_b: Vec<f64> = vec![2.0; 100];
        let loss_a: Vec<f64> = d.iter().zip(&loss_b).map(|(di, bi)| bi + di).collect();
        (loss_a, loss_b)
    }

    #[test]
    fn dm_matches_hand_formula_on_recorded_series() {
        let (a, b) = fixed_losses();
        let (stat, p) = diebold_mariano(&a, &b, DmAlternative::Less).unwrap();
        // Independent arithmetic: d has mean -0.5 and divisor-n sd 1 by
        // construction, so the statistic is -0.5 / (1/sqrt(100)) = -5.
        let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let m = d.iter().sum::<f64>() / 100.0;
        let v = d.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 100.0;
        let hand = m / (v / 100.0).sqrt();
        assert!((stat - hand).abs() < 1e-10, "{stat} vs {hand}");
        assert!((stat - (-5.0)).abs() < 1e-9, "normalized statistic {stat}");
        let normal = Normal::new(0.0, 1.0).unwrap();
        assert!((p - normal.cdf(hand)).abs() < 1e-12);
    }

    #[test]
    fn dm_antisymmetry_and_degenerate() {
        let (a, b) = fixed_losses();
        let (s_ab, _) = diebold_mariano(&a, &b, DmAlternative::Less).unwrap();
        let (s_ba, _) = diebold_mariano(&b, &a, DmAlternative::Less).unwrap();
        assert_eq!(s_ab.to_bits(), (-s_ba).to_bits());
        let err = diebold_mariano(&a, &a, DmAlternative::Less).unwrap_err();
        assert!(err.to_string().contains("zero variance"), "{err}");
        assert!(diebold_mariano(&a[..5], &b[..5], DmAlternative::Less).is_err());
        assert!(diebold_mariano(&a[..20], &b[..30], DmAlternative::Less).is_err());
    }

    #[test]
    fn dm_two_sided_doubles_the_tail() {
        let (a, b) = fixed_losses();
        let (stat, p1) = diebold_mariano(&a, &b, DmAlternative::Less).unwrap();
        let (_, p2) = diebold_mariano(&a, &b, DmAlternative::TwoSided).unwrap();
        assert!(stat < 0.0);
        assert!((p2 - 2.0 * p1).abs() < 1e-15);
    }

    fn piv_chain(n_days: usize, noise: f64) -> (Vec<OptionQuote>, RateSeries) {
        let spec = SynthChainSpec {
            model: GeneratorModel::Piv(PivParams::new(2.0, 0.15, 0.05, 1.0).unwrap()),
            s0: 100.0,
            rate: 0.05,
            start_date: d("2024-01-01"),
            n_trade_days: n_days,
            strike_moneyness: vec![0.9, 1.0, 1.1],
            expiry_offsets_days: vec![7, 30],
            noise_level: noise,
            lot_size: 50,
            contracts_range: (200, 2000),
        };
        let quotes = generate_synthetic_chain(&spec, 17).unwrap();
        (quotes, spec.rate_series().unwrap())
    }

    #[test]
    fn historical_backtest_is_deterministic_and_structured() {
        let (quotes, rates) = piv_chain(36, 0.0);
        let opts = BacktestOpts {
            mc_paths: 2_000,
            liquidity_quantile: Some(0.5),
            ..Default::default()
        };
        let models = [ModelTag::Piv, ModelTag::Bs];
        let a = run_historical_backtest(&quotes, &rates, 32, &models, 5, &opts).unwrap();
        let b = run_historical_backtest(&quotes, &rates, 32, &models, 5, &opts).unwrap();
        assert_eq!(a.errors, b.errors);
        assert_eq!(a.moneyness_metrics, b.moneyness_metrics);
        assert_eq!(a.n_dates_total, 36);
        assert_eq!(a.n_dates_evaluated, 4);
        assert_eq!(a.n_dates_skipped, 32);
        assert!(a.fit_failures.is_empty(), "{:?}", a.fit_failures);
        assert!(a.price_failures.is_empty(), "{:?}", a.price_failures);
        // A different seed changes the MC-priced errors.
        let c = run_historical_backtest(&quotes, &rates, 32, &models, 6, &opts).unwrap();
        assert_ne!(a.errors, c.errors);
    }

    #[test]
    fn window_larger_than_history_gives_empty_report() {
        let (quotes, rates) = piv_chain(36, 0.0);
        let r = run_historical_backtest(
            &quotes,
            &rates,
            200,
            &[ModelTag::Bs],
            1,
            &BacktestOpts::default(),
        )
        .unwrap();
        assert!(r.errors.is_empty());
        assert_eq!(r.n_dates_evaluated, 0);
        assert_eq!(r.n_dates_skipped, 36);
        assert!(r.moneyness_metrics.is_empty());
    }

    fn bs_chain(n_days: usize) -> (Vec<OptionQuote>, RateSeries) {
        let spec = SynthChainSpec {
            model: GeneratorModel::Bs(BsParams::new(0.2, 0.08).unwrap()),
            s0: 100.0,
            rate: 0.05,
            start_date: d("2024-01-01"),
            n_trade_days: n_days,
            strike_moneyness: vec![0.9, 1.0, 1.1],
            expiry_offsets_days: vec![7, 30],
            noise_level: 0.0,
            lot_size: 50,
            contracts_range: (200, 2000),
        };
        let quotes = generate_synthetic_chain(&spec, 23).unwrap();
        (quotes, spec.rate_series().unwrap())
    }

    #[test]
    fn implied_backtest_on_noise_free_bs_chain_is_near_exact() {
        let (quotes, rates) = bs_chain(4);
        let r = run_implied_backtest(
            &quotes,
            &rates,
            &[ModelTag::Bs],
            3,
            &BacktestOpts {
                liquidity_quantile: None,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(r.n_dates_evaluated, 3);
        assert!(r.fit_failures.is_empty(), "{:?}", r.fit_failures);
        let mae = r.all_bucket_mae(ModelTag::Bs).unwrap();
        // Constant generator sigma: yesterday's implied fit prices today
        // exactly up to optimizer tolerance.
        assert!(mae < 1e-6 * 100.0, "mae {mae}");
    }

    #[test]
    fn two_date_chain_gives_one_evaluation_date() {
        let (quotes, rates) = bs_chain(2);
        let r = run_implied_backtest(
            &quotes,
            &rates,
            &[ModelTag::Bs],
            3,
            &BacktestOpts {
                liquidity_quantile: None,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(r.n_dates_evaluated, 1);
        assert_eq!(r.n_dates_skipped, 1);
        let dates: Vec<NaiveDate> = r.errors.iter().map(|e| e.trade_date).collect();
        assert!(dates.iter().all(|&x| x == d("2024-01-02")));
    }

    #[test]
    fn all_bucket_is_exact_weighted_combination() {
        let (quotes, rates) = piv_chain(36, 0.01);
        let opts = BacktestOpts {
            mc_paths: 2_000,
            ..Default::default()
        };
        let models = [ModelTag::Piv, ModelTag::Bs];
        let r = run_historical_backtest(&quotes, &rates, 32, &models, 5, &opts).unwrap();
        for &model in &models {
            let rows: Vec<&MetricsRow> = r
                .moneyness_metrics
                .iter()
                .filter(|x| x.model == model)
                .collect();
            let all = rows.iter().find(|x| x.bucket == "ALL").unwrap();
            let parts: Vec<&&MetricsRow> =
                rows.iter().filter(|x| x.bucket != "ALL").collect();
            let total: usize = parts.iter().map(|x| x.count).sum();
            assert_eq!(total, all.count);
            let wmae =
                parts.iter().map(|x| x.count as f64 * x.mae).sum::<f64>() / total as f64;
            let wmse =
                parts.iter().map(|x| x.count as f64 * x.mse).sum::<f64>() / total as f64;
            assert_eq!(wmae.to_bits(), all.mae.to_bits());
            assert_eq!(wmse.to_bits(), all.mse.to_bits());
            // Proportions of the parts sum to 100%.
            let psum: f64 = parts.iter().map(|x| x.proportion_pct).sum();
            assert!((psum - 100.0).abs() < 0.01, "{psum}");
            // Jensen per bucket.
            for row in &rows {
                assert!(row.mae * row.mae <= row.mse + 1e-15);
            }
        }
    }

    #[test]
    fn emit_report_round_trips_and_has_all_files() {
        let (quotes, rates) = piv_chain(36, 0.01);
        let opts = BacktestOpts {
            mc_paths: 2_000,
            ..Default::default()
        };
        let r = run_historical_backtest(
            &quotes,
            &rates,
            32,
            &[ModelTag::Piv, ModelTag::Bs],
            5,
            &opts,
        )
        .unwrap();
        let dir = std::env::temp_dir().join(format!("pivopt-test-report-{}", std::process::id()));
        let files = emit_report(&r, &dir).unwrap();
        assert_eq!(files.len(), 4);
        for f in &files {
            assert!(f.exists(), "{f:?}");
        }
        let txt = std::fs::read_to_string(dir.join("moneyness_metrics.csv")).unwrap();
        let mut lines = txt.lines();
        assert_eq!(
            lines.next().unwrap(),
            "model,bucket,count,proportion_pct,mae,mse"
        );
        // Full-precision round trip of every float field.
        let mut checked = 0;
        for (line, row) in lines.zip(&r.moneyness_metrics) {
            let cols: Vec<&str> = line.split(',').collect();
            assert_eq!(cols[0], row.model.to_string());
            assert_eq!(cols[1], row.bucket);
            assert_eq!(cols[2].parse::<usize>().unwrap(), row.count);
            assert_eq!(cols[4].parse::<f64>().unwrap().to_bits(), row.mae.to_bits());
            assert_eq!(cols[5].parse::<f64>().unwrap().to_bits(), row.mse.to_bits());
            checked += 1;
        }
        assert_eq!(checked, r.moneyness_metrics.len());
        let meta: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.join("run_meta.json")).unwrap())
                .unwrap();
        assert_eq!(meta["mode"], "historical");
        assert_eq!(meta["window_days"], 32);
        assert_eq!(meta["seed"], 5);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn empty_report_emits_header_only_files() {
        let (quotes, rates) = piv_chain(36, 0.0);
        let r = run_historical_backtest(
            &quotes,
            &rates,
            200,
            &[ModelTag::Bs],
            1,
            &BacktestOpts::default(),
        )
        .unwrap();
        let dir =
            std::env::temp_dir().join(format!("pivopt-test-empty-report-{}", std::process::id()));
        emit_report(&r, &dir).unwrap();
        for name in ["moneyness_metrics.csv", "maturity_metrics.csv", "dm_tests.csv"] {
            let txt = std::fs::read_to_string(dir.join(name)).unwrap();
            assert_eq!(txt.lines().count(), 1, "{name} should be header-only");
        }
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn model_validation_rejects_empty_and_duplicates() {
        let (quotes, rates) = piv_chain(36, 0.0);
        let opts = BacktestOpts::default();
        assert!(run_historical_backtest(&quotes, &rates, 32, &[], 1, &opts).is_err());
        assert!(run_historical_backtest(
            &quotes,
            &rates,
            32,
            &[ModelTag::Bs, ModelTag::Bs],
            1,
            &opts
        )
        .is_err());
        assert!(run_historical_backtest(&quotes, &rates, 10, &[ModelTag::Bs], 1, &opts).is_err());
    }
}
