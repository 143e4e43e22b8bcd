//! Synthetic option-chain generation: desk-scale test chains with a known
//! data-generating model, used to validate calibration and backtests where
//! real exchange data cannot be redistributed.
//!
//! Conventions (all documented behavior, not incidental):
//!
//! * The underlying follows one simulated path of the generator model under
//!   the physical measure, one step per trading day (`dt = 1/252`),
//!   starting at `s0` on the first trade date. Trade dates are consecutive
//!   weekdays from `start_date`.
//! * Strikes are specified as moneyness multiples of each day's simulated
//!   close, so the chain keeps covering the same moneyness buckets as the
//!   spot drifts.
//! * Quote prices are the generator model's risk-neutral prices with the
//!   supplied parameters held fixed on every date (for Heston this means
//!   the same `v0` each day); the simulated path only supplies the spot
//!   level. A constant-parameter model therefore fits its own chain
//!   exactly, which is the property backtest oracles rely on.
//! * Observation noise is multiplicative, `price * (1 + noise_level * z)`
//!   with standard normal `z`, clamped into the static no-arbitrage band;
//!   `noise_level = 0` leaves prices bit-exact. The noise draw happens
//!   either way so the synthesized volumes do not depend on `noise_level`.
//! * All randomness beyond the path itself comes from the run-level
//!   substream (stream 0) of `seed`; the path simulation uses the per-path
//!   substreams. Identical `(spec, seed)` gives bit-identical output.

use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{PivError, Result};
use crate::market_data::{OptionQuote, RatePoint, RateSeries, MAX_TTM_DAYS};
use crate::model::{BsParams, HestonParams, PivParams};
use crate::pricing::{
    bs_call_price, price_call_heston, price_call_piv_pde, ContractSpec, HestonQuad, PdeGridSpec,
};
use crate::rng::substream;
use crate::sde::{simulate_gbm_paths, simulate_heston_paths, simulate_r_paths_p, SimConfig};

/// Model generating both the underlying path and the quote prices.
#[derive(Debug, Clone, PartialEq)]
pub enum GeneratorModel {
    Piv(PivParams),
    Bs(BsParams),
    Heston(HestonParams),
}

impl GeneratorModel {
    fn validate(&self) -> Result<()> {
        match self {
            GeneratorModel::Piv(p) => p.validate(),
            GeneratorModel::Bs(p) => BsParams::new(p.sigma_bs, p.drift_bs).map(|_| ()),
            GeneratorModel::Heston(p) => p.validate(),
        }
    }

    /// Short tag for metadata and file naming.
    pub fn tag(&self) -> &'static str {
        match self {
            GeneratorModel::Piv(_) => "piv",
            GeneratorModel::Bs(_) => "bs",
            GeneratorModel::Heston(_) => "heston",
        }
    }
}

/// Full description of a synthetic chain; [`generate_synthetic_chain`] is a
/// pure function of this and a seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthChainSpec {
    pub model: GeneratorModel,
    /// Spot on the first trade date.
    pub s0: f64,
    /// Flat risk-free rate used for pricing (and for [`Self::rate_series`]).
    pub rate: f64,
    /// Trade dates start at the first weekday on or after this date.
    pub start_date: NaiveDate,
    pub n_trade_days: usize,
    /// Strike = multiple x that day's close; one quote per multiple per
    /// expiry per day. Empty list => empty chain.
    pub strike_moneyness: Vec<f64>,
    /// Calendar days from trade date to expiry, each in `1..=90`.
    pub expiry_offsets_days: Vec<i64>,
    /// Multiplicative observation-noise standard deviation (0 = noise-free).
    pub noise_level: f64,
    pub lot_size: u64,
    /// Inclusive range for the synthesized `contracts_traded`.
    pub contracts_range: (u64, u64),
}

impl SynthChainSpec {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.s0.is_finite() && self.s0 > 0.0) {
            return Err(PivError::invalid_input(format!(
                "s0 must be finite and > 0, got {}",
                self.s0
            )));
        }
        if !self.rate.is_finite() {
            return Err(PivError::invalid_input("rate must be finite"));
        }
        if !(self.noise_level.is_finite() && self.noise_level >= 0.0) {
            return Err(PivError::invalid_input(format!(
                "noise_level must be finite and >= 0, got {}",
                self.noise_level
            )));
        }
        if self.lot_size == 0 {
            return Err(PivError::invalid_input("lot_size must be at least 1"));
        }
        let (lo, hi) = self.contracts_range;
        if lo == 0 || hi < lo {
            return Err(PivError::invalid_input(format!(
                "contracts_range must satisfy 1 <= lo <= hi, got ({lo}, {hi})"
            )));
        }
        for &m in &self.strike_moneyness {
            if !(m.is_finite() && m > 0.0) {
                return Err(PivError::invalid_input(format!(
                    "strike moneyness multiples must be finite and > 0, got {m}"
                )));
            }
        }
        for &off in &self.expiry_offsets_days {
            if !(1..=MAX_TTM_DAYS).contains(&off) {
                return Err(PivError::invalid_input(format!(
                    "expiry offsets must lie in 1..={MAX_TTM_DAYS} days, got {off}"
                )));
            }
        }
        Ok(())
    }

    /// The `n_trade_days` consecutive weekdays starting at the first
    /// weekday on or after `start_date`.
    pub fn trade_dates(&self) -> Vec<NaiveDate> {
        let mut dates = Vec::with_capacity(self.n_trade_days);
        let mut d = self.start_date;
        while dates.len() < self.n_trade_days {
            if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
                dates.push(d);
            }
            d = d + Days::new(1);
        }
        dates
    }

    /// Single-point flat rate curve covering every generated trade date via
    /// the last-on-or-before lookup convention.
    pub fn rate_series(&self) -> Result<RateSeries> {
        RateSeries::new(vec![RatePoint {
            date: self.start_date,
            yield_91d: self.rate,
        }])
    }
}

/// Simulates the underlying closes: one value per trade date, first = s0.
fn underlying_closes(spec: &SynthChainSpec, seed: u64) -> Result<Vec<f64>> {
    let n = spec.n_trade_days;
    if n <= 1 {
        return Ok(vec![spec.s0; n]);
    }
    let n_steps = n - 1;
    let config = SimConfig::new(1, n_steps, n_steps as f64 / 252.0, seed)?.with_store_paths(true);
    let batch = match &spec.model {
        GeneratorModel::Piv(p) => simulate_r_paths_p(p, &config)?,
        GeneratorModel::Bs(p) => simulate_gbm_paths(p.sigma_bs, spec.s0, p.drift_bs, &config)?,
        GeneratorModel::Heston(p) => simulate_heston_paths(p, spec.s0, p.drift_h, &config)?,
    };
    let path = &batch.paths.as_ref().expect("store_paths was set")[0];
    let closes = match &spec.model {
        GeneratorModel::Piv(_) => path.iter().map(|&r| spec.s0 * r.exp()).collect(),
        _ => path.clone(),
    };
    Ok(closes)
}

/// Generator-model price of one contract with the spec's fixed parameters.
fn model_price(spec: &SynthChainSpec, c: &ContractSpec) -> Result<f64> {
    match &spec.model {
        GeneratorModel::Piv(p) => {
            let grid = PdeGridSpec::auto(p, c)?;
            Ok(price_call_piv_pde(p, c, &grid)?.price)
        }
        GeneratorModel::Bs(p) => bs_call_price(p.sigma_bs, c),
        GeneratorModel::Heston(p) => {
            Ok(price_call_heston(p, c, &HestonQuad::default())?.price)
        }
    }
}

/// Generates the full synthetic chain. Deterministic in `(spec, seed)`;
/// quotes are ordered by date, then expiry offset, then strike multiple.
pub fn generate_synthetic_chain(spec: &SynthChainSpec, seed: u64) -> Result<Vec<OptionQuote>> {
    spec.validate()?;
    if spec.n_trade_days == 0
        || spec.strike_moneyness.is_empty()
        || spec.expiry_offsets_days.is_empty()
    {
        return Ok(Vec::new());
    }
    let dates = spec.trade_dates();
    let closes = underlying_closes(spec, seed)?;
    let mut rng = substream(seed, 0);
    let (lo, hi) = spec.contracts_range;
    let mut quotes =
        Vec::with_capacity(dates.len() * spec.expiry_offsets_days.len() * spec.strike_moneyness.len());
    for (date, &close) in dates.iter().zip(&closes) {
        for &off in &spec.expiry_offsets_days {
            let expiry = *date + Days::new(off as u64);
            let ttm = off as f64 / crate::market_data::PRICING_DAYS_PER_YEAR;
            for &m in &spec.strike_moneyness {
                let strike = m * close;
                let c = ContractSpec::new(close, strike, ttm, spec.rate)?;
                let clean = model_price(spec, &c)?;
                if !(clean.is_finite() && clean > 0.0) {
                    return Err(PivError::numerical(format!(
                        "generator produced a non-positive price {clean} at date {date}, \
                         strike {strike:.4}, ttm {off}d; widen the strike grid or shorten expiries"
                    )));
                }
                let z: f64 = rng.sample(StandardNormal);
                let observed = if spec.noise_level > 0.0 {
                    // Keep the observation inside the static no-arbitrage
                    // band; only binds in the far tails of the noise draw.
                    let lower = c.intrinsic_lower_bound() + 1e-9 * close;
                    let upper = close * (1.0 - 1e-9);
                    (clean * (1.0 + spec.noise_level * z)).clamp(lower, upper)
                } else {
                    clean
                };
                let contracts = rng.gen_range(lo..=hi);
                quotes.push(OptionQuote::new(
                    *date,
                    expiry,
                    close,
                    strike,
                    observed,
                    contracts,
                    spec.lot_size,
                )?);
            }
        }
    }
    Ok(quotes)
}
