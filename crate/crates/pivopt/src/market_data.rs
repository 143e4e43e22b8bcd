//! Option-chain and risk-free-rate ingestion, the turnover liquidity filter,
//! and the moneyness / time-to-maturity classification buckets.
//!
//! File formats (CSV, ISO-8601 dates, plain decimal numbers):
//!
//! * option chain: `trade_date,expiry_date,underlying_close,strike,option_close,contracts_traded,lot_size`
//! * rates: `date,yield_91d`
//!
//! Time to maturity (`ttm_days`) and turnover are derived, never stored.
//! Turnover is `contracts_traded * lot_size * underlying_close`; only its
//! ordering matters (the filter is a quantile cut), so no unit rescaling is
//! applied.
//!
//! Rows that parse but violate a domain invariant are dropped with a
//! row-numbered diagnostic; structural problems (bad header, unparseable
//! fields, no data rows) fail the whole load.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write as IoWrite};
use std::path::Path;

use chrono::NaiveDate;
use log::warn;

use crate::error::{PivError, Result};
use crate::pricing::ContractSpec;

/// Maximum accepted time to maturity, in calendar days.
pub const MAX_TTM_DAYS: i64 = 90;

/// Calendar-day count used to convert `ttm_days` to year fractions for
/// pricing. (Return-series estimation uses trading days, 1/252, instead.)
pub const PRICING_DAYS_PER_YEAR: f64 = 365.0;

/// Turnover quantile below which quotes are dropped by default.
pub const DEFAULT_LIQUIDITY_QUANTILE: f64 = 0.7;

pub const CHAIN_HEADER: [&str; 7] = [
    "trade_date",
    "expiry_date",
    "underlying_close",
    "strike",
    "option_close",
    "contracts_traded",
    "lot_size",
];

pub const RATES_HEADER: [&str; 2] = ["date", "yield_91d"];

/// One traded European call quote.
#[derive(Debug, Clone, PartialEq)]
pub struct OptionQuote {
    pub trade_date: NaiveDate,
    pub expiry_date: NaiveDate,
    /// Calendar days to expiry; derived, in `1..=90`.
    pub ttm_days: i64,
    pub underlying_close: f64,
    pub strike: f64,
    pub option_close: f64,
    pub contracts_traded: u64,
    pub lot_size: u64,
    /// Liquidity proxy `contracts_traded * lot_size * underlying_close`;
    /// derived.
    pub turnover: f64,
}

impl OptionQuote {
    pub fn new(
        trade_date: NaiveDate,
        expiry_date: NaiveDate,
        underlying_close: f64,
        strike: f64,
        option_close: f64,
        contracts_traded: u64,
        lot_size: u64,
    ) -> Result<Self> {
        let ttm_days = (expiry_date - trade_date).num_days();
        if ttm_days <= 0 {
            return Err(PivError::invalid_input(format!(
                "expiry {expiry_date} is not after trade date {trade_date}"
            )));
        }
        if ttm_days > MAX_TTM_DAYS {
            return Err(PivError::invalid_input(format!(
                "time to maturity {ttm_days} days exceeds the {MAX_TTM_DAYS}-day cap"
            )));
        }
        for (name, v) in [
            ("underlying_close", underlying_close),
            ("strike", strike),
            ("option_close", option_close),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(PivError::invalid_input(format!(
                    "{name} must be a positive finite number, got {v}"
                )));
            }
        }
        if lot_size == 0 {
            return Err(PivError::invalid_input("lot_size must be at least 1"));
        }
        let turnover = contracts_traded as f64 * lot_size as f64 * underlying_close;
        Ok(Self {
            trade_date,
            expiry_date,
            ttm_days,
            underlying_close,
            strike,
            option_close,
            contracts_traded,
            lot_size,
            turnover,
        })
    }

    /// Time to maturity in years under the calendar-day pricing convention.
    pub fn ttm_years(&self) -> f64 {
        self.ttm_days as f64 / PRICING_DAYS_PER_YEAR
    }

    /// Contract terms of this quote at the given risk-free rate.
    pub fn contract(&self, rate: f64) -> Result<ContractSpec> {
        ContractSpec::new(self.underlying_close, self.strike, self.ttm_years(), rate)
    }

    pub fn moneyness(&self) -> MoneynessBucket {
        classify_moneyness(self.underlying_close, self.strike)
    }

    pub fn maturity(&self) -> Result<MaturityBucket> {
        classify_maturity(self.ttm_days)
    }
}

/// A row that parsed but failed validation. `row` is the 1-based line number
/// in the file (the header is line 1).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowIssue {
    pub row: usize,
    pub message: String,
}

impl fmt::Display for RowIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "row {}: {}", self.row, self.message)
    }
}

/// Result of loading an option-chain file.
#[derive(Debug, Clone)]
pub struct ChainLoadReport {
    /// Quotes that passed validation, in file order.
    pub quotes: Vec<OptionQuote>,
    /// Rejected rows with diagnostics.
    pub rejected: Vec<RowIssue>,
}

impl ChainLoadReport {
    /// `(accepted, rejected)` row counts.
    pub fn counts(&self) -> (usize, usize) {
        (self.quotes.len(), self.rejected.len())
    }
}

fn parse_err(path: &Path, message: impl Into<String>) -> PivError {
    PivError::Parse {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn check_header(path: &Path, got: &csv::StringRecord, want: &[&str]) -> Result<()> {
    let got_fields: Vec<&str> = got.iter().map(str::trim).collect();
    if got_fields != want {
        return Err(parse_err(
            path,
            format!("header must be `{}`, got `{}`", want.join(","), got_fields.join(",")),
        ));
    }
    Ok(())
}

fn field<'a>(rec: &'a csv::StringRecord, idx: usize) -> &'a str {
    rec.get(idx).unwrap_or("").trim()
}

fn parse_date(path: &Path, row: usize, name: &str, s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map_err(|e| parse_err(path, format!("row {row}: {name} `{s}` is not an ISO date ({e})")))
}

fn parse_f64(path: &Path, row: usize, name: &str, s: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|e| parse_err(path, format!("row {row}: {name} `{s}` is not a number ({e})")))
}

fn parse_u64(path: &Path, row: usize, name: &str, s: &str) -> Result<u64> {
    s.parse::<u64>()
        .map_err(|e| parse_err(path, format!("row {row}: {name} `{s}` is not a count ({e})")))
}

/// Loads and validates an option-chain CSV.
///
/// Structural problems (header mismatch, unparseable fields, no data rows)
/// are errors; rows violating quote invariants are collected in
/// [`ChainLoadReport::rejected`] instead.
pub fn load_option_chain(path: &Path) -> Result<ChainLoadReport> {
    let file = File::open(path).map_err(|source| PivError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(BufReader::new(file));
    let headers = reader
        .headers()
        .map_err(|e| parse_err(path, format!("cannot read header: {e}")))?
        .clone();
    check_header(path, &headers, &CHAIN_HEADER)?;

    let mut quotes = Vec::new();
    let mut rejected = Vec::new();
    let mut rows = 0usize;
    for (i, record) in reader.records().enumerate() {
        let row = i + 2; // line number: header is line 1
        let rec = record.map_err(|e| parse_err(path, format!("row {row}: {e}")))?;
        if rec.len() != CHAIN_HEADER.len() {
            return Err(parse_err(
                path,
                format!("row {row}: expected {} fields, got {}", CHAIN_HEADER.len(), rec.len()),
            ));
        }
        rows += 1;
        let trade_date = parse_date(path, row, "trade_date", field(&rec, 0))?;
        let expiry_date = parse_date(path, row, "expiry_date", field(&rec, 1))?;
        let underlying_close = parse_f64(path, row, "underlying_close", field(&rec, 2))?;
        let strike = parse_f64(path, row, "strike", field(&rec, 3))?;
        let option_close = parse_f64(path, row, "option_close", field(&rec, 4))?;
        let contracts_traded = parse_u64(path, row, "contracts_traded", field(&rec, 5))?;
        let lot_size = parse_u64(path, row, "lot_size", field(&rec, 6))?;
        match OptionQuote::new(
            trade_date,
            expiry_date,
            underlying_close,
            strike,
            option_close,
            contracts_traded,
            lot_size,
        ) {
            Ok(q) => quotes.push(q),
            Err(e) => rejected.push(RowIssue {
                row,
                message: e.to_string(),
            }),
        }
    }
    if rows == 0 {
        return Err(parse_err(path, "no data rows"));
    }
    Ok(ChainLoadReport { quotes, rejected })
}

/// Writes quotes in the documented chain schema (derived fields omitted).
/// Numbers use shortest-round-trip formatting, so write-then-load is
/// identity.
pub fn write_option_chain(quotes: &[OptionQuote], path: &Path) -> Result<()> {
    let io_err = |source| PivError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut out = BufWriter::new(file);
    writeln!(out, "{}", CHAIN_HEADER.join(",")).map_err(io_err)?;
    for q in quotes {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            q.trade_date,
            q.expiry_date,
            q.underlying_close,
            q.strike,
            q.option_close,
            q.contracts_traded,
            q.lot_size
        )
        .map_err(io_err)?;
    }
    out.flush().map_err(io_err)?;
    Ok(())
}

/// Inclusive linear-interpolation quantile (the common `(n-1)p` convention)
/// of a sorted, non-empty slice.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Keeps quotes whose turnover is at or above the `quantile` cut of the
/// input set's turnover distribution (inclusive linear interpolation).
/// Order is preserved; the output is a subset of the input.
pub fn apply_liquidity_filter(quotes: &[OptionQuote], quantile: f64) -> Result<Vec<OptionQuote>> {
    if quotes.is_empty() {
        return Err(PivError::invalid_input(
            "liquidity filter needs at least one quote",
        ));
    }
    if !(0.0..=1.0).contains(&quantile) {
        return Err(PivError::invalid_input(format!(
            "liquidity quantile must be in [0, 1], got {quantile}"
        )));
    }
    let mut turnovers: Vec<f64> = quotes.iter().map(|q| q.turnover).collect();
    turnovers.sort_unstable_by(|a, b| a.partial_cmp(b).expect("turnover is finite"));
    let cut = quantile_sorted(&turnovers, quantile);
    Ok(quotes.iter().filter(|q| q.turnover >= cut).cloned().collect())
}

/// Moneyness of a call from the spot/strike ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MoneynessBucket {
    /// `S/K <= 0.97`
    Otm,
    /// `S/K` in the open interval `(0.97, 1.03)`
    Atm,
    /// `S/K >= 1.03`
    Itm,
}

impl fmt::Display for MoneynessBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MoneynessBucket::Otm => "OTM",
            MoneynessBucket::Atm => "ATM",
            MoneynessBucket::Itm => "ITM",
        })
    }
}

/// Time-to-maturity class over half-open day intervals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MaturityBucket {
    /// `0 < ttm <= 7` days
    A,
    /// `7 < ttm <= 15`
    B,
    /// `15 < ttm <= 30`
    C,
    /// `30 < ttm <= 60`
    D,
    /// `60 < ttm <= 90`
    E,
}

impl fmt::Display for MaturityBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaturityBucket::A => "A",
            MaturityBucket::B => "B",
            MaturityBucket::C => "C",
            MaturityBucket::D => "D",
            MaturityBucket::E => "E",
        })
    }
}

/// Classifies a call by `S/K`: at or below 0.97 out-of-the-money, at or
/// above 1.03 in-the-money, strictly between the two at-the-money.
pub fn classify_moneyness(underlying: f64, strike: f64) -> MoneynessBucket {
    let ratio = underlying / strike;
    if ratio <= 0.97 {
        MoneynessBucket::Otm
    } else if ratio >= 1.03 {
        MoneynessBucket::Itm
    } else {
        MoneynessBucket::Atm
    }
}

/// Classifies days-to-expiry into the five half-open maturity intervals.
pub fn classify_maturity(ttm_days: i64) -> Result<MaturityBucket> {
    match ttm_days {
        1..=7 => Ok(MaturityBucket::A),
        8..=15 => Ok(MaturityBucket::B),
        16..=30 => Ok(MaturityBucket::C),
        31..=60 => Ok(MaturityBucket::D),
        61..=90 => Ok(MaturityBucket::E),
        _ => Err(PivError::invalid_input(format!(
            "ttm_days must be in 1..={MAX_TTM_DAYS}, got {ttm_days}"
        ))),
    }
}

/// One observation of the 91-day treasury yield.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatePoint {
    pub date: NaiveDate,
    /// Annualized decimal rate.
    pub yield_91d: f64,
}

/// Date-sorted rate observations with last-on-or-before lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct RateSeries {
    points: Vec<RatePoint>,
}

impl RateSeries {
    /// Sorts by date; duplicate dates are rejected.
    pub fn new(mut points: Vec<RatePoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(PivError::invalid_input("rate series is empty"));
        }
        points.sort_by_key(|p| p.date);
        if let Some(w) = points.windows(2).find(|w| w[0].date == w[1].date) {
            return Err(PivError::invalid_input(format!(
                "duplicate rate date {}",
                w[0].date
            )));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[RatePoint] {
        &self.points
    }

    /// Rate on `date`, falling back to the most recent earlier observation.
    /// Dates before the first observation are an explicit error.
    pub fn rate_on_or_before(&self, date: NaiveDate) -> Result<f64> {
        let idx = self.points.partition_point(|p| p.date <= date);
        if idx == 0 {
            return Err(PivError::MissingRate(date));
        }
        Ok(self.points[idx - 1].yield_91d)
    }
}

/// Result of loading a rates CSV.
#[derive(Debug, Clone)]
pub struct RateLoadReport {
    pub series: RateSeries,
    pub rejected: Vec<RowIssue>,
}

/// Loads the rates CSV (`date,yield_91d`). Non-finite yields are rejected
/// per row; yields outside `[0, 0.2]` are accepted with a warning.
pub fn load_rate_series(path: &Path) -> Result<RateLoadReport> {
    let file = File::open(path).map_err(|source| PivError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(BufReader::new(file));
    let headers = reader
        .headers()
        .map_err(|e| parse_err(path, format!("cannot read header: {e}")))?
        .clone();
    check_header(path, &headers, &RATES_HEADER)?;

    let mut points = Vec::new();
    let mut rejected = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let rec = record.map_err(|e| parse_err(path, format!("row {row}: {e}")))?;
        if rec.len() != RATES_HEADER.len() {
            return Err(parse_err(
                path,
                format!("row {row}: expected {} fields, got {}", RATES_HEADER.len(), rec.len()),
            ));
        }
        let date = parse_date(path, row, "date", field(&rec, 0))?;
        let yield_91d = parse_f64(path, row, "yield_91d", field(&rec, 1))?;
        if !yield_91d.is_finite() {
            rejected.push(RowIssue {
                row,
                message: format!("yield_91d {yield_91d} is not finite"),
            });
            continue;
        }
        if !(0.0..=0.2).contains(&yield_91d) {
            warn!("{}: row {row}: yield {yield_91d} outside [0, 0.2]", path.display());
        }
        points.push(RatePoint { date, yield_91d });
    }
    if points.is_empty() {
        return Err(parse_err(path, "no usable rate rows"));
    }
    Ok(RateLoadReport {
        series: RateSeries::new(points)?,
        rejected,
    })
}

/// Writes a rate series in the documented schema.
pub fn write_rate_series(points: &[RatePoint], path: &Path) -> Result<()> {
    let io_err = |source| PivError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut out = BufWriter::new(file);
    writeln!(out, "{}", RATES_HEADER.join(",")).map_err(io_err)?;
    for p in points {
        writeln!(out, "{},{}", p.date, p.yield_91d).map_err(io_err)?;
    }
    out.flush().map_err(io_err)?;
    Ok(())
}
