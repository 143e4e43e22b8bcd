//! European option pricing with Pearson-diffusion log returns.
//!
//! Log returns `R_t = ln(S_t / S_0)` follow the mean-reverting diffusion
//!
//! ```text
//! dR = -theta (R - mu) dt + sigma sqrt(2 theta a (1 + R^2)) dB
//! ```
//!
//! whose invariant law is a Pearson type IV density with polynomial tails.
//! Under the pricing measure the dynamics collapse to a single identified
//! parameter `kappa = theta sigma^2 a`:
//!
//! ```text
//! dR = (r - kappa (1 + R^2)) dt + sqrt(2 kappa (1 + R^2)) dW
//! ```
//!
//! The crate prices European calls under this model by Monte Carlo and by a
//! Crank-Nicolson finite-difference solver, alongside Black-Scholes and
//! Heston benchmarks, and ships estimation, calibration, and backtesting
//! layers for comparing the three models on option-chain data.
//!
//! Start with the `examples/` directory: each example is a runnable
//! end-to-end use of one capability (simulation, pricing, estimation,
//! calibration, backtesting, synthetic data). A thin `pivopt` binary exposes
//! the same operations as subcommands for scripting.

pub mod backtest;
pub mod calibration;
pub mod density;
pub mod error;
pub mod estimation;
pub mod market_data;
pub mod model;
pub mod optim;
pub mod pricing;
pub mod rng;
pub mod sde;
pub mod synth;

pub use error::{PivError, Result};
pub use model::{BsParams, HestonParams, PivParams};
