//! Arbitrage-free Markov-chain modulated affine forward-curve models.
//!
//! The forward curve is `f_t(x) = c(x, Z_t) + <u(x, Z_t), Y_t>` where `Y` is a
//! `d`-factor diffusion and `Z` an `n`-state continuous-time Markov chain.
//! [`energy`] builds `u` and `c` for energy futures (a coupled linear ODE),
//! [`rates`] builds them for zero-coupon bonds (a Riccati system followed by an
//! exponential-transform linear ODE). [`dynamics`] simulates `(Y, Z)`,
//! [`market`] prices contracts off a solved model and [`noarb`] checks the
//! no-arbitrage drift conditions both pointwise and by Monte Carlo.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dynamics;
pub mod energy;
pub mod error;
pub mod linalg;
pub mod market;
pub mod noarb;
pub mod presets;
pub mod rates;
pub mod regime;

pub use error::{Error, Result};
pub use linalg::{Matrix, Vector};
