//! Weight-averaged test-time adaptation (WATT) for a tiny CLIP-style dual encoder.
//!
//! The crate contains everything needed to run the method end to end on a desk:
//! a float64 reverse-mode autodiff engine, a small vision transformer and text
//! encoder, synthetic data with test-time corruptions, contrastive pretraining,
//! the transductive adaptation loss with parallel and sequential multi-template
//! weight averaging, evaluation heads and sweeps, and a loss-landscape analyzer.

pub mod adapt;
pub mod autodiff;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod io;
pub mod landscape;
pub mod model;
pub mod ops;
pub mod pretrain;
pub mod seed;
pub mod verify;

pub use error::{Result, WattError};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
