//! Balanced synthetic dataset construction by latent attribute translation,
//! with a fairness metric suite.
//!
//! The pipeline: discover per-layer attribute signatures from small labeled
//! seed sets ([`discovery`]), plan how many samples each (group, attribute)
//! cell needs ([`balance`]), synthesize them through a [`synthesis::Generator`]
//! ([`synthesis`]), and score a trained model's predictions ([`metrics`]).

pub mod annotations;
pub mod artifact;
pub mod balance;
pub mod config;
pub mod discovery;
pub mod error;
pub mod latent;
pub mod metrics;
pub mod seedfile;
pub mod study;
pub mod synthesis;

pub use error::{Error, Result};
