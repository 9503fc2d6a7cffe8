//! Spatiotemporal crime hotspot forecasting.
//!
//! Incidents are binned into daily multi-channel maps ([`grid`]), fed to
//! convolutional/recurrent forecasters ([`models`]) or classical
//! [`baselines`], and scored with the ranking metrics in [`metrics`].
//! [`harness`] wires the pieces into reproducible experiments.

pub mod baselines;
mod error;
pub mod grid;
pub mod harness;
pub mod ingest;
pub mod metrics;
pub mod models;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/grids.md")]
    mod grids {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/baselines.md")]
    mod baselines {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
