//! Multi-task user intent modelling with a total-probability purchase head.
//!
//! The crate is organised bottom-up: [`tensor`] provides a small reverse-mode
//! autodiff engine, [`nn`] the layers built on it, [`model`] the full network,
//! [`loss`] and [`train`] the objective and optimiser, [`data`] a synthetic
//! funnel generator with JSONL I/O, and [`eval`] the metrics and baselines.

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod loss;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/layers.md")]
    mod layers {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/loss.md")]
    mod loss {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
