//! Learning-to-rank experiments on biased click data.
//!
//! The crate bundles the pieces needed to study position bias and
//! logging-policy confounding in additive two-tower click models:
//!
//! * [`data`]: records, file formats, feature scaling and query splits;
//! * [`simulation`]: synthetic worlds, a logging policy of tunable strength
//!   and a position-based click model;
//! * [`nn`]: a small dense network engine with Adam and dropout;
//! * [`gbdt`]: gradient-boosted trees with pointwise and LambdaRank objectives;
//! * [`models`]: two-tower, naive and backdoor-adjusted click models plus
//!   logging-policy estimators;
//! * [`eval`]: DCG/nDCG, confidence intervals and bucketed comparisons.
//!
//! The guide under `book/` walks through each part; its Rust snippets are
//! compiled as doctests of this crate.

pub mod data;
pub mod error;
pub mod eval;
pub mod gbdt;
pub mod models;
pub mod nn;
pub mod seed;
pub mod simulation;

pub use error::{Error, Result};

// The guide's chapters are compiled here so `cargo test --doc` runs every
// snippet in the book.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/click-models.md")]
    mod click_models {}
    #[doc = include_str!("../../../book/src/policy-estimation.md")]
    mod policy_estimation {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
