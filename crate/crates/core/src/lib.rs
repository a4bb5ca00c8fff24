//! Minimum φ-divergence estimation and testing for loglinear models with
//! linear constraints on the expected cell counts.
//!
//! The modules build on each other in order: [`divergence`], [`table`],
//! [`model`], [`estimate`], [`inference`], [`simulate`] and [`cli`]. The guide
//! in `book/` walks through them with runnable examples.

pub mod cli;
pub mod divergence;
pub mod error;
pub mod estimate;
pub mod inference;
pub mod linalg;
pub mod model;
pub mod simulate;
pub mod table;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/divergences.md")]
    mod divergences {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/estimation.md")]
    mod estimation {}
    #[doc = include_str!("../../../book/src/testing.md")]
    mod testing {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
