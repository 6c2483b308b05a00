//! Breakpoint estimation in bivariate data: loess with residual-bootstrap
//! prediction bands, two-breakpoint piecewise linear least-squares and
//! quantile regression, and band-area comparison.

pub mod area;
pub mod band;
pub mod bootstrap;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod linalg;
pub mod loess;
pub mod quantile;
pub mod report;
pub mod rng;
pub mod segmented;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
