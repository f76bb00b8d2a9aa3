//! Energy-efficient joint power and subcarrier allocation for a relay-aided
//! OFDMA downlink.
//!
//! The crate models a single cell with one base station, `M` fixed
//! amplify-and-forward relays and `K` users sharing `N` subcarriers under a
//! total transmit power budget. [`solver::solve_eem`] maximizes bits per
//! Joule with Dinkelbach's method and a dual-decomposition inner loop;
//! [`solver::solve_sem`] maximizes spectral efficiency. [`oracle`] certifies
//! small instances by exhaustive search and [`experiments`] runs Monte-Carlo
//! sweeps.
//!
//! The math is generic over [`Real`] (`f32` or `f64`); the aliases below fix
//! the scalar for the common cases.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod config;
pub mod error;
pub mod experiments;
pub mod model;
pub mod oracle;
pub mod scalar;
pub mod solver;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Allocation64 = model::Allocation<f64>;
pub type Allocation32 = model::Allocation<f32>;
pub type PowerModel64 = model::PowerModel<f64>;
pub type RadioConfig64 = model::RadioConfig<f64>;
pub type Metrics64 = model::Metrics<f64>;
pub type Metrics32 = model::Metrics<f32>;
pub type Channel64 = channel::ChannelRealization<f64>;
pub type Channel32 = channel::ChannelRealization<f32>;
pub type Solution64 = solver::Solution<f64>;
pub type Solution32 = solver::Solution<f32>;
