//! Multiqubit, multimode quantum Rabi and Rabi–Stark models: dark states
//! with machine-checkable certificates, parity-resolved spectra with level
//! tracking, adiabatic diagnostics, Schrödinger propagation of W-state
//! generation protocols, and Lindblad / dressed master equations for
//! catch-and-release photon emission.
//!
//! Numerics are generic over the real scalar (f32 or f64) through the
//! [`Real`] trait; the `*64` aliases fix the common double-precision case.

pub mod action;
pub mod darkstates;
pub mod dynamics;
pub mod error;
pub mod export;
pub mod hilbert;
pub mod models;
pub mod num;
pub mod ode;
pub mod openquantum;
pub mod schedule;
pub mod spectra;

pub use crate::error::{Error, Result};
pub use crate::num::{Real, C};

/// Double-precision aliases for the central types.
pub type Operator64 = crate::hilbert::Operator<f64>;
pub type PureState64 = crate::hilbert::PureState<f64>;
pub type ModelParams64 = crate::models::ModelParams<f64>;
pub type Certificate64 = crate::darkstates::Certificate<f64>;
pub type DensityMatrix64 = crate::openquantum::DensityMatrix<f64>;
