//! Coupling-based strong approximation toolkit: simulation of stationary
//! processes, coupling coefficients, dyadic Rosenthal decompositions,
//! KMT block diagnostics and the rate calculus.

// `!(x > 0.0)` rejects NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod affine;
pub mod condexp;
pub mod coupling;
pub mod error;
pub mod experiment;
pub mod family;
pub mod kmt;
pub mod modulus;
pub mod noise;
pub mod observable;
pub mod par;
pub mod process;
pub mod quadrature;
pub mod rates;
pub mod rng;
pub mod rosenthal;
pub mod stats;

pub use error::{Error, Result};
