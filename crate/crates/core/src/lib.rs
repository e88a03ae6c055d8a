//! Numerical tools for Brascamp–Lieb inequalities: finiteness conditions,
//! Gaussian extremisation, frame-based certificates, multilinear Kakeya
//! quadrature and nonlinear experiments.

pub mod certificate;
pub mod datum;
pub mod error;
pub mod finiteness;
pub mod frames;
pub mod gauss;
pub mod kakeya;
pub mod linalg;
pub mod nonlinear;
pub mod rng;
pub mod stability;

pub use error::{Error, Result};
