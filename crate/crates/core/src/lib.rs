//! Optimal linear filtering of quantum signals observed through a heterodyne
//! channel.
//!
//! The pipeline has four stages:
//!
//! * [`model`] describes the signal and channel and checks their structure.
//! * [`riccati`] integrates the Riccati equation for the error correlation
//!   and the optimal gain.
//! * [`kernels`] turns a synthesized filter into Gaussian transition kernels.
//! * [`simulate`] checks the filter by Monte-Carlo on a classical surrogate.
//!
//! [`acceptance`] bundles the end-to-end checks used by `qkf selftest`.
//!
//! ```
//! use quantum_kalman::model::{oscillator_to_general, OscillatorModel};
//! use quantum_kalman::riccati::integrate_riccati;
//!
//! let osc = OscillatorModel { omega: 1.0, gamma: 1.0, nu: 1.0, sigma0: 1.0, hbar: 1.0 };
//! let (signal, channel) = oscillator_to_general(&osc)?;
//! let synth = integrate_riccati(&signal, &channel, 1.0, 0.01)?;
//! assert!(synth.k.iter().all(|k| k.frobenius_norm() < 1e-12));
//! # Ok::<(), quantum_kalman::Error>(())
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod error;
pub mod kernels;
pub mod matrix;
pub mod model;
pub mod riccati;
pub mod simulate;

pub use error::{Error, Result};
pub use matrix::ComplexMatrix;
pub use num_complex::Complex64;
