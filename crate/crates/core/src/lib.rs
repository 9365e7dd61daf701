//! Virtual control-based continuation (CBC) experiments on a noisy,
//! seventh-order Duffing-like oscillator.
//!
//! The crate contains a simulated rig ([`plant`]), a PD controller with its
//! Fourier-domain forcing algebra ([`controller`]), the simplified CBC
//! amplitude sweep ([`cbc`]), open-loop sweeps ([`openloop`]), the closed-form
//! multiple-scales response ([`analytic`]), harmonic-balance ground truth with
//! Floquet stability ([`colloc`]) and least-squares identification
//! ([`ident`]). [`experiment`] wires these into the seeded trial used by the
//! command-line harness and the acceptance suite.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod cbc;
pub mod colloc;
pub mod compare;
pub mod controller;
pub mod error;
pub mod experiment;
pub mod export;
pub mod ident;
pub mod openloop;
pub mod plant;
pub mod rk4;
pub mod signal;

pub use error::{Error, Result};
