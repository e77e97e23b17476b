//! Core of the interventional prior-fitting lab.
//!
//! Everything in this crate is pure computation over explicit random number
//! streams: structural causal models and their do-interventions, the
//! synthetic prior over SCMs, the named case-study builders, an exact
//! Monte-Carlo oracle for conditional interventional distributions, a small
//! reverse-mode autodiff engine, the in-context transformer with its
//! bar-distribution head, the prior-fitting step and the evaluation metrics.
//!
//! The crate is `no_std` (with `alloc`) unless the default `std` feature is
//! enabled; `std` only switches on runtime SIMD detection in the matrix
//! kernels. IO, file formats and the command line live in the `dopfn` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod cases;
pub mod error;
pub mod eval;
mod hash;
pub mod model;
pub mod numerics;
pub mod oracle;
pub mod prior;
pub mod rng;
pub mod scm;
pub mod training;

pub use error::{Error, Result};
pub use hash::{digest_hex, pair_hash, Fingerprint};
