//! Multi-behavior recommendation with invariant user preferences.
//!
//! Users interact with items through several behaviors (click, cart,
//! purchase, ...). Every non-empty union of behaviors is an environment; a
//! LightGCN-style propagation yields a user vector per environment, an
//! encoder/decoder extracts the part of it that is stable across
//! environments, and target-behavior recommendations are scored from that
//! invariant part plus a target-specific residual.

mod atomic;
mod binio;
pub mod dataset;
pub mod environments;
pub mod error;
pub mod evaluator;
pub mod graph;
pub mod harness;
pub mod losses;
pub mod recommender;
pub mod rng;
pub mod synthgen;
pub mod tensor;
pub mod trainer;
pub mod vae;

pub use error::{Error, Result};
