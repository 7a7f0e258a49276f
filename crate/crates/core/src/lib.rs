//! Truncation-sensitivity laboratory.
//!
//! Synthetic sources whose truncation profile is known exactly, the window and
//! policy measurement pipeline, decay-law fitting, closed-form window and rate
//! calculators, an online window selector, a small Wyner–Ziv coder, a layer
//! rate allocator, and Monte Carlo checks of the concentration envelopes.

pub mod alloc;
pub mod dist;
pub mod fit;
pub mod fixtures;
pub mod hedge;
pub mod io;
pub mod martingale;
pub mod policy;
pub mod error;
pub mod rng;
pub mod source;
pub mod sweep;
pub mod window;
pub mod wz;

pub use error::{Error, Result};

/// Library version, stamped into emitted records.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
