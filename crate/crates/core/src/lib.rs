//! Phaseless inverse scattering for smooth microsphere media.
//!
//! The crate simulates far-zone intensity data with a volume-integral solver,
//! recovers the complex field from intensity alone, propagates it onto the
//! domain boundary and reconstructs the refractive index with a globally
//! convergent iteration.

// Guards such as `!(x > 0.0)` are written that way so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Loops over the frequency index read closer to the math than iterator chains.
#![allow(clippy::needless_range_loop)]

pub mod diff;
pub mod error;
pub mod fft;
pub mod forward;
pub mod grid;
pub mod interface;
pub mod krylov;
pub mod pde;
pub mod phantom;
pub mod phase;
pub mod propagate;
pub mod reconstruct;

pub use error::{Error, Result};
