//! Constructive approximation with Transformer networks.
//!
//! The crate builds explicit Transformer weights that approximate Hölder and
//! Sobolev sequence-to-sequence maps, measures the achieved errors against
//! closed-form bounds, evaluates VC-type capacity bounds, and runs small
//! nonparametric regression experiments on β-mixing data.

pub mod capacity;
pub mod certificate;
pub mod error;
pub mod grid;
pub mod kst;
pub mod metrics;
pub mod mixing;
pub mod nn;
pub mod target;
pub mod verify;

pub use error::{Error, Result};
