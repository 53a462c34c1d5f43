//! Stability and H∞ performance analysis for networked, quantized control loops.

pub mod benchmark;
pub mod error;
pub mod linalg;
pub mod lmi;
pub mod model;
pub mod overapprox;
pub mod sdp;
pub mod sim;

pub use error::{Error, Result};
