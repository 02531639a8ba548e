//! Mixture-of-experts message passing with a vector-quantized token interface
//! and a Lipschitz-regularized linear head, plus the evaluation protocols and
//! numerical bound checks that go with it.

pub mod encoder;
pub mod error;
pub mod eval;
pub mod graph;
pub mod head;
pub mod kernel;
pub mod model;
pub mod theory;
pub mod train;
pub mod vq;

pub use error::{Error, Result};
