//! Domain-connecting contrastive learning at desk scale.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod connectivity;
pub mod error;
pub mod harness;
pub mod losses;
pub mod nets;
pub mod optim;
pub mod rng;
pub mod synthdata;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
