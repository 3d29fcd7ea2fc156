//! Lempel-Ziv networks: vector-symbolic memories, LZ digests and a
//! differentiable recurrent layer that mimics LZ phrase parsing.

pub mod autograd;
pub mod bench;
pub mod cells;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod layer;
pub mod lz;
pub mod memory;
pub mod model;
pub mod tasks;
pub mod vsa;

pub use error::{Error, Result};
