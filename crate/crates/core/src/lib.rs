//! Greedy sparse pursuits (OMP, MP, SP, Batch-OMP, Random-OMP, GCMP), their
//! unrolled trainable forms (LGM, L-MP, L-SP) and a LISTA baseline, with the
//! training loops, synthetic experiment harness and patch-based denoiser
//! built on top of them.

pub mod error;
pub mod imaging;
pub mod linalg;
pub mod pursuit;
pub mod synthetic;
pub mod training;
pub mod unrolled;

pub use error::{Error, Result};
