//! Domain adaptation with a systematically missing target feature block.
//!
//! The crate learns a shared encoder for the observed block, an encoder for
//! the missing block, a generator that imputes the missing block's latent
//! from the observed one, and a classifier on the concatenated latents. The
//! domains are aligned either adversarially or with exact optimal transport.

pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod nets;
pub mod ot;
pub mod rng;
pub mod selftrain;
pub mod train;

pub use error::{Error, Result};
