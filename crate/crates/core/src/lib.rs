//! Graph-conditioned harmonic diffusion over explicit peptide atoms and
//! bonds, an equivariant denoiser and residue-type router, and the routed
//! sampler that alternates between them to emit cyclic peptides.

pub mod check;
pub mod chem;
pub mod cyclization;
pub mod data_io;
pub mod denoiser;
pub mod error;
pub mod geometry;
pub mod harmonic;
pub mod metrics;
pub mod router;
pub mod sampler;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
