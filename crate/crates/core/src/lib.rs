//! Twin audio/video diffusion transformers at desk scale.
//!
//! Two architecturally identical towers (video, audio) exchange information in
//! every block through bidirectional cross-attention, share one timestep and one
//! text conditioning sequence, and are trained jointly with a weighted
//! flow-matching loss. The crate also carries the clip-curation rules used to
//! prepare paired training data.

pub mod cli;
pub mod data;
pub mod error;
pub mod model;
pub mod rope;
pub mod sampler;
pub mod tensor;
pub mod train;
pub mod util;

pub use error::{Error, Result};
pub use tensor::{Graph, Tensor, Var};
