//! Latent space encoding for zero-shot learning.
//!
//! Several feature modalities describing the same instances (visual
//! features, class attributes, word vectors) share one latent code matrix
//! with orthonormal rows. The codes are the leading eigenvectors of a sum
//! of ridge-regularized instance kernels, and each modality gets a single
//! closed-form matrix that both encodes into and decodes out of the latent
//! space. Unseen classes are then recognized by decoding their semantic
//! prototypes into visual space and matching by cosine similarity.
//!
//! The [`harness`] module wraps this into the usual evaluation protocols:
//! conventional zero-shot classification, the four generalized scenarios,
//! zero-shot retrieval, class-wise cross-validation and fusion-weight search.

pub mod data;
pub mod error;
pub mod exec;
pub mod harness;
pub mod inference;
pub mod lse;
pub mod metrics;

pub use data::{ClassId, ClassSplit, Dataset, Hyperparams, ModalityMatrix, PrototypeMatrix};
pub use error::{ErrorClass, LseError, Result};
pub use exec::Execution;
pub use lse::{train, LseModel};
