//! Training: per-modality ridge kernels, the shared latent codes as the
//! leading eigenvectors of their sum, and closed-form encoders.

mod compact;
mod eigen;
mod kernel;
mod model;
mod model_io;

pub use compact::fast_compact;
pub use eigen::{solve_latent_codes, solve_latent_codes_with, EigenSolver, LatentCodes, Spectrum};
pub use kernel::{aggregate_kernels, compute_delta, KernelMatrix};
pub use model::{
    derive_encoder, train, train_with, FeatureScaling, LseModel, PreparedTraining, TrainOptions,
};
pub use model_io::{decode_model, encode_model, load_model, save_model, MODEL_MAGIC, MODEL_VERSION};
