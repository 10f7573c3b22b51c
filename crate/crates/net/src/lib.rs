//! Desk-scale sparse-voxel autoencoder for cross-field generation.
//!
//! - [`tape`]: reverse-mode differentiation over row-major matrices with
//!   sparse convolution, gathering, trilinear queries and the four losses.
//! - [`model`]: encoder, occupancy-gated decoder and the SDF and field heads.
//! - [`data`], [`manifest`]: prepared shapes, augmentation and dataset files.
//! - [`train`], [`optim`], [`checkpoint`]: Adam training with checkpoints.
//! - [`infer`]: mesh and point-cloud inference.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod infer;
pub mod loss;
pub mod manifest;
pub mod mat;
pub mod model;
pub mod optim;
pub mod params;
pub mod real;
pub mod sparse;
pub mod tape;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::{FieldHeadKind, LossWeights, NetworkConfig, TrainConfig};
pub use error::{NetError, Result};
pub use infer::Predictor;
pub use mat::Mat;
pub use params::ParamStore;
pub use real::Real;
pub use tape::{Grads, Tape, Var};
pub use train::Trainer;
