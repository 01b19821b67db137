//! Coarse-to-fine joint face super-resolution and frontalization.
//!
//! The crate takes unaligned 16x16 face crops to frontal 128x128 images in
//! two hallucination levels: a coarse network built from feature-transform
//! modules (spatial alignment, residual refinement, 2x upsampling), then a
//! fine network that refines eye/nose/mouth patches, stitches them into a
//! component appearance prior, and fuses coarse features with landmark
//! heatmap features through an attention integration block. Two
//! discriminators, five loss families, a three-stage trainer, a synthetic
//! paired-data pipeline and a PSNR/SSIM evaluation harness round out the
//! toolkit.
//!
//! All numeric kernels are generic over [`scalar::Scalar`] (f32 or f64);
//! training defaults to f32, gradient checking runs in f64.

pub mod check;
pub mod datapipe;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod nets;
pub mod face;
pub mod geometry;
pub mod graph;
pub mod scalar;
pub mod optim;
pub mod toyface;
pub mod trainer;

pub use error::{Error, Result};
pub use graph::{Grads, Graph, Var};
pub use scalar::Scalar;

/// Element type used for training and inference binaries.
pub type TrainScalar = f32;
/// Element type used for gradient checking and metric computation.
pub type CheckScalar = f64;
