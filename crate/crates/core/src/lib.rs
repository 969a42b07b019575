//! Nonlinear blind source separation for spatial data.
//!
//! An identifiable VAE whose auxiliary variable is a one-hot spatial
//! segment recovers latent random fields from nonlinear mixtures. Around it
//! sit simulators for the latent fields and mixings, the MCC performance
//! index, scaled MASHAP explanations of multi-output models, log-ratio
//! transforms for compositional data and kriging of the recovered latents.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod compositional;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod ivae;
pub mod kriging;
pub mod linalg;
pub mod mixing;
pub mod random_fields;
pub mod rng;
pub mod segmentation;
pub mod shap;
pub mod special;

pub use dataset::{Domain2D, SpatialDataset};
pub use error::{Error, Result};
