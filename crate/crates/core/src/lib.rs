//! Self-supervised feature learning by classifying global image
//! transformations (identity, rotations, warping, limited context
//! inpainting), with the adversarial inpainter, shortcut prevention, and
//! frozen-feature evaluation protocols.
//!
//! The numeric core is generic over the scalar type ([`scalar::Scalar`],
//! implemented for `f32` and `f64`); the aliases below fix the default
//! `f32` pipeline.

pub mod classifier;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod io;
pub mod lci;
pub mod linalg;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod transforms;
pub mod viz;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Concrete aliases for the default f32 pipeline.
pub type Image = transforms::ImageTensor<f32>;
pub type Classifier = classifier::ClassifierNet<f32>;
pub type Inpainter = lci::InpainterNet<f32>;
pub type Discriminator = lci::DiscriminatorNet<f32>;
