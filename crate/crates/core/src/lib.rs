//! Response forecasting over belief-augmented heterogeneous social graphs.
//!
//! The pipeline ingests users, news headlines, follow edges and labelled
//! responses ([`datamodel`]), extracts structured latent personas with a
//! language model ([`persona`]), links users to a closed vocabulary of
//! value/moral beliefs ([`graph`]), initializes node vectors ([`embed`]),
//! propagates them with a heterogeneous graph transformer ([`hgt`]) trained
//! by [`train`], and scores predictions with [`metrics`]. A zero-shot path
//! ([`zeroshot`]) replaces the learned model with social prompting, and
//! [`synth`] generates planted-belief worlds for desk-scale experiments.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below name the two instantiations used in practice.

pub mod datamodel;
pub mod embed;
pub mod error;
pub mod graph;
pub mod hgt;
pub mod linalg;
pub mod llm;
pub mod metrics;
pub mod persona;
pub mod rng;
pub mod scalar;
pub mod synth;
pub mod train;
pub mod zeroshot;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Model parameters at single precision (training, checkpoints).
pub type HgtParams32 = hgt::HgtParams<f32>;
/// Model parameters at double precision (gradient checking).
pub type HgtParams64 = hgt::HgtParams<f64>;
pub type Model32 = hgt::Model<f32>;
pub type Model64 = hgt::Model<f64>;
pub type RAdam32 = train::RAdam<f32>;
pub type RAdam64 = train::RAdam<f64>;
