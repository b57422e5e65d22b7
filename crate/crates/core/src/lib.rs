//! Open-world identity inference with a hierarchical Dirichlet process over
//! face embeddings, identity names and frame contexts.

pub mod baselines;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod face_model;
pub mod identity_model;
pub mod label_model;
pub mod numerics;
pub mod predict;
pub mod sampler;
pub mod simulator;

pub use error::{Error, Result};
