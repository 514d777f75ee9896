//! Sphere-guided generative model for 3D point clouds.

pub mod cli;
pub mod dataset;
pub mod digest;
pub mod discriminator;
pub mod error;
pub mod evaluation;
pub mod generator;
pub mod manipulation;
pub mod geometry;
pub mod nn;
pub mod scalar;
pub mod service;
pub mod sphere;
pub mod training;

pub use error::{Error, ErrorKind, Result};
