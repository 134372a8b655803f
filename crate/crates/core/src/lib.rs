//! Multiple imputation for logistic regression with an interaction between a
//! partially observed binary covariate `X` and a fully observed moderator `Z`.
//!
//! The numerical core is generic over [`scalar::Real`] (`f32` or `f64`);
//! the aliases below fix the scalar for the common cases.

pub mod cli;
pub mod config;
pub mod error;
pub mod glm;
pub mod impute;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod pooling;
pub mod scalar;
pub mod simgen;
pub mod tabular;

pub use error::{Error, Result};
pub use impute::{impute, ImputationConfig, Strategy};
pub use tabular::ModelFormula;

pub type Dataset64 = tabular::Dataset<f64>;
pub type Dataset32 = tabular::Dataset<f32>;
pub type Matrix64 = linalg::Matrix<f64>;
pub type Matrix32 = linalg::Matrix<f32>;
pub type GlmFit64 = glm::GlmFit<f64>;
pub type GlmFit32 = glm::GlmFit<f32>;
pub type ImputedSet64 = impute::ImputedSet<f64>;
pub type ImputedSet32 = impute::ImputedSet<f32>;
pub type PooledEstimate64 = pooling::PooledEstimate<f64>;
pub type PooledEstimate32 = pooling::PooledEstimate<f32>;
