//! Decomposition-free learning of SPD curvature matrices in spectral form.
//!
//! A curvature estimate is stored as an orthogonal basis and a positive
//! eigenvalue vector. Updates move the eigenvalues multiplicatively and the
//! basis through Cayley maps, so arbitrary fractional inverse roots stay
//! elementwise and no eigendecomposition runs inside the update loop.
//!
//! - [`linalg`]: Cayley maps, skew/triangular restrictions, reference decompositions.
//! - [`spectral`]: the full-matrix and diagonal learners.
//! - [`kron`]: Kronecker-factored learners for matrix parameters.
//! - [`sources`]: GOP, SPD-optimization and NES residuals; test functions.
//! - [`baselines`]: dense EMA and nearest-Kronecker projection schemes.

pub mod baselines;
pub mod error;
pub mod kron;
pub mod linalg;
pub mod scalar;
pub mod sources;
pub mod spectral;

pub use error::{Error, Result};
pub use kron::{KronOptimizer, KronSpectralFactor, KronVariant};
pub use scalar::Real;
pub use sources::{FitnessShaping, NesConfig, SpdKind, SpdProblem, TestFunction};
pub use spectral::{CayleyMode, CurvatureResidual, ExpMode, ResidualSource, SpectralFactor, SpectralOptimizer, UpdateConfig};
