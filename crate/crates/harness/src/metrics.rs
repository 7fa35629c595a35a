//! Problem generation and the distances used to score curvature estimates.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use spectral_precond::linalg::{from_spectrum, is_spd, random_orthogonal, spd_sqrt, sym_eigendecompose};
use spectral_precond::Error;

/// `Q Diag(λ) Qᵀ` with Haar-random `Q` and eigenvalues spaced evenly in log
/// scale over `[1/√cond, √cond]`. `cond = 1` yields the identity exactly.
pub fn generate_random_spd(dim: usize, cond: f64, seed: u64) -> Result<DMatrix<f64>, Error> {
    if !(cond.is_finite() && cond >= 1.0) {
        return Err(Error::InvalidArgument(format!("condition number must be >= 1, got {cond}")));
    }
    if dim == 0 {
        return Err(Error::InvalidArgument("dimension must be positive".into()));
    }
    if cond == 1.0 {
        return Ok(DMatrix::identity(dim, dim));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let q = random_orthogonal(dim, &mut rng);
    let half = 0.5 * cond.ln();
    let spectrum = DVector::from_fn(dim, |i, _| {
        let t = if dim == 1 { 0.5 } else { i as f64 / (dim - 1) as f64 };
        (-half + 2.0 * half * t).exp()
    });
    Ok(from_spectrum(&q, &spectrum))
}

/// `‖Sa − Sb‖_F / ‖Sa‖_F`.
pub fn rel_frobenius(sa: &DMatrix<f64>, sb: &DMatrix<f64>) -> Result<f64, Error> {
    if sa.shape() != sb.shape() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", sa.shape(), sb.shape())));
    }
    let denom = sa.norm();
    if denom == 0.0 {
        return Err(Error::InvalidArgument("reference matrix is zero".into()));
    }
    Ok((sa - sb).norm() / denom)
}

/// Bures–Wasserstein distance between zero-mean Gaussians with covariances `a`, `b`.
pub fn wasserstein2_spd(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64, Error> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    if !is_spd(a) || !is_spd(b) {
        return Err(Error::Domain("Wasserstein-2 needs SPD arguments".into()));
    }
    let ra = spd_sqrt(a)?;
    let inner = &ra * b * &ra;
    // The product is PSD; clamp roundoff below zero before the root.
    let (_, eig) = sym_eigendecompose(&((&inner + inner.transpose()) * 0.5))?;
    let cross: f64 = eig.iter().map(|&v| v.max(0.0).sqrt()).sum();
    Ok((a.trace() + b.trace() - 2.0 * cross).max(0.0).sqrt())
}
