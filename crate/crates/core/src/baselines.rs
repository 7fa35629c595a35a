//! Reference schemes: the dense EMA curvature update with eigendecomposition
//! preconditioning, and a projection-based Kronecker scheme built on the
//! nearest-Kronecker-product rearrangement.

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::scalar::Real;

/// Largest `n·m` for which the projection baseline materializes `S`.
pub const PROJECTION_CAP: usize = 200;

/// `(1−γβ₂) S + β₂ (ggᵀ + λI)`.
pub fn ema_full_step<T: Real>(s: &Matrix<T>, g: &Vector<T>, beta2: f64, gamma: f64, lambda: f64) -> Result<Matrix<T>> {
    let dim = linalg::ensure_square(s, "S")?;
    if g.len() != dim {
        return Err(Error::ShapeMismatch(format!("gradient of length {} against S of dim {dim}", g.len())));
    }
    if !(gamma * beta2 < 1.0 && gamma * beta2 >= 0.0) {
        return Err(Error::Precondition(format!("gamma*beta2 = {} must lie in [0, 1)", gamma * beta2)));
    }
    let keep = T::one() - T::of(gamma * beta2);
    let b = T::of(beta2);
    let lam = T::of(lambda);
    let mut out = s * keep;
    for i in 0..dim {
        for j in 0..dim {
            out[(i, j)] += b * (g[i] * g[j]);
        }
        out[(i, i)] += b * lam;
    }
    debug_assert!(linalg::is_symmetric(&out));
    Ok(out)
}

/// `B Diag(d^{-1/p}) Bᵀ g` via an eigendecomposition of `S`.
pub fn eigen_precondition<T: Real>(s: &Matrix<T>, g: &Vector<T>, p: f64) -> Result<Vector<T>> {
    if !(p.is_finite() && p > 0.0) {
        return Err(Error::InvalidArgument(format!("root exponent must be positive, got {p}")));
    }
    let (b, d) = linalg::sym_eigendecompose(s)?;
    if g.len() != d.len() {
        return Err(Error::ShapeMismatch("gradient/S dims".into()));
    }
    if d.iter().any(|&x| x <= T::zero()) {
        return Err(Error::Domain("S is not positive definite".into()));
    }
    let e = T::of(-1.0 / p);
    let rotated = b.tr_mul(g).zip_map(&d, |x, v| x * v.powf(e));
    Ok(b * rotated)
}

/// Frobenius-nearest `SC ⊗ SK` to a symmetric `(n·m)×(n·m)` matrix.
///
/// Gauge: both factors symmetric, positive trace, `tr(SC) = n`.
pub fn nearest_kron_project<T: Real>(s: &Matrix<T>, n: usize, m: usize) -> Result<(Matrix<T>, Matrix<T>)> {
    let dim = linalg::ensure_square(s, "S")?;
    if n == 0 || m == 0 || dim != n * m {
        return Err(Error::ShapeMismatch(format!("S is {dim}x{dim}, expected ({n}·{m})²")));
    }
    // R[(i1,i2),(j1,j2)] = S[i1·m + j1, i2·m + j2]; S = A⊗B  ⇔  R = vec(A) vec(B)ᵀ.
    let r = Matrix::from_fn(n * n, m * m, |row, col| {
        let (i1, i2) = (row / n, row % n);
        let (j1, j2) = (col / m, col % m);
        s[(i1 * m + j1, i2 * m + j2)]
    });
    let svd = r.svd(true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(Error::Numerical("SVD did not produce singular vectors".into())),
    };
    let (idx, sigma) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, T::zero()), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
    if sigma <= T::zero() {
        return Err(Error::Degenerate("dominant singular value is zero".into()));
    }
    let root = sigma.sqrt();
    let mut a = Matrix::from_fn(n, n, |i, j| u[(i * n + j, idx)] * root);
    let mut b = Matrix::from_fn(m, m, |i, j| vt[(idx, i * m + j)] * root);
    a = linalg::symmetrize(&a);
    b = linalg::symmetrize(&b);
    if a.trace() < T::zero() {
        a = -a;
        b = -b;
    }
    let ta = a.trace();
    if ta == T::zero() {
        return Err(Error::Degenerate("projected row factor has zero trace".into()));
    }
    let c = T::of(n as f64) / ta;
    Ok((a * c, b / c))
}

/// One EMA step on the materialized Kronecker product, projected back.
pub fn projection_kron_step<T: Real>(
    sc: &Matrix<T>,
    sk: &Matrix<T>,
    g: &Vector<T>,
    beta2: f64,
    gamma: f64,
) -> Result<(Matrix<T>, Matrix<T>)> {
    let n = linalg::ensure_square(sc, "SC")?;
    let m = linalg::ensure_square(sk, "SK")?;
    if n * m > PROJECTION_CAP {
        return Err(Error::Refused(format!(
            "projection baseline materializes (n·m)² entries; n·m = {} exceeds the cap of {PROJECTION_CAP}",
            n * m
        )));
    }
    if g.len() != n * m {
        return Err(Error::ShapeMismatch(format!("gradient of length {} for n·m = {}", g.len(), n * m)));
    }
    let s = ema_full_step(&sc.kronecker(sk), g, beta2, gamma, 0.0)?;
    nearest_kron_project(&s, n, m)
}
