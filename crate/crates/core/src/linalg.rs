//! Dense square-matrix substrate: Cayley maps, skew/triangular restrictions,
//! and the few decompositions used by baselines and evaluation metrics.
//!
//! Nothing in the spectral update loop calls a decomposition from this module;
//! `sym_eigendecompose` and `spd_sqrt` exist for the reference schemes and for
//! metrics only.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::Real;

pub type Matrix<T> = DMatrix<T>;
pub type Vector<T> = DVector<T>;

/// Relative tolerance used for structural checks (skewness, symmetry).
pub fn structural_tol<T: Real>() -> T {
    let floor = T::of(1e-8);
    let scaled = T::eps() * T::of(100.0);
    if scaled > floor {
        scaled
    } else {
        floor
    }
}

pub fn ensure_square<T: Real>(m: &Matrix<T>, what: &str) -> Result<usize> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::ShapeMismatch(format!(
            "{what} must be a non-empty square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m.nrows())
}

pub fn ensure_finite<T: Real>(m: &Matrix<T>, what: &str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{what} has non-finite entries")))
    }
}

/// `M - Mᵀ`.
pub fn skew_part<T: Real>(m: &Matrix<T>) -> Matrix<T> {
    assert_eq!(m.nrows(), m.ncols(), "skew_part needs a square matrix");
    m - m.transpose()
}

/// Entries strictly below the diagonal; diagonal and upper triangle zeroed.
pub fn strict_lower<T: Real>(m: &Matrix<T>) -> Matrix<T> {
    assert_eq!(m.nrows(), m.ncols(), "strict_lower needs a square matrix");
    let n = m.nrows();
    Matrix::from_fn(n, n, |i, j| if i > j { m[(i, j)] } else { T::zero() })
}

/// Diagonal part of a square matrix as a matrix.
pub fn diagonal_part<T: Real>(m: &Matrix<T>) -> Matrix<T> {
    Matrix::from_diagonal(&m.diagonal())
}

pub fn symmetrize<T: Real>(m: &Matrix<T>) -> Matrix<T> {
    (m + m.transpose()) * T::of(0.5)
}

pub fn is_skew<T: Real>(n: &Matrix<T>) -> bool {
    let defect = (n + n.transpose()).norm();
    defect <= structural_tol::<T>() * (T::one() + n.norm())
}

pub fn is_symmetric<T: Real>(s: &Matrix<T>) -> bool {
    let defect = (s - s.transpose()).norm();
    defect <= structural_tol::<T>() * (T::one() + s.norm())
}

/// Exact Cayley map `(I + N)(I - N)⁻¹` for skew-symmetric `N`.
///
/// `I - N` is always invertible for skew `N`, so a solve failure here means
/// the arithmetic broke down, not that the input was bad.
pub fn cayley_exact<T: Real>(n: &Matrix<T>) -> Result<Matrix<T>> {
    let dim = ensure_square(n, "Cayley argument")?;
    ensure_finite(n, "Cayley argument")?;
    if !is_skew(n) {
        return Err(Error::InvalidArgument(
            "Cayley argument is not skew-symmetric".into(),
        ));
    }
    let eye = Matrix::<T>::identity(dim, dim);
    // (I+N) and (I-N)⁻¹ commute, so solve (I-N) X = (I+N).
    let lu = (&eye - n).lu();
    lu.solve(&(&eye + n))
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Numerical("linear solve in Cayley map failed".into()))
}

/// Inverse Cayley map `(Q + I)⁻¹(Q - I)` for orthogonal `Q` without `-1` in its spectrum.
pub fn cayley_inverse<T: Real>(q: &Matrix<T>) -> Result<Matrix<T>> {
    let dim = ensure_square(q, "orthogonal matrix")?;
    ensure_finite(q, "orthogonal matrix")?;
    let eye = Matrix::<T>::identity(dim, dim);
    let lu = (q + &eye).lu();
    let u = lu.u();
    let pivots = u.diagonal().map(|x| x.abs());
    let largest = pivots.max();
    let smallest = pivots.min();
    if largest == T::zero() || smallest <= largest * T::eps() * T::of(1e3) {
        return Err(Error::Domain("-1 in spectrum of Q (Q + I is singular)".into()));
    }
    lu.solve(&(q - &eye))
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Domain("-1 in spectrum of Q (Q + I is singular)".into()))
}

/// Truncated Cayley map `(I + N)²(I + N²)(I + N⁴)`.
///
/// This is the Neumann-series product for `(I - N)⁻¹` cut after three factors,
/// valid for `‖N‖_F < 1` with error `O(‖N‖⁸)`. Only matrix products are used.
pub fn cayley_truncated<T: Real>(n: &Matrix<T>) -> Result<Matrix<T>> {
    let dim = ensure_square(n, "Cayley argument")?;
    ensure_finite(n, "Cayley argument")?;
    let norm = n.norm();
    if norm >= T::one() {
        return Err(Error::Precondition(format!(
            "truncated Cayley needs ‖N‖_F < 1, got {norm}"
        )));
    }
    let eye = Matrix::<T>::identity(dim, dim);
    let n2 = n * n;
    let n4 = &n2 * &n2;
    let first = &eye + n;
    Ok((&first * &first) * (&eye + &n2) * (&eye + &n4))
}

/// `‖BᵀB - I‖_F`.
pub fn orthogonality_defect<T: Real>(b: &Matrix<T>) -> T {
    let dim = b.ncols();
    (b.transpose() * b - Matrix::<T>::identity(dim, dim)).norm()
}

/// One Newton–Schulz polar sweep `B (3I - BᵀB) / 2`.
///
/// Pulls a nearly orthogonal matrix back towards the orthogonal group; the
/// defect is squared (up to a constant) per sweep.
pub fn reorthonormalize<T: Real>(b: &Matrix<T>) -> Matrix<T> {
    let dim = b.ncols();
    let gram = b.transpose() * b;
    let correction = Matrix::<T>::identity(dim, dim) * T::of(3.0) - gram;
    b * correction * T::of(0.5)
}

/// Symmetric eigendecomposition with ascending eigenvalues.
pub fn sym_eigendecompose<T: Real>(s: &Matrix<T>) -> Result<(Matrix<T>, Vector<T>)> {
    let dim = ensure_square(s, "symmetric matrix")?;
    ensure_finite(s, "symmetric matrix")?;
    if !is_symmetric(s) {
        return Err(Error::InvalidArgument("matrix is not symmetric".into()));
    }
    let eig = SymmetricEigen::try_new(symmetrize(s), T::eps(), 10_000)
        .ok_or_else(|| Error::Numerical("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = Vector::from_iterator(dim, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = Matrix::<T>::zeros(dim, dim);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok((vectors, values))
}

/// `B Diag(d) Bᵀ`.
pub fn from_spectrum<T: Real>(basis: &Matrix<T>, values: &Vector<T>) -> Matrix<T> {
    let mut scaled = basis.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= values[j];
    }
    let out = scaled * basis.transpose();
    symmetrize(&out)
}

/// Principal square root of an SPD matrix.
pub fn spd_sqrt<T: Real>(s: &Matrix<T>) -> Result<Matrix<T>> {
    let (basis, values) = sym_eigendecompose(s)?;
    if values.iter().any(|&v| v <= T::zero()) {
        return Err(Error::Domain(format!(
            "matrix is not positive definite (min eigenvalue {})",
            values.min()
        )));
    }
    Ok(from_spectrum(&basis, &values.map(|v| v.sqrt())))
}

/// Cholesky-based SPD check.
pub fn is_spd<T: Real>(s: &Matrix<T>) -> bool {
    s.nrows() == s.ncols() && is_symmetric(s) && symmetrize(s).cholesky().is_some()
}

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix with sign fix).
pub fn random_orthogonal<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Matrix<f64> {
    let g = Matrix::<f64>::from_fn(dim, dim, |_, _| rng.sample(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Random skew-symmetric matrix scaled to the given Frobenius norm.
pub fn random_skew<R: Rng + ?Sized>(dim: usize, norm: f64, rng: &mut R) -> Matrix<f64> {
    let g = Matrix::<f64>::from_fn(dim, dim, |_, _| rng.sample(StandardNormal));
    let n = skew_part(&g);
    let current = n.norm();
    if current == 0.0 {
        n
    } else {
        n * (norm / current)
    }
}

pub fn cast_matrix<T: Real>(m: &Matrix<f64>) -> Matrix<T> {
    m.map(T::of)
}

pub fn cast_vector<T: Real>(v: &Vector<f64>) -> Vector<T> {
    v.map(T::of)
}

pub fn to_f64_matrix<T: Real>(m: &Matrix<T>) -> Matrix<f64> {
    m.map(|x| x.as_f64())
}
