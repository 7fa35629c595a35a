//! Full-matrix and diagonal spectral-factorized curvature learners.
//!
//! The curvature `S` is never stored; the state is an orthogonal basis `B`
//! and a positive eigenvalue vector `d` with `S = B Diag(d) Bᵀ`. Steps are
//! pure functions from one factor to the next.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    self, cayley_exact, cayley_truncated, ensure_finite, skew_part, strict_lower, Matrix, Vector,
};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CayleyMode {
    #[default]
    Exact,
    Truncated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExpMode {
    #[default]
    Exact,
    FirstOrder,
}

/// Step sizes and switches shared by every learner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UpdateConfig {
    /// Mean / parameter step size.
    pub beta1: f64,
    /// Curvature step size.
    pub beta2: f64,
    /// 1 for EMA-style forgetting (RMSprop), 0 for accumulation (AdaGrad).
    pub gamma: f64,
    /// Root exponent of the preconditioner `S^{-1/p}`.
    pub p: f64,
    pub lambda: f64,
    /// Eigenvalue pairs closer than `gap_rel_tol · max(dᵢ, dⱼ)` get no rotation.
    pub gap_rel_tol: f64,
    pub cayley_mode: CayleyMode,
    pub exp_mode: ExpMode,
    pub clip_norm: Option<f64>,
    /// Base rate for the nonconstant rotation step of the truncated Kronecker
    /// update. Falls back to `beta2` when absent.
    pub beta2_bar: Option<f64>,
}

impl Default for UpdateConfig {
    fn default() -> Self {
        Self {
            beta1: 1e-2,
            beta2: 1e-2,
            gamma: 1.0,
            p: 2.0,
            lambda: 0.0,
            gap_rel_tol: 1e-8,
            cayley_mode: CayleyMode::Exact,
            exp_mode: ExpMode::Exact,
            clip_norm: None,
            beta2_bar: None,
        }
    }
}

impl UpdateConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(what.to_string()));
        if !(self.beta1.is_finite() && self.beta1 >= 0.0) {
            return bad("beta1 must be finite and non-negative");
        }
        if !(self.beta2.is_finite() && self.beta2 >= 0.0) {
            return bad("beta2 must be finite and non-negative");
        }
        if self.gamma != 0.0 && self.gamma != 1.0 {
            return bad("gamma must be 0 or 1");
        }
        if !(self.p.is_finite() && self.p > 0.0) {
            return bad("p must be positive");
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad("lambda must be non-negative");
        }
        if !(self.gap_rel_tol.is_finite() && self.gap_rel_tol > 0.0) {
            return bad("gap_rel_tol must be positive");
        }
        if let Some(c) = self.clip_norm {
            if !(c.is_finite() && c > 0.0) {
                return bad("clip_norm must be positive");
            }
        }
        if let Some(b) = self.beta2_bar {
            if !(b.is_finite() && b >= 0.0) {
                return bad("beta2_bar must be non-negative");
            }
        }
        Ok(())
    }

    pub fn rotation_rate(&self) -> f64 {
        self.beta2_bar.unwrap_or(self.beta2)
    }
}

/// `S = B Diag(d) Bᵀ` with orthogonal `B` and strictly positive `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralFactor<T: Real = f64> {
    basis: Matrix<T>,
    eigvals: Vector<T>,
}

/// Orthogonality tolerance accepted by [`SpectralFactor::new`].
pub fn orth_tol<T: Real>(dim: usize) -> T {
    let scaled = T::eps() * T::of(1e3 * dim as f64);
    let floor = T::of(1e-8);
    if scaled > floor {
        scaled
    } else {
        floor
    }
}

impl<T: Real> SpectralFactor<T> {
    pub fn new(basis: Matrix<T>, eigvals: Vector<T>) -> Result<Self> {
        let dim = linalg::ensure_square(&basis, "basis")?;
        if eigvals.len() != dim {
            return Err(Error::ShapeMismatch(format!(
                "basis is {dim}x{dim} but {} eigenvalues were given",
                eigvals.len()
            )));
        }
        ensure_finite(&basis, "basis")?;
        if eigvals.iter().any(|&v| !(v.is_finite() && v > T::zero())) {
            return Err(Error::InvalidArgument(
                "eigenvalues must be finite and strictly positive".into(),
            ));
        }
        let defect = linalg::orthogonality_defect(&basis);
        if defect > orth_tol::<T>(dim) {
            return Err(Error::InvalidArgument(format!(
                "basis is not orthogonal (defect {defect})"
            )));
        }
        Ok(Self { basis, eigvals })
    }

    pub(crate) fn from_parts(basis: Matrix<T>, eigvals: Vector<T>) -> Self {
        debug_assert_eq!(basis.nrows(), eigvals.len());
        Self { basis, eigvals }
    }

    pub fn identity(dim: usize) -> Self {
        assert!(dim >= 1, "factor dimension must be positive");
        Self {
            basis: Matrix::identity(dim, dim),
            eigvals: Vector::from_element(dim, T::one()),
        }
    }

    /// Factor of a dense SPD matrix (uses an eigendecomposition; not for the update loop).
    pub fn from_spd(s: &Matrix<T>) -> Result<Self> {
        let (basis, eigvals) = linalg::sym_eigendecompose(s)?;
        if eigvals.iter().any(|&v| v <= T::zero()) {
            return Err(Error::Domain("matrix is not positive definite".into()));
        }
        Ok(Self { basis, eigvals })
    }

    pub fn dim(&self) -> usize {
        self.eigvals.len()
    }

    pub fn basis(&self) -> &Matrix<T> {
        &self.basis
    }

    pub fn eigvals(&self) -> &Vector<T> {
        &self.eigvals
    }

    pub fn into_parts(self) -> (Matrix<T>, Vector<T>) {
        (self.basis, self.eigvals)
    }

    pub fn orthogonality_defect(&self) -> T {
        linalg::orthogonality_defect(&self.basis)
    }

    /// One Newton–Schulz sweep on the basis. Never applied automatically.
    pub fn repair_orthogonality(&self) -> Self {
        Self {
            basis: linalg::reorthonormalize(&self.basis),
            eigvals: self.eigvals.clone(),
        }
    }

    pub fn reconstruct(&self) -> Matrix<T> {
        linalg::from_spectrum(&self.basis, &self.eigvals)
    }

    /// `B Diag(d^e) Bᵀ` for an arbitrary real exponent `e`.
    pub fn power(&self, exponent: T) -> Matrix<T> {
        linalg::from_spectrum(&self.basis, &self.eigvals.map(|v| v.powf(exponent)))
    }

    pub fn inverse_root(&self, p: T) -> Result<Matrix<T>> {
        check_root(p)?;
        Ok(self.power(-T::one() / p))
    }

    pub fn apply_inverse_root(&self, v: &Vector<T>, p: T) -> Result<Vector<T>> {
        check_root(p)?;
        self.apply_power(v, -T::one() / p)
    }

    /// `B Diag(d^e) Bᵀ v` without forming the matrix.
    pub fn apply_power(&self, v: &Vector<T>, exponent: T) -> Result<Vector<T>> {
        if v.len() != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "vector of length {} against factor of dim {}",
                v.len(),
                self.dim()
            )));
        }
        let mut rotated = self.basis.tr_mul(v);
        for (x, &d) in rotated.iter_mut().zip(self.eigvals.iter()) {
            *x *= d.powf(exponent);
        }
        Ok(&self.basis * rotated)
    }

    pub fn log_det(&self) -> T {
        self.eigvals.iter().fold(T::zero(), |acc, &v| acc + v.ln())
    }

    /// Log density at `w` of the Gaussian with mean `mu` and precision `S`.
    pub fn gaussian_log_density(&self, mu: &Vector<T>, w: &Vector<T>) -> Result<T> {
        if mu.len() != self.dim() || w.len() != self.dim() {
            return Err(Error::ShapeMismatch("mean/point length".into()));
        }
        let r = self.basis.tr_mul(&(w - mu));
        let quad = r
            .iter()
            .zip(self.eigvals.iter())
            .fold(T::zero(), |acc, (&x, &d)| acc + d * x * x);
        let two_pi = T::two_pi();
        Ok((self.log_det() - quad - T::of(self.dim() as f64) * two_pi.ln()) * T::of(0.5))
    }

    pub fn cast<U: Real>(&self) -> SpectralFactor<U> {
        SpectralFactor {
            basis: self.basis.map(|x| U::of(x.as_f64())),
            eigvals: self.eigvals.map(|x| U::of(x.as_f64())),
        }
    }

    pub fn to_checkpoint(&self) -> FactorCheckpoint {
        let dim = self.dim();
        let mut basis = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                basis.push(self.basis[(i, j)].as_f64());
            }
        }
        FactorCheckpoint {
            dim,
            basis,
            eigvals: self.eigvals.iter().map(|x| x.as_f64()).collect(),
        }
    }

    pub fn from_checkpoint(doc: &FactorCheckpoint) -> Result<Self> {
        if doc.basis.len() != doc.dim * doc.dim || doc.eigvals.len() != doc.dim || doc.dim == 0 {
            return Err(Error::ShapeMismatch("checkpoint sizes disagree with dim".into()));
        }
        let basis = Matrix::from_row_iterator(doc.dim, doc.dim, doc.basis.iter().map(|&x| T::of(x)));
        let eigvals = Vector::from_iterator(doc.dim, doc.eigvals.iter().map(|&x| T::of(x)));
        Self::new(basis, eigvals)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_checkpoint())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: FactorCheckpoint = serde_json::from_str(s)?;
        Self::from_checkpoint(&doc)
    }
}

/// Serialized form of a [`SpectralFactor`]; the basis is stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorCheckpoint {
    pub dim: usize,
    pub basis: Vec<f64>,
    pub eigvals: Vec<f64>,
}

fn check_root<T: Real>(p: T) -> Result<()> {
    if p.is_finite() && p > T::zero() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("root exponent must be positive, got {p}")))
    }
}

pub fn identity_factor<T: Real>(n: usize) -> SpectralFactor<T> {
    SpectralFactor::identity(n)
}

pub fn reconstruct<T: Real>(f: &SpectralFactor<T>) -> Matrix<T> {
    f.reconstruct()
}

pub fn apply_inverse_root<T: Real>(f: &SpectralFactor<T>, v: &Vector<T>, p: T) -> Result<Vector<T>> {
    f.apply_inverse_root(v, p)
}

pub fn log_det<T: Real>(f: &SpectralFactor<T>) -> T {
    f.log_det()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualSource {
    Gop,
    SpdOpt,
    Reinforce,
}

/// The rotated residual `Bᵀ C B` with `C = 2∂_{S⁻¹}L`.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvatureResidual<T: Real = f64> {
    rotated: Matrix<T>,
    source: ResidualSource,
}

impl<T: Real> CurvatureResidual<T> {
    pub fn new(rotated: Matrix<T>, source: ResidualSource) -> Result<Self> {
        linalg::ensure_square(&rotated, "residual")?;
        ensure_finite(&rotated, "residual")?;
        let tol = {
            let floor = T::of(1e-10);
            let scaled = T::eps() * T::of(100.0);
            if scaled > floor {
                scaled
            } else {
                floor
            }
        };
        let defect = (&rotated - rotated.transpose()).norm();
        if defect > tol * (T::one() + rotated.norm()) {
            return Err(Error::InvalidArgument("residual is not symmetric".into()));
        }
        Ok(Self {
            rotated: linalg::symmetrize(&rotated),
            source,
        })
    }

    /// Rotate a dense residual `C` into the basis of `f`.
    pub fn from_dense(f: &SpectralFactor<T>, c: &Matrix<T>, source: ResidualSource) -> Result<Self> {
        if c.nrows() != f.dim() || c.ncols() != f.dim() {
            return Err(Error::ShapeMismatch("residual/factor dims".into()));
        }
        Self::new(f.basis().transpose() * c * f.basis(), source)
    }

    pub(crate) fn trusted(rotated: Matrix<T>, source: ResidualSource) -> Self {
        Self { rotated, source }
    }

    pub fn rotated(&self) -> &Matrix<T> {
        &self.rotated
    }

    pub fn source(&self) -> ResidualSource {
        self.source
    }

    pub fn dim(&self) -> usize {
        self.rotated.nrows()
    }
}

/// `U_ij = -Cr_ij / (d_i - d_j)`, zero where the eigenvalue gap is below
/// `gap_rel_tol · max(d_i, d_j)` and on the diagonal.
pub fn rotation_generator<T: Real>(
    f: &SpectralFactor<T>,
    cr: &CurvatureResidual<T>,
    gap_rel_tol: f64,
) -> Matrix<T> {
    generator_from(f.eigvals(), cr.rotated(), T::of(gap_rel_tol))
}

pub(crate) fn generator_from<T: Real>(d: &Vector<T>, rotated: &Matrix<T>, tol: T) -> Matrix<T> {
    let n = d.len();
    Matrix::from_fn(n, n, |i, j| {
        if i == j {
            return T::zero();
        }
        let gap = d[i] - d[j];
        let scale = if d[i] > d[j] { d[i] } else { d[j] };
        if gap.abs() <= tol * scale {
            T::zero()
        } else {
            -rotated[(i, j)] / gap
        }
    })
}

/// Which triangular restriction feeds the rotation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Restriction {
    /// Strictly lower triangle — the full-matrix scheme.
    #[default]
    Tril,
    /// Diagonal only — the skew part vanishes, so the basis is frozen.
    Diag,
}

pub(crate) fn apply_cayley<T: Real>(arg: &Matrix<T>, mode: CayleyMode) -> Result<Matrix<T>> {
    match mode {
        CayleyMode::Exact => cayley_exact(arg),
        CayleyMode::Truncated => cayley_truncated(arg),
    }
}

fn check_dims<T: Real>(f: &SpectralFactor<T>, cr: &CurvatureResidual<T>) -> Result<()> {
    if f.dim() != cr.dim() {
        return Err(Error::InvalidArgument(format!(
            "residual of dim {} against factor of dim {}",
            cr.dim(),
            f.dim()
        )));
    }
    Ok(())
}

fn ensure_positive<T: Real>(d: &Vector<T>) -> Result<()> {
    match d.iter().find(|v| !(v.is_finite() && **v > T::zero())) {
        // Only +inf passes `> 0` without being finite.
        Some(v) if *v > T::zero() => Err(Error::Numerical("eigenvalue update overflowed; reduce beta2".into())),
        Some(v) => Err(Error::Positivity(format!("eigenvalue update produced {v}"))),
        None => Ok(()),
    }
}

/// Rotate the basis by `Cayley((β₂/2)·Skew(R(U)))`.
fn rotate_basis<T: Real>(
    f: &SpectralFactor<T>,
    rotated: &Matrix<T>,
    beta2: T,
    cfg: &UpdateConfig,
    restriction: Restriction,
) -> Result<Matrix<T>> {
    let u = generator_from(f.eigvals(), rotated, T::of(cfg.gap_rel_tol));
    let restricted = match restriction {
        Restriction::Tril => strict_lower(&u),
        Restriction::Diag => linalg::diagonal_part(&u),
    };
    let arg = skew_part(&restricted) * (beta2 * T::of(0.5));
    if arg.iter().all(|x| *x == T::zero()) {
        return Ok(f.basis().clone());
    }
    Ok(f.basis() * apply_cayley(&arg, cfg.cayley_mode)?)
}

/// Exact-exponential RGD step in local coordinates.
///
/// `d′ = d ⊙ exp(β₂ d⁻¹ ⊙ diag(Cr))`, `B′ = B·Cayley((β₂/2)·Skew(Tril(U)))`.
/// Both updates read the pre-step state.
pub fn rgd_step_exact<T: Real>(
    f: &SpectralFactor<T>,
    cr: &CurvatureResidual<T>,
    cfg: &UpdateConfig,
) -> Result<SpectralFactor<T>> {
    rgd_step_restricted(f, cr, cfg, Restriction::Tril)
}

pub fn rgd_step_restricted<T: Real>(
    f: &SpectralFactor<T>,
    cr: &CurvatureResidual<T>,
    cfg: &UpdateConfig,
    restriction: Restriction,
) -> Result<SpectralFactor<T>> {
    check_dims(f, cr)?;
    let beta2 = T::of(cfg.beta2);
    let d = f.eigvals();
    let rotated = cr.rotated();
    let eigvals = Vector::from_fn(d.len(), |i, _| {
        d[i] * (beta2 * rotated[(i, i)] / d[i]).exp()
    });
    ensure_positive(&eigvals)?;
    let basis = rotate_basis(f, rotated, beta2, cfg, restriction)?;
    Ok(SpectralFactor::from_parts(basis, eigvals))
}

/// GOP step with the exponential truncated to first order:
/// `d′ = (1−γβ₂)d + β₂(diag(BᵀggᵀB) + λ)`.
pub fn rgd_step_gop_truncated<T: Real>(
    f: &SpectralFactor<T>,
    g: &Vector<T>,
    cfg: &UpdateConfig,
) -> Result<SpectralFactor<T>> {
    if g.len() != f.dim() {
        return Err(Error::InvalidArgument("gradient/factor dims".into()));
    }
    if cfg.gamma * cfg.beta2 >= 1.0 {
        return Err(Error::Precondition(format!(
            "gamma*beta2 = {} must be below 1",
            cfg.gamma * cfg.beta2
        )));
    }
    let beta2 = T::of(cfg.beta2);
    let keep = T::one() - T::of(cfg.gamma) * beta2;
    let lambda = T::of(cfg.lambda);
    let gb = f.basis().tr_mul(g);
    let d = f.eigvals();
    let eigvals = Vector::from_fn(d.len(), |i, _| keep * d[i] + beta2 * (gb[i] * gb[i] + lambda));
    ensure_positive(&eigvals)?;
    let outer = &gb * gb.transpose();
    let basis = rotate_basis(f, &outer, beta2, cfg, Restriction::Tril)?;
    Ok(SpectralFactor::from_parts(basis, eigvals))
}

/// Diagonal scheme: RMSprop (γ=1) or AdaGrad (γ=0) second-moment update.
pub fn diagonal_step<T: Real>(d: &Vector<T>, g: &Vector<T>, cfg: &UpdateConfig) -> Result<Vector<T>> {
    if d.len() != g.len() {
        return Err(Error::ShapeMismatch("diagonal state/gradient lengths".into()));
    }
    let beta2 = T::of(cfg.beta2);
    let gamma = T::of(cfg.gamma);
    let lambda = T::of(cfg.lambda);
    Ok(match cfg.exp_mode {
        ExpMode::FirstOrder => {
            let keep = T::one() - beta2 * gamma;
            Vector::from_fn(d.len(), |i, _| keep * d[i] + beta2 * (g[i] * g[i] + lambda))
        }
        ExpMode::Exact => Vector::from_fn(d.len(), |i, _| {
            let drive = -gamma * d[i] + g[i] * g[i] + lambda;
            d[i] * (beta2 * drive / d[i]).exp()
        }),
    })
}

/// Draw `w_i = μ + B Diag(d^{-1/2}) z_i` with a ChaCha20 stream seeded by `seed`.
pub fn sample_gaussian<T: Real>(
    f: &SpectralFactor<T>,
    mu: &Vector<T>,
    count: usize,
    seed: u64,
) -> Result<Vec<Vector<T>>> {
    if mu.len() != f.dim() {
        return Err(Error::ShapeMismatch("mean/factor dims".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let scale = f.eigvals().map(|v| T::one() / v.sqrt());
    Ok((0..count)
        .map(|_| {
            let z = Vector::from_fn(f.dim(), |i, _| {
                T::of(rng.sample::<f64, _>(StandardNormal)) * scale[i]
            });
            mu + f.basis() * z
        })
        .collect())
}

/// Coordinates `(m, M, δ)` of a neighbourhood of `(μ, S)`.
///
/// `d = d_k ⊙ exp(m)`, `B = B_k·Cayley(Skew(Tril(M)))`,
/// `μ = μ_k + B_k Diag(d_k^{-1/2}) δ`. The origin maps to the current state.
pub fn local_chart<T: Real>(
    f: &SpectralFactor<T>,
    mu: &Vector<T>,
    m: &Vector<T>,
    big_m: &Matrix<T>,
    delta: &Vector<T>,
) -> Result<(SpectralFactor<T>, Vector<T>)> {
    let n = f.dim();
    if m.len() != n || delta.len() != n || mu.len() != n || big_m.nrows() != n || big_m.ncols() != n {
        return Err(Error::ShapeMismatch("local coordinate dims".into()));
    }
    let d = f.eigvals();
    let eigvals = Vector::from_fn(n, |i, _| d[i] * m[i].exp());
    let basis = f.basis() * cayley_exact(&skew_part(&strict_lower(big_m)))?;
    let shift = Vector::from_fn(n, |i, _| delta[i] / d[i].sqrt());
    let mean = mu + f.basis() * shift;
    Ok((SpectralFactor::from_parts(basis, eigvals), mean))
}

/// Full-matrix optimizer driven by GOP curvature.
#[derive(Clone, Debug)]
pub struct SpectralOptimizer<T: Real = f64> {
    pub factor: SpectralFactor<T>,
    pub cfg: UpdateConfig,
}

impl<T: Real> SpectralOptimizer<T> {
    pub fn new(dim: usize, cfg: UpdateConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            factor: SpectralFactor::identity(dim),
            cfg,
        })
    }

    /// Update the curvature with `g`, then return the step `-β₁ S^{-1/p} g`.
    pub fn step(&mut self, g: &Vector<T>) -> Result<Vector<T>> {
        self.factor = match self.cfg.exp_mode {
            ExpMode::Exact => {
                let cr = crate::sources::gop_residual(&self.factor, g, self.cfg.gamma)?;
                let mut cfg = self.cfg.clone();
                cfg.lambda = 0.0;
                let damped = if self.cfg.lambda > 0.0 {
                    let lam = T::of(self.cfg.lambda);
                    let r = cr.rotated() + DMatrix::identity(g.len(), g.len()) * lam;
                    CurvatureResidual::trusted(r, ResidualSource::Gop)
                } else {
                    cr
                };
                rgd_step_exact(&self.factor, &damped, &cfg)?
            }
            ExpMode::FirstOrder => rgd_step_gop_truncated(&self.factor, g, &self.cfg)?,
        };
        let mut dir = self.factor.apply_inverse_root(g, T::of(self.cfg.p))?;
        if let Some(c) = self.cfg.clip_norm {
            let norm = dir.norm();
            let c = T::of(c);
            if norm > c {
                dir *= c / norm;
            }
        }
        Ok(dir * -T::of(self.cfg.beta1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::random_orthogonal;

    fn v(xs: &[f64]) -> Vector<f64> {
        Vector::from_row_slice(xs)
    }

    fn random_factor(dim: usize, seed: u64) -> SpectralFactor<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let b = random_orthogonal(dim, &mut rng);
        let d = Vector::from_fn(dim, |i, _| 0.5 + i as f64 * 0.7);
        SpectralFactor::new(b, d).unwrap()
    }

    #[test]
    fn identity_factor_examples() {
        let f = identity_factor::<f64>(1);
        assert_eq!(f.basis(), &Matrix::identity(1, 1));
        assert_eq!(f.eigvals(), &v(&[1.0]));
        assert_eq!(identity_factor::<f64>(3).reconstruct(), Matrix::identity(3, 3));
        assert_eq!(identity_factor::<f64>(5).log_det(), 0.0);
    }

    #[test]
    fn constructor_rejects_bad_parts() {
        let eye = Matrix::<f64>::identity(2, 2);
        assert!(SpectralFactor::new(eye.clone(), v(&[1.0, 0.0])).is_err());
        assert!(SpectralFactor::new(eye.clone(), v(&[1.0])).is_err());
        assert!(SpectralFactor::new(eye * 2.0, v(&[1.0, 1.0])).is_err());
    }

    #[test]
    fn reconstruct_rotation_example() {
        let b = Matrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let f = SpectralFactor::new(b, v(&[2.0, 3.0])).unwrap();
        let s = f.reconstruct();
        assert!((s - Matrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 2.0])).amax() < 1e-15);
    }

    #[test]
    fn reconstruct_matches_eigen_oracle() {
        let f = random_factor(6, 3);
        let (_, d) = linalg::sym_eigendecompose(&f.reconstruct()).unwrap();
        assert!((d - f.eigvals()).amax() < 1e-12);
    }

    #[test]
    fn inverse_root_examples() {
        let f = identity_factor::<f64>(3);
        let x = v(&[1.0, -2.0, 3.0]);
        assert_eq!(f.apply_inverse_root(&x, 3.0).unwrap(), x);
        let f = SpectralFactor::new(Matrix::identity(2, 2), v(&[4.0, 4.0])).unwrap();
        assert_eq!(f.apply_inverse_root(&v(&[1.0, 1.0]), 2.0).unwrap(), v(&[0.5, 0.5]));
        assert!(f.apply_inverse_root(&v(&[1.0, 1.0]), 0.0).is_err());
        let f = random_factor(7, 9);
        let x = Vector::from_fn(7, |i, _| (i as f64).sin());
        let got = f.apply_inverse_root(&x, 1.0).unwrap();
        let want = f.reconstruct().lu().solve(&x).unwrap();
        assert!((&got - &want).norm() / want.norm() < 1e-10);
    }

    #[test]
    fn rotation_generator_examples() {
        let f = SpectralFactor::new(Matrix::identity(3, 3), v(&[2.0, 2.0, 2.0])).unwrap();
        let full = Matrix::from_fn(3, 3, |i, j| (i + j) as f64);
        let cr = CurvatureResidual::new(full, ResidualSource::Gop).unwrap();
        assert_eq!(rotation_generator(&f, &cr, 1e-8), Matrix::zeros(3, 3));

        let f = random_factor(3, 1);
        let diag = Matrix::from_diagonal(&v(&[1.0, 2.0, 3.0]));
        let cr = CurvatureResidual::new(diag, ResidualSource::Gop).unwrap();
        assert_eq!(rotation_generator(&f, &cr, 1e-8), Matrix::zeros(3, 3));

        let f = SpectralFactor::new(Matrix::identity(2, 2), v(&[1.0, 3.0])).unwrap();
        let r = Matrix::from_row_slice(2, 2, &[0.0, 4.0, 4.0, 0.0]);
        let cr = CurvatureResidual::new(r, ResidualSource::Gop).unwrap();
        assert_eq!(rotation_generator(&f, &cr, 1e-8)[(1, 0)], -2.0);
    }

    #[test]
    fn exact_step_zero_residual_is_noop() {
        let f = random_factor(5, 2);
        let cr = CurvatureResidual::new(Matrix::zeros(5, 5), ResidualSource::Gop).unwrap();
        let next = rgd_step_exact(&f, &cr, &UpdateConfig::default()).unwrap();
        assert_eq!(next, f);
    }

    #[test]
    fn exact_step_pure_forgetting() {
        let f = random_factor(4, 5);
        let cfg = UpdateConfig { beta2: 0.1, ..Default::default() };
        let cr = crate::sources::gop_residual(&f, &Vector::zeros(4), 1.0).unwrap();
        let next = rgd_step_exact(&f, &cr, &cfg).unwrap();
        let want = f.eigvals() * (-0.1f64).exp();
        assert!((next.eigvals() - want).amax() < 1e-14);
        assert_eq!(next.basis(), f.basis());
    }

    #[test]
    fn exact_step_rejects_shape_mismatch() {
        let f = random_factor(4, 5);
        let cr = CurvatureResidual::new(Matrix::zeros(3, 3), ResidualSource::Gop).unwrap();
        assert!(matches!(
            rgd_step_exact(&f, &cr, &UpdateConfig::default()),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn diag_restriction_freezes_basis() {
        let f = random_factor(5, 8);
        let g = Vector::from_fn(5, |i, _| 1.0 + i as f64);
        let cr = crate::sources::gop_residual(&f, &g, 1.0).unwrap();
        let cfg = UpdateConfig { beta2: 0.05, ..Default::default() };
        let next = rgd_step_restricted(&f, &cr, &cfg, Restriction::Diag).unwrap();
        assert_eq!(next.basis(), f.basis());
        let full = rgd_step_exact(&f, &cr, &cfg).unwrap();
        assert_eq!(next.eigvals(), full.eigvals());
    }

    #[test]
    fn truncated_gop_examples() {
        let f = random_factor(3, 4);
        let cfg = UpdateConfig { gamma: 0.0, lambda: 0.0, exp_mode: ExpMode::FirstOrder, ..Default::default() };
        assert_eq!(rgd_step_gop_truncated(&f, &Vector::zeros(3), &cfg).unwrap(), f);

        let f = identity_factor::<f64>(2);
        let cfg = UpdateConfig { gamma: 1.0, beta2: 0.1, exp_mode: ExpMode::FirstOrder, ..Default::default() };
        let next = rgd_step_gop_truncated(&f, &v(&[1.0, 0.0]), &cfg).unwrap();
        assert!((next.eigvals() - v(&[1.0, 0.9])).amax() < 1e-15);

        let cfg = UpdateConfig { gamma: 1.0, beta2: 1.0, ..Default::default() };
        assert!(matches!(
            rgd_step_gop_truncated(&f, &v(&[1.0, 0.0]), &cfg),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn diagonal_step_noop() {
        let d = v(&[0.3, 2.0]);
        for exp_mode in [ExpMode::Exact, ExpMode::FirstOrder] {
            let cfg = UpdateConfig { gamma: 0.0, exp_mode, ..Default::default() };
            assert_eq!(diagonal_step(&d, &Vector::zeros(2), &cfg).unwrap(), d);
        }
    }

    #[test]
    fn sampling_collapses_for_huge_precision() {
        let f = SpectralFactor::new(Matrix::identity(3, 3), Vector::from_element(3, 1e12)).unwrap();
        let mu = v(&[1.0, 2.0, 3.0]);
        for w in sample_gaussian(&f, &mu, 100, 1).unwrap() {
            assert!((w - &mu).amax() <= 1e-5);
        }
    }

    #[test]
    fn sampling_covariance_and_determinism() {
        let f = identity_factor::<f64>(3);
        let mu = Vector::zeros(3);
        let samples = sample_gaussian(&f, &mu, 100_000, 42).unwrap();
        let mut cov = Matrix::<f64>::zeros(3, 3);
        for w in &samples {
            cov += w * w.transpose();
        }
        cov /= samples.len() as f64;
        let eye = Matrix::identity(3, 3);
        assert!((cov - &eye).norm() / eye.norm() < 0.05);
        assert_eq!(samples[..10], sample_gaussian(&f, &mu, 10, 42).unwrap()[..]);
    }

    #[test]
    fn log_det_examples() {
        let e = std::f64::consts::E;
        let f = SpectralFactor::new(Matrix::identity(2, 2), v(&[e, e * e])).unwrap();
        assert!((f.log_det() - 3.0).abs() < 1e-15);
        let f = random_factor(5, 6);
        let (_, d) = linalg::sym_eigendecompose(&f.reconstruct()).unwrap();
        let oracle: f64 = d.iter().map(|x| x.ln()).sum();
        assert!((f.log_det() - oracle).abs() < 1e-10);
    }

    #[test]
    fn checkpoint_round_trip() {
        let f = random_factor(4, 12);
        let back = SpectralFactor::<f64>::from_json(&f.to_json().unwrap()).unwrap();
        assert!((back.basis() - f.basis()).amax() <= 1e-15);
        assert!((back.eigvals() - f.eigvals()).amax() <= 1e-15);
    }

    #[test]
    fn local_chart_origin_is_current_state() {
        let f = random_factor(3, 2);
        let mu = v(&[0.1, 0.2, 0.3]);
        let (g, m) = local_chart(&f, &mu, &Vector::zeros(3), &Matrix::zeros(3, 3), &Vector::zeros(3)).unwrap();
        assert_eq!(g, f);
        assert_eq!(m, mu);
    }

    #[test]
    fn config_json_defaults() {
        let cfg: UpdateConfig = serde_json::from_str(r#"{"beta2": 0.5, "cayley_mode": "truncated"}"#).unwrap();
        assert_eq!(cfg.beta2, 0.5);
        assert_eq!(cfg.cayley_mode, CayleyMode::Truncated);
        assert_eq!(cfg.gap_rel_tol, 1e-8);
        assert!(UpdateConfig { gamma: 0.5, ..Default::default() }.validate().is_err());
    }
}
