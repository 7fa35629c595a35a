//! Kronecker-factored spectral curvature for matrix-shaped parameters.
//!
//! `S = α (S_C ⊗ S_K)` where `S_C` (n×n) acts on the rows of an n×m
//! parameter and `S_K` (m×m) on its columns, both with unit determinant.
//! With row-major vectorization, `(A ⊗ B) vec(X) = vec(A X Bᵀ)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{skew_part, strict_lower, Matrix, Vector};
use crate::scalar::Real;
use crate::spectral::{apply_cayley, generator_from, CayleyMode, FactorCheckpoint, SpectralFactor, UpdateConfig};

/// Largest Frobenius norm handed to the truncated Cayley map.
pub const TRUNCATED_ARG_CAP: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct KronSpectralFactor<T: Real = f64> {
    alpha: T,
    factor_c: SpectralFactor<T>,
    factor_k: SpectralFactor<T>,
}

fn mean<T: Real>(v: &Vector<T>) -> T {
    v.sum() / T::of(v.len() as f64)
}

fn mean_log<T: Real>(v: &Vector<T>) -> T {
    v.iter().fold(T::zero(), |acc, &x| acc + x.ln()) / T::of(v.len() as f64)
}

/// Rescale eigenvalues to unit geometric mean, moving the scale into `alpha`.
pub fn normalize_kron<T: Real>(alpha_raw: T, dc: &Vector<T>, dk: &Vector<T>) -> Result<(T, Vector<T>, Vector<T>)> {
    let positive = |v: &Vector<T>| v.iter().all(|&x| x.is_finite() && x > T::zero());
    if !(alpha_raw.is_finite() && alpha_raw > T::zero()) || !positive(dc) || !positive(dk) || dc.is_empty() || dk.is_empty() {
        return Err(Error::InvalidArgument(
            "scale and eigenvalues must be finite and positive".into(),
        ));
    }
    let lc = mean_log(dc);
    let lk = mean_log(dk);
    let alpha = alpha_raw * (lc + lk).exp();
    Ok((alpha, dc.map(|x| (x.ln() - lc).exp()), dk.map(|x| (x.ln() - lk).exp())))
}

impl<T: Real> KronSpectralFactor<T> {
    /// Build from normalized parts; rejects factors whose log-determinant is not ~0.
    pub fn new(alpha: T, factor_c: SpectralFactor<T>, factor_k: SpectralFactor<T>) -> Result<Self> {
        if !(alpha.is_finite() && alpha > T::zero()) {
            return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
        }
        let tol = {
            let floor = T::of(1e-10);
            let scaled = T::eps() * T::of(100.0);
            if scaled > floor {
                scaled
            } else {
                floor
            }
        };
        for (name, f) in [("C", &factor_c), ("K", &factor_k)] {
            let ld = f.log_det();
            if ld.abs() > tol * T::of(f.dim() as f64) {
                return Err(Error::InvalidArgument(format!(
                    "factor {name} does not have unit determinant (log det {ld})"
                )));
            }
        }
        Ok(Self { alpha, factor_c, factor_k })
    }

    /// Build from arbitrary positive factors, normalizing the determinants into `alpha`.
    pub fn from_unnormalized(alpha: T, factor_c: SpectralFactor<T>, factor_k: SpectralFactor<T>) -> Result<Self> {
        let (alpha, dc, dk) = normalize_kron(alpha, factor_c.eigvals(), factor_k.eigvals())?;
        let (bc, _) = factor_c.into_parts();
        let (bk, _) = factor_k.into_parts();
        Ok(Self {
            alpha,
            factor_c: SpectralFactor::from_parts(bc, dc),
            factor_k: SpectralFactor::from_parts(bk, dk),
        })
    }

    pub fn identity(n: usize, m: usize) -> Self {
        Self {
            alpha: T::one(),
            factor_c: SpectralFactor::identity(n),
            factor_k: SpectralFactor::identity(m),
        }
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    pub fn factor_c(&self) -> &SpectralFactor<T> {
        &self.factor_c
    }

    pub fn factor_k(&self) -> &SpectralFactor<T> {
        &self.factor_k
    }

    /// `(n, m)`: row and column dimensions of the parameter.
    pub fn shape(&self) -> (usize, usize) {
        (self.factor_c.dim(), self.factor_k.dim())
    }

    /// `α (S_C ⊗ S_K)`, materialized. Only for validation at small sizes.
    pub fn reconstruct(&self) -> Matrix<T> {
        self.factor_c.reconstruct().kronecker(&self.factor_k.reconstruct()) * self.alpha
    }

    /// `(Σ log d_C, Σ log d_K)`; both stay at zero up to roundoff.
    pub fn log_dets(&self) -> (T, T) {
        (self.factor_c.log_det(), self.factor_k.log_det())
    }

    pub fn to_checkpoint(&self) -> KronCheckpoint {
        KronCheckpoint {
            alpha: self.alpha.as_f64(),
            factor_c: self.factor_c.to_checkpoint(),
            factor_k: self.factor_k.to_checkpoint(),
        }
    }

    pub fn from_checkpoint(doc: &KronCheckpoint) -> Result<Self> {
        Self::new(
            T::of(doc.alpha),
            SpectralFactor::from_checkpoint(&doc.factor_c)?,
            SpectralFactor::from_checkpoint(&doc.factor_k)?,
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_checkpoint())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_checkpoint(&serde_json::from_str(s)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KronCheckpoint {
    pub alpha: f64,
    #[serde(rename = "factor_C")]
    pub factor_c: FactorCheckpoint,
    #[serde(rename = "factor_K")]
    pub factor_k: FactorCheckpoint,
}

/// Rotated curvature statistics of one gradient.
struct Rotated<T: Real> {
    /// `W_C = Gt D_K⁻¹ Gtᵀ` (n×n), with `Gt = B_Cᵀ G B_K`.
    w_c: Matrix<T>,
    /// `W_K = Gtᵀ D_C⁻¹ Gt` (m×m).
    w_k: Matrix<T>,
}

fn check_gradient<T: Real>(kf: &KronSpectralFactor<T>, g: &Matrix<T>) -> Result<()> {
    let (n, m) = kf.shape();
    if g.nrows() != n || g.ncols() != m {
        return Err(Error::InvalidArgument(format!(
            "gradient is {}x{}, factor expects {n}x{m}",
            g.nrows(),
            g.ncols()
        )));
    }
    if g.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("gradient has non-finite entries".into()));
    }
    Ok(())
}

fn rotate<T: Real>(kf: &KronSpectralFactor<T>, g: &Matrix<T>) -> Rotated<T> {
    let gt = kf.factor_c.basis().transpose() * g * kf.factor_k.basis();
    let dc = kf.factor_c.eigvals();
    let dk = kf.factor_k.eigvals();
    let mut scaled_k = gt.clone();
    for (j, mut col) in scaled_k.column_iter_mut().enumerate() {
        col /= dk[j];
    }
    let mut scaled_c = gt.clone();
    for (i, mut row) in scaled_c.row_iter_mut().enumerate() {
        row /= dc[i];
    }
    Rotated {
        w_c: &scaled_k * gt.transpose(),
        w_k: gt.transpose() * &scaled_c,
    }
}

/// The three scalars of the trace identity: the per-factor averages
/// `mean(d⁻¹ ⊙ diag W) / (α k)` for C and K, and `Tr(S_C⁻¹ G S_K⁻¹ Gᵀ) / (nmα)`
/// evaluated in factored form.
pub fn trace_identity_terms<T: Real>(kf: &KronSpectralFactor<T>, g: &Matrix<T>) -> Result<(T, T, T)> {
    check_gradient(kf, g)?;
    let (n, m) = kf.shape();
    let r = rotate(kf, g);
    let alpha = kf.alpha;
    let term = |w: &Matrix<T>, d: &Vector<T>, k: usize| {
        let s = (0..d.len()).fold(T::zero(), |acc, i| acc + w[(i, i)] / d[i]);
        s / T::of(d.len() as f64) / (alpha * T::of(k as f64))
    };
    let lhs_c = term(&r.w_c, kf.factor_c.eigvals(), m);
    let lhs_k = term(&r.w_k, kf.factor_k.eigvals(), n);
    let sc_inv = kf.factor_c.power(-T::one());
    let sk_inv = kf.factor_k.power(-T::one());
    let rhs = (sc_inv * g * sk_inv * g.transpose()).trace() / (T::of((n * m) as f64) * alpha);
    Ok((lhs_c, lhs_k, rhs))
}

fn rotation_arg<T: Real>(d: &Vector<T>, w: &Matrix<T>, gap_rel_tol: f64) -> Matrix<T> {
    let u = generator_from(d, w, T::of(gap_rel_tol));
    skew_part(&strict_lower(&u))
}

/// Rotate `basis` by `Cayley(scale · N)`; `N = 0` leaves it untouched.
fn rotate_basis<T: Real>(basis: &Matrix<T>, n: &Matrix<T>, scale: T, mode: CayleyMode) -> Result<Matrix<T>> {
    if n.iter().all(|x| *x == T::zero()) || scale == T::zero() {
        return Ok(basis.clone());
    }
    Ok(basis * apply_cayley(&(n * scale), mode)?)
}

fn recentre<T: Real>(log_d: Vector<T>) -> (T, Vector<T>) {
    let c = mean(&log_d);
    (c, log_d.map(|x| (x - c).exp()))
}

/// Exact-exponential Kronecker step with mean-centring in the linear `m` space.
pub fn kron_rgd_step_exact<T: Real>(
    kf: &KronSpectralFactor<T>,
    g: &Matrix<T>,
    cfg: &UpdateConfig,
) -> Result<KronSpectralFactor<T>> {
    check_gradient(kf, g)?;
    let (n, m) = kf.shape();
    let r = rotate(kf, g);
    let beta2 = T::of(cfg.beta2);
    let gamma = T::of(cfg.gamma);
    let alpha = kf.alpha;
    let drive = |w: &Matrix<T>, d: &Vector<T>, k: usize| {
        let ak = alpha * T::of(k as f64);
        Vector::from_fn(d.len(), |i, _| -gamma + w[(i, i)] / (ak * d[i]))
    };
    let dc = kf.factor_c.eigvals();
    let dk = kf.factor_k.eigvals();
    let mc = drive(&r.w_c, dc, m);
    let mk = drive(&r.w_k, dk, n);
    let (mean_c, mean_k) = (mean(&mc), mean(&mk));

    let log_c = Vector::from_fn(n, |i, _| dc[i].ln() + beta2 * (mc[i] - mean_c));
    let log_k = Vector::from_fn(m, |i, _| dk[i].ln() + beta2 * (mk[i] - mean_k));
    // Re-centring absorbs any roundoff drift of the log-determinants into α.
    let (drift_c, new_dc) = recentre(log_c);
    let (drift_k, new_dk) = recentre(log_k);
    let half = T::of(0.5);
    let new_alpha = alpha * (beta2 * half * (mean_c + mean_k) + drift_c + drift_k).exp();

    let nc = rotation_arg(dc, &r.w_c, cfg.gap_rel_tol);
    let nk = rotation_arg(dk, &r.w_k, cfg.gap_rel_tol);
    let bc = rotate_basis(kf.factor_c.basis(), &nc, beta2 * half / (alpha * T::of(m as f64)), cfg.cayley_mode)?;
    let bk = rotate_basis(kf.factor_k.basis(), &nk, beta2 * half / (alpha * T::of(n as f64)), cfg.cayley_mode)?;
    finish(new_alpha, bc, new_dc, bk, new_dk)
}

fn finish<T: Real>(
    alpha: T,
    bc: Matrix<T>,
    dc: Vector<T>,
    bk: Matrix<T>,
    dk: Vector<T>,
) -> Result<KronSpectralFactor<T>> {
    let ok = |v: &Vector<T>| v.iter().all(|x| x.is_finite() && *x > T::zero());
    if !(alpha.is_finite() && alpha > T::zero()) || !ok(&dc) || !ok(&dk) {
        return Err(Error::Positivity("Kronecker step left the positive cone".into()));
    }
    if bc.iter().chain(bk.iter()).any(|x| !x.is_finite()) {
        return Err(Error::Numerical("Kronecker basis update produced non-finite entries".into()));
    }
    Ok(KronSpectralFactor {
        alpha,
        factor_c: SpectralFactor::from_parts(bc, dc),
        factor_k: SpectralFactor::from_parts(bk, dk),
    })
}

/// Adaptive damping `Λ_l = λ k_l mean(1/d_C) mean(1/d_K) / mean(1/d_l)` for both factors.
pub fn adaptive_damping<T: Real>(kf: &KronSpectralFactor<T>, lambda: T) -> (T, T) {
    let (n, m) = kf.shape();
    let inv_c = mean(&kf.factor_c.eigvals().map(|x| T::one() / x));
    let inv_k = mean(&kf.factor_k.eigvals().map(|x| T::one() / x));
    let both = inv_c * inv_k;
    (lambda * T::of(m as f64) * both / inv_c, lambda * T::of(n as f64) * both / inv_k)
}

/// Unnormalized first-order eigenvalue targets `n_C`, `n_K` of the truncated step.
pub fn truncated_targets<T: Real>(
    kf: &KronSpectralFactor<T>,
    g: &Matrix<T>,
    cfg: &UpdateConfig,
) -> Result<(Vector<T>, Vector<T>)> {
    check_gradient(kf, g)?;
    let r = rotate(kf, g);
    Ok(targets(kf, &r, cfg))
}

fn targets<T: Real>(kf: &KronSpectralFactor<T>, r: &Rotated<T>, cfg: &UpdateConfig) -> (Vector<T>, Vector<T>) {
    let (n, m) = kf.shape();
    let beta2 = T::of(cfg.beta2);
    let keep = T::one() - T::of(cfg.gamma) * beta2;
    let (lam_c, lam_k) = adaptive_damping(kf, T::of(cfg.lambda));
    let alpha = kf.alpha;
    let target = |w: &Matrix<T>, d: &Vector<T>, k: usize, lam: T| {
        let rate = beta2 / (alpha * T::of(k as f64));
        Vector::from_fn(d.len(), |i, _| keep * d[i] + rate * (w[(i, i)] + lam))
    };
    (
        target(&r.w_c, kf.factor_c.eigvals(), m, lam_c),
        target(&r.w_k, kf.factor_k.eigvals(), n, lam_k),
    )
}

/// Cayley arguments `(N_C, N_K)` the truncated Kronecker step would use.
pub fn truncated_rotation_args<T: Real>(
    kf: &KronSpectralFactor<T>,
    g: &Matrix<T>,
    cfg: &UpdateConfig,
) -> Result<(Matrix<T>, Matrix<T>)> {
    check_gradient(kf, g)?;
    Ok(truncated_args(kf, &rotate(kf, g), cfg))
}

fn truncated_args<T: Real>(kf: &KronSpectralFactor<T>, r: &Rotated<T>, cfg: &UpdateConfig) -> (Matrix<T>, Matrix<T>) {
    let (n, m) = kf.shape();
    let half = T::of(0.5);
    let alpha = kf.alpha;
    let nc = rotation_arg(kf.factor_c.eigvals(), &r.w_c, cfg.gap_rel_tol);
    let nk = rotation_arg(kf.factor_k.eigvals(), &r.w_k, cfg.gap_rel_tol);
    let scale = |arg: &Matrix<T>, k: usize| match cfg.cayley_mode {
        CayleyMode::Exact => T::of(cfg.beta2) * half / (alpha * T::of(k as f64)),
        CayleyMode::Truncated => {
            let norm = arg.norm();
            if norm == T::zero() {
                return T::zero();
            }
            // β₂⁽ˡ⁾/(2αk⁽ˡ⁾) with κ⁽ˡ⁾ = k⁽ˡ⁾ reduces to β̄₂ / (2‖N‖).
            let target = T::of((cfg.rotation_rate() * 0.5).min(TRUNCATED_ARG_CAP));
            target / norm
        }
    };
    let sc = scale(&nc, m);
    let sk = scale(&nk, n);
    (nc * sc, nk * sk)
}

/// First-order Kronecker step with log-space renormalization and adaptive damping.
///
/// With truncated Cayley, the rotation uses the nonconstant step
/// `β₂⁽ˡ⁾ = β̄₂ α κ⁽ˡ⁾ / ‖Skew(Tril(U⁽ˡ⁾))‖_F`, which puts the Cayley argument
/// at norm `β̄₂/2`, capped at [`TRUNCATED_ARG_CAP`].
pub fn kron_rgd_step_truncated<T: Real>(
    kf: &KronSpectralFactor<T>,
    g: &Matrix<T>,
    cfg: &UpdateConfig,
) -> Result<KronSpectralFactor<T>> {
    check_gradient(kf, g)?;
    let r = rotate(kf, g);
    let (tc, tk) = targets(kf, &r, cfg);
    if let Some(bad) = tc.iter().chain(tk.iter()).find(|x| !(x.is_finite() && **x > T::zero())) {
        return Err(Error::Positivity(format!(
            "first-order eigenvalue target {bad} is not positive; reduce gamma*beta2 or add damping"
        )));
    }
    let (lc, new_dc) = recentre(tc.map(|x| x.ln()));
    let (lk, new_dk) = recentre(tk.map(|x| x.ln()));
    let half = T::of(0.5);
    let alpha = kf.alpha;
    let new_alpha = alpha * (lc * half + lk * half).exp();

    let (ac, ak) = truncated_args(kf, &r, cfg);
    let bc = rotate_basis(kf.factor_c.basis(), &ac, T::one(), cfg.cayley_mode)?;
    let bk = rotate_basis(kf.factor_k.basis(), &ak, T::one(), cfg.cayley_mode)?;
    finish(new_alpha, bc, new_dc, bk, new_dk)
}

/// `α^{-1/p} S_C^{-1/p} G S_K^{-1/p}` in factored form.
pub fn kron_precondition<T: Real>(kf: &KronSpectralFactor<T>, g: &Matrix<T>, p: T) -> Result<Matrix<T>> {
    if !(p.is_finite() && p > T::zero()) {
        return Err(Error::InvalidArgument(format!("root exponent must be positive, got {p}")));
    }
    check_gradient(kf, g)?;
    let e = -T::one() / p;
    let mut gt = kf.factor_c.basis().transpose() * g * kf.factor_k.basis();
    let dc = kf.factor_c.eigvals().map(|x| x.powf(e));
    let dk = kf.factor_k.eigvals().map(|x| x.powf(e));
    for i in 0..gt.nrows() {
        for j in 0..gt.ncols() {
            gt[(i, j)] *= dc[i] * dk[j];
        }
    }
    Ok(kf.factor_c.basis() * gt * kf.factor_k.basis().transpose() * kf.alpha.powf(e))
}

/// Scale `delta` down so its Frobenius norm does not exceed `clip_norm`.
pub fn clip_preconditioned<T: Real>(delta: &Matrix<T>, clip_norm: T) -> Matrix<T> {
    let norm = delta.norm();
    if norm > clip_norm {
        delta * (clip_norm / norm)
    } else {
        delta.clone()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KronVariant {
    Exact,
    #[default]
    Truncated,
}

/// Per-layer Kronecker optimizer with heavy-ball momentum on the preconditioned
/// direction and decoupled weight decay.
#[derive(Clone, Debug)]
pub struct KronOptimizer<T: Real = f64> {
    pub state: KronSpectralFactor<T>,
    pub cfg: UpdateConfig,
    pub variant: KronVariant,
    pub momentum: f64,
    pub weight_decay: f64,
    buffer: Matrix<T>,
}

impl<T: Real> KronOptimizer<T> {
    pub fn new(n: usize, m: usize, cfg: UpdateConfig, variant: KronVariant, momentum: f64, weight_decay: f64) -> Result<Self> {
        cfg.validate()?;
        if !(0.0..1.0).contains(&momentum) || weight_decay < 0.0 {
            return Err(Error::InvalidArgument("momentum must lie in [0,1) and weight decay be non-negative".into()));
        }
        Ok(Self {
            state: KronSpectralFactor::identity(n, m),
            cfg,
            variant,
            momentum,
            weight_decay,
            buffer: Matrix::zeros(n, m),
        })
    }

    /// Update the curvature from `grad` and apply one step to `weights` in place.
    pub fn step(&mut self, weights: &mut Matrix<T>, grad: &Matrix<T>) -> Result<()> {
        self.state = match self.variant {
            KronVariant::Exact => kron_rgd_step_exact(&self.state, grad, &self.cfg)?,
            KronVariant::Truncated => kron_rgd_step_truncated(&self.state, grad, &self.cfg)?,
        };
        let mut dir = kron_precondition(&self.state, grad, T::of(self.cfg.p))?;
        if let Some(c) = self.cfg.clip_norm {
            dir = clip_preconditioned(&dir, T::of(c));
        }
        self.buffer = &self.buffer * T::of(self.momentum) + dir;
        let lr = T::of(self.cfg.beta1);
        let decay = T::one() - lr * T::of(self.weight_decay);
        *weights = &*weights * decay - &self.buffer * lr;
        if weights.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical("weights became non-finite".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::random_orthogonal;
    use crate::spectral::ExpMode;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use rand_distr::StandardNormal;

    fn random_state(n: usize, m: usize, seed: u64) -> KronSpectralFactor<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let dc = Vector::from_fn(n, |_, _| rng.random_range(0.3..3.0));
        let dk = Vector::from_fn(m, |_, _| rng.random_range(0.3..3.0));
        let fc = SpectralFactor::new(random_orthogonal(n, &mut rng), dc).unwrap();
        let fk = SpectralFactor::new(random_orthogonal(m, &mut rng), dk).unwrap();
        KronSpectralFactor::from_unnormalized(rng.random_range(0.5..2.0), fc, fk).unwrap()
    }

    fn gaussian(n: usize, m: usize, seed: u64) -> Matrix<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        Matrix::from_fn(n, m, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn normalize_examples() {
        let one = Vector::<f64>::from_element(2, 1.0);
        let (a, c, k) = normalize_kron(3.0, &one, &one).unwrap();
        assert_eq!((a, c.clone(), k), (3.0, one.clone(), one.clone()));
        let (a, c, _) = normalize_kron(1.0, &Vector::from_element(2, 2.0), &one).unwrap();
        assert!((a - 2.0).abs() < 1e-15);
        assert!((c - one).amax() < 1e-15);
        assert!(normalize_kron(0.0, &Vector::from_element(2, 2.0), &Vector::from_element(2, 2.0)).is_err());
    }

    #[test]
    fn exact_step_zero_gradient() {
        let kf = random_state(3, 4, 1);
        let cfg = UpdateConfig { gamma: 0.0, beta2: 0.1, ..Default::default() };
        let next = kron_rgd_step_exact(&kf, &Matrix::zeros(3, 4), &cfg).unwrap();
        assert!((next.alpha() - kf.alpha()).abs() < 1e-15);
        assert!((next.factor_c().eigvals() - kf.factor_c().eigvals()).amax() < 1e-14);
        assert_eq!(next.factor_k().basis(), kf.factor_k().basis());

        let cfg = UpdateConfig { gamma: 1.0, beta2: 0.1, ..Default::default() };
        let next = kron_rgd_step_exact(&kf, &Matrix::zeros(3, 4), &cfg).unwrap();
        assert!((next.alpha() - kf.alpha() * (-0.1f64).exp()).abs() < 1e-14);
        assert!((next.factor_k().eigvals() - kf.factor_k().eigvals()).amax() < 1e-14);
    }

    #[test]
    fn truncated_step_hand_example() {
        let kf = KronSpectralFactor::<f64>::identity(2, 2);
        let mut g = Matrix::zeros(2, 2);
        g[(0, 0)] = 1.0;
        let cfg = UpdateConfig { gamma: 1.0, beta2: 0.1, lambda: 0.0, exp_mode: ExpMode::FirstOrder, ..Default::default() };
        let (_, tk) = truncated_targets(&kf, &g, &cfg).unwrap();
        assert!((tk - Vector::from_row_slice(&[0.95, 0.9])).amax() < 1e-15);
        let next = kron_rgd_step_truncated(&kf, &g, &cfg).unwrap();
        let h = 0.5 * (0.95f64.ln() - 0.9f64.ln());
        let want = Vector::from_row_slice(&[h.exp(), (-h).exp()]);
        assert!((next.factor_k().eigvals() - want).amax() < 1e-14);
        let gm = (0.95f64 * 0.9).sqrt();
        assert!((next.alpha() - gm).abs() < 1e-14);
    }

    #[test]
    fn truncated_step_noop_and_positivity() {
        let kf = random_state(3, 2, 4);
        let cfg = UpdateConfig { gamma: 0.0, lambda: 0.0, exp_mode: ExpMode::FirstOrder, ..Default::default() };
        let next = kron_rgd_step_truncated(&kf, &Matrix::zeros(3, 2), &cfg).unwrap();
        assert!((next.reconstruct() - kf.reconstruct()).amax() < 1e-12);

        let cfg = UpdateConfig { gamma: 1.0, beta2: 1.0, lambda: 0.0, exp_mode: ExpMode::FirstOrder, ..Default::default() };
        assert!(matches!(
            kron_rgd_step_truncated(&kf, &Matrix::zeros(3, 2), &cfg),
            Err(Error::Positivity(_))
        ));
    }

    #[test]
    fn precondition_examples() {
        let kf = KronSpectralFactor::<f64>::identity(2, 3);
        let g = gaussian(2, 3, 1);
        assert!((kron_precondition(&kf, &g, 3.0).unwrap() - &g).amax() < 1e-15);
        let scaled = KronSpectralFactor::new(16.0, SpectralFactor::identity(2), SpectralFactor::identity(3)).unwrap();
        assert!((kron_precondition(&scaled, &g, 2.0).unwrap() - &g / 4.0).amax() < 1e-15);
        assert!(kron_precondition(&kf, &g, -1.0).is_err());
    }

    #[test]
    fn precondition_matches_dense_solve() {
        let kf = random_state(4, 5, 2);
        let g = gaussian(4, 5, 3);
        let out = kron_precondition(&kf, &g, 1.0).unwrap();
        let vec_g = Vector::from_iterator(20, g.transpose().iter().copied());
        let want = kf.reconstruct().lu().solve(&vec_g).unwrap();
        let got = Vector::from_iterator(20, out.transpose().iter().copied());
        assert!((got - &want).norm() / want.norm() < 1e-10);
    }

    #[test]
    fn clip_examples() {
        let small = Matrix::from_element(2, 2, 0.1);
        assert_eq!(clip_preconditioned(&small, 1.0), small);
        let mut big = Matrix::<f64>::zeros(1, 1);
        big[(0, 0)] = 10.0;
        assert!((clip_preconditioned(&big, 1.0)[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn checkpoint_round_trip() {
        let kf = random_state(3, 2, 9);
        let json = kf.to_json().unwrap();
        assert!(json.contains("\"factor_C\"") && json.contains("\"factor_K\""));
        let back = KronSpectralFactor::<f64>::from_json(&json).unwrap();
        assert!((back.reconstruct() - kf.reconstruct()).amax() < 1e-14);
    }

    #[test]
    fn optimizer_decreases_quadratic() {
        let target = gaussian(3, 4, 5);
        let cfg = UpdateConfig {
            beta1: 0.05,
            beta2: 0.05,
            lambda: 1e-6,
            exp_mode: ExpMode::FirstOrder,
            cayley_mode: CayleyMode::Truncated,
            ..Default::default()
        };
        let mut opt = KronOptimizer::new(3, 4, cfg, KronVariant::Truncated, 0.9, 0.0).unwrap();
        let mut w = Matrix::zeros(3, 4);
        let start = (&w - &target).norm();
        for _ in 0..300 {
            let grad = &w - &target;
            opt.step(&mut w, &grad).unwrap();
        }
        assert!((&w - &target).norm() < 0.1 * start);
    }
}
