//! Producers of curvature residuals: gradient outer products, SPD matrix
//! optimization problems, and black-box NES estimates. Also hosts the
//! standard test functions used by the NES experiments.

use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::scalar::Real;
use crate::spectral::{CurvatureResidual, ResidualSource, SpectralFactor};

/// Rotated GOP residual `(Bᵀg)(Bᵀg)ᵀ − γ Diag(d)`.
pub fn gop_residual<T: Real>(f: &SpectralFactor<T>, g: &Vector<T>, gamma: f64) -> Result<CurvatureResidual<T>> {
    if g.len() != f.dim() {
        return Err(Error::ShapeMismatch(format!(
            "gradient of length {} against factor of dim {}",
            g.len(),
            f.dim()
        )));
    }
    let gb = f.basis().tr_mul(g);
    let mut rotated = &gb * gb.transpose();
    let gamma = T::of(gamma);
    for (i, &d) in f.eigvals().iter().enumerate() {
        rotated[(i, i)] -= gamma * d;
    }
    CurvatureResidual::new(rotated, ResidualSource::Gop)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpdKind {
    /// `(1/2N) Σ ‖S Q xᵢ − xᵢ‖²`
    MetricNearness,
    /// `Tr(SQ) − log det S`
    LogDet,
}

/// An SPD matrix optimization problem whose minimizer is `Q⁻¹`.
#[derive(Clone, Debug)]
pub struct SpdProblem<T: Real = f64> {
    kind: SpdKind,
    q: Matrix<T>,
    /// Observations stored column-wise (d×N); empty for log-det.
    data: Matrix<T>,
    batch_size: usize,
}

impl<T: Real> SpdProblem<T> {
    pub fn new(kind: SpdKind, q: Matrix<T>, data: Vec<Vector<T>>, batch_size: usize) -> Result<Self> {
        let dim = linalg::ensure_square(&q, "Q")?;
        if !linalg::is_spd(&q) {
            return Err(Error::Domain("Q must be symmetric positive definite".into()));
        }
        if data.iter().any(|x| x.len() != dim) {
            return Err(Error::ShapeMismatch("data point length differs from dim".into()));
        }
        if kind == SpdKind::MetricNearness && (data.is_empty() || batch_size == 0) {
            return Err(Error::InvalidArgument(
                "metric nearness needs data and a positive batch size".into(),
            ));
        }
        let cols = Matrix::from_fn(dim, data.len(), |i, j| data[j][i]);
        Ok(Self {
            kind,
            q: linalg::symmetrize(&q),
            data: cols,
            batch_size: batch_size.min(data.len().max(1)),
        })
    }

    pub fn kind(&self) -> SpdKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn q(&self) -> &Matrix<T> {
        &self.q
    }

    pub fn num_points(&self) -> usize {
        self.data.ncols()
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// A uniform minibatch drawn without replacement.
    pub fn sample_batch<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        match self.kind {
            SpdKind::LogDet => Vec::new(),
            SpdKind::MetricNearness => index::sample(rng, self.num_points(), self.batch_size).into_vec(),
        }
    }

    pub fn all_points(&self) -> Vec<usize> {
        (0..self.num_points()).collect()
    }

    fn columns(&self, batch: &[usize]) -> Result<Matrix<T>> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("metric nearness needs a non-empty batch".into()));
        }
        if let Some(&bad) = batch.iter().find(|&&i| i >= self.num_points()) {
            return Err(Error::InvalidArgument(format!("batch index {bad} out of range")));
        }
        Ok(self.data.select_columns(batch))
    }

    /// Loss at a dense `S` over `batch` (ignored for log-det).
    pub fn loss_dense(&self, s: &Matrix<T>, log_det_s: T, batch: &[usize]) -> Result<T> {
        match self.kind {
            SpdKind::LogDet => Ok((s * &self.q).trace() - log_det_s),
            SpdKind::MetricNearness => {
                let x = self.columns(batch)?;
                let r = s * (&self.q * &x) - &x;
                Ok(r.norm_squared() / (T::of(2.0) * T::of(batch.len() as f64)))
            }
        }
    }

    pub fn loss(&self, f: &SpectralFactor<T>, batch: &[usize]) -> Result<T> {
        self.loss_dense(&f.reconstruct(), f.log_det(), batch)
    }

    /// Full-data loss.
    pub fn full_loss(&self, f: &SpectralFactor<T>) -> Result<T> {
        self.loss(f, &self.all_points())
    }

    /// Symmetric Euclidean gradient `∂ℓ/∂S`.
    pub fn euclidean_gradient(&self, f: &SpectralFactor<T>, batch: &[usize]) -> Result<Matrix<T>> {
        match self.kind {
            SpdKind::LogDet => Ok(&self.q - f.power(-T::one())),
            SpdKind::MetricNearness => {
                let x = self.columns(batch)?;
                let y = &self.q * &x;
                let r = f.reconstruct() * &y - &x;
                let g = r * y.transpose() / T::of(batch.len() as f64);
                Ok(linalg::symmetrize(&g))
            }
        }
    }

    /// Minimum full-data loss, attained at `S* = Q⁻¹`.
    pub fn optimal_loss(&self) -> Result<T> {
        match self.kind {
            SpdKind::MetricNearness => Ok(T::zero()),
            SpdKind::LogDet => {
                let chol = self
                    .q
                    .clone()
                    .cholesky()
                    .ok_or_else(|| Error::Domain("Q lost positive definiteness".into()))?;
                let log_det_q = chol.l().diagonal().iter().fold(T::zero(), |a, &x| a + x.ln()) * T::of(2.0);
                Ok(T::of(self.dim() as f64) + log_det_q)
            }
        }
    }

    /// `Q⁻¹`.
    pub fn optimum(&self) -> Result<Matrix<T>> {
        self.q
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .ok_or_else(|| Error::Domain("Q lost positive definiteness".into()))
    }
}

/// Batch loss and rotated residual `−2 D (Bᵀ G_S B) D`.
///
/// Uses `∂_{S⁻¹}ℓ = −S (∂_S ℓ) S`; the result may be indefinite.
pub fn spd_opt_residual<T: Real>(
    f: &SpectralFactor<T>,
    prob: &SpdProblem<T>,
    batch: &[usize],
) -> Result<(T, CurvatureResidual<T>)> {
    if prob.dim() != f.dim() {
        return Err(Error::ShapeMismatch("problem/factor dims".into()));
    }
    let loss = prob.loss(f, batch)?;
    let g = prob.euclidean_gradient(f, batch)?;
    let mut rotated = f.basis().transpose() * g * f.basis();
    let d = f.eigvals();
    let minus_two = T::of(-2.0);
    for i in 0..d.len() {
        for j in 0..d.len() {
            rotated[(i, j)] *= minus_two * d[i] * d[j];
        }
    }
    Ok((loss, CurvatureResidual::new(linalg::symmetrize(&rotated), ResidualSource::SpdOpt)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FitnessShaping {
    #[default]
    Ranks,
    Raw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NesConfig {
    pub pop_size: usize,
    pub antithetic: bool,
    pub fitness_shaping: FitnessShaping,
    pub seed: u64,
}

impl Default for NesConfig {
    fn default() -> Self {
        Self {
            pop_size: Self::default_pop_size(10),
            antithetic: true,
            fitness_shaping: FitnessShaping::Ranks,
            seed: 0,
        }
    }
}

impl NesConfig {
    /// `4 + ⌊3 ln dim⌋`, rounded up to even.
    pub fn default_pop_size(dim: usize) -> usize {
        let k = 4 + (3.0 * (dim.max(1) as f64).ln()).floor() as usize;
        k + k % 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.pop_size < 2 {
            return Err(Error::InvalidArgument("population must have at least 2 members".into()));
        }
        if self.antithetic && !self.pop_size.is_multiple_of(2) {
            return Err(Error::InvalidArgument("antithetic sampling needs an even population".into()));
        }
        Ok(())
    }
}

/// Rank-based utilities for a minimization problem: the best (lowest) value
/// gets the largest utility; utilities sum to zero. Tied values share the
/// average utility of their rank block.
pub fn rank_utilities(values: &[f64]) -> Vec<f64> {
    let k = values.len();
    let top = (k as f64 / 2.0 + 1.0).ln();
    let raw: Vec<f64> = (1..=k).map(|r| (top - (r as f64).ln()).max(0.0)).collect();
    let total: f64 = raw.iter().sum();
    let base: Vec<f64> = raw.iter().map(|u| u / total - 1.0 / k as f64).collect();

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; k];
    let mut start = 0;
    while start < k {
        let mut end = start + 1;
        while end < k && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let avg = base[start..end].iter().sum::<f64>() / (end - start) as f64;
        for &idx in &order[start..end] {
            out[idx] = avg;
        }
        start = end;
    }
    out
}

/// Output of one NES generation.
#[derive(Clone, Debug)]
pub struct NesEstimate<T: Real = f64> {
    /// Estimate of `∇_μ E[ℓ]`.
    pub g_hat: Vector<T>,
    /// Estimate of `Bᵀ E[∇²ℓ] B` (γ = 0).
    pub residual: CurvatureResidual<T>,
    pub values: Vec<f64>,
    pub samples: Vec<Vector<T>>,
}

/// Score-function estimates of the gradient and expected Hessian from
/// `K` black-box evaluations around `μ`.
pub fn nes_estimate<T, R, F>(
    f: &SpectralFactor<T>,
    mu: &Vector<T>,
    mut objective: F,
    cfg: &NesConfig,
    rng: &mut R,
) -> Result<NesEstimate<T>>
where
    T: Real,
    R: Rng + ?Sized,
    F: FnMut(&Vector<T>) -> f64,
{
    cfg.validate()?;
    let n = f.dim();
    if mu.len() != n {
        return Err(Error::ShapeMismatch("mean/factor dims".into()));
    }
    let k = cfg.pop_size;
    let draw = |rng: &mut R| Vector::<T>::from_fn(n, |_, _| T::of(rng.sample::<f64, _>(StandardNormal)));
    let zs: Vec<Vector<T>> = if cfg.antithetic {
        let base: Vec<Vector<T>> = (0..k / 2).map(|_| draw(rng)).collect();
        base.iter().cloned().chain(base.iter().map(|z| -z)).collect()
    } else {
        (0..k).map(|_| draw(rng)).collect()
    };

    let inv_sqrt = f.eigvals().map(|v| T::one() / v.sqrt());
    let sqrt_d = f.eigvals().map(|v| v.sqrt());
    let mut samples = Vec::with_capacity(k);
    let mut values = Vec::with_capacity(k);
    for z in &zs {
        let w = mu + f.basis() * z.component_mul(&inv_sqrt);
        let value = objective(&w);
        if !value.is_finite() {
            return Err(Error::Evaluation {
                point: w.iter().map(|x| x.as_f64()).collect(),
                value,
            });
        }
        samples.push(w);
        values.push(value);
    }

    // Weights act as a loss surrogate: low loss, negative weight.
    let weights: Vec<f64> = match cfg.fitness_shaping {
        FitnessShaping::Raw => values.clone(),
        FitnessShaping::Ranks => rank_utilities(&values).into_iter().map(|u| -u).collect(),
    };

    let inv_k = T::of(1.0 / k as f64);
    let mut grad = Vector::<T>::zeros(n);
    let mut second = Matrix::<T>::zeros(n, n);
    let eye = Matrix::<T>::identity(n, n);
    if cfg.antithetic {
        // Mirrored pairs share z zᵀ; folding them first makes even objectives
        // cancel exactly in the gradient.
        let half = k / 2;
        for i in 0..half {
            let (a, b) = (weights[i], weights[i + half]);
            grad += &zs[i] * T::of(a - b);
            second += (&zs[i] * zs[i].transpose() - &eye) * T::of(a + b);
        }
    } else {
        for (z, &wt) in zs.iter().zip(weights.iter()) {
            let wt = T::of(wt);
            grad += z * wt;
            second += (z * z.transpose() - &eye) * wt;
        }
    }
    grad *= inv_k;
    second *= inv_k;

    let g_hat = f.basis() * grad.component_mul(&sqrt_d);
    let rotated = Matrix::from_fn(n, n, |i, j| sqrt_d[i] * second[(i, j)] * sqrt_d[j]);
    Ok(NesEstimate {
        g_hat,
        residual: CurvatureResidual::new(linalg::symmetrize(&rotated), ResidualSource::Reinforce)?,
        values,
        samples,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFunction {
    Ackley,
    Rosenbrock,
    Bohachevsky,
    Schaffer,
    Griewank,
}

impl TestFunction {
    pub const ALL: [TestFunction; 5] = [
        TestFunction::Ackley,
        TestFunction::Rosenbrock,
        TestFunction::Bohachevsky,
        TestFunction::Schaffer,
        TestFunction::Griewank,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TestFunction::Ackley => "ackley",
            TestFunction::Rosenbrock => "rosenbrock",
            TestFunction::Bohachevsky => "bohachevsky",
            TestFunction::Schaffer => "schaffer",
            TestFunction::Griewank => "griewank",
        }
    }

    /// Global minimizer (value 0) in `dim` dimensions.
    pub fn minimizer(self, dim: usize) -> Vec<f64> {
        match self {
            TestFunction::Rosenbrock => vec![1.0; dim],
            _ => vec![0.0; dim],
        }
    }

    fn pairwise(self) -> bool {
        matches!(self, TestFunction::Rosenbrock | TestFunction::Bohachevsky | TestFunction::Schaffer)
    }

    pub fn eval(self, w: &[f64]) -> Result<f64> {
        if w.is_empty() || (self.pairwise() && w.len() < 2) {
            return Err(Error::InvalidArgument(format!(
                "{} needs at least {} coordinates",
                self.name(),
                if self.pairwise() { 2 } else { 1 }
            )));
        }
        Ok(self.eval_unchecked(w))
    }

    fn eval_unchecked(self, w: &[f64]) -> f64 {
        use std::f64::consts::{E, PI};
        let n = w.len() as f64;
        let pairs = w.windows(2).map(|p| (p[0], p[1]));
        match self {
            TestFunction::Ackley => {
                let sq = w.iter().map(|x| x * x).sum::<f64>() / n;
                let cs = w.iter().map(|x| (2.0 * PI * x).cos()).sum::<f64>() / n;
                20.0 - 20.0 * (-0.2 * sq.sqrt()).exp() + E - cs.exp()
            }
            TestFunction::Rosenbrock => pairs
                .map(|(a, b)| 100.0 * (b - a * a).powi(2) + (a - 1.0).powi(2))
                .sum(),
            TestFunction::Bohachevsky => pairs
                .map(|(a, b)| {
                    a * a + 2.0 * b * b - 0.3 * (3.0 * PI * a).cos() - 0.4 * (4.0 * PI * b).cos() + 0.7
                })
                .sum(),
            TestFunction::Schaffer => pairs
                .map(|(a, b)| {
                    let r = a * a + b * b;
                    r.powf(0.25) * ((50.0 * r.powf(0.1)).sin().powi(2) + 1.0)
                })
                .sum(),
            TestFunction::Griewank => {
                let sum = w.iter().map(|x| x * x).sum::<f64>() / 4000.0;
                let prod = w
                    .iter()
                    .enumerate()
                    .map(|(i, x)| (x / ((i + 1) as f64).sqrt()).cos())
                    .product::<f64>();
                sum - prod + 1.0
            }
        }
    }
}

impl FromStr for TestFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TestFunction::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown test function '{s}'")))
    }
}

pub fn test_function(name: &str, w: &[f64]) -> Result<f64> {
    name.parse::<TestFunction>()?.eval(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::random_orthogonal;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn random_factor(dim: usize, seed: u64) -> SpectralFactor<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let b = random_orthogonal(dim, &mut rng);
        let d = Vector::from_fn(dim, |_, _| rng.random_range(0.5..2.0));
        SpectralFactor::new(b, d).unwrap()
    }

    #[test]
    fn gop_examples() {
        let f = random_factor(4, 1);
        let r = gop_residual(&f, &Vector::zeros(4), 0.0).unwrap();
        assert_eq!(r.rotated(), &Matrix::zeros(4, 4));

        let f = SpectralFactor::new(Matrix::identity(2, 2), Vector::from_row_slice(&[2.0, 3.0])).unwrap();
        let g = Vector::from_row_slice(&[1.0, -2.0]);
        let r = gop_residual(&f, &g, 1.0).unwrap();
        let want = &g * g.transpose() - Matrix::from_diagonal(f.eigvals());
        assert_eq!(r.rotated(), &want);
    }

    #[test]
    fn gop_matches_dense_oracle() {
        let f = random_factor(20, 3);
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let g = Vector::from_fn(20, |_, _| rng.sample(StandardNormal));
        let r = gop_residual(&f, &g, 1.0).unwrap();
        let dense = &g * g.transpose() - f.reconstruct();
        let want = f.basis().transpose() * dense * f.basis();
        assert!((r.rotated() - want).amax() < 1e-12);
    }

    fn problem(kind: SpdKind, dim: usize, seed: u64) -> SpdProblem<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let b = random_orthogonal(dim, &mut rng);
        let d = Vector::from_fn(dim, |_, _| rng.random_range(0.5..2.0));
        let q = linalg::from_spectrum(&b, &d);
        let data = (0..50)
            .map(|_| Vector::from_fn(dim, |_, _| rng.sample(StandardNormal)))
            .collect();
        SpdProblem::new(kind, q, data, 10).unwrap()
    }

    #[test]
    fn residual_vanishes_at_optimum() {
        for kind in [SpdKind::LogDet, SpdKind::MetricNearness] {
            let prob = problem(kind, 5, 2);
            let f = SpectralFactor::from_spd(&prob.optimum().unwrap()).unwrap();
            let (loss, r) = spd_opt_residual(&f, &prob, &prob.all_points()).unwrap();
            assert!(r.rotated().amax() < 1e-10, "{kind:?}");
            assert!((loss - prob.optimal_loss().unwrap()).abs() < 1e-10);
        }
    }

    #[test]
    fn test_functions_vanish_at_minimizers() {
        for f in TestFunction::ALL {
            for dim in [2, 5, 10] {
                let v = f.eval(&f.minimizer(dim)).unwrap();
                assert!(v.abs() <= 1e-12, "{} dim {dim}: {v}", f.name());
            }
        }
        assert!(test_function("nope", &[0.0, 0.0]).is_err());
        assert!(TestFunction::Rosenbrock.eval(&[1.0]).is_err());
        assert_eq!("Ackley".parse::<TestFunction>().unwrap(), TestFunction::Ackley);
    }

    #[test]
    fn rank_utilities_properties() {
        let u = rank_utilities(&[3.0, 1.0, 2.0, 4.0]);
        assert!(u.iter().sum::<f64>().abs() < 1e-15);
        assert!(u[1] > u[2] && u[2] >= u[0] && u[0] >= u[3]);
        let tied = rank_utilities(&[1.0, 1.0, 5.0, 6.0]);
        assert_eq!(tied[0], tied[1]);
        assert!(tied.iter().sum::<f64>().abs() < 1e-15);
    }

    #[test]
    fn antithetic_even_objective_has_zero_gradient() {
        let f = random_factor(4, 5);
        let cfg = NesConfig { pop_size: 12, antithetic: true, fitness_shaping: FitnessShaping::Raw, seed: 0 };
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let est = nes_estimate(&f, &Vector::zeros(4), |w| w.norm_squared() + w[0].powi(4), &cfg, &mut rng).unwrap();
        assert_eq!(est.g_hat, Vector::zeros(4));
    }

    #[test]
    fn non_finite_objective_reports_point() {
        let f = SpectralFactor::<f64>::identity(2);
        let cfg = NesConfig { pop_size: 4, ..Default::default() };
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let err = nes_estimate(&f, &Vector::zeros(2), |_| f64::NAN, &cfg, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Evaluation { ref point, .. } if point.len() == 2));
    }

    #[test]
    fn default_population() {
        assert_eq!(NesConfig::default_pop_size(10), 10);
        assert_eq!(NesConfig::default_pop_size(20), 12);
        assert_eq!(NesConfig::default_pop_size(2), 6);
    }
}
