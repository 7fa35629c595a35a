use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use spectral_precond::linalg::{from_spectrum, random_orthogonal, sym_eigendecompose};
use spectral_precond::sources::*;
use spectral_precond::spectral::{rgd_step_exact, SpectralFactor, UpdateConfig};

fn random_factor(dim: usize, rng: &mut ChaCha20Rng) -> SpectralFactor {
    let b = random_orthogonal(dim, rng);
    let d = DVector::from_fn(dim, |_, _| rng.random_range(0.3..3.0));
    SpectralFactor::new(b, d).unwrap()
}

fn gaussian(dim: usize, rng: &mut ChaCha20Rng) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.sample(StandardNormal))
}

fn random_problem(kind: SpdKind, dim: usize, rng: &mut ChaCha20Rng) -> SpdProblem {
    let b = random_orthogonal(dim, rng);
    let d = DVector::from_fn(dim, |_, _| rng.random_range(0.5..2.0));
    let q = from_spectrum(&b, &d);
    let data = (0..40).map(|_| gaussian(dim, rng)).collect();
    SpdProblem::new(kind, q, data, 40).unwrap()
}

fn asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).amax()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn residuals_are_symmetric(seed in any::<u64>(), dim in 2usize..8) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let f = random_factor(dim, &mut rng);
        let g = gaussian(dim, &mut rng);
        prop_assert!(asymmetry(gop_residual(&f, &g, 1.0).unwrap().rotated()) <= 1e-12);
        for kind in [SpdKind::LogDet, SpdKind::MetricNearness] {
            let prob = random_problem(kind, dim, &mut rng);
            let (_, r) = spd_opt_residual(&f, &prob, &prob.all_points()).unwrap();
            prop_assert!(asymmetry(r.rotated()) <= 1e-12);
        }
        let cfg = NesConfig { pop_size: 8, ..Default::default() };
        let est = nes_estimate(&f, &DVector::zeros(dim), |w| w.norm(), &cfg, &mut rng).unwrap();
        prop_assert!(asymmetry(est.residual.rotated()) <= 1e-12);
    }

    #[test]
    fn gop_is_psd_up_to_forgetting(seed in any::<u64>(), dim in 1usize..10, gamma in prop::sample::select(vec![0.0, 1.0])) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let f = random_factor(dim, &mut rng);
        let g = gaussian(dim, &mut rng) * rng.random_range(0.0..10.0);
        let r = gop_residual(&f, &g, gamma).unwrap();
        let shifted = r.rotated() + DMatrix::from_diagonal(f.eigvals()) * gamma;
        let (_, eig) = sym_eigendecompose(&shifted).unwrap();
        prop_assert!(eig.min() >= -1e-10);
    }

    #[test]
    fn spd_residual_is_a_descent_direction(seed in any::<u64>(), dim in 2usize..8) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let f = random_factor(dim, &mut rng);
        for kind in [SpdKind::LogDet, SpdKind::MetricNearness] {
            let prob = random_problem(kind, dim, &mut rng);
            let batch = prob.all_points();
            let (_, r) = spd_opt_residual(&f, &prob, &batch).unwrap();
            // ΔS from a tiny step must have a non-positive directional derivative.
            let cfg = UpdateConfig { beta2: 1e-7, ..Default::default() };
            let next = rgd_step_exact(&f, &r, &cfg).unwrap();
            let delta = next.reconstruct() - f.reconstruct();
            let grad = prob.euclidean_gradient(&f, &batch).unwrap();
            prop_assert!(grad.dot(&delta) <= 1e-14);
        }
    }

    #[test]
    fn rank_utilities_follow_permutations(seed in any::<u64>(), k in 2usize..20) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let values: Vec<f64> = (0..k).map(|_| (rng.random_range(0..5) as f64) * 0.5).collect();
        let mut perm: Vec<usize> = (0..k).collect();
        for i in (1..k).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let u = rank_utilities(&values);
        let permuted: Vec<f64> = perm.iter().map(|&i| values[i]).collect();
        let up = rank_utilities(&permuted);
        for (j, &i) in perm.iter().enumerate() {
            prop_assert!((up[j] - u[i]).abs() <= 1e-15);
        }
        prop_assert!(u.iter().sum::<f64>().abs() <= 1e-12);
    }
}

#[test]
fn spd_step_decreases_loss_on_random_instances() {
    let mut rng = ChaCha20Rng::seed_from_u64(1000);
    let dim = 10;
    for trial in 0..1000 {
        let kind = if trial % 2 == 0 { SpdKind::LogDet } else { SpdKind::MetricNearness };
        let prob = random_problem(kind, dim, &mut rng);
        let f = random_factor(dim, &mut rng);
        let batch = prob.all_points();
        let (loss, r) = spd_opt_residual(&f, &prob, &batch).unwrap();
        let cfg = UpdateConfig { beta2: 1e-4, ..Default::default() };
        let next = rgd_step_exact(&f, &r, &cfg).unwrap();
        let after = prob.loss(&next, &batch).unwrap();
        assert!(after < loss, "trial {trial} ({kind:?}): {loss} -> {after}");
    }
}

#[test]
fn nes_is_deterministic_per_seed() {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let f = random_factor(5, &mut rng);
    let mu = gaussian(5, &mut rng);
    let cfg = NesConfig { pop_size: 10, ..Default::default() };
    let obj = |w: &DVector<f64>| TestFunction::Rosenbrock.eval(w.as_slice()).unwrap();
    let a = nes_estimate(&f, &mu, obj, &cfg, &mut ChaCha20Rng::seed_from_u64(9)).unwrap();
    let b = nes_estimate(&f, &mu, obj, &cfg, &mut ChaCha20Rng::seed_from_u64(9)).unwrap();
    assert_eq!(a.g_hat, b.g_hat);
    assert_eq!(a.residual, b.residual);
}

#[test]
fn constant_objective_residual_has_zero_mean() {
    let dim = 3;
    let reps = 10_000;
    let mut rng = ChaCha20Rng::seed_from_u64(17);
    let f = random_factor(dim, &mut rng);
    let cfg = NesConfig { pop_size: 10, antithetic: true, fitness_shaping: FitnessShaping::Raw, seed: 0 };
    let mut sum = DMatrix::<f64>::zeros(dim, dim);
    let mut sum_sq = DMatrix::<f64>::zeros(dim, dim);
    for _ in 0..reps {
        let est = nes_estimate(&f, &DVector::zeros(dim), |_| 2.5, &cfg, &mut rng).unwrap();
        sum += est.residual.rotated();
        sum_sq += est.residual.rotated().component_mul(est.residual.rotated());
    }
    let n = reps as f64;
    for i in 0..dim {
        for j in 0..dim {
            let mean = sum[(i, j)] / n;
            let var = sum_sq[(i, j)] / n - mean * mean;
            let se = (var / n).sqrt();
            assert!(mean.abs() <= 3.0 * se, "entry ({i},{j}): mean {mean}, se {se}");
        }
    }
}

#[test]
fn stein_estimate_recovers_quadratic_curvature() {
    let dim = 3;
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let q = random_orthogonal(dim, &mut rng);
    let a = from_spectrum(&q, &DVector::from_row_slice(&[0.5, 1.0, 2.0]));
    let f = SpectralFactor::<f64>::identity(dim);
    let cfg = NesConfig { pop_size: 100_000, antithetic: true, fitness_shaping: FitnessShaping::Raw, seed: 0 };
    let est = nes_estimate(&f, &DVector::zeros(dim), |w| 0.5 * w.dot(&(&a * w)), &cfg, &mut rng).unwrap();
    let err = (est.residual.rotated() - &a).norm() / a.norm();
    assert!(err < 0.1, "relative error {err}");
}

#[test]
fn stein_gradient_points_downhill() {
    let dim = 4;
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    let f = SpectralFactor::<f64>::identity(dim);
    let mu = DVector::from_element(dim, 2.0);
    let cfg = NesConfig { pop_size: 2000, ..Default::default() };
    let est = nes_estimate(&f, &mu, |w| w.norm_squared(), &cfg, &mut rng).unwrap();
    assert!(est.g_hat.dot(&mu) > 0.0);
}
