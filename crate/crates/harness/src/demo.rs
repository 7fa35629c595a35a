//! Desk-scale training demo: a two-layer perceptron on a seeded Gaussian
//! mixture, one Kronecker spectral optimizer per weight matrix.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use spectral_precond::kron::{KronOptimizer, KronVariant};
use spectral_precond::linalg::{cast_matrix, Matrix};
use spectral_precond::Real;

use crate::experiments::{seeded_stream, CellLog, Stop};
use crate::spec::{DemoParams, Method};

const STREAM_DATA: u64 = 1;
const STREAM_INIT: u64 = 2;
const STREAM_SHUFFLE: u64 = 3;
/// Sub-clusters per class; makes the classes non-convex so a linear model falls short.
const CLUSTERS_PER_CLASS: usize = 3;

/// Inputs (one row per sample) and labels of the synthetic task.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub labels: Vec<usize>,
    pub classes: usize,
    params: DemoParams,
}

impl Dataset {
    /// Each class is a union of Gaussian blobs with unit noise around centres
    /// drawn from `N(0, separation²·I)`.
    pub fn generate(params: &DemoParams, seed: u64) -> Self {
        let mut rng = seeded_stream(seed, STREAM_DATA);
        let dim = params.input_dim;
        let centres: Vec<Vec<DVector<f64>>> = (0..params.classes)
            .map(|_| {
                (0..CLUSTERS_PER_CLASS)
                    .map(|_| DVector::from_fn(dim, |_, _| params.separation * rng.sample::<f64, _>(StandardNormal)))
                    .collect()
            })
            .collect();
        let total = params.classes * params.samples_per_class;
        let mut x = DMatrix::zeros(total, dim);
        let mut labels = Vec::with_capacity(total);
        for (c, blobs) in centres.iter().enumerate() {
            for i in 0..params.samples_per_class {
                let row = labels.len();
                let centre = &blobs[i % CLUSTERS_PER_CLASS];
                for j in 0..dim {
                    x[(row, j)] = centre[j] + rng.sample::<f64, _>(StandardNormal);
                }
                labels.push(c);
            }
        }
        Self { x, labels, classes: params.classes, params: params.clone() }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Append a column of ones.
fn augment<T: Real>(x: &Matrix<T>) -> Matrix<T> {
    let mut out = Matrix::from_element(x.nrows(), x.ncols() + 1, T::one());
    out.view_mut((0, 0), (x.nrows(), x.ncols())).copy_from(x);
    out
}

/// Mean cross-entropy, accuracy, and the logit gradient `(softmax − onehot)/B`.
fn softmax_loss<T: Real>(logits: &Matrix<T>, labels: &[usize]) -> (f64, f64, Matrix<T>) {
    let b = logits.nrows();
    let mut grad = Matrix::zeros(b, logits.ncols());
    let mut loss = 0.0;
    let mut correct = 0usize;
    for i in 0..b {
        let row = logits.row(i);
        let max = row.max();
        let exps: Vec<T> = row.iter().map(|&z| (z - max).exp()).collect();
        let total = exps.iter().fold(T::zero(), |a, &e| a + e);
        let y = labels[i];
        loss += (total.ln() - (row[y] - max)).as_f64();
        let pred = row.iter().enumerate().fold(0, |best, (j, &z)| if z > row[best] { j } else { best });
        correct += usize::from(pred == y);
        for j in 0..exps.len() {
            let p = exps[j] / total;
            grad[(i, j)] = (p - if j == y { T::one() } else { T::zero() }) / T::of(b as f64);
        }
    }
    (loss / b as f64, correct as f64 / b as f64, grad)
}

/// Two-layer perceptron with biases folded into augmented weight matrices.
#[derive(Clone, Debug)]
pub struct Mlp<T: Real> {
    /// `(input+1) × hidden`
    pub w1: Matrix<T>,
    /// `(hidden+1) × classes`
    pub w2: Matrix<T>,
}

impl<T: Real> Mlp<T> {
    fn init(params: &DemoParams, seed: u64) -> Self {
        let mut rng = seeded_stream(seed, STREAM_INIT);
        let (i, h, c) = (params.input_dim, params.hidden, params.classes);
        let s1 = (2.0 / (i + 1) as f64).sqrt();
        // A near-zero output layer starts at uniform predictions.
        let s2 = 1e-2 / ((h + 1) as f64).sqrt();
        let w1 = DMatrix::<f64>::from_fn(i + 1, h, |_, _| s1 * rng.sample::<f64, _>(StandardNormal));
        let w2 = DMatrix::<f64>::from_fn(h + 1, c, |_, _| s2 * rng.sample::<f64, _>(StandardNormal));
        Self { w1: cast_matrix(&w1), w2: cast_matrix(&w2) }
    }

    /// Loss, accuracy, and weight gradients on a batch.
    pub fn loss_and_grads(&self, x: &Matrix<T>, labels: &[usize]) -> (f64, f64, Matrix<T>, Matrix<T>) {
        let xa = augment(x);
        let pre = &xa * &self.w1;
        let hidden = pre.map(|v| if v > T::zero() { v } else { T::zero() });
        let ha = augment(&hidden);
        let logits = &ha * &self.w2;
        let (loss, acc, dlogits) = softmax_loss(&logits, labels);
        let g2 = ha.transpose() * &dlogits;
        let h = hidden.ncols();
        let mut dh = &dlogits * self.w2.rows(0, h).transpose();
        dh.zip_apply(&pre, |d, p| {
            if p <= T::zero() {
                *d = T::zero();
            }
        });
        let g1 = xa.transpose() * dh;
        (loss, acc, g1, g2)
    }
}

/// Full-batch gradient descent on softmax regression; returns its training accuracy.
pub fn logistic_floor(data: &Dataset, iters: usize, lr: f64) -> f64 {
    let xa = augment(&data.x);
    let mut w = DMatrix::<f64>::zeros(xa.ncols(), data.classes);
    let mut acc = 0.0;
    for _ in 0..iters {
        let (_, a, dlogits) = softmax_loss(&(&xa * &w), &data.labels);
        acc = a;
        w -= xa.transpose() * dlogits * lr;
    }
    let (_, a, _) = softmax_loss(&(&xa * &w), &data.labels);
    acc.max(a)
}

pub(crate) fn train_demo<T: Real>(log: &mut CellLog, data: &Dataset) -> std::result::Result<(), Stop> {
    let spec = log.spec();
    let params = &data.params;
    let variant = if log.method() == Method::KronExact { KronVariant::Exact } else { KronVariant::Truncated };
    let cfg = spec.config.clone();
    let mut net = Mlp::<T>::init(params, log.seed());
    let (r1, c1) = net.w1.shape();
    let (r2, c2) = net.w2.shape();
    let opt1 = KronOptimizer::<T>::new(r1, c1, cfg.clone(), variant, params.momentum, params.weight_decay);
    let mut opt1 = log.check(0, opt1)?;
    let opt2 = KronOptimizer::<T>::new(r2, c2, cfg, variant, params.momentum, params.weight_decay);
    let mut opt2 = log.check(0, opt2)?;
    let x: Matrix<T> = cast_matrix(&data.x);
    let mut rng = seeded_stream(log.seed(), STREAM_SHUFFLE);
    let mut order: Vec<usize> = (0..data.len()).collect();

    let evaluate = |log: &mut CellLog, k: usize, net: &Mlp<T>| -> std::result::Result<(), Stop> {
        let (loss, acc, _, _) = net.loss_and_grads(&x, &data.labels);
        log.push(k, "train_loss", loss)?;
        log.push(k, "train_accuracy", acc)
    };
    evaluate(log, 0, &net)?;
    let epochs = spec.steps;
    for epoch in 1..=epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(params.batch_size) {
            let xb = x.select_rows(chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            let step = log.timed(|| -> Result<(), spectral_precond::Error> {
                let (_, _, g1, g2) = net.loss_and_grads(&xb, &yb);
                opt1.step(&mut net.w1, &g1)?;
                opt2.step(&mut net.w2, &g2)
            });
            log.check(epoch, step)?;
        }
        if log.records_at(epoch, epochs) {
            evaluate(log, epoch, &net)?;
        }
    }
    if epochs > 0 {
        let floor = logistic_floor(data, 500, 0.5);
        let (_, acc, _, _) = net.loss_and_grads(&x, &data.labels);
        log.push(epochs, "floor_accuracy", floor)?;
        log.push(epochs, "above_floor", if acc > floor { 1.0 } else { 0.0 })?;
    }
    Ok(())
}
