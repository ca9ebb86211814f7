#![allow(dead_code)]

use bmvr::{Mat, ModelState, Nonlinearity, Vector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Mat {
    let normal = Normal::new(0.0, std).unwrap();
    Mat::from_fn(rows, cols, |_, _| normal.sample(rng))
}

pub fn state(w1: Mat, w2: Mat, q: Mat) -> ModelState {
    let k = w1.nrows();
    ModelState {
        w1,
        w2,
        q,
        r: None,
        z_bar: Some(Vector::zeros(k)),
    }
}

/// Central finite-difference gradient of `f` with respect to every entry of `at`.
pub fn fd_gradient(at: &Mat, h: f64, mut f: impl FnMut(&Mat) -> f64) -> Mat {
    let mut grad = Mat::zeros(at.nrows(), at.ncols());
    let mut probe = at.clone();
    for i in 0..at.nrows() {
        for j in 0..at.ncols() {
            let orig = probe[(i, j)];
            probe[(i, j)] = orig + h;
            let up = f(&probe);
            probe[(i, j)] = orig - h;
            let down = f(&probe);
            probe[(i, j)] = orig;
            grad[(i, j)] = (up - down) / (2.0 * h);
        }
    }
    grad
}

pub fn rel_err(a: &Mat, b: &Mat) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

/// `(1/T) Σ ‖y − W2 W1 x‖²` computed sample by sample.
pub fn naive_objective(w1: &Mat, w2: &Mat, x: &Mat, y: &Mat) -> f64 {
    let mut total = 0.0;
    for t in 0..x.ncols() {
        let pred = w2 * (w1 * x.column(t));
        total += (y.column(t) - pred).norm_squared();
    }
    total / x.ncols() as f64
}

/// `‖y − W2 f(W1 x)‖²` for one sample, with plain ReLU for the nonlinear case.
pub fn loss(w1: &Mat, w2: &Mat, x: &Vector, y: &Vector, nonlin: Nonlinearity) -> f64 {
    let u = w1 * x;
    let z = match nonlin {
        Nonlinearity::Linear => u,
        Nonlinearity::MeanSubtractedRelu => u.map(|v| v.max(0.0)),
    };
    (y - w2 * z).norm_squared()
}

/// Per-sample integrand of the upper bound.
pub fn integrand(w1: &Mat, w2: &Mat, q: &Mat, x: &Vector, y: &Vector) -> f64 {
    let k = w1.nrows();
    let z = w1 * x;
    let qq = q * q.transpose();
    y.dot(y) - 2.0 * y.dot(&(w2 * &z))
        + (w2 * w2.transpose()).trace()
        + (qq * (&z * z.transpose() - Mat::identity(k, k))).trace()
}
