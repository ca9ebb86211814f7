//! Objective values, the gain-constrained upper bound and the teaching-signal
//! comparison, evaluated on a whole dataset.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::oracle::{accumulate_stats, CorrelationStats};
use crate::types::{Mat, ModelState, Nonlinearity};

/// Columns processed per batch when evaluating over a dataset.
const CHUNK: usize = 4096;

fn check_model(state: &ModelState, data: &Dataset) -> Result<()> {
    if state.input_dim() != data.input_dim() || state.output_dim() != data.output_dim() {
        return Err(Error::Dimension(format!(
            "model is {}->{} but dataset is {}->{}",
            state.input_dim(),
            state.output_dim(),
            data.input_dim(),
            data.output_dim()
        )));
    }
    Ok(())
}

/// Hidden activity for a block of columns, using the frozen running mean.
pub(crate) fn hidden_block(state: &ModelState, x: &Mat, nonlinearity: Nonlinearity) -> Mat {
    let mut z = &state.w1 * x;
    if nonlinearity == Nonlinearity::MeanSubtractedRelu {
        z.apply(|v| *v = v.max(0.0));
        if let Some(z_bar) = &state.z_bar {
            for mut col in z.column_iter_mut() {
                col -= z_bar;
            }
        }
    }
    z
}

/// Calls `f(z, y_hat, start)` for consecutive column blocks of the dataset.
pub(crate) fn for_each_block(
    state: &ModelState,
    data: &Dataset,
    nonlinearity: Nonlinearity,
    mut f: impl FnMut(&Mat, &Mat, usize),
) {
    let total = data.len();
    let mut start = 0;
    while start < total {
        let width = CHUNK.min(total - start);
        let x = data.x.columns(start, width).into_owned();
        let z = hidden_block(state, &x, nonlinearity);
        let y_hat = &state.w2 * &z;
        f(&z, &y_hat, start);
        start += width;
    }
}

/// Mean squared prediction error `(1/T) Σ ‖y_t − W2 f(W1 x_t)‖²`.
pub fn objective(state: &ModelState, data: &Dataset, nonlinearity: Nonlinearity) -> Result<f64> {
    check_model(state, data)?;
    let mut total = 0.0;
    for_each_block(state, data, nonlinearity, |_, y_hat, start| {
        let y = data.y.columns(start, y_hat.ncols());
        total += (y - y_hat).norm_squared();
    });
    Ok(total / data.len() as f64)
}

/// Sample mean of `yᵀy − 2yᵀW2W1x + Tr W2W2ᵀ + Tr QQᵀ(W1 x xᵀ W1ᵀ − I_k)`
/// for a linear model.
pub fn upper_bound_objective(state: &ModelState, data: &Dataset) -> Result<f64> {
    check_model(state, data)?;
    let qqt = &state.q * state.q.transpose();
    let mut sum = 0.0;
    for_each_block(state, data, Nonlinearity::Linear, |z, y_hat, start| {
        let y = data.y.columns(start, y_hat.ncols());
        sum += y.norm_squared() - 2.0 * y.dot(y_hat);
        // Tr QQᵀ z zᵀ = zᵀ QQᵀ z
        sum += (&qqt * z).dot(z);
    });
    let t = data.len() as f64;
    Ok(sum / t + state.w2.norm_squared() - qqt.trace())
}

/// `‖(1/T) Σ z zᵀ − I_k‖_F` for the model's hidden activity on `data`.
pub fn constraint_gap(
    state: &ModelState,
    data: &Dataset,
    nonlinearity: Nonlinearity,
) -> Result<f64> {
    Ok((hidden_covariance(state, data, nonlinearity)?
        - Mat::identity(state.hidden_dim(), state.hidden_dim()))
    .norm())
}

/// `(1/T) Σ z zᵀ`.
pub fn hidden_covariance(
    state: &ModelState,
    data: &Dataset,
    nonlinearity: Nonlinearity,
) -> Result<Mat> {
    check_model(state, data)?;
    let k = state.hidden_dim();
    let mut czz = Mat::zeros(k, k);
    for_each_block(state, data, nonlinearity, |z, _, _| {
        czz.gemm(1.0, z, &z.transpose(), 1.0);
    });
    Ok(czz / data.len() as f64)
}

/// Per-sample comparison of the BMVR teaching signal `a − Q n` with the
/// backpropagated error `W2ᵀ (y − ỹ)`, where `ỹ = Cyx Cxx⁻¹ x` is the
/// unconstrained least-squares prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TeachingSignalReport {
    /// Mean of `‖(a − Qn) − W2ᵀ(y − ỹ)‖ / (‖W2ᵀ(y − ỹ)‖ + δ)`.
    pub mean_rel_err: f64,
    /// Mean cosine similarity between the two vectors.
    pub cosine_mean: f64,
    pub samples_used: usize,
}

const REL_ERR_GUARD: f64 = 1e-12;

/// Uses statistics accumulated from `data` itself; `ridge` regularises the
/// `Cxx` inverse (`None` = trace-scaled default).
pub fn teaching_signal_report(
    state: &ModelState,
    data: &Dataset,
    ridge: Option<f64>,
) -> Result<TeachingSignalReport> {
    let stats = accumulate_stats(data)?;
    teaching_signal_report_with(state, data, &stats, ridge)
}

pub fn teaching_signal_report_with(
    state: &ModelState,
    data: &Dataset,
    stats: &CorrelationStats,
    ridge: Option<f64>,
) -> Result<TeachingSignalReport> {
    check_model(state, data)?;
    let ridge = ridge.unwrap_or_else(|| stats.default_ridge());
    let regression = stats.cyx() * stats.cxx_inverse(ridge)?;
    let qqt = &state.q * state.q.transpose();
    let mut rel_sum = 0.0;
    let mut cos_sum = 0.0;
    for_each_block(state, data, Nonlinearity::Linear, |z, _, start| {
        let width = z.ncols();
        let x = data.x.columns(start, width);
        let y = data.y.columns(start, width);
        // a − Q n = W2ᵀ y − QQᵀ z
        let teaching = state.w2.transpose() * y - &qqt * z;
        let y_tilde = &regression * x;
        let backprop = state.w2.transpose() * (y - y_tilde);
        for (t, b) in teaching.column_iter().zip(backprop.column_iter()) {
            let b_norm = b.norm();
            let t_norm = t.norm();
            rel_sum += (t - b).norm() / (b_norm + REL_ERR_GUARD);
            let denom = t_norm * b_norm;
            cos_sum += if denom > 0.0 {
                (t.dot(&b) / denom).clamp(-1.0, 1.0)
            } else {
                0.0
            };
        }
    });
    let count = data.len();
    Ok(TeachingSignalReport {
        mean_rel_err: rel_sum / count as f64,
        cosine_mean: cos_sum / count as f64,
        samples_used: count,
    })
}
