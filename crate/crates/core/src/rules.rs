//! Per-sample update rules.
//!
//! All three rules read every quantity they need from the pre-update state
//! first and then commit the weight changes. Each weight update depends only
//! on its own old value and on the precomputed intermediates, so committing
//! them one after another is the same as a simultaneous assignment.
//!
//! On an error the state may hold partially applied updates; the caller is
//! expected to abandon it.

use nalgebra::DVectorView;

use crate::error::{Error, Result};
use crate::types::{Mat, ModelState, Nonlinearity, Vector};

pub type VecView<'a> = DVectorView<'a, f64>;

/// Learning rates and nonlinearity settings for a single step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepParams {
    pub eta_w1: f64,
    pub eta_w2: f64,
    pub eta_q: f64,
    pub tau: f64,
    pub nonlinearity: Nonlinearity,
    pub mean_rate: f64,
}

impl StepParams {
    pub fn linear(eta_w1: f64, eta_w2: f64, eta_q: f64, tau: f64) -> Self {
        StepParams {
            eta_w1,
            eta_w2,
            eta_q,
            tau,
            nonlinearity: Nonlinearity::Linear,
            mean_rate: 0.0,
        }
    }
}

/// Hidden-layer forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    /// Pre-activation `W1 x`.
    pub pre: Vector,
    /// Hidden activity `z`.
    pub z: Vector,
    /// Prediction `W2 z`.
    pub y_hat: Vector,
}

/// Quantities computed while taking a step, all from pre-update weights.
#[derive(Debug, Clone, PartialEq)]
pub struct StepIntermediates {
    pub z: Vector,
    /// Apical current `W2ᵀ y` (BMVR rules only).
    pub a: Option<Vector>,
    /// Interneuron activity `Qᵀ z`, or `R z` in the decoupled variant.
    pub n_vec: Option<Vector>,
    /// Signal multiplying `xᵀ` in the W1 update, before gating:
    /// `a − Q n` for BMVR, `W2ᵀ ε` for backprop.
    pub teaching: Vector,
    pub y_hat: Option<Vector>,
    pub epsilon: Option<Vector>,
}

fn hidden(state: &ModelState, x: &VecView<'_>, nonlinearity: Nonlinearity) -> (Vector, Vector) {
    let pre = &state.w1 * x;
    let z = match nonlinearity {
        Nonlinearity::Linear => pre.clone(),
        Nonlinearity::MeanSubtractedRelu => {
            let mut z = pre.map(|u| u.max(0.0));
            if let Some(z_bar) = &state.z_bar {
                z -= z_bar;
            }
            z
        }
    };
    (pre, z)
}

fn check_dims(state: &ModelState, x: &VecView<'_>, y: Option<&VecView<'_>>) -> Result<()> {
    if x.len() != state.input_dim() {
        return Err(Error::Dimension(format!(
            "input has length {}, model expects {}",
            x.len(),
            state.input_dim()
        )));
    }
    if let Some(y) = y {
        if y.len() != state.output_dim() {
            return Err(Error::Dimension(format!(
                "target has length {}, model expects {}",
                y.len(),
                state.output_dim()
            )));
        }
    }
    Ok(())
}

pub fn forward(state: &ModelState, x: VecView<'_>, nonlinearity: Nonlinearity) -> Result<Forward> {
    check_dims(state, &x, None)?;
    let (pre, z) = hidden(state, &x, nonlinearity);
    let y_hat = &state.w2 * &z;
    Ok(Forward { pre, z, y_hat })
}

/// Multiplier applied row-wise to the W1 update: 1 everywhere for the linear
/// network, the ReLU derivative evaluated on the pre-activation otherwise.
fn gated(signal: &Vector, pre: &Vector, nonlinearity: Nonlinearity) -> Vector {
    match nonlinearity {
        Nonlinearity::Linear => signal.clone(),
        Nonlinearity::MeanSubtractedRelu => {
            signal.zip_map(pre, |s, u| if u > 0.0 { s } else { 0.0 })
        }
    }
}

/// `W1 += eta · c xᵀ`, touching only rows with `c_i ≠ 0` and columns with
/// `x_j ≠ 0`, so gated rows stay bit-identical.
fn rank_one_w1(w1: &mut Mat, eta: f64, c: &Vector, x: &VecView<'_>) -> bool {
    let active: Vec<(usize, f64)> = c
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0.0)
        .map(|(i, &v)| (i, eta * v))
        .collect();
    if active.is_empty() || eta == 0.0 {
        return true;
    }
    let mut finite = true;
    for (j, &xj) in x.iter().enumerate() {
        if xj == 0.0 {
            continue;
        }
        let mut col = w1.column_mut(j);
        for &(i, ci) in &active {
            let v = col[i] + ci * xj;
            finite &= v.is_finite();
            col[i] = v;
        }
    }
    finite
}

fn update_mean(state: &mut ModelState, pre: &Vector, params: &StepParams) {
    if params.nonlinearity != Nonlinearity::MeanSubtractedRelu || params.mean_rate == 0.0 {
        return;
    }
    let k = pre.len();
    let z_bar = state.z_bar.get_or_insert_with(|| Vector::zeros(k));
    for (mean, &u) in z_bar.iter_mut().zip(pre.iter()) {
        *mean += params.mean_rate * (u.max(0.0) - *mean);
    }
}

fn ensure_finite(name: &'static str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericOverflow {
            matrix: name,
            step: None,
        })
    }
}

/// `W2ᵀ ← W2ᵀ + η (z yᵀ − W2ᵀ)`, i.e. `W2 ← (1 − η) W2 + η y zᵀ`.
fn hebbian_w2(w2: &mut Mat, eta: f64, z: &Vector, y: &VecView<'_>) -> Result<()> {
    if eta != 0.0 {
        w2.ger(eta, y, z, 1.0 - eta);
    }
    ensure_finite("W2", w2.as_slice())
}

/// One BMVR gradient descent-ascent step:
///
/// ```text
/// W1  ← W1  + η1 · g ⊙ (a − Q n) xᵀ
/// W2ᵀ ← W2ᵀ + η2 (z yᵀ − W2ᵀ)
/// Q   ← Q   + (ηq/τ)(z nᵀ − Q)
/// ```
///
/// with `a = W2ᵀ y`, `n = Qᵀ z` and `g` the ReLU gate (all ones when linear).
pub fn bmvr_step(
    state: &mut ModelState,
    x: VecView<'_>,
    y: VecView<'_>,
    params: &StepParams,
) -> Result<StepIntermediates> {
    check_dims(state, &x, Some(&y))?;
    let (pre, z) = hidden(state, &x, params.nonlinearity);
    let a = state.w2.tr_mul(&y);
    let n_vec = state.q.tr_mul(&z);
    let teaching = &a - &state.q * &n_vec;
    ensure_finite("teaching signal", teaching.as_slice())?;

    let c = gated(&teaching, &pre, params.nonlinearity);
    if !rank_one_w1(&mut state.w1, params.eta_w1, &c, &x) {
        return Err(Error::NumericOverflow {
            matrix: "W1",
            step: None,
        });
    }
    hebbian_w2(&mut state.w2, params.eta_w2, &z, &y)?;
    let rate_q = params.eta_q / params.tau;
    if rate_q != 0.0 {
        state.q.ger(rate_q, &z, &n_vec, 1.0 - rate_q);
    }
    ensure_finite("Q", state.q.as_slice())?;
    update_mean(state, &pre, params);

    Ok(StepIntermediates {
        z,
        a: Some(a),
        n_vec: Some(n_vec),
        teaching,
        y_hat: None,
        epsilon: None,
    })
}

/// BMVR with the pyramidal-to-interneuron weights decoupled into their own
/// matrix `R`, so `n = R z`. Both `Q` and `R` follow Hebbian rules driven by
/// the same outer product, which makes `Qᵀ − R` shrink by `(1 − ηq/τ)`
/// every step regardless of the data.
pub fn bmvr_decoupled_step(
    state: &mut ModelState,
    x: VecView<'_>,
    y: VecView<'_>,
    params: &StepParams,
) -> Result<StepIntermediates> {
    check_dims(state, &x, Some(&y))?;
    let r = state.r.as_ref().ok_or(Error::MissingR)?;
    let (pre, z) = hidden(state, &x, params.nonlinearity);
    let a = state.w2.tr_mul(&y);
    let n_vec = r * &z;
    let teaching = &a - &state.q * &n_vec;
    ensure_finite("teaching signal", teaching.as_slice())?;

    let c = gated(&teaching, &pre, params.nonlinearity);
    if !rank_one_w1(&mut state.w1, params.eta_w1, &c, &x) {
        return Err(Error::NumericOverflow {
            matrix: "W1",
            step: None,
        });
    }
    hebbian_w2(&mut state.w2, params.eta_w2, &z, &y)?;

    let rate = params.eta_q / params.tau;
    let keep = 1.0 - rate;
    let k = z.len();
    let r = state.r.as_mut().expect("checked above");
    // Q_ij and R_ji receive the identical product so Qᵀ − R decays exactly.
    for i in 0..k {
        for j in 0..k {
            let p = rate * z[i] * n_vec[j];
            state.q[(i, j)] = keep * state.q[(i, j)] + p;
            r[(j, i)] = keep * r[(j, i)] + p;
        }
    }
    ensure_finite("Q", state.q.as_slice())?;
    ensure_finite("R", r.as_slice())?;
    update_mean(state, &pre, params);

    Ok(StepIntermediates {
        z,
        a: Some(a),
        n_vec: Some(n_vec),
        teaching,
        y_hat: None,
        epsilon: None,
    })
}

/// Online gradient step on `½‖y − W2 f(W1 x)‖²`:
///
/// ```text
/// ε  = y − ŷ
/// W1 ← W1 + η1 · g ⊙ (W2ᵀ ε) xᵀ
/// W2 ← W2 + η2 ε zᵀ
/// ```
///
/// Q (and R) are left untouched.
pub fn backprop_step(
    state: &mut ModelState,
    x: VecView<'_>,
    y: VecView<'_>,
    params: &StepParams,
) -> Result<StepIntermediates> {
    check_dims(state, &x, Some(&y))?;
    let (pre, z) = hidden(state, &x, params.nonlinearity);
    let y_hat = &state.w2 * &z;
    let epsilon = y - &y_hat;
    let teaching = state.w2.tr_mul(&epsilon);
    ensure_finite("backpropagated error", teaching.as_slice())?;

    let c = gated(&teaching, &pre, params.nonlinearity);
    if !rank_one_w1(&mut state.w1, params.eta_w1, &c, &x) {
        return Err(Error::NumericOverflow {
            matrix: "W1",
            step: None,
        });
    }
    if params.eta_w2 != 0.0 {
        state.w2.ger(params.eta_w2, &epsilon, &z, 1.0);
    }
    ensure_finite("W2", state.w2.as_slice())?;
    update_mean(state, &pre, params);

    Ok(StepIntermediates {
        z,
        a: None,
        n_vec: None,
        teaching,
        y_hat: Some(y_hat),
        epsilon: Some(epsilon),
    })
}
