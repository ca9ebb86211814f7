//! C ABI for the `bmvr` crate.
//!
//! Models and datasets are opaque heap handles released with their `_free`
//! function. Every fallible call returns a [`BmvrStatus`]; on failure the
//! message is available from [`bmvr_last_error`] on the same thread.
//! Matrices cross the boundary row-major; datasets take one sample per row.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::slice;

use bmvr::data::{synth_linear, Dataset, Split};
use bmvr::diagnostics::objective;
use bmvr::harness::{self, RunSpec};
use bmvr::oracle::{accumulate_stats, solve_rrr};
use bmvr::rules::{self, StepParams, VecView};
use bmvr::{
    new_model, Error, InitSpec, Mat, ModelState, Nonlinearity, ScheduleSpec, TrainConfig, Variant,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BmvrStatus {
    Ok = 0,
    NullPointer = 1,
    Dimension = 2,
    Config = 3,
    NumericOverflow = 4,
    Diverged = 5,
    Format = 6,
    Io = 7,
    MissingR = 8,
    EmptyDataset = 9,
    NotOneHot = 10,
    InvalidArgument = 11,
    Panic = 12,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BmvrVariant {
    Bmvr = 0,
    Backprop = 1,
    BmvrDecoupled = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BmvrNonlinearity {
    Linear = 0,
    MeanSubtractedRelu = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BmvrMatrix {
    W1 = 0,
    W2 = 1,
    Q = 2,
    R = 3,
}

/// Learning rates for a single step.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct BmvrStepParams {
    pub eta_w1: f64,
    pub eta_w2: f64,
    pub eta_q: f64,
    pub tau: f64,
    pub nonlinearity: BmvrNonlinearity,
    pub mean_rate: f64,
}

/// Training configuration. A schedule with `t0 <= 0` is constant.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct BmvrTrainConfig {
    pub variant: BmvrVariant,
    pub nonlinearity: BmvrNonlinearity,
    pub k: usize,
    pub steps: u64,
    pub seed: u64,
    pub eta_w1: f64,
    pub eta_w2: f64,
    pub eta_q: f64,
    pub t0: f64,
    pub tau: f64,
    pub mean_rate: f64,
}

pub struct BmvrModel(ModelState);

pub struct BmvrDataset(Dataset);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let text = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = text);
}

fn status_of(error: &Error) -> BmvrStatus {
    match error {
        Error::Dimension(_) => BmvrStatus::Dimension,
        Error::Config(_) => BmvrStatus::Config,
        Error::NumericOverflow { .. } => BmvrStatus::NumericOverflow,
        Error::Diverged { .. } => BmvrStatus::Diverged,
        Error::Format { .. } | Error::Csv(_) => BmvrStatus::Format,
        Error::Io { .. } => BmvrStatus::Io,
        Error::MissingR => BmvrStatus::MissingR,
        Error::EmptyDataset => BmvrStatus::EmptyDataset,
        Error::NotOneHot(_) => BmvrStatus::NotOneHot,
    }
}

enum Failure {
    Lib(Error),
    Status(BmvrStatus, &'static str),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn null() -> Failure {
    Failure::Status(BmvrStatus::NullPointer, "null pointer argument")
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> BmvrStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_last_error("");
            BmvrStatus::Ok
        }
        Ok(Err(Failure::Lib(e))) => {
            set_last_error(&e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Status(status, message))) => {
            set_last_error(message);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            BmvrStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(null)
}

unsafe fn as_mut<'a, T>(p: *mut T) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(null)
}

unsafe fn floats<'a>(p: *const f64, len: usize) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null());
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, Failure> {
    if p.is_null() {
        return Err(null());
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| Failure::Status(BmvrStatus::InvalidArgument, "path is not valid UTF-8"))
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null());
    }
    out.write(value);
    Ok(())
}

fn variant(v: BmvrVariant) -> Variant {
    match v {
        BmvrVariant::Bmvr => Variant::Bmvr,
        BmvrVariant::Backprop => Variant::Backprop,
        BmvrVariant::BmvrDecoupled => Variant::BmvrDecoupled,
    }
}

fn nonlinearity(n: BmvrNonlinearity) -> Nonlinearity {
    match n {
        BmvrNonlinearity::Linear => Nonlinearity::Linear,
        BmvrNonlinearity::MeanSubtractedRelu => Nonlinearity::MeanSubtractedRelu,
    }
}

fn schedule(eta0: f64, t0: f64) -> ScheduleSpec {
    if t0 > 0.0 {
        ScheduleSpec::decaying(eta0, t0)
    } else {
        ScheduleSpec::constant(eta0)
    }
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn bmvr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// `eta0 / (1 + t / t0)`, or `eta0` when `t0 <= 0`.
#[no_mangle]
pub extern "C" fn bmvr_schedule_value(eta0: f64, t0: f64, t: u64) -> f64 {
    schedule(eta0, t0).value(t)
}

/// Creates a randomly initialised model with `Q = q_scale · I`. `decoupled`
/// allocates the R matrix.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn bmvr_model_new(
    m: usize,
    n: usize,
    k: usize,
    q_scale: f64,
    decoupled: bool,
    seed: u64,
    out: *mut *mut BmvrModel,
) -> BmvrStatus {
    guard(|| {
        let init = InitSpec { q_scale, decoupled };
        let state = new_model(m, n, k, &init, seed)?;
        write_out(out, Box::into_raw(Box::new(BmvrModel(state))))
    })
}

/// # Safety
/// `model` must be null or a handle returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bmvr_model_free(model: *mut BmvrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle; the output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn bmvr_model_dims(
    model: *const BmvrModel,
    m: *mut usize,
    n: *mut usize,
    k: *mut usize,
) -> BmvrStatus {
    guard(|| {
        let s = &as_ref(model)?.0;
        write_out(m, s.input_dim())?;
        write_out(n, s.output_dim())?;
        write_out(k, s.hidden_dim())
    })
}

fn matrix_of(state: &ModelState, which: BmvrMatrix) -> Result<&Mat, Failure> {
    match which {
        BmvrMatrix::W1 => Ok(&state.w1),
        BmvrMatrix::W2 => Ok(&state.w2),
        BmvrMatrix::Q => Ok(&state.q),
        BmvrMatrix::R => state.r.as_ref().ok_or(Failure::Lib(Error::MissingR)),
    }
}

/// Copies one weight matrix row-major into `out`, which must hold exactly
/// `len = rows · cols` values.
///
/// # Safety
/// `model` must be a live handle and `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn bmvr_model_get(
    model: *const BmvrModel,
    which: BmvrMatrix,
    out: *mut f64,
    len: usize,
) -> BmvrStatus {
    guard(|| {
        let mat = matrix_of(&as_ref(model)?.0, which)?;
        if len != mat.len() {
            return Err(Error::Dimension(format!(
                "buffer holds {len} values, matrix has {}",
                mat.len()
            ))
            .into());
        }
        if out.is_null() {
            return Err(null());
        }
        let dst = slice::from_raw_parts_mut(out, len);
        let cols = mat.ncols();
        for ((i, j), v) in (0..mat.nrows())
            .flat_map(|i| (0..cols).map(move |j| (i, j)))
            .zip(dst)
        {
            *v = mat[(i, j)];
        }
        Ok(())
    })
}

/// Overwrites one weight matrix from `len = rows · cols` row-major values.
///
/// # Safety
/// `model` must be a live handle and `values` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn bmvr_model_set(
    model: *mut BmvrModel,
    which: BmvrMatrix,
    values: *const f64,
    len: usize,
) -> BmvrStatus {
    guard(|| {
        let state = &mut as_mut(model)?.0;
        let (rows, cols) = matrix_of(state, which)?.shape();
        if len != rows * cols {
            return Err(
                Error::Dimension(format!("expected {} values, got {len}", rows * cols)).into(),
            );
        }
        let src = floats(values, len)?;
        let mat = Mat::from_row_slice(rows, cols, src);
        match which {
            BmvrMatrix::W1 => state.w1 = mat,
            BmvrMatrix::W2 => state.w2 = mat,
            BmvrMatrix::Q => state.q = mat,
            BmvrMatrix::R => state.r = Some(mat),
        }
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn bmvr_model_save(
    model: *const BmvrModel,
    path: *const c_char,
) -> BmvrStatus {
    guard(|| {
        let state = &as_ref(model)?.0;
        state.save(path_arg(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated UTF-8 string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bmvr_model_load(
    path: *const c_char,
    out: *mut *mut BmvrModel,
) -> BmvrStatus {
    guard(|| {
        let state = ModelState::load(path_arg(path)?)?;
        write_out(out, Box::into_raw(Box::new(BmvrModel(state))))
    })
}

/// Synthetic low-rank regression data.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bmvr_dataset_synth(
    m: usize,
    n: usize,
    k_true: usize,
    samples: usize,
    noise_sigma: f64,
    seed: u64,
    out: *mut *mut BmvrDataset,
) -> BmvrStatus {
    guard(|| {
        let data = synth_linear(m, n, k_true, samples, noise_sigma, seed)?;
        write_out(out, Box::into_raw(Box::new(BmvrDataset(data))))
    })
}

/// Builds a dataset from `samples` rows of `m` inputs and `n` targets.
///
/// # Safety
/// `x` must point to `samples · m` doubles, `y` to `samples · n` doubles,
/// and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bmvr_dataset_from_arrays(
    x: *const f64,
    y: *const f64,
    samples: usize,
    m: usize,
    n: usize,
    out: *mut *mut BmvrDataset,
) -> BmvrStatus {
    guard(|| {
        let xs = floats(x, samples * m)?;
        let ys = floats(y, samples * n)?;
        let data = Dataset::new(
            "ffi",
            Mat::from_column_slice(m, samples, xs),
            Mat::from_column_slice(n, samples, ys),
            Split::Train,
        )?;
        write_out(out, Box::into_raw(Box::new(BmvrDataset(data))))
    })
}

/// # Safety
/// `data` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn bmvr_dataset_free(data: *mut BmvrDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Number of samples, or 0 for a null handle.
///
/// # Safety
/// `data` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn bmvr_dataset_len(data: *const BmvrDataset) -> usize {
    data.as_ref().map_or(0, |d| d.0.len())
}

/// Applies one update of `variant` for the sample `(x, y)`.
///
/// # Safety
/// `model` must be a live handle, `x` must point to `m` doubles, `y` to `n`
/// doubles and `params` to a valid parameter block.
#[no_mangle]
pub unsafe extern "C" fn bmvr_step(
    model: *mut BmvrModel,
    variant: BmvrVariant,
    x: *const f64,
    y: *const f64,
    params: *const BmvrStepParams,
) -> BmvrStatus {
    guard(|| {
        let state = &mut as_mut(model)?.0;
        let p = as_ref(params)?;
        let xs = floats(x, state.input_dim())?;
        let ys = floats(y, state.output_dim())?;
        let params = StepParams {
            eta_w1: p.eta_w1,
            eta_w2: p.eta_w2,
            eta_q: p.eta_q,
            tau: p.tau,
            nonlinearity: nonlinearity(p.nonlinearity),
            mean_rate: p.mean_rate,
        };
        let (xv, yv) = (
            VecView::from_slice(xs, xs.len()),
            VecView::from_slice(ys, ys.len()),
        );
        match variant {
            BmvrVariant::Bmvr => rules::bmvr_step(state, xv, yv, &params),
            BmvrVariant::Backprop => rules::backprop_step(state, xv, yv, &params),
            BmvrVariant::BmvrDecoupled => rules::bmvr_decoupled_step(state, xv, yv, &params),
        }?;
        Ok(())
    })
}

/// Mean squared prediction error of `model` on `data`.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bmvr_objective(
    model: *const BmvrModel,
    data: *const BmvrDataset,
    nonlin: BmvrNonlinearity,
    out: *mut f64,
) -> BmvrStatus {
    guard(|| {
        let value = objective(&as_ref(model)?.0, &as_ref(data)?.0, nonlinearity(nonlin))?;
        write_out(out, value)
    })
}

/// Closed-form rank-`k` optimum. Writes the optimal loss and, if
/// `model_out` is non-null, a model holding the optimal weights.
///
/// # Safety
/// `data` must be live; `optimal_loss` writable; `model_out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn bmvr_oracle(
    data: *const BmvrDataset,
    k: usize,
    optimal_loss: *mut f64,
    model_out: *mut *mut BmvrModel,
) -> BmvrStatus {
    guard(|| {
        let stats = accumulate_stats(&as_ref(data)?.0)?;
        let sol = solve_rrr(&stats, k, None)?;
        write_out(optimal_loss, sol.optimal_loss)?;
        if !model_out.is_null() {
            model_out.write(Box::into_raw(Box::new(BmvrModel(sol.to_model()))));
        }
        Ok(())
    })
}

/// Trains a fresh model on `train`, returning it and its final objective on
/// `eval`.
///
/// # Safety
/// Handles must be live; `config` valid; `model_out` and `final_objective`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn bmvr_train(
    train: *const BmvrDataset,
    eval: *const BmvrDataset,
    config: *const BmvrTrainConfig,
    model_out: *mut *mut BmvrModel,
    final_objective: *mut f64,
) -> BmvrStatus {
    guard(|| {
        let c = as_ref(config)?;
        let (train, eval) = (&as_ref(train)?.0, &as_ref(eval)?.0);
        if model_out.is_null() || final_objective.is_null() {
            return Err(null());
        }
        let cfg = TrainConfig {
            eta_w1: schedule(c.eta_w1, c.t0),
            eta_w2: schedule(c.eta_w2, c.t0),
            eta_q: schedule(c.eta_q, c.t0),
            tau: c.tau,
            nonlinearity: nonlinearity(c.nonlinearity),
            mean_rate: c.mean_rate,
            variant: variant(c.variant),
            seed: c.seed,
            steps: c.steps,
            k: c.k,
            init: InitSpec::default(),
        };
        let mut spec = RunSpec::new(cfg, train, eval);
        spec.eval_every = c.steps.max(1);
        let mut out = harness::run(&spec)?;
        let last = out.log.final_row().map_or(f64::NAN, |r| r.objective_mean);
        let state = out.states.swap_remove(0);
        final_objective.write(last);
        model_out.write(Box::into_raw(Box::new(BmvrModel(state))));
        Ok(())
    })
}
