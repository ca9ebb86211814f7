//! Offline ground truth for the linear network: second-moment statistics and
//! the closed-form rank-k regression optimum.
//!
//! With `S = Cxx^{-1/2}` and `M = S Cxy Cyx S`, the optimum of
//! `(1/T) Σ ‖y − W2 W1 x‖²` is reached at `W1 = U S` where the rows of `U`
//! are the top-k eigenvectors of `M`, and `W2 = (W1 Cxy)ᵀ`. That W1 satisfies
//! the gain constraint `W1 Cxx W1ᵀ = I_k` with equality whenever `Cxy` has
//! at least k nonzero singular values.

use log::warn;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{inv_sqrt_spd, singular_values_desc, sym_eigen_desc, symmetrize};
use crate::types::{Mat, ModelState, Vector};

/// Empirical second moments `(1/T) Σ x xᵀ`, `(1/T) Σ x yᵀ`, `(1/T) Σ y yᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationStats {
    pub cxx: Mat,
    pub cxy: Mat,
    pub cyy: Mat,
    pub samples: usize,
}

impl CorrelationStats {
    pub fn cyx(&self) -> Mat {
        self.cxy.transpose()
    }

    /// Default ridge `1e-10 · Tr(Cxx) / m`.
    pub fn default_ridge(&self) -> f64 {
        1e-10 * self.cxx.trace() / self.cxx.nrows() as f64
    }

    /// `(Cxx + ridge·I)^{-1}`.
    pub fn cxx_inverse(&self, ridge: f64) -> Result<Mat> {
        let m = self.cxx.nrows();
        let reg = &self.cxx + Mat::identity(m, m) * ridge;
        crate::linalg::inv_spd(&reg)
            .ok_or_else(|| Error::Config("Cxx + ridge·I is not positive definite".into()))
    }
}

pub fn accumulate_stats(data: &Dataset) -> Result<CorrelationStats> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let inv_t = 1.0 / data.len() as f64;
    let xt = data.x.transpose();
    let yt = data.y.transpose();
    let cxx = symmetrize(&(&data.x * &xt)) * inv_t;
    let cxy = (&data.x * &yt) * inv_t;
    let cyy = symmetrize(&(&data.y * &yt)) * inv_t;
    Ok(CorrelationStats {
        cxx,
        cxy,
        cyy,
        samples: data.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    /// Global minimum of `(1/T) Σ ‖y − W2 W1 x‖²`.
    pub optimal_loss: f64,
    /// Eigenvalues of M in descending order.
    pub m_eigenvalues: Vector,
    pub w1_opt: Mat,
    pub w2_opt: Mat,
    /// `Cxy` has at least k singular values above `1e-10 ×` its largest.
    pub rank_ok: bool,
}

impl OracleSolution {
    /// Linear model at the optimum, with `Q` set to the symmetric square root
    /// of the equilibrium multiplier `U M Uᵀ`.
    pub fn to_model(&self) -> ModelState {
        let k = self.w1_opt.nrows();
        let top = Vector::from_iterator(
            k,
            (0..k).map(|i| {
                self.m_eigenvalues
                    .get(i)
                    .copied()
                    .unwrap_or(0.0)
                    .max(0.0)
                    .sqrt()
            }),
        );
        ModelState {
            w1: self.w1_opt.clone(),
            w2: self.w2_opt.clone(),
            q: Mat::from_diagonal(&top),
            r: None,
            z_bar: None,
        }
    }
}

/// Closed-form rank-k regression optimum.
///
/// `ridge` regularises `Cxx` before the inverse square root; `None` uses
/// [`CorrelationStats::default_ridge`]. When `Cxy` has fewer than k usable
/// singular values the best achievable solution is still returned, with
/// `rank_ok = false`.
pub fn solve_rrr(stats: &CorrelationStats, k: usize, ridge: Option<f64>) -> Result<OracleSolution> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let m = stats.cxx.nrows();
    let ridge = ridge.unwrap_or_else(|| stats.default_ridge());
    let reg = &stats.cxx + Mat::identity(m, m) * ridge;
    let s = inv_sqrt_spd(&reg)
        .ok_or_else(|| Error::Config("Cxx + ridge·I is not positive definite".into()))?;
    let f = &s * &stats.cxy;
    let big_m = symmetrize(&(&f * f.transpose()));
    let (eigenvalues, eigenvectors) = sym_eigen_desc(&big_m);

    let usable = k.min(m);
    let mut u = Mat::zeros(k, m);
    for i in 0..usable {
        u.set_row(i, &eigenvectors.column(i).transpose());
    }
    let w1_opt = &u * &s;
    let w2_opt = (&w1_opt * &stats.cxy).transpose();
    let captured: f64 = eigenvalues.iter().take(usable).sum();
    let optimal_loss = (stats.cyy.trace() - captured).max(0.0);

    let sv = singular_values_desc(&stats.cxy);
    let rank_ok = match (sv.get(0), sv.get(k - 1)) {
        (Some(&largest), Some(&kth)) => kth > 1e-10 * largest,
        _ => false,
    };
    if !rank_ok {
        warn!("Cxy has fewer than {k} nonzero singular values; the rank-{k} optimum is not unique");
    }
    Ok(OracleSolution {
        optimal_loss,
        m_eigenvalues: eigenvalues,
        w1_opt,
        w2_opt,
        rank_ok,
    })
}

/// Gain-constraint diagnostics for a (linear) state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Saturation {
    /// `‖W1 Cxx W1ᵀ − I_k‖_F`.
    pub gap: f64,
    /// Smallest singular value of Q.
    pub q_min_sv: f64,
}

pub fn check_saturation(state: &ModelState, stats: &CorrelationStats) -> Result<Saturation> {
    if state.w1.ncols() != stats.cxx.nrows() {
        return Err(Error::Dimension(format!(
            "model input dimension {} does not match statistics dimension {}",
            state.w1.ncols(),
            stats.cxx.nrows()
        )));
    }
    let k = state.hidden_dim();
    let cov = &state.w1 * &stats.cxx * state.w1.transpose();
    let gap = (cov - Mat::identity(k, k)).norm();
    let q_min_sv = singular_values_desc(&state.q)
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    Ok(Saturation { gap, q_min_sv })
}
