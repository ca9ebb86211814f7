//! Shared data model: dense matrices, model state, training configuration,
//! learning-rate schedules, metric records and the binary checkpoint format.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Dense 64-bit matrix. Storage is nalgebra's column-major layout; every
/// file format in this crate serialises in row-major order.
pub type Mat = nalgebra::DMatrix<f64>;
pub type Vector = nalgebra::DVector<f64>;

const CHECKPOINT_MAGIC: &[u8; 8] = b"BMVR0001";

/// Trainable weights of one two-layer model.
///
/// `w1` is k×m, `w2` is n×k and `q` is k×k. `r` is only used by the
/// decoupled-interneuron variant, where it replaces `qᵀ` on the
/// pyramidal-to-interneuron path. `z_bar` is the running mean subtracted
/// from the ReLU output.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub w1: Mat,
    pub w2: Mat,
    pub q: Mat,
    pub r: Option<Mat>,
    pub z_bar: Option<Vector>,
}

impl ModelState {
    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.nrows()
    }

    /// Checks that all shapes agree and all entries are finite.
    pub fn validate(&self) -> Result<()> {
        let k = self.hidden_dim();
        if k == 0 || self.input_dim() == 0 || self.output_dim() == 0 {
            return Err(Error::Dimension(
                "model dimensions must be at least 1".into(),
            ));
        }
        if self.w2.ncols() != k {
            return Err(Error::Dimension(format!(
                "W2 is {}x{}, expected {}x{k}",
                self.w2.nrows(),
                self.w2.ncols(),
                self.output_dim()
            )));
        }
        if self.q.shape() != (k, k) {
            return Err(Error::Dimension(format!(
                "Q is {:?}, expected ({k}, {k})",
                self.q.shape()
            )));
        }
        if let Some(r) = &self.r {
            if r.shape() != (k, k) {
                return Err(Error::Dimension(format!(
                    "R is {:?}, expected ({k}, {k})",
                    r.shape()
                )));
            }
        }
        if let Some(z_bar) = &self.z_bar {
            if z_bar.len() != k {
                return Err(Error::Dimension(format!(
                    "z_bar has length {}, expected {k}",
                    z_bar.len()
                )));
            }
        }
        let checks: [(&'static str, Option<&[f64]>); 5] = [
            ("W1", Some(self.w1.as_slice())),
            ("W2", Some(self.w2.as_slice())),
            ("Q", Some(self.q.as_slice())),
            ("R", self.r.as_ref().map(|r| r.as_slice())),
            ("z_bar", self.z_bar.as_ref().map(|z| z.as_slice())),
        ];
        for (name, values) in checks {
            if let Some(values) = values {
                if !values.iter().all(|v| v.is_finite()) {
                    return Err(Error::NumericOverflow {
                        matrix: name,
                        step: None,
                    });
                }
            }
        }
        Ok(())
    }

    /// Serialises to the flat little-endian checkpoint layout:
    /// magic `BMVR0001`, m, n, k as u32, W1, W2, Q row-major f64, then a
    /// presence byte and row-major data for R, then a presence byte and
    /// data for z_bar.
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let (m, n, k) = (self.input_dim(), self.output_dim(), self.hidden_dim());
        let mut out = Vec::with_capacity(8 + 12 + 8 * (k * m + n * k + 2 * k * k + k) + 2);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        for d in [m, n, k] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        write_row_major(&mut out, &self.w1);
        write_row_major(&mut out, &self.w2);
        write_row_major(&mut out, &self.q);
        match &self.r {
            Some(r) => {
                out.push(1);
                write_row_major(&mut out, r);
            }
            None => out.push(0),
        }
        match &self.z_bar {
            Some(z) => {
                out.push(1);
                for v in z.iter() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            None => out.push(0),
        }
        out
    }

    pub fn from_checkpoint_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut reader = ByteReader {
            bytes,
            pos: 0,
            origin,
        };
        let magic = reader.take(8)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::format(origin, 0, "bad checkpoint magic"));
        }
        let m = reader.u32()? as usize;
        let n = reader.u32()? as usize;
        let k = reader.u32()? as usize;
        if m == 0 || n == 0 || k == 0 {
            return Err(Error::format(
                origin,
                8,
                "zero dimension in checkpoint header",
            ));
        }
        let w1 = reader.row_major(k, m)?;
        let w2 = reader.row_major(n, k)?;
        let q = reader.row_major(k, k)?;
        let r = match reader.flag()? {
            true => Some(reader.row_major(k, k)?),
            false => None,
        };
        let z_bar = match reader.flag()? {
            true => Some(Vector::from_column_slice(
                reader.row_major(k, 1)?.as_slice(),
            )),
            false => None,
        };
        if reader.pos != bytes.len() {
            return Err(Error::format(
                origin,
                reader.pos as u64,
                "trailing bytes after checkpoint",
            ));
        }
        let state = ModelState {
            w1,
            w2,
            q,
            r,
            z_bar,
        };
        state.validate()?;
        Ok(state)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&self.to_checkpoint_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_bytes(&bytes, path)
    }
}

fn write_row_major(out: &mut Vec<u8>, mat: &Mat) {
    for i in 0..mat.nrows() {
        for j in 0..mat.ncols() {
            out.extend_from_slice(&mat[(i, j)].to_le_bytes());
        }
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let slice = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(slice)
            }
            None => Err(Error::format(
                self.origin,
                self.pos as u64,
                "truncated checkpoint",
            )),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn flag(&mut self) -> Result<bool> {
        let at = self.pos as u64;
        match self.take(1)?[0] {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::format(
                self.origin,
                at,
                format!("invalid presence flag {other}"),
            )),
        }
    }

    fn row_major(&mut self, rows: usize, cols: usize) -> Result<Mat> {
        let raw = self.take(rows * cols * 8)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        Ok(Mat::from_row_iterator(rows, cols, values))
    }
}

/// Paired input/target vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vector,
    pub y: Vector,
}

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Nonlinearity {
    #[default]
    Linear,
    /// `ReLU(W1 x) − z̄` with `z̄` an online running mean of the ReLU output.
    MeanSubtractedRelu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Variant {
    #[default]
    Bmvr,
    Backprop,
    BmvrDecoupled,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Bmvr => "bmvr",
            Variant::Backprop => "backprop",
            Variant::BmvrDecoupled => "bmvr-decoupled",
        }
    }
}

/// Learning rate `eta0 / (1 + t / t0)`, or the constant `eta0` without `t0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleSpec {
    pub eta0: f64,
    pub t0: Option<f64>,
}

impl ScheduleSpec {
    pub const fn constant(eta0: f64) -> Self {
        ScheduleSpec { eta0, t0: None }
    }

    pub const fn decaying(eta0: f64, t0: f64) -> Self {
        ScheduleSpec { eta0, t0: Some(t0) }
    }

    pub fn value(&self, t: u64) -> f64 {
        schedule_value(self, t)
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.eta0 >= 0.0 && self.eta0.is_finite()) {
            return Err(Error::Config(format!(
                "{name}: learning rate must be a nonnegative number"
            )));
        }
        if let Some(t0) = self.t0 {
            if !(t0 > 0.0 && t0.is_finite()) {
                return Err(Error::Config(format!("{name}: t0 must be positive")));
            }
        }
        Ok(())
    }
}

pub fn schedule_value(s: &ScheduleSpec, t: u64) -> f64 {
    match s.t0 {
        None => s.eta0,
        Some(t0) => s.eta0 / (1.0 + t as f64 / t0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitSpec {
    /// Q starts as `q_scale · I`.
    pub q_scale: f64,
    /// Allocate the R matrix used by the decoupled variant.
    pub decoupled: bool,
}

impl Default for InitSpec {
    fn default() -> Self {
        InitSpec {
            q_scale: 1.0,
            decoupled: false,
        }
    }
}

/// Draws a fresh model: W1 ~ N(0, 1/m), W2 ~ N(0, 1/k), Q = q_scale·I,
/// R ~ N(0, 1/k) when decoupled, and z̄ = 0.
pub fn new_model(m: usize, n: usize, k: usize, init: &InitSpec, seed: u64) -> Result<ModelState> {
    if m == 0 || n == 0 || k == 0 {
        return Err(Error::Dimension(format!(
            "model dimensions must be at least 1 (m={m}, n={n}, k={k})"
        )));
    }
    if !init.q_scale.is_finite() {
        return Err(Error::Config("q_scale must be finite".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w1 = gaussian(&mut rng, k, m, (1.0 / m as f64).sqrt());
    let w2 = gaussian(&mut rng, n, k, (1.0 / k as f64).sqrt());
    let q = Mat::identity(k, k) * init.q_scale;
    let r = init
        .decoupled
        .then(|| gaussian(&mut rng, k, k, (1.0 / k as f64).sqrt()));
    Ok(ModelState {
        w1,
        w2,
        q,
        r,
        z_bar: Some(Vector::zeros(k)),
    })
}

/// Row-major i.i.d. Gaussian fill, so the draw order matches the file layout.
pub(crate) fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Mat {
    let normal = Normal::new(0.0, std).expect("finite standard deviation");
    let values: Vec<f64> = (0..rows * cols).map(|_| normal.sample(rng)).collect();
    Mat::from_row_slice(rows, cols, &values)
}

/// Everything needed to train one model.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub eta_w1: ScheduleSpec,
    pub eta_w2: ScheduleSpec,
    pub eta_q: ScheduleSpec,
    /// Ratio between descent and ascent time scales; Q moves at `eta_q / tau`.
    pub tau: f64,
    pub nonlinearity: Nonlinearity,
    /// Rate of the running-mean estimate for the mean-subtracted ReLU.
    pub mean_rate: f64,
    pub variant: Variant,
    pub seed: u64,
    pub steps: u64,
    /// Hidden width.
    pub k: usize,
    pub init: InitSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            eta_w1: ScheduleSpec::constant(0.01),
            eta_w2: ScheduleSpec::constant(0.01),
            eta_q: ScheduleSpec::constant(0.01),
            tau: 1.0,
            nonlinearity: Nonlinearity::Linear,
            mean_rate: 1e-4,
            variant: Variant::Bmvr,
            seed: 0,
            steps: 0,
            k: 1,
            init: InitSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.eta_w1.validate("eta_w1")?;
        self.eta_w2.validate("eta_w2")?;
        self.eta_q.validate("eta_q")?;
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config("tau must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.mean_rate) {
            return Err(Error::Config("mean_rate must lie in [0, 1)".into()));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        Ok(())
    }
}

/// One evaluation point of a training run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricRecord {
    pub step: u64,
    pub objective: f64,
    pub upper_bound_objective: Option<f64>,
    pub constraint_gap: Option<f64>,
    pub train_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn new_model_shapes_and_identity_q() {
        let s = new_model(3, 2, 2, &InitSpec::default(), 7).unwrap();
        assert_eq!(s.w1.shape(), (2, 3));
        assert_eq!(s.w2.shape(), (2, 2));
        assert_eq!(s.q, Mat::identity(2, 2));
        assert!(s.r.is_none());
        assert_eq!(s.z_bar.as_ref().unwrap().len(), 2);
        s.validate().unwrap();
    }

    #[test]
    fn new_model_is_deterministic() {
        let a = new_model(3, 2, 2, &InitSpec::default(), 7).unwrap();
        let b = new_model(3, 2, 2, &InitSpec::default(), 7).unwrap();
        assert_eq!(a.to_checkpoint_bytes(), b.to_checkpoint_bytes());
        let c = new_model(3, 2, 2, &InitSpec::default(), 8).unwrap();
        assert_ne!(a.w1, c.w1);
    }

    #[test]
    fn scalar_model_has_unit_q() {
        let s = new_model(1, 1, 1, &InitSpec::default(), 0).unwrap();
        assert_eq!(s.q[(0, 0)], 1.0);
    }

    #[test]
    fn q_scale_and_decoupled_init() {
        let init = InitSpec {
            q_scale: 0.5,
            decoupled: true,
        };
        let s = new_model(4, 3, 2, &init, 1).unwrap();
        assert_eq!(s.q, Mat::identity(2, 2) * 0.5);
        assert_eq!(s.r.as_ref().unwrap().shape(), (2, 2));
    }

    #[test]
    fn zero_dimension_rejected() {
        for (m, n, k) in [(0, 1, 1), (1, 0, 1), (1, 1, 0)] {
            assert!(matches!(
                new_model(m, n, k, &InitSpec::default(), 0),
                Err(Error::Dimension(_))
            ));
        }
    }

    #[test]
    fn schedule_examples() {
        let decay = ScheduleSpec::decaying(0.01, 1000.0);
        assert_eq!(schedule_value(&decay, 0), 0.01);
        assert_eq!(schedule_value(&decay, 1000), 0.005);
        assert_eq!(schedule_value(&ScheduleSpec::constant(0.4), 1_000_000), 0.4);
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainConfig {
            k: 2,
            ..Default::default()
        };
        cfg.validate().unwrap();
        cfg.tau = 0.0;
        assert!(cfg.validate().is_err());
        cfg.tau = 1.0;
        cfg.mean_rate = 1.0;
        assert!(cfg.validate().is_err());
        cfg.mean_rate = 0.0;
        cfg.eta_q = ScheduleSpec::constant(-1.0);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn checkpoint_layout_is_row_major_little_endian() {
        let state = ModelState {
            w1: Mat::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
            w2: Mat::from_row_slice(1, 2, &[7.0, 8.0]),
            q: Mat::from_row_slice(2, 2, &[9.0, 10.0, 11.0, 12.0]),
            r: None,
            z_bar: Some(Vector::from_vec(vec![13.0, 14.0])),
        };
        let bytes = state.to_checkpoint_bytes();
        assert_eq!(&bytes[..8], b"BMVR0001");
        assert_eq!(&bytes[8..20], &[3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0]);
        let floats: Vec<f64> = bytes[20..20 + 12 * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(floats, (1..=12).map(f64::from).collect::<Vec<_>>());
        assert_eq!(bytes[20 + 96], 0);
        assert_eq!(bytes[20 + 97], 1);
        assert_eq!(bytes.len(), 20 + 96 + 2 + 16);
    }

    #[test]
    fn checkpoint_rejects_bad_input() {
        let state = new_model(2, 2, 2, &InitSpec::default(), 3).unwrap();
        let mut bytes = state.to_checkpoint_bytes();
        let origin = Path::new("mem");
        assert!(ModelState::from_checkpoint_bytes(&bytes[..bytes.len() - 1], origin).is_err());
        bytes[0] = b'X';
        assert!(matches!(
            ModelState::from_checkpoint_bytes(&bytes, origin),
            Err(Error::Format { offset: 0, .. })
        ));
    }

    proptest! {
        #[test]
        fn checkpoint_roundtrip(m in 1usize..6, n in 1usize..6, k in 1usize..5, seed: u64, decoupled: bool) {
            let state = new_model(m, n, k, &InitSpec { q_scale: 1.0, decoupled }, seed).unwrap();
            let back = ModelState::from_checkpoint_bytes(&state.to_checkpoint_bytes(), Path::new("mem")).unwrap();
            prop_assert_eq!(back, state);
        }

        #[test]
        fn schedule_nonincreasing(eta0 in 0.0f64..1.0, t0 in 1.0f64..1e5, t in 0u64..1_000_000) {
            let s = ScheduleSpec::decaying(eta0, t0);
            prop_assert!(s.value(t + 1) <= s.value(t));
            prop_assert!(s.value(t) <= eta0);
        }
    }
}
