//! Datasets: synthetic low-rank regression data and readers for the MNIST
//! IDX and CIFAR binary formats.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rules::VecView;
use crate::types::{gaussian, Mat};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Paired samples stored as columns: `x` is m×T, `y` is n×T.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub x: Mat,
    pub y: Mat,
    pub split: Split,
}

impl Dataset {
    pub fn new(name: impl Into<String>, x: Mat, y: Mat, split: Split) -> Result<Self> {
        if x.ncols() != y.ncols() {
            return Err(Error::Dimension(format!(
                "inputs have {} samples, targets have {}",
                x.ncols(),
                y.ncols()
            )));
        }
        if x.ncols() == 0 {
            return Err(Error::EmptyDataset);
        }
        if x.nrows() == 0 || y.nrows() == 0 {
            return Err(Error::Dimension("sample vectors must be non-empty".into()));
        }
        Ok(Dataset {
            name: name.into(),
            x,
            y,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.x.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.y.nrows()
    }

    pub fn sample(&self, t: usize) -> (VecView<'_>, VecView<'_>) {
        (self.x.column(t), self.y.column(t))
    }

    /// Class index of each column if every target column is one-hot.
    pub fn labels(&self) -> Result<Vec<usize>> {
        (0..self.len())
            .map(|t| {
                let col = self.y.column(t);
                let mut hot = None;
                for (i, &v) in col.iter().enumerate() {
                    if v == 1.0 && hot.is_none() {
                        hot = Some(i);
                    } else if v != 0.0 {
                        return Err(Error::NotOneHot(t));
                    }
                }
                hot.ok_or(Error::NotOneHot(t))
            })
            .collect()
    }

    pub fn is_one_hot(&self) -> bool {
        self.labels().is_ok()
    }

    /// New dataset made of the given columns, in order.
    pub fn select(&self, indices: &[usize], name: impl Into<String>) -> Result<Dataset> {
        let x = self.x.select_columns(indices);
        let y = self.y.select_columns(indices);
        Dataset::new(name, x, y, self.split)
    }

    /// First `count` samples (or all of them if fewer).
    pub fn head(&self, count: usize) -> Result<Dataset> {
        let count = count.min(self.len());
        Dataset::new(
            self.name.clone(),
            self.x.columns(0, count).into_owned(),
            self.y.columns(0, count).into_owned(),
            self.split,
        )
    }
}

/// Synthetic regression data `y = B2 B1 x + σ·noise` with `x ~ N(0, I_m)`.
///
/// `B1` (k_true×m) has N(0, 1/m) entries and `B2` (n×k_true) has
/// N(0, 1/k_true) entries, so the noiseless targets have unit variance per
/// coordinate on average.
pub fn synth_linear(
    m: usize,
    n: usize,
    k_true: usize,
    samples: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<Dataset> {
    if m == 0 || n == 0 || samples == 0 {
        return Err(Error::Dimension(
            "synthetic dimensions must be positive".into(),
        ));
    }
    if k_true == 0 || k_true > m.min(n) {
        return Err(Error::Dimension(format!(
            "k_true={k_true} must lie in 1..=min(m, n)={}",
            m.min(n)
        )));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::Config("noise_sigma must be nonnegative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b1 = gaussian(&mut rng, k_true, m, (1.0 / m as f64).sqrt());
    let b2 = gaussian(&mut rng, n, k_true, (1.0 / k_true as f64).sqrt());
    let x = gaussian(&mut rng, samples, m, 1.0).transpose();
    let mut y = &b2 * (&b1 * &x);
    if noise_sigma > 0.0 {
        y += gaussian(&mut rng, samples, n, noise_sigma).transpose();
    }
    Dataset::new(format!("synth-m{m}-n{n}-k{k_true}"), x, y, Split::Train)
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::format(path, offset as u64, "truncated IDX header"))
}

fn one_hot(
    labels: &[u8],
    classes: usize,
    path: &Path,
    label_offset: usize,
    stride: usize,
) -> Result<Mat> {
    let mut y = Mat::zeros(classes, labels.len());
    for (t, &label) in labels.iter().enumerate() {
        if label as usize >= classes {
            return Err(Error::format(
                path,
                (label_offset + t * stride) as u64,
                format!("label {label} out of range for {classes} classes"),
            ));
        }
        y[(label as usize, t)] = 1.0;
    }
    Ok(y)
}

/// Reads an IDX image file (magic 0x00000803) and its IDX label file
/// (magic 0x00000801). Gzip-compressed files are decompressed transparently.
/// Pixels become columns of `x`, scaled to [0, 1] when `normalize` is set;
/// labels become one-hot columns over 10 classes.
pub fn load_idx(images_path: &Path, labels_path: &Path, normalize: bool) -> Result<Dataset> {
    let images = read_maybe_gz(images_path)?;
    let labels = read_maybe_gz(labels_path)?;

    let magic = be_u32(&images, 0, images_path)?;
    if magic != 0x0000_0803 {
        return Err(Error::format(
            images_path,
            0,
            format!("expected image magic 0x00000803, found {magic:#010x}"),
        ));
    }
    let count = be_u32(&images, 4, images_path)? as usize;
    let rows = be_u32(&images, 8, images_path)? as usize;
    let cols = be_u32(&images, 12, images_path)? as usize;
    let pixels = rows * cols;
    let expected = 16 + count * pixels;
    if images.len() < expected {
        return Err(Error::format(
            images_path,
            images.len() as u64,
            format!("truncated image data: expected {expected} bytes"),
        ));
    }

    let magic = be_u32(&labels, 0, labels_path)?;
    if magic != 0x0000_0801 {
        return Err(Error::format(
            labels_path,
            0,
            format!("expected label magic 0x00000801, found {magic:#010x}"),
        ));
    }
    let label_count = be_u32(&labels, 4, labels_path)? as usize;
    if label_count != count {
        return Err(Error::format(
            labels_path,
            4,
            format!("label count {label_count} does not match image count {count}"),
        ));
    }
    if labels.len() < 8 + count {
        return Err(Error::format(
            labels_path,
            labels.len() as u64,
            "truncated label data",
        ));
    }
    if count == 0 {
        return Err(Error::EmptyDataset);
    }

    let scale = if normalize { 1.0 / 255.0 } else { 1.0 };
    let x = Mat::from_iterator(
        pixels,
        count,
        images[16..expected].iter().map(|&p| p as f64 * scale),
    );
    let y = one_hot(&labels[8..8 + count], 10, labels_path, 8, 1)?;
    let name = images_path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".into());
    Dataset::new(name, x, y, Split::Train)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CifarKind {
    Cifar10,
    /// `coarse` selects the 20 superclasses instead of the 100 fine labels.
    Cifar100 {
        coarse: bool,
    },
}

impl CifarKind {
    fn label_bytes(self) -> usize {
        match self {
            CifarKind::Cifar10 => 1,
            CifarKind::Cifar100 { .. } => 2,
        }
    }

    pub fn classes(self) -> usize {
        match self {
            CifarKind::Cifar10 => 10,
            CifarKind::Cifar100 { coarse: true } => 20,
            CifarKind::Cifar100 { coarse: false } => 100,
        }
    }
}

const CIFAR_PIXELS: usize = 3072;

/// Reads CIFAR binary batches. Each record is the label byte(s) followed by
/// 3072 pixel bytes; pixels are scaled to [0, 1].
pub fn load_cifar(paths: &[PathBuf], kind: CifarKind) -> Result<Dataset> {
    let record = kind.label_bytes() + CIFAR_PIXELS;
    let label_index = match kind {
        CifarKind::Cifar100 { coarse: false } => 1,
        _ => 0,
    };
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let bytes = read_maybe_gz(path)?;
        if bytes.len() % record != 0 {
            return Err(Error::format(
                path,
                (bytes.len() - bytes.len() % record) as u64,
                format!(
                    "file length {} is not a multiple of the {record}-byte record",
                    bytes.len()
                ),
            ));
        }
        for (r, chunk) in bytes.chunks_exact(record).enumerate() {
            let label = chunk[label_index];
            if label as usize >= kind.classes() {
                return Err(Error::format(
                    path,
                    (r * record + label_index) as u64,
                    format!("label {label} out of range"),
                ));
            }
            labels.push(label);
            pixels.extend(
                chunk[kind.label_bytes()..]
                    .iter()
                    .map(|&p| p as f64 / 255.0),
            );
        }
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let x = Mat::from_vec(CIFAR_PIXELS, labels.len(), pixels);
    let y = one_hot(&labels, kind.classes(), Path::new("<cifar>"), 0, record)?;
    let name = match kind {
        CifarKind::Cifar10 => "cifar10",
        CifarKind::Cifar100 { .. } => "cifar100",
    };
    Dataset::new(name, x, y, Split::Train)
}

/// Which MNIST files are used for training and for testing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MnistProtocol {
    /// Train on the 60k train split, test on the 10k test split.
    Standard,
    /// Train on the 10k test split, test on the first 50,000 train images.
    Inverted50k,
    /// Train on the 10k test split, test on all 60,000 train images.
    Inverted60k,
}

fn find_file(dir: &Path, stem: &str) -> Result<PathBuf> {
    for candidate in [
        stem.to_string(),
        format!("{stem}.gz"),
        stem.replacen("-idx", ".idx", 1),
    ] {
        let path = dir.join(&candidate);
        if path.is_file() {
            return Ok(path);
        }
    }
    Err(Error::io(
        dir.join(stem),
        std::io::Error::new(std::io::ErrorKind::NotFound, "IDX file not found"),
    ))
}

/// Loads an MNIST-layout directory (also used for Fashion-MNIST) and splits
/// it into (train, test) according to `protocol`.
pub fn load_mnist_dir(
    dir: &Path,
    protocol: MnistProtocol,
    normalize: bool,
) -> Result<(Dataset, Dataset)> {
    let load = |prefix: &str| -> Result<Dataset> {
        load_idx(
            &find_file(dir, &format!("{prefix}-images-idx3-ubyte"))?,
            &find_file(dir, &format!("{prefix}-labels-idx1-ubyte"))?,
            normalize,
        )
    };
    let (mut train, mut test) = match protocol {
        MnistProtocol::Standard => (load("train")?, load("t10k")?),
        MnistProtocol::Inverted50k => (load("t10k")?, load("train")?.head(50_000)?),
        MnistProtocol::Inverted60k => (load("t10k")?, load("train")?),
    };
    train.split = Split::Train;
    test.split = Split::Test;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn idx_images(count: u32, rows: u32, cols: u32, fill: u8) -> Vec<u8> {
        let mut out = Vec::new();
        for v in [0x0803, count, rows, cols] {
            out.extend_from_slice(&u32::to_be_bytes(v));
        }
        out.extend(std::iter::repeat_n(fill, (count * rows * cols) as usize));
        out
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&0x0801u32.to_be_bytes());
        out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        out.extend_from_slice(labels);
        out
    }

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> PathBuf {
        let path = dir.join(name);
        fs::File::create(&path).unwrap().write_all(bytes).unwrap();
        path
    }

    #[test]
    fn synth_is_deterministic_and_shaped() {
        let a = synth_linear(5, 3, 2, 40, 0.1, 9).unwrap();
        let b = synth_linear(5, 3, 2, 40, 0.1, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.x.shape(), (5, 40));
        assert_eq!(a.y.shape(), (3, 40));
        assert_ne!(a, synth_linear(5, 3, 2, 40, 0.1, 10).unwrap());
    }

    #[test]
    fn synth_rejects_bad_rank() {
        assert!(synth_linear(5, 3, 4, 10, 0.0, 0).is_err());
        assert!(synth_linear(5, 3, 0, 10, 0.0, 0).is_err());
    }

    #[test]
    fn idx_all_zero_images() {
        let dir = tempfile::tempdir().unwrap();
        let img = write(dir.path(), "img", &idx_images(3, 28, 28, 0));
        let lab = write(dir.path(), "lab", &idx_labels(&[1, 0, 9]));
        let data = load_idx(&img, &lab, true).unwrap();
        assert_eq!(data.x.shape(), (784, 3));
        assert!(data.x.iter().all(|&v| v == 0.0));
        assert_eq!(data.labels().unwrap(), vec![1, 0, 9]);
    }

    #[test]
    fn idx_normalization_and_gzip() {
        let dir = tempfile::tempdir().unwrap();
        let mut gz = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default());
        gz.write_all(&idx_images(2, 2, 2, 255)).unwrap();
        let img = write(dir.path(), "img.gz", &gz.finish().unwrap());
        let lab = write(dir.path(), "lab", &idx_labels(&[3, 4]));
        let data = load_idx(&img, &lab, true).unwrap();
        assert!(data.x.iter().all(|&v| v == 1.0));
        let raw = load_idx(&img, &lab, false).unwrap();
        assert!(raw.x.iter().all(|&v| v == 255.0));
    }

    #[test]
    fn idx_bad_magic_names_offset() {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = idx_images(1, 2, 2, 0);
        bytes[3] = 0x01;
        let img = write(dir.path(), "img", &bytes);
        let lab = write(dir.path(), "lab", &idx_labels(&[0]));
        let err = load_idx(&img, &lab, true).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }));
        assert!(err.to_string().contains("byte offset 0"));
    }

    #[test]
    fn idx_count_mismatch_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let img = write(dir.path(), "img", &idx_images(2, 2, 2, 0));
        let lab = write(dir.path(), "lab", &idx_labels(&[0]));
        assert!(matches!(
            load_idx(&img, &lab, true),
            Err(Error::Format { offset: 4, .. })
        ));

        let mut short = idx_images(2, 2, 2, 0);
        short.truncate(18);
        let img = write(dir.path(), "short", &short);
        let lab = write(dir.path(), "lab2", &idx_labels(&[0, 1]));
        assert!(matches!(
            load_idx(&img, &lab, true),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn cifar_single_record() {
        let dir = tempfile::tempdir().unwrap();
        let mut rec = vec![3u8];
        rec.extend(std::iter::repeat_n(51u8, CIFAR_PIXELS));
        let path = write(dir.path(), "batch.bin", &rec);
        let data = load_cifar(&[path], CifarKind::Cifar10).unwrap();
        assert_eq!(data.x.shape(), (3072, 1));
        assert_eq!(data.y.column(0).iter().copied().collect::<Vec<_>>()[3], 1.0);
        assert_eq!(data.labels().unwrap(), vec![3]);
        assert!((data.x[(0, 0)] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn cifar100_fine_and_coarse() {
        let dir = tempfile::tempdir().unwrap();
        let mut rec = vec![7u8, 42u8];
        rec.extend(std::iter::repeat_n(0u8, CIFAR_PIXELS));
        let path = write(dir.path(), "train.bin", &rec);
        let fine = load_cifar(std::slice::from_ref(&path), CifarKind::Cifar100 { coarse: false }).unwrap();
        assert_eq!(fine.labels().unwrap(), vec![42]);
        assert_eq!(fine.output_dim(), 100);
        let coarse = load_cifar(&[path], CifarKind::Cifar100 { coarse: true }).unwrap();
        assert_eq!(coarse.labels().unwrap(), vec![7]);
    }

    #[test]
    fn cifar_bad_length() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(dir.path(), "bad.bin", &vec![0u8; 3074]);
        assert!(matches!(
            load_cifar(&[path], CifarKind::Cifar10),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn one_hot_detection() {
        let x = Mat::zeros(1, 2);
        let good = Dataset::new(
            "g",
            x.clone(),
            Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]),
            Split::Train,
        )
        .unwrap();
        assert_eq!(good.labels().unwrap(), vec![0, 1]);
        let bad = Dataset::new(
            "b",
            x,
            Mat::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 0.5]),
            Split::Train,
        )
        .unwrap();
        assert!(matches!(bad.labels(), Err(Error::NotOneHot(1))));
    }

    #[test]
    fn dataset_rejects_mismatched_columns() {
        assert!(Dataset::new("x", Mat::zeros(2, 3), Mat::zeros(1, 2), Split::Train).is_err());
        assert!(matches!(
            Dataset::new("x", Mat::zeros(2, 0), Mat::zeros(1, 0), Split::Train),
            Err(Error::EmptyDataset)
        ));
    }
}
