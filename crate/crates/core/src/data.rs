//! MNIST IDX ingestion, input scaling, seeded batching and a
//! synthetic blob dataset for fast smoke tests.

use std::fmt;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Standard MNIST file names, looked up with or without a `.gz` suffix.
pub const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

/// Maps a raw byte `b` to `(b/255 − mean) / std`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalization {
    pub mean: f64,
    pub std: f64,
}

impl Normalization {
    pub const IDENTITY: Self = Self { mean: 0.0, std: 1.0 };

    /// Mean and population standard deviation of pixels scaled to `[0, 1]`.
    pub fn from_bytes(pixels: &[u8]) -> Self {
        let n = pixels.len() as f64;
        let mean = pixels.iter().map(|&b| f64::from(b) / 255.0).sum::<f64>() / n;
        let var = pixels
            .iter()
            .map(|&b| {
                let d = f64::from(b) / 255.0 - mean;
                d * d
            })
            .sum::<f64>()
            / n;
        Self {
            mean,
            std: var.sqrt().max(1e-12),
        }
    }

    pub fn apply(&self, raw: f64) -> f64 {
        (raw - self.mean) / self.std
    }

    pub fn apply_byte(&self, b: u8) -> f64 {
        self.apply(f64::from(b) / 255.0)
    }

    /// Back to `[0, 1]` units.
    pub fn invert(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }

    pub fn invert_to_byte(&self, v: f64) -> u8 {
        (self.invert(v) * 255.0).round().clamp(0.0, 255.0) as u8
    }

    /// Normalized values corresponding to raw pixels 0 and 1.
    pub fn valid_range(&self) -> (f64, f64) {
        (self.apply(0.0), self.apply(1.0))
    }
}

/// Standardized images (`N×1×H×W`) with class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub normalization: Normalization,
    pub classes: usize,
}

impl Dataset {
    /// Builds a dataset from raw bytes, standardizing with `normalization`
    /// (or with statistics of `pixels` when `None`).
    pub fn from_bytes(
        pixels: &[u8],
        labels: Vec<usize>,
        (h, w): (usize, usize),
        normalization: Option<Normalization>,
        classes: usize,
    ) -> Result<Self> {
        let n = labels.len();
        if n == 0 || pixels.len() != n * h * w {
            return Err(Error::Data(format!(
                "{} pixels do not form {n} images of {h}x{w}",
                pixels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Data(format!("label {bad} outside 0..{classes}")));
        }
        let normalization = normalization.unwrap_or_else(|| Normalization::from_bytes(pixels));
        let data = pixels.iter().map(|&b| normalization.apply_byte(b)).collect();
        Ok(Self {
            images: Tensor::new(&[n, 1, h, w], data)?,
            labels,
            normalization,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_dims(&self) -> (usize, usize) {
        (self.images.shape()[2], self.images.shape()[3])
    }

    fn image_len(&self) -> usize {
        let (h, w) = self.image_dims();
        h * w
    }

    /// Gathers the given samples into a batch tensor.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let (h, w) = self.image_dims();
        let len = h * w;
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * len..(i + 1) * len]);
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        (
            Tensor::new(&[indices.len(), 1, h, w], data).expect("batch shape"),
            labels,
        )
    }

    /// First `n` samples (all of them when `n` is 0 or too large).
    pub fn take(&self, n: usize) -> Dataset {
        if n == 0 || n >= self.len() {
            return self.clone();
        }
        let idx: Vec<usize> = (0..n).collect();
        let (images, labels) = self.batch(&idx);
        Dataset {
            images,
            labels,
            normalization: self.normalization,
            classes: self.classes,
        }
    }

    /// Raw bytes recovered through the stored normalization.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.images
            .data()
            .iter()
            .map(|&v| self.normalization.invert_to_byte(v))
            .collect()
    }

    pub fn to_idx(&self) -> (Vec<u8>, Vec<u8>) {
        let (h, w) = self.image_dims();
        let pixels = self.to_bytes();
        let labels: Vec<u8> = self.labels.iter().map(|&y| y as u8).collect();
        (encode_idx_images(&pixels, self.len(), h, w), encode_idx_labels(&labels))
    }

    pub fn sample_len(&self) -> usize {
        self.image_len()
    }
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Length(format!("{what}: header truncated at byte {at}")))
}

fn check_magic(bytes: &[u8], expected: u32, what: &str) -> Result<()> {
    let found = be_u32(bytes, 0, what)?;
    if found != expected {
        return Err(Error::Format {
            what: what.into(),
            expected: format!("magic 0x{expected:08x}"),
            found: format!("0x{found:08x}"),
        });
    }
    Ok(())
}

/// Parses an IDX3 image file into `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    check_magic(bytes, IDX_IMAGES_MAGIC, "idx images")?;
    let n = be_u32(bytes, 4, "idx images")? as usize;
    let rows = be_u32(bytes, 8, "idx images")? as usize;
    let cols = be_u32(bytes, 12, "idx images")? as usize;
    let body = &bytes[16..];
    let need = n * rows * cols;
    if body.len() < need {
        return Err(Error::Length(format!(
            "idx images: header declares {n}x{rows}x{cols} = {need} bytes, file has {}",
            body.len()
        )));
    }
    Ok((n, rows, cols, body[..need].to_vec()))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, IDX_LABELS_MAGIC, "idx labels")?;
    let n = be_u32(bytes, 4, "idx labels")? as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(Error::Length(format!(
            "idx labels: header declares {n} labels, file has {}",
            body.len()
        )));
    }
    Ok(body[..n].to_vec())
}

pub fn encode_idx_images(pixels: &[u8], n: usize, rows: usize, cols: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Reads a file, transparently gunzipping it when it carries the gzip magic.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(bytes.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(bytes)
    }
}

pub fn dataset_from_idx(images: &[u8], labels: &[u8], normalization: Option<Normalization>) -> Result<Dataset> {
    let (n, rows, cols, pixels) = parse_idx_images(images)?;
    let labels = parse_idx_labels(labels)?;
    if labels.len() != n {
        return Err(Error::Data(format!("{n} images but {} labels", labels.len())));
    }
    Dataset::from_bytes(
        &pixels,
        labels.into_iter().map(usize::from).collect(),
        (rows, cols),
        normalization,
        10,
    )
}

/// Loads an IDX image/label pair. With `normalization == None` the
/// statistics are computed from these images (use this for the training
/// split, then pass `Some(train.normalization)` for the test split).
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path, normalization: Option<Normalization>) -> Result<Dataset> {
    dataset_from_idx(
        &read_maybe_gz(images_path)?,
        &read_maybe_gz(labels_path)?,
        normalization,
    )
}

/// Resolves `name` or `name.gz` inside `dir`.
pub fn find_mnist_file(dir: &Path, name: &str) -> Result<PathBuf> {
    let plain = dir.join(name);
    if plain.exists() {
        return Ok(plain);
    }
    let gz = dir.join(format!("{name}.gz"));
    if gz.exists() {
        return Ok(gz);
    }
    Err(Error::io(
        plain,
        std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!(
                "expected MNIST files {MNIST_FILES:?} (optionally .gz) in {}",
                dir.display()
            ),
        ),
    ))
}

/// How raw pixel bytes become network inputs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum InputScaling {
    /// `b / 255`, i.e. [`Normalization::IDENTITY`].
    #[default]
    Unit,
    /// `b / 255` standardized with training-set mean and std.
    Standardize,
}

impl fmt::Display for InputScaling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Unit => "unit",
            Self::Standardize => "standardize",
        })
    }
}

impl FromStr for InputScaling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unit" => Ok(Self::Unit),
            "standardize" => Ok(Self::Standardize),
            other => Err(Error::Config(format!(
                "unknown input scaling `{other}` (unit, standardize)"
            ))),
        }
    }
}

/// Training and official test split from a directory with the standard
/// names, standardized with training-set statistics.
pub fn load_mnist_dir(dir: &Path) -> Result<(Dataset, Dataset)> {
    load_mnist_dir_scaled(dir, InputScaling::Standardize)
}

pub fn load_mnist_dir_scaled(dir: &Path, scaling: InputScaling) -> Result<(Dataset, Dataset)> {
    let path = |i: usize| find_mnist_file(dir, MNIST_FILES[i]);
    let fixed = match scaling {
        InputScaling::Unit => Some(Normalization::IDENTITY),
        InputScaling::Standardize => None,
    };
    let train = load_mnist_idx(&path(0)?, &path(1)?, fixed)?;
    let test = load_mnist_idx(&path(2)?, &path(3)?, Some(train.normalization))?;
    Ok((train, test))
}

/// Seeded mini-batch order for one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub seed: u64,
    pub epoch: usize,
    pub shuffle: bool,
}

impl BatchPlan {
    pub fn new(batch_size: usize, seed: u64, epoch: usize) -> Self {
        Self {
            batch_size,
            seed,
            epoch,
            shuffle: true,
        }
    }

    pub fn sequential(batch_size: usize) -> Self {
        Self {
            batch_size,
            seed: 0,
            epoch: 0,
            shuffle: false,
        }
    }

    /// A permutation of `0..n` determined by `(seed, epoch)`.
    pub fn order(&self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        if self.shuffle {
            let stream = self.seed ^ (self.epoch as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03);
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(stream));
        }
        idx
    }

    /// Index groups of at most `batch_size`; the last one may be short.
    pub fn index_batches(&self, n: usize) -> Vec<Vec<usize>> {
        self.order(n)
            .chunks(self.batch_size.max(1))
            .map(<[usize]>::to_vec)
            .collect()
    }
}

pub fn batches<'a>(dataset: &'a Dataset, plan: &BatchPlan) -> impl Iterator<Item = (Tensor, Vec<usize>)> + 'a {
    plan.index_batches(dataset.len())
        .into_iter()
        .map(move |idx| dataset.batch(&idx))
}

/// Gaussian blobs at class-specific positions on a 28×28 canvas. Each class
/// owns a distinct bump location, so the classes are linearly separable.
/// Pixels are in `[0, 1]`.
pub fn synthetic_blobs(n_per_class: usize, classes: usize, seed: u64) -> Result<Dataset> {
    if n_per_class == 0 || classes == 0 {
        return Err(Error::Argument(
            "synthetic_blobs needs at least one class and sample".into(),
        ));
    }
    const SIDE: usize = 28;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pixels = Vec::with_capacity(n_per_class * classes * SIDE * SIDE);
    let mut labels = Vec::with_capacity(n_per_class * classes);
    for i in 0..n_per_class * classes {
        let class = i % classes;
        let angle = std::f64::consts::TAU * class as f64 / classes as f64;
        let cx = 13.5 + 8.0 * angle.cos() + rng.random_range(-1.0..1.0);
        let cy = 13.5 + 8.0 * angle.sin() + rng.random_range(-1.0..1.0);
        for y in 0..SIDE {
            for x in 0..SIDE {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                let v = (-d2 / 8.0).exp() + rng.random_range(0.0..0.05);
                pixels.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        labels.push(class);
    }
    Dataset::from_bytes(&pixels, labels, (SIDE, SIDE), Some(Normalization::IDENTITY), classes)
}
