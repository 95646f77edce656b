//! MNIST IDX files, a synthetic low-frequency image generator, splits and
//! seeded mini-batches.

use std::f64::consts::PI;
use std::fs;
use std::ops::Range;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tensorkit::Tensor;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// Canonical MNIST file names looked up under `data.dir`.
pub const MNIST_TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const MNIST_TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const MNIST_TEST_IMAGES: &str = "t10k-images-idx3-ubyte";

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("bad magic number {got:#010x}, expected {expected:#010x}")]
    BadMagic { expected: u32, got: u32 },
    #[error("truncated file: expected {expected} bytes, found {got}")]
    TruncatedFile { expected: usize, got: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Pixel value range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum Domain {
    #[serde(rename = "[0,1]")]
    Unit,
    #[default]
    #[serde(rename = "[-1,1]")]
    Symmetric,
}

impl Domain {
    pub fn bounds(self) -> (f64, f64) {
        match self {
            Domain::Unit => (0.0, 1.0),
            Domain::Symmetric => (-1.0, 1.0),
        }
    }

    pub fn from_byte(self, b: u8) -> f64 {
        match self {
            Domain::Unit => b as f64 / 255.0,
            Domain::Symmetric => 2.0 * b as f64 / 255.0 - 1.0,
        }
    }

    /// Nearest byte; inverse of [`Domain::from_byte`].
    pub fn to_byte(self, p: f64) -> u8 {
        let t = match self {
            Domain::Unit => p * 255.0,
            Domain::Symmetric => (p + 1.0) * 255.0 / 2.0,
        };
        t.round().clamp(0.0, 255.0) as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Images as rows of an `n x d` tensor with contiguous train/val/test ranges.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub rows: usize,
    pub cols: usize,
    pub domain: Domain,
    train: Range<usize>,
    val: Range<usize>,
    test: Range<usize>,
}

impl Dataset {
    fn from_pixels(rows: usize, cols: usize, data: Vec<f64>, domain: Domain) -> Self {
        let d = rows * cols;
        let n = data.len() / d.max(1);
        Self {
            images: Tensor::matrix(n, d, data).expect("whole images"),
            rows,
            cols,
            domain,
            train: 0..n,
            val: n..n,
            test: n..n,
        }
    }

    pub fn len(&self) -> usize {
        self.images.dims2().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.rows * self.cols
    }

    /// Consecutive train, validation and test blocks; the sizes must sum to `len()`.
    pub fn with_splits(mut self, n_train: usize, n_val: usize, n_test: usize) -> Result<Self, DataError> {
        if n_train + n_val + n_test != self.len() {
            return Err(DataError::DimensionMismatch(format!(
                "splits {n_train}+{n_val}+{n_test} do not sum to {}",
                self.len()
            )));
        }
        self.train = 0..n_train;
        self.val = n_train..n_train + n_val;
        self.test = n_train + n_val..self.len();
        Ok(self)
    }

    pub fn range(&self, split: Split) -> Range<usize> {
        match split {
            Split::Train => self.train.clone(),
            Split::Val => self.val.clone(),
            Split::Test => self.test.clone(),
        }
    }

    pub fn split(&self, split: Split) -> Tensor {
        let idx: Vec<usize> = self.range(split).collect();
        self.images.select_rows(&idx)
    }

    /// Raw bytes of all images, per [`Domain::to_byte`].
    pub fn to_bytes(&self) -> Vec<u8> {
        self.images.data().iter().map(|&p| self.domain.to_byte(p)).collect()
    }
}

fn read(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32, DataError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or(DataError::TruncatedFile {
            expected: at + 4,
            got: bytes.len(),
        })
}

/// Parsed IDX image file: `n` images of `rows x cols` unsigned bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub n: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages, DataError> {
    let magic = be_u32(bytes, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(DataError::BadMagic {
            expected: IMAGE_MAGIC,
            got: magic,
        });
    }
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let expected = 16 + n * rows * cols;
    if bytes.len() < expected {
        return Err(DataError::TruncatedFile {
            expected,
            got: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(DataError::DimensionMismatch(format!(
            "{} trailing bytes after {n} images of {rows}x{cols}",
            bytes.len() - expected
        )));
    }
    Ok(IdxImages {
        n,
        rows,
        cols,
        pixels: bytes[16..].to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, DataError> {
    let magic = be_u32(bytes, 0)?;
    if magic != LABEL_MAGIC {
        return Err(DataError::BadMagic {
            expected: LABEL_MAGIC,
            got: magic,
        });
    }
    let n = be_u32(bytes, 4)? as usize;
    if bytes.len() < 8 + n {
        return Err(DataError::TruncatedFile {
            expected: 8 + n,
            got: bytes.len(),
        });
    }
    Ok(bytes[8..8 + n].to_vec())
}

pub fn encode_idx_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let n = pixels.len() / (rows * cols).max(1);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGE_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Reads an IDX image file (and optionally its label file, which must have
/// the same count). The last `n_val` images form the validation split, the
/// rest the training split.
pub fn load_idx(
    images_path: &Path,
    labels_path: Option<&Path>,
    domain: Domain,
    n_val: usize,
) -> Result<Dataset, DataError> {
    let img = parse_idx_images(&read(images_path)?)?;
    if let Some(lp) = labels_path {
        let labels = parse_idx_labels(&read(lp)?)?;
        if labels.len() != img.n {
            return Err(DataError::DimensionMismatch(format!(
                "{} labels for {} images",
                labels.len(),
                img.n
            )));
        }
    }
    if n_val > img.n {
        return Err(DataError::DimensionMismatch(format!(
            "validation size {n_val} exceeds {} images",
            img.n
        )));
    }
    let data = img.pixels.iter().map(|&b| domain.from_byte(b)).collect();
    Dataset::from_pixels(img.rows, img.cols, data, domain).with_splits(img.n - n_val, n_val, 0)
}

/// MNIST from `dir`: train/validation from the training file, test from the
/// `t10k` file when present.
pub fn load_mnist(dir: &Path, domain: Domain, n_val: usize) -> Result<Dataset, DataError> {
    let labels = dir.join(MNIST_TRAIN_LABELS);
    let train = load_idx(
        &dir.join(MNIST_TRAIN_IMAGES),
        labels.exists().then_some(labels.as_path()),
        domain,
        n_val,
    )?;
    let test_path = dir.join(MNIST_TEST_IMAGES);
    if !test_path.exists() {
        return Ok(train);
    }
    let test = parse_idx_images(&read(&test_path)?)?;
    if (test.rows, test.cols) != (train.rows, train.cols) {
        return Err(DataError::DimensionMismatch(format!(
            "test images are {}x{}, training images {}x{}",
            test.rows, test.cols, train.rows, train.cols
        )));
    }
    let (n_train, n_val) = (train.train.len(), train.val.len());
    let mut data = train.images.into_data();
    data.extend(test.pixels.iter().map(|&b| domain.from_byte(b)));
    Dataset::from_pixels(train.rows, train.cols, data, domain).with_splits(n_train, n_val, test.n)
}

/// `n` deterministic `side x side` images, each a sum of three random 2-d
/// cosines with spatial frequencies at most 2 cycles per image, min-max
/// rescaled to the domain. All images belong to the training split.
pub fn synthetic_dataset(side: usize, n: usize, seed: u64, domain: Domain) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = domain.bounds();
    let d = side * side;
    let mut data = Vec::with_capacity(n * d);
    let mut img = vec![0.0; d];
    for _ in 0..n {
        img.fill(0.0);
        for _ in 0..3 {
            let (fx, fy) = loop {
                let f = (rng.random_range(0..=2u32), rng.random_range(0..=2u32));
                if f != (0, 0) {
                    break f;
                }
            };
            let amp: f64 = rng.sample(StandardNormal);
            let phase = rng.random_range(0.0..2.0 * PI);
            for r in 0..side {
                for c in 0..side {
                    let t = 2.0 * PI * (fx as f64 * c as f64 + fy as f64 * r as f64) / side as f64;
                    img[r * side + c] += amp * (t + phase).cos();
                }
            }
        }
        let mn = img.iter().copied().fold(f64::INFINITY, f64::min);
        let mx = img.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = mx - mn;
        data.extend(img.iter().map(|&v| {
            let t = if span > 0.0 { (v - mn) / span } else { 0.5 };
            (lo + (hi - lo) * t).clamp(lo, hi)
        }));
    }
    Dataset::from_pixels(side, side, data, domain)
}

/// Shuffled index batches of `0..n` for one epoch; the last batch may be short.
pub fn batch_indices(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch size must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Rows of `data` in the order of [`batch_indices`].
pub fn batches(data: &Tensor, batch_size: usize, seed: u64, epoch: u64) -> impl Iterator<Item = Tensor> + '_ {
    let (n, _) = data.dims2();
    batch_indices(n, batch_size, seed, epoch)
        .into_iter()
        .map(move |b| data.select_rows(&b))
}
