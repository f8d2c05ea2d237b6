//! Dataset ingestion and deterministic batching.
//!
//! Pixels are kept in raw 8-bit intensity units (`0.0..=255.0`) so that
//! perturbation budgets are expressed on the same scale as the images.
//! Victim models normalize internally.
//!
//! Every random choice in this module goes through [`ChaCha8Rng`], a
//! counter-based generator with a fixed, published algorithm, so seeded
//! datasets and batch orders are identical across platforms.

use std::fs;
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ByteOrder};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{BadgeError, Result};

pub const PIXEL_MIN: f64 = 0.0;
pub const PIXEL_MAX: f64 = 255.0;

pub const IDX_IMAGES_MAGIC: u32 = 2051;
pub const IDX_LABELS_MAGIC: u32 = 2049;

/// Image geometry, `channels * height * width == input_dim`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width }
    }

    /// A flat feature vector, stored as one channel of height 1.
    pub const fn flat(dim: usize) -> Self {
        Self::new(1, 1, dim)
    }

    pub const fn dim(&self) -> usize {
        self.channels * self.height * self.width
    }
}

/// Row-major batch of flattened images with their ground-truth labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch {
    pixels: Vec<f64>,
    labels: Vec<usize>,
    shape: Shape,
}

impl ImageBatch {
    pub fn new(pixels: Vec<f64>, labels: Vec<usize>, shape: Shape) -> Result<Self> {
        let dim = shape.dim();
        if dim == 0 {
            return Err(BadgeError::Dimension("image shape has zero elements".into()));
        }
        if pixels.len() != labels.len() * dim {
            return Err(BadgeError::Dimension(format!(
                "{} pixel values do not form {} rows of width {}",
                pixels.len(),
                labels.len(),
                dim
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(PIXEL_MIN..=PIXEL_MAX).contains(*v)) {
            return Err(BadgeError::Parameter(format!("pixel value {v} outside [0, 255]")));
        }
        Ok(Self { pixels, labels, shape })
    }

    pub fn empty(shape: Shape) -> Self {
        Self { pixels: Vec::new(), labels: Vec::new(), shape }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.shape.dim()
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.pixels[i * d..(i + 1) * d]
    }

    /// Rows picked by index, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let d = self.dim();
        let mut pixels = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            pixels.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self { pixels, labels, shape: self.shape }
    }

    /// The first `n` rows (or all of them when `n >= len`).
    pub fn head(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            pixels: self.pixels[..n * self.dim()].to_vec(),
            labels: self.labels[..n].to_vec(),
            shape: self.shape,
        }
    }

    pub fn max_label(&self) -> Option<usize> {
        self.labels.iter().copied().max()
    }
}

/// Train/test splits sharing a class count and pixel value range.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: ImageBatch,
    pub test: ImageBatch,
    pub n_classes: usize,
    pub value_range: (f64, f64),
}

impl Dataset {
    pub fn new(train: ImageBatch, test: ImageBatch, n_classes: usize) -> Result<Self> {
        if train.shape() != test.shape() {
            return Err(BadgeError::Consistency("train and test image shapes differ".into()));
        }
        for (name, split) in [("train", &train), ("test", &test)] {
            if let Some(max) = split.max_label() {
                if max >= n_classes {
                    return Err(BadgeError::Consistency(format!(
                        "{name} label {max} is outside [0, {n_classes})"
                    )));
                }
            }
        }
        Ok(Self { train, test, n_classes, value_range: (PIXEL_MIN, PIXEL_MAX) })
    }

    pub fn shape(&self) -> Shape {
        self.train.shape()
    }

    /// Keeps the first `n` training rows; the test split is untouched.
    pub fn with_train_subset(mut self, n: usize) -> Self {
        self.train = self.train.head(n);
        self
    }
}

/// Header of an IDX container: magic number followed by dimension sizes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxHeader {
    pub magic: u32,
    pub dims: Vec<u32>,
}

impl IdxHeader {
    pub fn parse(bytes: &[u8], expected_magic: u32) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(BadgeError::Length { expected: 4, found: bytes.len() });
        }
        let magic = BigEndian::read_u32(&bytes[..4]);
        if magic != expected_magic {
            return Err(BadgeError::Format(format!(
                "IDX magic {magic} does not match expected {expected_magic}"
            )));
        }
        // The low byte of the magic number is the dimension count.
        let ndims = (magic & 0xff) as usize;
        let header_len = 4 + 4 * ndims;
        if bytes.len() < header_len {
            return Err(BadgeError::Length { expected: header_len, found: bytes.len() });
        }
        let dims = (0..ndims).map(|i| BigEndian::read_u32(&bytes[4 + 4 * i..8 + 4 * i])).collect();
        Ok(Self { magic, dims })
    }

    pub fn len(&self) -> usize {
        4 + 4 * self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn payload_len(&self) -> usize {
        self.dims.iter().map(|&d| d as usize).product()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.len()];
        BigEndian::write_u32(&mut out[..4], self.magic);
        for (i, &d) in self.dims.iter().enumerate() {
            BigEndian::write_u32(&mut out[4 + 4 * i..8 + 4 * i], d);
        }
        out
    }
}

/// Decodes an IDX image file and its label file into one split.
///
/// Images come back with shape `(1, rows, cols)` and pixel values `0..=255`.
pub fn parse_idx(image_bytes: &[u8], label_bytes: &[u8]) -> Result<ImageBatch> {
    let img_header = IdxHeader::parse(image_bytes, IDX_IMAGES_MAGIC)?;
    let lbl_header = IdxHeader::parse(label_bytes, IDX_LABELS_MAGIC)?;
    if img_header.dims.len() != 3 || lbl_header.dims.len() != 1 {
        return Err(BadgeError::Format("unexpected IDX dimension count".into()));
    }
    let count = img_header.dims[0] as usize;
    if lbl_header.dims[0] as usize != count {
        return Err(BadgeError::Consistency(format!(
            "{count} images but {} labels",
            lbl_header.dims[0]
        )));
    }
    let shape = Shape::new(1, img_header.dims[1] as usize, img_header.dims[2] as usize);

    let img_expected = img_header.len() + img_header.payload_len();
    if image_bytes.len() < img_expected {
        return Err(BadgeError::Length { expected: img_expected, found: image_bytes.len() });
    }
    let lbl_expected = lbl_header.len() + count;
    if label_bytes.len() < lbl_expected {
        return Err(BadgeError::Length { expected: lbl_expected, found: label_bytes.len() });
    }

    let pixels = image_bytes[img_header.len()..img_expected].iter().map(|&b| f64::from(b)).collect();
    let labels = label_bytes[lbl_header.len()..lbl_expected].iter().map(|&b| usize::from(b)).collect();
    ImageBatch::new(pixels, labels, shape)
}

/// Locations of the four standard MNIST files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MnistPaths {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

impl MnistPaths {
    /// Standard file names inside `dir`.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        Self {
            train_images: dir.join("train-images-idx3-ubyte"),
            train_labels: dir.join("train-labels-idx1-ubyte"),
            test_images: dir.join("t10k-images-idx3-ubyte"),
            test_labels: dir.join("t10k-labels-idx1-ubyte"),
        }
    }

    pub fn all(&self) -> [&Path; 4] {
        [&self.train_images, &self.train_labels, &self.test_images, &self.test_labels]
    }

    pub fn missing(&self) -> Option<&Path> {
        self.all().into_iter().find(|p| !p.is_file())
    }
}

pub fn load_mnist(paths: &MnistPaths) -> Result<Dataset> {
    let read = |p: &Path| {
        fs::read(p).map_err(|e| BadgeError::Config(format!("cannot read {}: {e}", p.display())))
    };
    let train = parse_idx(&read(&paths.train_images)?, &read(&paths.train_labels)?)?;
    let test = parse_idx(&read(&paths.test_images)?, &read(&paths.test_labels)?)?;
    Dataset::new(train, test, 10)
}

/// Parameters of the synthetic Gaussian-blob dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobSpec {
    pub seed: u64,
    pub n_per_class: usize,
    pub n_classes: usize,
    pub dim: usize,
    pub separation: f64,
}

/// Isotropic Gaussian class clusters, affinely rescaled into `[0, 255]`.
///
/// Class means are standard-normal vectors scaled by `separation`; samples
/// add unit-variance noise. Samples are generated interleaved by class
/// (sample `i` belongs to class `i % n_classes`) and every fifth sample goes
/// to the test split.
pub fn make_blobs(spec: BlobSpec) -> Result<Dataset> {
    let BlobSpec { seed, n_per_class, n_classes, dim, separation } = spec;
    if n_per_class == 0 {
        return Err(BadgeError::Parameter("n_per_class must be positive".into()));
    }
    if n_classes < 2 {
        return Err(BadgeError::Parameter("need at least two classes".into()));
    }
    if dim < 2 {
        return Err(BadgeError::Parameter("dim must be at least 2".into()));
    }
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(BadgeError::Parameter("separation must be positive".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means: Vec<f64> = (0..n_classes * dim)
        .map(|_| separation * Distribution::<f64>::sample(&StandardNormal, &mut rng))
        .collect::<Vec<f64>>();

    let total = n_per_class * n_classes;
    let mut raw = Vec::with_capacity(total * dim);
    let mut labels = Vec::with_capacity(total);
    for i in 0..total {
        let class = i % n_classes;
        for d in 0..dim {
            let noise: f64 = StandardNormal.sample(&mut rng);
            raw.push(means[class * dim + d] + noise);
        }
        labels.push(class);
    }

    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    let pixels: Vec<f64> =
        raw.iter().map(|v| ((v - lo) / span * PIXEL_MAX).round().clamp(PIXEL_MIN, PIXEL_MAX)).collect();

    let all = ImageBatch::new(pixels, labels, Shape::flat(dim))?;
    let (test_idx, train_idx): (Vec<usize>, Vec<usize>) = (0..total).partition(|i| i % 5 == 4);
    Dataset::new(all.select(&train_idx), all.select(&test_idx), n_classes)
}

/// Shuffle seed of epoch `epoch` in a run seeded with `seed`.
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(epoch as u64)
}

/// Seeded permutation of `store` cut into consecutive batches.
///
/// The last batch may be smaller; every row appears exactly once.
pub fn batches(store: &ImageBatch, batch_size: usize, shuffle_seed: u64) -> Result<Vec<ImageBatch>> {
    if batch_size == 0 {
        return Err(BadgeError::Parameter("batch_size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..store.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
    Ok(order.chunks(batch_size).map(|idx| store.select(idx)).collect())
}
