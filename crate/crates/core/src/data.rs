//! Dataset loading (MNIST IDX, CIFAR-10 binary), validation splits, threshold
//! encoding and small generated tasks.

use std::io;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::layers::Shape;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("bad IDX magic {found:#010x}, expected {expected:#010x}")]
    Magic { found: u32, expected: u32 },
    #[error("truncated file: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("file length {len} is not a multiple of the {record}-byte record size")]
    RecordSize { len: usize, record: usize },
    #[error("bits must be in 1..=5, got {0}")]
    Bits(u32),
    #[error("validation size {n_val} out of range for {n} samples")]
    Split { n_val: usize, n: usize },
    #[error("thresholds must be increasing values in (0, 1)")]
    Thresholds,
    #[error("kernel bank: {0}")]
    Kernel(String),
}

fn read(path: &Path) -> Result<Vec<u8>, DataError> {
    std::fs::read(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })
}

/// Images with pixels stored as bytes; [`Self::pixel`] gives values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledImageSet {
    pub shape: Shape,
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
}

impl LabeledImageSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, n: usize) -> &[u8] {
        let l = self.shape.len();
        &self.pixels[n * l..(n + 1) * l]
    }

    pub fn pixel(&self, n: usize, i: usize) -> f32 {
        self.pixels[n * self.shape.len() + i] as f32 / 255.0
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        LabeledImageSet {
            shape: self.shape,
            pixels: indices.iter().flat_map(|&n| self.image(n).iter().copied()).collect(),
            labels: indices.iter().map(|&n| self.labels[n]).collect(),
        }
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32, DataError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or(DataError::Truncated { need: at + 4, have: bytes.len() })
}

/// Parses an IDX file; returns its dimensions and payload.
pub fn parse_idx(bytes: &[u8], magic: u32) -> Result<(Vec<usize>, &[u8]), DataError> {
    let found = be_u32(bytes, 0)?;
    if found != magic {
        return Err(DataError::Magic { found, expected: magic });
    }
    let ndim = (magic & 0xff) as usize;
    let dims: Vec<usize> = (0..ndim).map(|d| be_u32(bytes, 4 + 4 * d).map(|v| v as usize)).collect::<Result<_, _>>()?;
    let start = 4 + 4 * ndim;
    let need = start + dims.iter().product::<usize>();
    if bytes.len() < need {
        return Err(DataError::Truncated { need, have: bytes.len() });
    }
    Ok((dims, &bytes[start..need]))
}

pub fn mnist_from_bytes(images: &[u8], labels: &[u8]) -> Result<LabeledImageSet, DataError> {
    let (idims, ipix) = parse_idx(images, 0x0803)?;
    let (ldims, lab) = parse_idx(labels, 0x0801)?;
    if idims[0] != ldims[0] {
        return Err(DataError::CountMismatch { images: idims[0], labels: ldims[0] });
    }
    Ok(LabeledImageSet {
        shape: Shape::new(1, idims[1], idims[2]),
        pixels: ipix.to_vec(),
        labels: lab.to_vec(),
    })
}

pub fn load_mnist_idx(images: &Path, labels: &Path) -> Result<LabeledImageSet, DataError> {
    mnist_from_bytes(&read(images)?, &read(labels)?)
}

pub const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

pub fn cifar_from_bytes(bytes: &[u8]) -> Result<LabeledImageSet, DataError> {
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
        return Err(DataError::RecordSize { len: bytes.len(), record: CIFAR_RECORD });
    }
    let mut set = LabeledImageSet { shape: Shape::new(3, 32, 32), pixels: Vec::new(), labels: Vec::new() };
    for rec in bytes.chunks_exact(CIFAR_RECORD) {
        set.labels.push(rec[0]);
        set.pixels.extend_from_slice(&rec[1..]);
    }
    Ok(set)
}

pub fn load_cifar10_bin<P: AsRef<Path>>(batches: &[P]) -> Result<LabeledImageSet, DataError> {
    let mut set = LabeledImageSet { shape: Shape::new(3, 32, 32), pixels: Vec::new(), labels: Vec::new() };
    for p in batches {
        let part = cifar_from_bytes(&read(p.as_ref())?)?;
        set.pixels.extend(part.pixels);
        set.labels.extend(part.labels);
    }
    Ok(set)
}

/// Environment variable naming the dataset cache root.
pub const DATA_DIR_ENV: &str = "LGN_DATA_DIR";

/// `$LGN_DATA_DIR`, else `$XDG_CACHE_HOME/logictree`, else
/// `$HOME/.cache/logictree`.
pub fn default_cache_dir() -> PathBuf {
    if let Some(d) = std::env::var_os(DATA_DIR_ENV) {
        return PathBuf::from(d);
    }
    if let Some(d) = std::env::var_os("XDG_CACHE_HOME") {
        return PathBuf::from(d).join("logictree");
    }
    let home = std::env::var_os("HOME").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."));
    home.join(".cache").join("logictree")
}

pub const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

/// Loads `(train, test)` from `<root>/mnist`.
pub fn load_mnist_dir(root: &Path) -> Result<(LabeledImageSet, LabeledImageSet), DataError> {
    let d = root.join("mnist");
    let f = |i: usize| d.join(MNIST_FILES[i]);
    Ok((load_mnist_idx(&f(0), &f(1))?, load_mnist_idx(&f(2), &f(3))?))
}

pub const CIFAR_TRAIN_FILES: [&str; 5] =
    ["data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin"];
pub const CIFAR_TEST_FILE: &str = "test_batch.bin";

/// Loads `(train, test)` from `<root>/cifar-10-batches-bin`.
pub fn load_cifar_dir(root: &Path) -> Result<(LabeledImageSet, LabeledImageSet), DataError> {
    let d = root.join("cifar-10-batches-bin");
    let train: Vec<PathBuf> = CIFAR_TRAIN_FILES.iter().map(|f| d.join(f)).collect();
    Ok((load_cifar10_bin(&train)?, load_cifar10_bin(&[d.join(CIFAR_TEST_FILE)])?))
}

/// Disjoint index split; validation indices are drawn by a seeded shuffle.
pub fn split_indices(n: usize, n_val: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>), DataError> {
    if n_val >= n {
        return Err(DataError::Split { n_val, n });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

pub fn split_validation(
    set: &LabeledImageSet,
    n_val: usize,
    seed: u64,
) -> Result<(LabeledImageSet, LabeledImageSet), DataError> {
    let (train, val) = split_indices(set.len(), n_val, seed)?;
    Ok((set.subset(&train), set.subset(&val)))
}

/// Binary planes, `shape.len()` bytes (each 0 or 1) per sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryEncodedSet {
    pub shape: Shape,
    pub bits: Vec<u8>,
    pub labels: Vec<u8>,
}

impl BinaryEncodedSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample(&self, n: usize) -> &[u8] {
        let l = self.shape.len();
        &self.bits[n * l..(n + 1) * l]
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        BinaryEncodedSet {
            shape: self.shape,
            bits: indices.iter().flat_map(|&n| self.sample(n).iter().copied()).collect(),
            labels: indices.iter().map(|&n| self.labels[n]).collect(),
        }
    }

    /// Appends the channels of `other` (same count and spatial size).
    pub fn concat_channels(&self, other: &BinaryEncodedSet) -> Result<Self, DataError> {
        if self.len() != other.len() || self.shape.height != other.shape.height || self.shape.width != other.shape.width {
            return Err(DataError::Kernel("channel concat needs matching sets".into()));
        }
        let shape = Shape::new(self.shape.channels + other.shape.channels, self.shape.height, self.shape.width);
        let mut bits = Vec::with_capacity(shape.len() * self.len());
        for n in 0..self.len() {
            bits.extend_from_slice(self.sample(n));
            bits.extend_from_slice(other.sample(n));
        }
        Ok(BinaryEncodedSet { shape, bits, labels: self.labels.clone() })
    }
}

/// `T = 2^bits - 1` evenly spaced thresholds `j / (T + 1)`, `j = 1..=T`.
pub fn uniform_thresholds(bits: u32) -> Result<Vec<f64>, DataError> {
    if !(1..=5).contains(&bits) {
        return Err(DataError::Bits(bits));
    }
    let t = (1u32 << bits) - 1;
    Ok((1..=t).map(|j| j as f64 / (t + 1) as f64).collect())
}

/// Thermometer code: channel `c * T + j` is 1 where pixel `> thresholds[j]`.
pub fn threshold_encode(set: &LabeledImageSet, bits: u32) -> Result<BinaryEncodedSet, DataError> {
    let t = (1u32 << bits.min(31)) - 1;
    if !(1..=5).contains(&bits) {
        return Err(DataError::Bits(bits));
    }
    // Integer comparison p * (T + 1) > j * 255 is exact for byte pixels.
    encode_with(set, t as usize, |p, j| p as u32 * (t + 1) > (j as u32 + 1) * 255)
}

/// Thermometer code with caller-chosen increasing thresholds in `(0, 1)`.
pub fn threshold_encode_with(set: &LabeledImageSet, thresholds: &[f64]) -> Result<BinaryEncodedSet, DataError> {
    let ok = !thresholds.is_empty()
        && thresholds.iter().all(|&t| t > 0.0 && t < 1.0)
        && thresholds.windows(2).all(|w| w[0] < w[1]);
    if !ok {
        return Err(DataError::Thresholds);
    }
    encode_with(set, thresholds.len(), |p, j| p as f64 / 255.0 > thresholds[j])
}

fn encode_with(set: &LabeledImageSet, t: usize, above: impl Fn(u8, usize) -> bool) -> Result<BinaryEncodedSet, DataError> {
    let s = set.shape;
    let shape = Shape::new(s.channels * t, s.height, s.width);
    let plane = s.height * s.width;
    let mut bits = vec![0u8; shape.len() * set.len()];
    for n in 0..set.len() {
        let img = set.image(n);
        let out = &mut bits[n * shape.len()..(n + 1) * shape.len()];
        for c in 0..s.channels {
            for i in 0..plane {
                let p = img[c * plane + i];
                for j in 0..t {
                    out[(c * t + j) * plane + i] = above(p, j) as u8;
                }
            }
        }
    }
    Ok(BinaryEncodedSet { shape, bits, labels: set.labels.clone() })
}

/// Fixed (untrained) binary convolution front end: each kernel is
/// `channels x size x size` weights applied with zero padding, and an output
/// plane is 1 where the response exceeds the kernel's threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct FixedKernelBank {
    pub size: usize,
    pub kernels: Vec<Vec<f32>>,
    pub thresholds: Vec<f32>,
}

impl FixedKernelBank {
    pub fn apply(&self, set: &LabeledImageSet) -> Result<BinaryEncodedSet, DataError> {
        let s = set.shape;
        let ksz = s.channels * self.size * self.size;
        if self.size % 2 == 0 {
            return Err(DataError::Kernel("kernel size must be odd".into()));
        }
        if self.kernels.len() != self.thresholds.len() || self.kernels.iter().any(|k| k.len() != ksz) {
            return Err(DataError::Kernel(format!("each kernel needs {ksz} weights and one threshold")));
        }
        let shape = Shape::new(self.kernels.len(), s.height, s.width);
        let r = (self.size / 2) as isize;
        let mut bits = Vec::with_capacity(shape.len() * set.len());
        for n in 0..set.len() {
            for (k, w) in self.kernels.iter().enumerate() {
                for i in 0..s.height as isize {
                    for j in 0..s.width as isize {
                        let mut acc = 0.0f32;
                        for c in 0..s.channels {
                            for di in -r..=r {
                                for dj in -r..=r {
                                    let (y, x) = (i + di, j + dj);
                                    if y < 0 || x < 0 || y >= s.height as isize || x >= s.width as isize {
                                        continue;
                                    }
                                    let wi = (c * self.size + (di + r) as usize) * self.size + (dj + r) as usize;
                                    acc += w[wi] * set.pixel(n, s.index(c, y as usize, x as usize));
                                }
                            }
                        }
                        bits.push((acc > self.thresholds[k]) as u8);
                    }
                }
            }
        }
        Ok(BinaryEncodedSet { shape, bits, labels: set.labels.clone() })
    }
}

/// Two-bit XOR: the four input patterns, label = a XOR b.
pub fn xor_dataset() -> BinaryEncodedSet {
    BinaryEncodedSet {
        shape: Shape::flat(2),
        bits: vec![0, 0, 0, 1, 1, 0, 1, 1],
        labels: vec![0, 1, 1, 0],
    }
}

/// Motifs of the generated 3-class task: a horizontal bar, a vertical bar and
/// a diagonal, each three pixels long.
pub const MOTIFS: [[(usize, usize); 3]; 3] = [[(0, 0), (0, 1), (0, 2)], [(0, 0), (1, 0), (2, 0)], [(0, 0), (1, 1), (2, 2)]];

/// `n` 8x8 one-channel images, each holding one motif at a random position
/// plus `noise` extra random pixels that never complete another motif.
pub fn motif_dataset(n: usize, noise: usize, seed: u64) -> BinaryEncodedSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = Shape::new(1, 8, 8);
    let mut bits = Vec::with_capacity(n * 64);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let class = rng.random_range(0..3usize);
        let mut img = [0u8; 64];
        loop {
            img.fill(0);
            let (oi, oj) = (rng.random_range(0..6usize), rng.random_range(0..6usize));
            for &(di, dj) in &MOTIFS[class] {
                img[(oi + di) * 8 + oj + dj] = 1;
            }
            for _ in 0..noise {
                img[rng.random_range(0..64usize)] = 1;
            }
            if motif_classes(&img) == [class] {
                break;
            }
        }
        bits.extend_from_slice(&img);
        labels.push(class as u8);
    }
    BinaryEncodedSet { shape, bits, labels }
}

/// Classes whose motif occurs anywhere in an 8x8 image.
pub fn motif_classes(img: &[u8; 64]) -> Vec<usize> {
    (0..3)
        .filter(|&c| {
            (0..6).any(|oi| (0..6).any(|oj| MOTIFS[c].iter().all(|&(di, dj)| img[(oi + di) * 8 + oj + dj] == 1)))
        })
        .collect()
}
