//! Datasets: IDX (MNIST) ingestion, Gaussian-cluster synthetic data, and the
//! seeded shuffle-per-epoch batch sampler.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Row-major `n × dim` features with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    num_classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, dim: usize, num_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::config("dataset must contain at least one sample"));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * dim,
                found: features.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange { label, num_classes });
        }
        Ok(Self {
            features,
            labels,
            dim,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample(&self, i: usize) -> (&[f64], usize) {
        (&self.features[i * self.dim..(i + 1) * self.dim], self.labels[i])
    }

    /// The first `n` samples (all of them if `n >= len`).
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            features: self.features[..n * self.dim].to_vec(),
            labels: self.labels[..n].to_vec(),
            dim: self.dim,
            num_classes: self.num_classes,
        }
    }

    /// Gathers `indices` into a feature matrix and a label vector.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Tensor) {
        let mut x = Vec::with_capacity(indices.len() * self.dim);
        let mut y = Vec::with_capacity(indices.len());
        for &i in indices {
            let (f, l) = self.sample(i);
            x.extend_from_slice(f);
            y.push(l as f64);
        }
        (
            Tensor::matrix(indices.len(), self.dim, x).expect("gathered rows have dataset width"),
            Tensor::vector(y),
        )
    }
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::Truncated {
            needed: offset + 4,
            available: bytes.len(),
        })
}

/// Raw IDX image file: `n` images of `rows × cols` unsigned bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let magic = read_u32(bytes, 0)?;
        if magic != IDX_IMAGES_MAGIC {
            return Err(Error::Format {
                expected: IDX_IMAGES_MAGIC,
                found: magic,
            });
        }
        let count = read_u32(bytes, 4)? as usize;
        let rows = read_u32(bytes, 8)? as usize;
        let cols = read_u32(bytes, 12)? as usize;
        let needed = 16 + count * rows * cols;
        if bytes.len() < needed {
            return Err(Error::Truncated {
                needed,
                available: bytes.len(),
            });
        }
        Ok(Self {
            count,
            rows,
            cols,
            pixels: bytes[16..needed].to_vec(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.pixels.len());
        for v in [IDX_IMAGES_MAGIC, self.count as u32, self.rows as u32, self.cols as u32] {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out.extend_from_slice(&self.pixels);
        out
    }
}

/// Raw IDX label file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxLabels {
    pub labels: Vec<u8>,
}

impl IdxLabels {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let magic = read_u32(bytes, 0)?;
        if magic != IDX_LABELS_MAGIC {
            return Err(Error::Format {
                expected: IDX_LABELS_MAGIC,
                found: magic,
            });
        }
        let count = read_u32(bytes, 4)? as usize;
        let needed = 8 + count;
        if bytes.len() < needed {
            return Err(Error::Truncated {
                needed,
                available: bytes.len(),
            });
        }
        Ok(Self {
            labels: bytes[8..needed].to_vec(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.labels.len());
        out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        out.extend_from_slice(&(self.labels.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.labels);
        out
    }
}

/// Builds a dataset from decoded IDX files. Pixels are scaled by 1/255 and
/// the class count is `max(label) + 1`, at least 10.
pub fn dataset_from_idx(images: &IdxImages, labels: &IdxLabels) -> Result<Dataset> {
    if images.count != labels.labels.len() {
        return Err(Error::CountMismatch {
            images: images.count,
            labels: labels.labels.len(),
        });
    }
    let features = images.pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let labels: Vec<usize> = labels.labels.iter().map(|&l| usize::from(l)).collect();
    let num_classes = labels.iter().max().map_or(0, |m| m + 1).max(10);
    Dataset::new(features, labels, images.rows * images.cols, num_classes)
}

/// Reads an IDX image file and its label file.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let image_bytes = std::fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let label_bytes = std::fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    dataset_from_idx(&IdxImages::parse(&image_bytes)?, &IdxLabels::parse(&label_bytes)?)
}

/// Standard MNIST file names inside `dir`.
pub fn load_mnist_dir(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    load_idx(
        dir.join("train-images-idx3-ubyte"),
        dir.join("train-labels-idx1-ubyte"),
    )
}

/// `k` Gaussian clusters in `d` dimensions with unit covariance. Cluster
/// means are random directions scaled to norm `separation`; samples are
/// assigned to clusters round-robin.
pub fn synthetic_classification(n: usize, d: usize, k: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || d == 0 || k == 0 {
        return Err(Error::config("n, d and k must be positive"));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::config(format!("separation must be non-negative, got {separation}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means = Vec::with_capacity(k * d);
    for _ in 0..k {
        let dir: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        means.extend(dir.iter().map(|v| v / norm * separation));
    }
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % k;
        for j in 0..d {
            let noise: f64 = StandardNormal.sample(&mut rng);
            features.push(means[class * d + j] + noise);
        }
        labels.push(class);
    }
    Dataset::new(features, labels, d, k)
}

/// Shuffle-without-replacement sampler. The permutation for an epoch depends
/// only on `(seed, epoch)`.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    batch_size: usize,
    seed: u64,
    cached: Option<(u32, Vec<usize>)>,
}

impl BatchSampler {
    pub fn new(batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        Ok(Self {
            batch_size,
            seed,
            cached: None,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Batches per epoch, counting a final short batch.
    pub fn batches_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }

    pub fn permutation(&self, n: usize, epoch: u32) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(u64::from(epoch));
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        perm
    }

    /// Indices of batch `step` of `epoch` over a dataset of `n` samples.
    pub fn next_batch(&mut self, n: usize, epoch: u32, step: usize) -> Result<Vec<usize>> {
        if self.batch_size > n {
            return Err(Error::config(format!(
                "batch size {} exceeds dataset size {n}",
                self.batch_size
            )));
        }
        let steps = self.batches_per_epoch(n);
        if step >= steps {
            return Err(Error::config(format!("step {step} beyond the {steps} batches of an epoch")));
        }
        let fresh = !matches!(&self.cached, Some((e, p)) if *e == epoch && p.len() == n);
        if fresh {
            self.cached = Some((epoch, self.permutation(n, epoch)));
        }
        let perm = &self.cached.as_ref().unwrap().1;
        let start = step * self.batch_size;
        let end = (start + self.batch_size).min(n);
        Ok(perm[start..end].to_vec())
    }
}
