//! Dataset ingestion: seeded synthetic generators and an IDX image/label
//! reader for small real-image subsets.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use std::fs;
use std::io;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("bad IDX magic {found:#010x} at offset {offset}")]
    BadMagic { found: u32, offset: usize },
    #[error("IDX file truncated at offset {offset}: need {needed} more bytes")]
    Truncated { offset: usize, needed: usize },
    #[error("IDX image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("dataset parameters invalid: {0}")]
    BadParams(String),
}

/// A labeled feature matrix, row-major `n x dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    pub classes: usize,
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }
}

/// Gaussian blobs with class centers spaced on a circle of radius 2 in the
/// first two feature dimensions; `std` controls the class overlap.
pub fn gaussian_blobs(
    n: usize,
    classes: usize,
    dim: usize,
    std: f64,
    seed: u64,
) -> Result<Dataset, DataError> {
    if n == 0 || classes < 2 || dim < 2 || !std.is_finite() || std <= 0.0 {
        return Err(DataError::BadParams(format!(
            "blobs need n > 0, classes >= 2, dim >= 2, std > 0; got ({n}, {classes}, {dim}, {std})"
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, std).unwrap();
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        let angle = 2.0 * std::f64::consts::PI * c as f64 / classes as f64;
        let center = [2.0 * angle.cos(), 2.0 * angle.sin()];
        for d in 0..dim {
            let base = center.get(d).copied().unwrap_or(0.0);
            features.push(base + noise.sample(&mut rng));
        }
        labels.push(c);
    }
    Ok(Dataset {
        dim,
        classes,
        features,
        labels,
    })
}

/// Two interleaved arcs ("half moons"): a harder nonlinear binary task.
pub fn two_arcs(n: usize, noise_std: f64, seed: u64) -> Result<Dataset, DataError> {
    if n == 0 || !noise_std.is_finite() || noise_std < 0.0 {
        return Err(DataError::BadParams(format!(
            "arcs need n > 0, noise >= 0; got ({n}, {noise_std})"
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_std.max(1e-12)).unwrap();
    let mut features = Vec::with_capacity(n * 2);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % 2;
        let t = std::f64::consts::PI * rng.random_range(0.0..1.0);
        let (x, y) = if c == 0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        features.push(x + noise.sample(&mut rng));
        features.push(y + noise.sample(&mut rng));
        labels.push(c);
    }
    Ok(Dataset {
        dim: 2,
        classes: 2,
        features,
        labels,
    })
}

const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

fn read_be_u32(bytes: &[u8], offset: usize) -> Result<u32, DataError> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(DataError::Truncated {
            offset,
            needed: end - bytes.len(),
        });
    }
    Ok(u32::from_be_bytes(bytes[offset..end].try_into().unwrap()))
}

/// Parses an IDX image file (magic `0x00000803`, big-endian dims, byte
/// pixels) into per-image feature rows scaled to `[0, 1]`.
pub fn load_idx_images(path: &Path) -> Result<(Vec<f64>, usize, usize), DataError> {
    let bytes = fs::read(path)?;
    let magic = read_be_u32(&bytes, 0)?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(DataError::BadMagic {
            found: magic,
            offset: 0,
        });
    }
    let count = read_be_u32(&bytes, 4)? as usize;
    let rows = read_be_u32(&bytes, 8)? as usize;
    let cols = read_be_u32(&bytes, 12)? as usize;
    let dim = rows * cols;
    let expected = 16 + count * dim;
    if bytes.len() < expected {
        return Err(DataError::Truncated {
            offset: bytes.len(),
            needed: expected - bytes.len(),
        });
    }
    let features = bytes[16..expected]
        .iter()
        .map(|&b| b as f64 / 255.0)
        .collect();
    Ok((features, count, dim))
}

/// Parses an IDX label file (magic `0x00000801`).
pub fn load_idx_labels(path: &Path) -> Result<Vec<usize>, DataError> {
    let bytes = fs::read(path)?;
    let magic = read_be_u32(&bytes, 0)?;
    if magic != IDX_LABEL_MAGIC {
        return Err(DataError::BadMagic {
            found: magic,
            offset: 0,
        });
    }
    let count = read_be_u32(&bytes, 4)? as usize;
    let expected = 8 + count;
    if bytes.len() < expected {
        return Err(DataError::Truncated {
            offset: bytes.len(),
            needed: expected - bytes.len(),
        });
    }
    Ok(bytes[8..expected].iter().map(|&b| b as usize).collect())
}

/// Loads a matching image/label IDX pair into a dataset.
pub fn load_idx_pair(images: &Path, labels: &Path) -> Result<Dataset, DataError> {
    let (features, count, dim) = load_idx_images(images)?;
    let labels = load_idx_labels(labels)?;
    if labels.len() != count {
        return Err(DataError::CountMismatch {
            images: count,
            labels: labels.len(),
        });
    }
    let classes = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
    Ok(Dataset {
        dim,
        classes,
        features,
        labels,
    })
}

/// Shuffles `0..n` and chunks it into minibatches; the final partial batch is
/// kept.
pub fn shuffled_batches(n: usize, batch: usize, rng: &mut ChaCha12Rng) -> Vec<Vec<usize>> {
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(rng);
    indices.chunks(batch).map(|c| c.to_vec()).collect()
}
