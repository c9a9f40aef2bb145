//! Label corruption under symmetric, asymmetric, and instance-dependent noise
//! with reproducible flip masks.
//!
//! Instance-independent noise is specified by a row-stochastic transition
//! matrix and sampled per example. The instance-dependent variant is a
//! feature-projection proxy: the flip probability is a sigmoid of a seeded
//! random linear projection of the features, rescaled so the mean flip rate
//! hits the requested value, and the target class is picked by a second
//! seeded projection. Flip masks are kept alongside the data so diagnostics
//! can compare presumed-noisy statistics against ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use std::io::{self, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NoiseError {
    #[error("noise rate must lie in [0, 1), got {0}")]
    BadRate(f64),
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("class map entry {from} -> {to} invalid: {reason}")]
    BadClassMap {
        from: usize,
        to: usize,
        reason: String,
    },
    #[error("label {label} out of range for {classes} classes")]
    BadLabel { label: usize, classes: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("feature matrix length {len} is not a multiple of dim {dim}")]
    RaggedFeatures { len: usize, dim: usize },
    #[error("instance-dependent noise needs at least one projection")]
    NoProjections,
}

/// Row-stochastic K x K label transition matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    classes: usize,
    entries: Vec<f64>, // row-major
}

impl TransitionMatrix {
    pub fn from_rows(classes: usize, entries: Vec<f64>) -> Result<Self, NoiseError> {
        if classes < 2 {
            return Err(NoiseError::TooFewClasses(classes));
        }
        assert_eq!(entries.len(), classes * classes);
        let m = Self { classes, entries };
        m.validate()?;
        Ok(m)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn entry(&self, from: usize, to: usize) -> f64 {
        self.entries[from * self.classes + to]
    }

    pub fn row(&self, from: usize) -> &[f64] {
        &self.entries[from * self.classes..(from + 1) * self.classes]
    }

    fn validate(&self) -> Result<(), NoiseError> {
        for i in 0..self.classes {
            let row = self.row(i);
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(NoiseError::BadRate(
                    *row.iter().find(|&&p| !(0.0..=1.0).contains(&p)).unwrap(),
                ));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(NoiseError::BadRate(sum));
            }
        }
        Ok(())
    }

    fn sample_label(&self, from: usize, u: f64) -> usize {
        let row = self.row(from);
        let mut acc = 0.0;
        for (j, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return j;
            }
        }
        self.classes - 1
    }
}

/// Uniform corruption: diagonal `1 - eta`, off-diagonal `eta / (K - 1)`.
pub fn build_symmetric(classes: usize, eta: f64) -> Result<TransitionMatrix, NoiseError> {
    if classes < 2 {
        return Err(NoiseError::TooFewClasses(classes));
    }
    if !eta.is_finite() || !(0.0..1.0).contains(&eta) {
        return Err(NoiseError::BadRate(eta));
    }
    if eta >= 1.0 - 1.0 / classes as f64 {
        log::warn!(
            "symmetric noise rate {eta} is at or above the theory bound 1 - 1/K = {}",
            1.0 - 1.0 / classes as f64
        );
    }
    let off = eta / (classes - 1) as f64;
    let mut entries = vec![off; classes * classes];
    for i in 0..classes {
        entries[i * classes + i] = 1.0 - eta;
    }
    TransitionMatrix::from_rows(classes, entries)
}

/// Class-pattern corruption: each mapped class `i -> j` moves `eta` mass to
/// `j`; unmapped rows stay identity.
pub fn build_asymmetric(
    class_map: &[(usize, usize)],
    eta: f64,
    classes: usize,
) -> Result<TransitionMatrix, NoiseError> {
    if classes < 2 {
        return Err(NoiseError::TooFewClasses(classes));
    }
    if !eta.is_finite() || !(0.0..1.0).contains(&eta) {
        return Err(NoiseError::BadRate(eta));
    }
    let mut seen = vec![false; classes];
    for &(from, to) in class_map {
        if from >= classes || to >= classes {
            return Err(NoiseError::BadClassMap {
                from,
                to,
                reason: "index out of range".into(),
            });
        }
        if from == to {
            return Err(NoiseError::BadClassMap {
                from,
                to,
                reason: "self map".into(),
            });
        }
        if seen[from] {
            return Err(NoiseError::BadClassMap {
                from,
                to,
                reason: "duplicate source".into(),
            });
        }
        seen[from] = true;
    }
    let mut entries = vec![0.0; classes * classes];
    for i in 0..classes {
        entries[i * classes + i] = 1.0;
    }
    for &(from, to) in class_map {
        entries[from * classes + from] = 1.0 - eta;
        entries[from * classes + to] = eta;
    }
    TransitionMatrix::from_rows(classes, entries)
}

/// Each class flips into the next one, wrapping around.
pub fn circular_map(classes: usize) -> Vec<(usize, usize)> {
    (0..classes).map(|i| (i, (i + 1) % classes)).collect()
}

/// The standard CIFAR-10 asymmetric pattern: TRUCK -> AUTOMOBILE,
/// BIRD -> AIRPLANE, DEER -> HORSE, CAT <-> DOG.
pub fn cifar10_asym_map() -> Vec<(usize, usize)> {
    vec![(9, 1), (2, 0), (4, 7), (3, 5), (5, 3)]
}

/// How labels are corrupted.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseSpec {
    Symmetric {
        eta: f64,
    },
    Asymmetric {
        class_map: Vec<(usize, usize)>,
        eta: f64,
    },
    /// Feature-projection proxy for instance-dependent noise. `seed` fixes
    /// the projection directions; the flip draws use the seed passed to
    /// [`corrupt`].
    InstanceDependent {
        rate: f64,
        projections: usize,
        seed: u64,
    },
}

/// A dataset with both the corrupted and the original labels.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptedDataset {
    pub dim: usize,
    pub classes: usize,
    /// Row-major `n x dim` feature matrix.
    pub features: Vec<f64>,
    pub true_labels: Vec<usize>,
    pub given_labels: Vec<usize>,
    pub flip_mask: Vec<bool>,
}

impl CorruptedDataset {
    pub fn len(&self) -> usize {
        self.true_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.true_labels.is_empty()
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn empirical_flip_rate(&self) -> f64 {
        self.flip_mask.iter().filter(|&&f| f).count() as f64 / self.len() as f64
    }

    /// Writes `index,true_label,given_label,flipped` rows.
    pub fn write_label_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "index,true_label,given_label,flipped")?;
        for i in 0..self.len() {
            writeln!(
                w,
                "{},{},{},{}",
                i, self.true_labels[i], self.given_labels[i], self.flip_mask[i]
            )?;
        }
        Ok(())
    }
}

/// Corrupts labels according to `spec`. Deterministic given `seed`.
pub fn corrupt(
    features: &[f64],
    dim: usize,
    true_labels: &[usize],
    classes: usize,
    spec: &NoiseSpec,
    seed: u64,
) -> Result<CorruptedDataset, NoiseError> {
    if true_labels.is_empty() {
        return Err(NoiseError::EmptyDataset);
    }
    if dim == 0 || features.len() != true_labels.len() * dim {
        return Err(NoiseError::RaggedFeatures {
            len: features.len(),
            dim,
        });
    }
    if classes < 2 {
        return Err(NoiseError::TooFewClasses(classes));
    }
    if let Some(&label) = true_labels.iter().find(|&&l| l >= classes) {
        return Err(NoiseError::BadLabel { label, classes });
    }

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let given_labels: Vec<usize> = match spec {
        NoiseSpec::Symmetric { eta } => {
            let matrix = build_symmetric(classes, *eta)?;
            true_labels
                .iter()
                .map(|&y| matrix.sample_label(y, rng.random_range(0.0..1.0)))
                .collect()
        }
        NoiseSpec::Asymmetric { class_map, eta } => {
            let matrix = build_asymmetric(class_map, *eta, classes)?;
            true_labels
                .iter()
                .map(|&y| matrix.sample_label(y, rng.random_range(0.0..1.0)))
                .collect()
        }
        NoiseSpec::InstanceDependent {
            rate,
            projections,
            seed: proj_seed,
        } => instance_dependent_labels(
            features,
            dim,
            true_labels,
            classes,
            *rate,
            *projections,
            *proj_seed,
            &mut rng,
        )?,
    };

    let flip_mask: Vec<bool> = true_labels
        .iter()
        .zip(&given_labels)
        .map(|(t, g)| t != g)
        .collect();
    Ok(CorruptedDataset {
        dim,
        classes,
        features: features.to_vec(),
        true_labels: true_labels.to_vec(),
        given_labels,
        flip_mask,
    })
}

#[allow(clippy::too_many_arguments)]
fn instance_dependent_labels(
    features: &[f64],
    dim: usize,
    true_labels: &[usize],
    classes: usize,
    rate: f64,
    projections: usize,
    proj_seed: u64,
    flip_rng: &mut ChaCha12Rng,
) -> Result<Vec<usize>, NoiseError> {
    if !rate.is_finite() || !(0.0..1.0).contains(&rate) {
        return Err(NoiseError::BadRate(rate));
    }
    if projections == 0 {
        return Err(NoiseError::NoProjections);
    }
    let n = true_labels.len();
    let mut proj_rng = ChaCha12Rng::seed_from_u64(proj_seed);
    let normal = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).unwrap();
    let flip_dir: Vec<f64> = (0..dim).map(|_| normal.sample(&mut proj_rng)).collect();
    let class_dirs: Vec<Vec<f64>> = (0..projections)
        .map(|_| (0..dim).map(|_| normal.sample(&mut proj_rng)).collect())
        .collect();

    // raw per-sample flip propensities through a sigmoid
    let mut propensity = Vec::with_capacity(n);
    for i in 0..n {
        let x = &features[i * dim..(i + 1) * dim];
        let s: f64 = x.iter().zip(&flip_dir).map(|(a, b)| a * b).sum();
        propensity.push(1.0 / (1.0 + (-s).exp()));
    }

    // single multiplier, found by bisection, pinning the mean flip rate
    let mean_at = |m: f64| propensity.iter().map(|&p| (m * p).min(1.0)).sum::<f64>() / n as f64;
    let mut hi = 1.0;
    while mean_at(hi) < rate && hi < 1e12 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if mean_at(mid) < rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let multiplier = 0.5 * (lo + hi);

    let mut labels = Vec::with_capacity(n);
    for (i, &y) in true_labels.iter().enumerate() {
        let q = (multiplier * propensity[i]).min(1.0);
        let flip = flip_rng.random_range(0.0..1.0) < q;
        if !flip {
            labels.push(y);
            continue;
        }
        // pick the target class from the projection scores, skipping y
        let x = &features[i * dim..(i + 1) * dim];
        let mut best = (0usize, f64::NEG_INFINITY);
        for (j, dir) in class_dirs.iter().enumerate() {
            let s: f64 = x.iter().zip(dir).map(|(a, b)| a * b).sum();
            if s > best.1 {
                best = (j, s);
            }
        }
        let candidates: Vec<usize> = (0..classes).filter(|&c| c != y).collect();
        labels.push(candidates[best.0 % candidates.len()]);
    }
    Ok(labels)
}
