//! The training loop: per-step cross-entropy bookkeeping, periodic mixture
//! refits and threshold updates, Huberized-loss backpropagation, and metrics.
//!
//! Each step samples a minibatch, computes every sample's cross entropy with
//! the current model and pushes all of them into the FIFO queue. Every
//! `time_frame` steps the mixture is refitted on the queue and the threshold
//! strategy produces a new clipping threshold; between updates the last
//! threshold is carried forward. The loss gradients are clipped per sample at
//! the probability level, averaged over the batch, and backpropagated.

use crate::gmm::{fit_2gmm, EmConfig, GmmFit};
use crate::harness::config::{DatasetKind, ExperimentConfig};
use crate::harness::data::{self, Dataset};
use crate::harness::metrics::MetricsRecord;
use crate::harness::queue::LossQueue;
use crate::loss::{self, BaseLoss, HuberizedLoss, LossError};
use crate::model::{sgd_step, Gradients, MlpModel, ModelError, OptimizerState};
use crate::noise::{corrupt, CorruptedDataset, NoiseError};
use crate::threshold::{
    estimate_ratio, schedule_next, QuadratureGrid, ThresholdError, ThresholdState, DEFAULT_BINS,
};
use crate::P_FLOOR;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::io::{self, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] crate::harness::config::ConfigError),
    #[error(transparent)]
    Data(#[from] crate::harness::data::DataError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Gmm(#[from] crate::gmm::GmmError),
    #[error(transparent)]
    Threshold(#[from] ThresholdError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("cannot evaluate on an empty dataset")]
    EmptyDataset,
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

/// Seed streams for the independent random choices of a run. Derived with a
/// splitmix64 round so strategies consuming different stream tags never share
/// state.
pub mod seed_stream {
    pub const TRAIN_DATA: u64 = 1;
    pub const TEST_DATA: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const MODEL_INIT: u64 = 4;
    pub const SHUFFLE: u64 = 5;

    /// splitmix64 finalizer over `seed ^ stream`.
    pub fn subseed(seed: u64, stream: u64) -> u64 {
        let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
}

/// A finished run: the trained model, per-epoch metrics, the full per-step
/// threshold trace, and the data it ran on.
#[derive(Debug)]
pub struct TrainOutput {
    pub model: MlpModel,
    pub metrics: Vec<MetricsRecord>,
    /// `tau_by_step[t - 1]` is the threshold used at step `t`.
    pub tau_by_step: Vec<f64>,
    /// Steps at which the strategy was consulted (multiples of `time_frame`).
    pub update_steps: Vec<usize>,
    /// How many threshold solves reported the target ratio unattainable.
    pub unattainable_updates: usize,
    pub train_data: CorruptedDataset,
    pub test_data: Dataset,
}

/// Builds the train/test datasets for a config, corrupting the training
/// labels per the noise spec.
pub fn build_datasets(cfg: &ExperimentConfig) -> Result<(CorruptedDataset, Dataset), TrainError> {
    let (train, test) = match cfg.dataset {
        DatasetKind::Blobs => (
            data::gaussian_blobs(
                cfg.n_train,
                cfg.classes,
                cfg.feature_dim,
                cfg.blob_std,
                seed_stream::subseed(cfg.seed, seed_stream::TRAIN_DATA),
            )?,
            data::gaussian_blobs(
                cfg.n_test,
                cfg.classes,
                cfg.feature_dim,
                cfg.blob_std,
                seed_stream::subseed(cfg.seed, seed_stream::TEST_DATA),
            )?,
        ),
        DatasetKind::Arcs => (
            data::two_arcs(
                cfg.n_train,
                cfg.arc_noise,
                seed_stream::subseed(cfg.seed, seed_stream::TRAIN_DATA),
            )?,
            data::two_arcs(
                cfg.n_test,
                cfg.arc_noise,
                seed_stream::subseed(cfg.seed, seed_stream::TEST_DATA),
            )?,
        ),
        DatasetKind::Idx => {
            let train = data::load_idx_pair(
                cfg.idx_train_images.as_ref().unwrap(),
                cfg.idx_train_labels.as_ref().unwrap(),
            )?;
            let test = data::load_idx_pair(
                cfg.idx_test_images.as_ref().unwrap(),
                cfg.idx_test_labels.as_ref().unwrap(),
            )?;
            (train, test)
        }
    };
    let spec = cfg.noise_spec()?;
    let corrupted = corrupt(
        &train.features,
        train.dim,
        &train.labels,
        train.classes.max(cfg.classes),
        &spec,
        seed_stream::subseed(cfg.seed, seed_stream::NOISE),
    )?;
    Ok((corrupted, test))
}

/// Runs one experiment end to end.
pub fn train(cfg: &ExperimentConfig) -> Result<TrainOutput, TrainError> {
    cfg.validate()?;
    let (train_data, test_data) = build_datasets(cfg)?;
    let base = cfg.base_loss()?;

    let n = train_data.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let strategy = cfg.strategy(total_steps)?;
    let schedule = cfg.lr_schedule()?;

    let mut model = MlpModel::he_uniform(
        &cfg.layer_dims(train_data.dim, train_data.classes),
        seed_stream::subseed(cfg.seed, seed_stream::MODEL_INIT),
    )?;
    let mut opt = OptimizerState::new(
        &model,
        cfg.lr,
        cfg.momentum,
        cfg.weight_decay,
        cfg.param_clip,
    )?;
    let mut shuffle_rng =
        ChaCha12Rng::seed_from_u64(seed_stream::subseed(cfg.seed, seed_stream::SHUFFLE));

    let mut queue = LossQueue::new(cfg.queue_capacity);
    let mut state = ThresholdState {
        current_tau: strategy.initial_tau(),
        step: 0,
    };
    let mut hub = HuberizedLoss::new(base, state.current_tau)?;
    let em_cfg = EmConfig::default();

    let mut tau_by_step = Vec::with_capacity(total_steps);
    let mut update_steps = Vec::new();
    let mut unattainable_updates = 0usize;
    let mut last_fit: Option<GmmFit> = None;
    let mut last_ratio = f64::NAN;
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut t = 0usize;

    for epoch in 0..cfg.epochs {
        opt.lr = schedule.lr_at(epoch);
        let mut clipped = 0usize;
        let mut seen = 0usize;

        for batch in data::shuffled_batches(n, cfg.batch_size, &mut shuffle_rng) {
            t += 1;

            // forward every sample, record its cross entropy, keep the cache
            let mut caches = Vec::with_capacity(batch.len());
            for &i in &batch {
                let cache = model.forward_cached(train_data.feature(i))?;
                let probs = loss::softmax(cache.logits())?;
                let h = -probs[train_data.given_labels[i]].max(P_FLOOR).ln();
                queue.push(h);
                caches.push((i, cache));
            }

            // threshold update on the time frame; carried forward otherwise
            if t.is_multiple_of(cfg.time_frame) {
                update_steps.push(t);
                let fit = if queue.len() >= cfg.warmup_samples {
                    Some(fit_2gmm(&queue.values(), &em_cfg)?)
                } else {
                    None
                };
                state = schedule_next(&strategy, &state, t, opt.lr, fit.as_ref(), base)?;
                if let Some(fit) = fit {
                    if fit.support_hi - fit.support_lo > 1e-12 {
                        let grid = QuadratureGrid::over_support(&fit, DEFAULT_BINS)?;
                        last_ratio = estimate_ratio(&fit, base, state.current_tau, &grid)?.ratio;
                    } else {
                        last_ratio = 1.0;
                    }
                    let optimized = matches!(
                        strategy,
                        crate::threshold::ThresholdStrategy::Optimized { .. }
                    );
                    if optimized && state.current_tau >= crate::threshold::tau_max_for(&fit) {
                        unattainable_updates += 1;
                    }
                    last_fit = Some(fit);
                }
                if hub.tau() != state.current_tau {
                    hub = HuberizedLoss::new(base, state.current_tau)?;
                }
            }
            tau_by_step.push(state.current_tau);

            // clipped per-sample gradients, averaged, then one SGD step
            let mut grads = Gradients::zeros_like(&model);
            let mut batch_loss = 0.0;
            for (i, cache) in &caches {
                let y = train_data.given_labels[*i];
                let probs = loss::softmax(cache.logits())?;
                let py = probs[y].max(P_FLOOR);
                batch_loss += hub.value_at_floor(py);
                if loss::grad_norm(base, py)? >= hub.tau() {
                    clipped += 1;
                }
                seen += 1;
                let grad_logits = hub.grad_logits(cache.logits(), y)?;
                let sample_grads = model.backward(cache, &grad_logits)?;
                grads.add_assign(&sample_grads);
            }
            batch_loss /= caches.len() as f64;
            if !batch_loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { step: t });
            }
            grads.scale(1.0 / caches.len() as f64);
            sgd_step(&mut model, &mut opt, &grads)?;
        }

        let (train_acc, true_ratio) = train_epoch_diagnostics(&model, &train_data, base, &hub)?;
        let test_acc = evaluate(&model, &test_data)?;
        let (mu_c, sigma_c, mu_n, sigma_n) = match &last_fit {
            Some(f) => (f.clean.mean, f.clean.std, f.noise.mean, f.noise.std),
            None => (f64::NAN, f64::NAN, f64::NAN, f64::NAN),
        };
        metrics.push(MetricsRecord {
            step: t,
            epoch,
            train_acc,
            test_acc,
            tau: state.current_tau,
            ratio: last_ratio,
            mu_c,
            sigma_c,
            mu_n,
            sigma_n,
            clip_frac: clipped as f64 / seen as f64,
            true_ratio,
        });
    }

    Ok(TrainOutput {
        model,
        metrics,
        tau_by_step,
        update_steps,
        unattainable_updates,
        train_data,
        test_data,
    })
}

/// Training accuracy against the given (possibly corrupted) labels, plus the
/// flip-mask ground-truth ratio of mean clipped gradient norms
/// (noisy / clean) at the current threshold. The ratio is `None` when the
/// mask has no flips.
fn train_epoch_diagnostics(
    model: &MlpModel,
    data: &CorruptedDataset,
    base: BaseLoss,
    hub: &HuberizedLoss,
) -> Result<(f64, Option<f64>), TrainError> {
    let mut correct = 0usize;
    let mut sum_noisy = 0.0;
    let mut n_noisy = 0usize;
    let mut sum_clean = 0.0;
    let mut n_clean = 0usize;
    for i in 0..data.len() {
        let logits = model.forward(data.feature(i))?;
        let y = data.given_labels[i];
        if argmax(&logits) == y {
            correct += 1;
        }
        let probs = loss::softmax(&logits)?;
        let g = loss::grad_norm(base, probs[y].max(P_FLOOR))?.min(hub.tau());
        if data.flip_mask[i] {
            sum_noisy += g;
            n_noisy += 1;
        } else {
            sum_clean += g;
            n_clean += 1;
        }
    }
    let true_ratio = if n_noisy > 0 && n_clean > 0 && sum_clean > 0.0 {
        Some((sum_noisy / n_noisy as f64) / (sum_clean / n_clean as f64))
    } else {
        None
    };
    Ok((correct as f64 / data.len() as f64, true_ratio))
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Fraction of argmax-correct predictions; ties resolve to the lowest class
/// index.
pub fn evaluate(model: &MlpModel, dataset: &Dataset) -> Result<f64, TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut correct = 0usize;
    for i in 0..dataset.len() {
        let logits = model.forward(dataset.feature(i))?;
        if argmax(&logits) == dataset.labels[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}

/// Dumps per-sample `index,H,grad_norm,flipped` rows for the current model,
/// the raw material for gradient-distribution plots.
pub fn export_distribution<W: Write>(
    model: &MlpModel,
    data: &CorruptedDataset,
    base: BaseLoss,
    mut w: W,
) -> Result<(), TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    writeln!(w, "index,H,grad_norm,flipped")?;
    for i in 0..data.len() {
        let logits = model.forward(data.feature(i))?;
        let probs = loss::softmax(&logits)?;
        let py = probs[data.given_labels[i]].max(P_FLOOR);
        let h = -py.ln();
        let g = loss::grad_norm(base, py)?;
        writeln!(w, "{},{},{},{}", i, h, g, data.flip_mask[i])?;
    }
    Ok(())
}
