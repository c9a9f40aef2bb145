//! Minimal feedforward classifier with exact manual backpropagation, SGD with
//! momentum and weight decay, and global parameter-gradient norm clipping.
//!
//! Everything runs in double precision so gradients can be validated against
//! central finite differences at 1e-5 relative error.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::io::{self, Read, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("need at least input and output dims, got {0} layer dims")]
    TooFewDims(usize),
    #[error("layer dims must be positive")]
    ZeroDim,
    #[error("feature dim {got} does not match model input dim {want}")]
    DimMismatch { got: usize, want: usize },
    #[error("input contains a non-finite value")]
    NonFiniteInput,
    #[error("gradient contains a non-finite value")]
    NonFiniteGradient,
    #[error("optimizer parameter out of range: {0}")]
    BadOptimizerParam(String),
    #[error("lr milestones must be strictly increasing")]
    BadMilestones,
    #[error("checkpoint malformed: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Fully connected ReLU stack: affine layers with ReLU on all hidden layers
/// and a linear output producing logits.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layer_dims: Vec<usize>,
    /// Per layer, row-major `out x in`.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

/// Activations recorded during a forward pass: `activations[0]` is the input,
/// `activations[L]` the logits.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn logits(&self) -> &[f64] {
        self.activations.last().unwrap()
    }
}

/// Parameter gradients with the same shapes as the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            weights: model.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: model.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for w in &mut self.weights {
            for x in w {
                *x *= factor;
            }
        }
        for b in &mut self.biases {
            for x in b {
                *x *= factor;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        let mut sum = 0.0;
        for w in &self.weights {
            sum += w.iter().map(|x| x * x).sum::<f64>();
        }
        for b in &self.biases {
            sum += b.iter().map(|x| x * x).sum::<f64>();
        }
        sum.sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.biases)
            .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

impl MlpModel {
    /// He-uniform initialization from a seeded generator: weights drawn from
    /// `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, biases zero.
    pub fn he_uniform(layer_dims: &[usize], seed: u64) -> Result<Self, ModelError> {
        Self::check_dims(layer_dims)?;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in layer_dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            weights.push(
                (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect(),
            );
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
        })
    }

    pub fn zeros(layer_dims: &[usize]) -> Result<Self, ModelError> {
        Self::check_dims(layer_dims)?;
        let weights = layer_dims
            .windows(2)
            .map(|p| vec![0.0; p[0] * p[1]])
            .collect();
        let biases = layer_dims.windows(2).map(|p| vec![0.0; p[1]]).collect();
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
        })
    }

    fn check_dims(layer_dims: &[usize]) -> Result<(), ModelError> {
        if layer_dims.len() < 2 {
            return Err(ModelError::TooFewDims(layer_dims.len()));
        }
        if layer_dims.contains(&0) {
            return Err(ModelError::ZeroDim);
        }
        Ok(())
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Logits for a single feature vector.
    pub fn forward(&self, features: &[f64]) -> Result<Vec<f64>, ModelError> {
        Ok(self.forward_cached(features)?.activations.pop().unwrap())
    }

    /// Forward pass keeping per-layer activations for [`Self::backward`].
    pub fn forward_cached(&self, features: &[f64]) -> Result<ForwardCache, ModelError> {
        if features.len() != self.input_dim() {
            return Err(ModelError::DimMismatch {
                got: features.len(),
                want: self.input_dim(),
            });
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(ModelError::NonFiniteInput);
        }
        let layers = self.weights.len();
        let mut activations = Vec::with_capacity(layers + 1);
        activations.push(features.to_vec());
        for l in 0..layers {
            let (fan_in, fan_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let input = &activations[l];
            let mut out = vec![0.0; fan_out];
            for (o, slot) in out.iter_mut().enumerate() {
                let row = &self.weights[l][o * fan_in..(o + 1) * fan_in];
                let mut acc = self.biases[l][o];
                for i in 0..fan_in {
                    acc += row[i] * input[i];
                }
                // ReLU on hidden layers, linear output
                *slot = if l + 1 < layers { acc.max(0.0) } else { acc };
            }
            activations.push(out);
        }
        Ok(ForwardCache { activations })
    }

    /// Exact reverse-mode gradients for one sample given the loss gradient at
    /// the logits.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_logits: &[f64],
    ) -> Result<Gradients, ModelError> {
        if grad_logits.len() != self.output_dim() {
            return Err(ModelError::DimMismatch {
                got: grad_logits.len(),
                want: self.output_dim(),
            });
        }
        if grad_logits.iter().any(|x| !x.is_finite()) {
            return Err(ModelError::NonFiniteGradient);
        }
        let layers = self.weights.len();
        let mut grads = Gradients::zeros_like(self);
        let mut delta = grad_logits.to_vec();
        for l in (0..layers).rev() {
            let fan_in = self.layer_dims[l];
            let input = &cache.activations[l];
            for (o, &d) in delta.iter().enumerate() {
                grads.biases[l][o] = d;
                let row = &mut grads.weights[l][o * fan_in..(o + 1) * fan_in];
                for (slot, &x) in row.iter_mut().zip(input) {
                    *slot = d * x;
                }
            }
            if l > 0 {
                let mut prev = vec![0.0; fan_in];
                for (o, &d) in delta.iter().enumerate() {
                    let row = &self.weights[l][o * fan_in..(o + 1) * fan_in];
                    for (p, &w) in prev.iter_mut().zip(row) {
                        *p += w * d;
                    }
                }
                // ReLU derivative: pass gradient only where the activation fired
                for i in 0..fan_in {
                    if input[i] <= 0.0 {
                        prev[i] = 0.0;
                    }
                }
                delta = prev;
            }
        }
        Ok(grads)
    }

    /// Serializes the model as a dims header followed by little-endian f64
    /// parameters: `u32 dim_count`, `dim_count x u32` dims, then per layer the
    /// row-major weights and the biases.
    pub fn save<W: Write>(&self, mut w: W) -> Result<(), ModelError> {
        w.write_all(&(self.layer_dims.len() as u32).to_le_bytes())?;
        for &d in &self.layer_dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for l in 0..self.weights.len() {
            for &x in &self.weights[l] {
                w.write_all(&x.to_le_bytes())?;
            }
            for &x in &self.biases[l] {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load<R: Read>(mut r: R) -> Result<Self, ModelError> {
        let mut u32_buf = [0u8; 4];
        r.read_exact(&mut u32_buf)
            .map_err(|_| ModelError::BadCheckpoint("missing dims header".into()))?;
        let dim_count = u32::from_le_bytes(u32_buf) as usize;
        if !(2..=64).contains(&dim_count) {
            return Err(ModelError::BadCheckpoint(format!(
                "implausible dim count {dim_count}"
            )));
        }
        let mut layer_dims = Vec::with_capacity(dim_count);
        for _ in 0..dim_count {
            r.read_exact(&mut u32_buf)
                .map_err(|_| ModelError::BadCheckpoint("truncated dims header".into()))?;
            layer_dims.push(u32::from_le_bytes(u32_buf) as usize);
        }
        Self::check_dims(&layer_dims).map_err(|e| ModelError::BadCheckpoint(e.to_string()))?;
        let mut model = Self::zeros(&layer_dims)?;
        let mut f64_buf = [0u8; 8];
        for l in 0..model.weights.len() {
            for slot in model.weights[l]
                .iter_mut()
                .chain(model.biases[l].iter_mut())
            {
                r.read_exact(&mut f64_buf)
                    .map_err(|_| ModelError::BadCheckpoint("truncated parameters".into()))?;
                *slot = f64::from_le_bytes(f64_buf);
            }
        }
        let mut extra = [0u8; 1];
        if r.read(&mut extra)? != 0 {
            return Err(ModelError::BadCheckpoint("trailing bytes".into()));
        }
        Ok(model)
    }
}

/// SGD state: momentum buffers plus the hyperparameters, including the global
/// gradient-norm clip applied before the momentum update.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    momentum_weights: Vec<Vec<f64>>,
    momentum_biases: Vec<Vec<f64>>,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub param_clip: f64,
}

impl OptimizerState {
    pub fn new(
        model: &MlpModel,
        lr: f64,
        momentum: f64,
        weight_decay: f64,
        param_clip: f64,
    ) -> Result<Self, ModelError> {
        if !lr.is_finite() || lr <= 0.0 {
            return Err(ModelError::BadOptimizerParam(format!("lr {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(ModelError::BadOptimizerParam(format!(
                "momentum {momentum}"
            )));
        }
        if !weight_decay.is_finite() || weight_decay < 0.0 {
            return Err(ModelError::BadOptimizerParam(format!(
                "weight_decay {weight_decay}"
            )));
        }
        if !param_clip.is_finite() || param_clip <= 0.0 {
            return Err(ModelError::BadOptimizerParam(format!(
                "param_clip {param_clip}"
            )));
        }
        Ok(Self {
            momentum_weights: model.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            momentum_biases: model.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            lr,
            momentum,
            weight_decay,
            param_clip,
        })
    }
}

/// One SGD step: clip the global gradient norm to `param_clip`, then
/// `buffer = momentum * buffer + grad + weight_decay * param` and
/// `param -= lr * buffer`. Weight decay is added after the clip so
/// regularization is not silently rescaled.
pub fn sgd_step(
    model: &mut MlpModel,
    opt: &mut OptimizerState,
    grads: &Gradients,
) -> Result<(), ModelError> {
    if !grads.is_finite() {
        return Err(ModelError::NonFiniteGradient);
    }
    let norm = grads.global_norm();
    let scale = if norm >= opt.param_clip {
        opt.param_clip / norm
    } else {
        1.0
    };
    for l in 0..model.weights.len() {
        for i in 0..model.weights[l].len() {
            let g = grads.weights[l][i] * scale + opt.weight_decay * model.weights[l][i];
            let buf = opt.momentum * opt.momentum_weights[l][i] + g;
            opt.momentum_weights[l][i] = buf;
            model.weights[l][i] -= opt.lr * buf;
        }
        for i in 0..model.biases[l].len() {
            let g = grads.biases[l][i] * scale + opt.weight_decay * model.biases[l][i];
            let buf = opt.momentum * opt.momentum_biases[l][i] + g;
            opt.momentum_biases[l][i] = buf;
            model.biases[l][i] -= opt.lr * buf;
        }
    }
    Ok(())
}

/// Step decay schedule: the learning rate is multiplied by `decay_factor`
/// after each milestone epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    pub initial: f64,
    pub decay_factor: f64,
    pub milestones: Vec<usize>,
}

impl LrSchedule {
    pub fn new(
        initial: f64,
        decay_factor: f64,
        milestones: Vec<usize>,
    ) -> Result<Self, ModelError> {
        if !initial.is_finite()
            || initial <= 0.0
            || !decay_factor.is_finite()
            || decay_factor <= 0.0
        {
            return Err(ModelError::BadOptimizerParam(format!(
                "lr schedule ({initial}, {decay_factor})"
            )));
        }
        if milestones.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ModelError::BadMilestones);
        }
        Ok(Self {
            initial,
            decay_factor,
            milestones,
        })
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = self.milestones.iter().filter(|&&m| m <= epoch).count();
        self.initial * self.decay_factor.powi(decays as i32)
    }
}
