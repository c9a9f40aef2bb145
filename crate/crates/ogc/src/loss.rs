//! Probability-level loss functions, the vector clip function, Huberized loss
//! construction, and exact gradients with respect to probabilities and logits.
//!
//! All losses here depend on the predicted probability of the given label
//! only, which makes the gradient with respect to the probability vector a
//! single nonzero component. Clipping that gradient at a threshold `tau`
//! replaces the loss tail below the clip point `p_tau` (where the gradient
//! norm equals `tau`) by its tangent line, producing a Huberized loss. For
//! cross entropy the tangent branch reduces to `1 - tau * p + ln(tau)`.

use crate::{P_FLOOR, TAU_CEILING};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("probability {0} outside (0, 1]")]
    ProbOutOfRange(f64),
    #[error("focal gamma must be finite and nonnegative, got {0}")]
    BadGamma(f64),
    #[error("gce exponent q must lie in (0, 1], got {0}")]
    BadQ(f64),
    #[error("clip threshold must be finite and positive, got {0}")]
    BadTau(f64),
    #[error("cross-entropy value must be finite and nonnegative, got {0}")]
    BadCeValue(f64),
    #[error("invalid probability vector: {0}")]
    BadProbVector(String),
    #[error("class index {index} out of range for {classes} classes")]
    BadClass { index: usize, classes: usize },
    #[error("logits must be finite")]
    NonFiniteLogits,
}

/// A probability distribution over classes: entries in `[0, 1]` summing to 1
/// within 1e-6.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(probs: Vec<f64>) -> Result<Self, LossError> {
        if probs.is_empty() {
            return Err(LossError::BadProbVector("empty".into()));
        }
        for &p in &probs {
            if !p.is_finite() || !(-1e-9..=1.0 + 1e-9).contains(&p) {
                return Err(LossError::BadProbVector(format!(
                    "entry {p} outside [0, 1]"
                )));
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(LossError::BadProbVector(format!("entries sum to {sum}")));
        }
        Ok(Self(probs))
    }

    /// Numerically stable softmax.
    pub fn softmax(logits: &[f64]) -> Result<Self, LossError> {
        Ok(Self(softmax(logits)?))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Stable softmax over raw logits.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>, LossError> {
    if logits.is_empty() || logits.iter().any(|z| !z.is_finite()) {
        return Err(LossError::NonFiniteLogits);
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// A probability-level base loss, a function of `p(y|x)` alone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaseLoss {
    /// `-ln p`
    CrossEntropy,
    /// `-(1 - p)^gamma * ln p`; reduces to cross entropy when `gamma = 0`.
    Focal { gamma: f64 },
    /// `(1 - p^q) / q`; tends to cross entropy as `q -> 0` and equals the
    /// mean absolute error when `q = 1`.
    GeneralizedCe { q: f64 },
    /// `1 - p`, the one-hot mean absolute error up to its constant factor 2.
    Mae,
}

impl BaseLoss {
    pub fn focal(gamma: f64) -> Result<Self, LossError> {
        if !gamma.is_finite() || gamma < 0.0 {
            return Err(LossError::BadGamma(gamma));
        }
        Ok(Self::Focal { gamma })
    }

    pub fn generalized_ce(q: f64) -> Result<Self, LossError> {
        if !q.is_finite() || q <= 0.0 || q > 1.0 {
            return Err(LossError::BadQ(q));
        }
        Ok(Self::GeneralizedCe { q })
    }

    pub fn validate(&self) -> Result<(), LossError> {
        match *self {
            Self::Focal { gamma } if !gamma.is_finite() || gamma < 0.0 => {
                Err(LossError::BadGamma(gamma))
            }
            Self::GeneralizedCe { q } if !q.is_finite() || q <= 0.0 || q > 1.0 => {
                Err(LossError::BadQ(q))
            }
            _ => Ok(()),
        }
    }
}

fn check_prob(p: f64) -> Result<(), LossError> {
    if !p.is_finite() || p <= 0.0 || p > 1.0 {
        return Err(LossError::ProbOutOfRange(p));
    }
    Ok(())
}

/// Loss value at probability `p_y` of the given label. Requires `p_y` in `(0, 1]`.
pub fn loss_value(base: BaseLoss, p_y: f64) -> Result<f64, LossError> {
    base.validate()?;
    check_prob(p_y)?;
    Ok(loss_value_unchecked(base, p_y))
}

fn loss_value_unchecked(base: BaseLoss, p: f64) -> f64 {
    match base {
        BaseLoss::CrossEntropy => -p.ln(),
        BaseLoss::Focal { gamma } => -(1.0 - p).powf(gamma) * p.ln(),
        BaseLoss::GeneralizedCe { q } => (1.0 - p.powf(q)) / q,
        BaseLoss::Mae => 1.0 - p,
    }
}

/// `|d loss / d p|` at `p_y`, the L2 norm of the probability gradient (a
/// single nonzero component for losses of `p(y|x)` alone).
pub fn grad_norm(base: BaseLoss, p_y: f64) -> Result<f64, LossError> {
    base.validate()?;
    check_prob(p_y)?;
    Ok(grad_norm_unchecked(base, p_y))
}

fn grad_norm_unchecked(base: BaseLoss, p: f64) -> f64 {
    match base {
        BaseLoss::CrossEntropy => 1.0 / p,
        BaseLoss::Mae => 1.0,
        BaseLoss::GeneralizedCe { q } => p.powf(q - 1.0),
        BaseLoss::Focal { gamma } => {
            if gamma == 0.0 {
                return 1.0 / p;
            }
            let one_m = 1.0 - p;
            if one_m <= 0.0 {
                // limit of gamma*(1-p)^(gamma-1)*ln p - (1-p)^gamma / p as p -> 1
                return 0.0;
            }
            (one_m.powf(gamma) / p - gamma * one_m.powf(gamma - 1.0) * p.ln()).abs()
        }
    }
}

/// Rescales `w` onto the L2 ball of radius `tau` when its norm exceeds `tau`.
pub fn clip_vector(w: &[f64], tau: f64) -> Result<Vec<f64>, LossError> {
    if !tau.is_finite() || tau <= 0.0 {
        return Err(LossError::BadTau(tau));
    }
    let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm >= tau {
        Ok(w.iter().map(|x| tau * x / norm).collect())
    } else {
        Ok(w.to_vec())
    }
}

/// Solves `grad_norm(base, p) = tau` for the clip point `p_tau`.
///
/// Closed forms are used for cross entropy (`1/tau`) and GCE
/// (`tau^(1/(q-1))`); the focal loss is solved by bisection on the initial
/// decreasing stretch of its gradient norm. Returns the `0.0` sentinel when
/// `tau` exceeds the gradient norm everywhere on the bracket, meaning the
/// loss never clips.
pub fn solve_clip_point(base: BaseLoss, tau: f64) -> Result<f64, LossError> {
    base.validate()?;
    if !tau.is_finite() || tau < 1.0 {
        return Err(LossError::BadTau(tau));
    }
    match base {
        BaseLoss::CrossEntropy => Ok(1.0 / tau),
        BaseLoss::Mae => Ok(if tau <= 1.0 { 1.0 } else { 0.0 }),
        BaseLoss::GeneralizedCe { q } => {
            if (1.0 - q).abs() < 1e-12 {
                // gradient norm is constant 1, same as MAE
                Ok(if tau <= 1.0 { 1.0 } else { 0.0 })
            } else {
                Ok(tau.powf(1.0 / (q - 1.0)))
            }
        }
        BaseLoss::Focal { gamma } => {
            if gamma == 0.0 {
                Ok(1.0 / tau)
            } else {
                Ok(solve_focal_clip_point(gamma, tau))
            }
        }
    }
}

/// Bisection for the focal clip point. The focal gradient norm is not
/// guaranteed monotone over all of (0, 1], so the bracket is restricted to
/// the decreasing stretch found by a coarse scan from the probability floor.
fn solve_focal_clip_point(gamma: f64, tau: f64) -> f64 {
    let grad = |p: f64| grad_norm_unchecked(BaseLoss::Focal { gamma }, p);
    const SCAN: usize = 512;
    let ln_lo = P_FLOOR.ln();
    let mut upper = 1.0;
    let mut prev_p = P_FLOOR;
    let mut prev_g = grad(prev_p);
    for i in 1..=SCAN {
        let p = (ln_lo * (1.0 - i as f64 / SCAN as f64)).exp();
        let g = grad(p);
        if g > prev_g {
            upper = prev_p;
            break;
        }
        prev_p = p;
        prev_g = g;
    }
    if tau < grad(upper) {
        return 0.0; // never reaches tau on the bracket: no clipping
    }
    if tau >= grad(P_FLOOR) {
        return P_FLOOR; // clips everywhere down to the floor
    }
    // log-space bisection on [P_FLOOR, upper] where the norm is decreasing
    let (mut a, mut b) = (P_FLOOR.ln(), upper.ln());
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        let g = grad(m.exp());
        if (g - tau).abs() <= 1e-10 {
            return m.exp();
        }
        if g > tau {
            a = m;
        } else {
            b = m;
        }
        if (b - a).abs() < f64::EPSILON {
            break;
        }
    }
    (0.5 * (a + b)).exp()
}

/// Cross entropy of the given label: `-ln p(y|x)`, floored at [`P_FLOOR`].
pub fn ce_from_probs(p: &ProbVector, y: usize) -> Result<f64, LossError> {
    let probs = p.probs();
    if y >= probs.len() {
        return Err(LossError::BadClass {
            index: y,
            classes: probs.len(),
        });
    }
    Ok(-probs[y].max(P_FLOOR).ln())
}

/// Maps a cross-entropy value `h = -ln p` to the base-loss value at the same
/// probability, using closed forms in `h` that stay exact for large `h`.
pub fn loss_from_ce(base: BaseLoss, h: f64) -> Result<f64, LossError> {
    base.validate()?;
    if !h.is_finite() || h < 0.0 {
        return Err(LossError::BadCeValue(h));
    }
    Ok(loss_from_ce_unchecked(base, h))
}

fn loss_from_ce_unchecked(base: BaseLoss, h: f64) -> f64 {
    match base {
        BaseLoss::CrossEntropy => h,
        BaseLoss::Mae => -(-h).exp_m1(),
        BaseLoss::GeneralizedCe { q } => -(-q * h).exp_m1() / q,
        BaseLoss::Focal { gamma } => (-(-h).exp_m1()).powf(gamma) * h,
    }
}

/// Gradient norm of the base loss expressed as a function of the
/// cross-entropy value `h = -ln p`.
pub fn grad_norm_from_ce(base: BaseLoss, h: f64) -> Result<f64, LossError> {
    base.validate()?;
    if !h.is_finite() || h < 0.0 {
        return Err(LossError::BadCeValue(h));
    }
    Ok(grad_norm_from_ce_unchecked(base, h))
}

pub(crate) fn grad_norm_from_ce_unchecked(base: BaseLoss, h: f64) -> f64 {
    match base {
        BaseLoss::CrossEntropy => h.exp(),
        BaseLoss::Mae => 1.0,
        BaseLoss::GeneralizedCe { q } => ((1.0 - q) * h).exp(),
        BaseLoss::Focal { .. } => {
            let p = (-h).exp().max(f64::MIN_POSITIVE);
            grad_norm_unchecked(base, p)
        }
    }
}

/// A base loss whose probability gradient is clipped at `tau`: below the clip
/// point the loss continues along its tangent line, capping the gradient
/// magnitude at `tau` while staying continuously differentiable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HuberizedLoss {
    base: BaseLoss,
    tau: f64,
    clip_point: f64,
    value_at_clip: f64,
}

impl HuberizedLoss {
    /// Builds the Huberized loss, clamping `tau` into `[1, TAU_CEILING]`.
    pub fn new(base: BaseLoss, tau: f64) -> Result<Self, LossError> {
        base.validate()?;
        if !tau.is_finite() {
            return Err(LossError::BadTau(tau));
        }
        let tau = tau.clamp(1.0, TAU_CEILING);
        let clip_point = solve_clip_point(base, tau)?;
        let value_at_clip = if clip_point > 0.0 {
            loss_value_unchecked(base, clip_point)
        } else {
            0.0 // unused: the sentinel means the base branch always applies
        };
        Ok(Self {
            base,
            tau,
            clip_point,
            value_at_clip,
        })
    }

    pub fn base(&self) -> BaseLoss {
        self.base
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Probability at which the base gradient norm equals `tau`; `0.0` means
    /// the loss never clips.
    pub fn clip_point(&self) -> f64 {
        self.clip_point
    }

    /// Huberized loss value at `p_y` in `(0, 1]`.
    pub fn value(&self, p_y: f64) -> Result<f64, LossError> {
        check_prob(p_y)?;
        Ok(self.value_unchecked(p_y))
    }

    /// Huberized loss value with `p_y` clamped into `[P_FLOOR, 1]`; accepts
    /// `p_y = 0` for exhaustive enumeration over closed probability grids.
    pub fn value_at_floor(&self, p_y: f64) -> f64 {
        self.value_unchecked(p_y.clamp(P_FLOOR, 1.0))
    }

    fn value_unchecked(&self, p: f64) -> f64 {
        if self.clip_point == 0.0 || p >= self.clip_point {
            loss_value_unchecked(self.base, p)
        } else {
            // tangent extension below the clip point; for cross entropy this
            // is exactly 1 - tau * p + ln(tau)
            self.value_at_clip + self.tau * (self.clip_point - p)
        }
    }

    /// Clipped gradient with respect to the probability vector: a single
    /// nonzero component `-min(grad_norm, tau)` at the label index.
    pub fn grad_probs(&self, p: &ProbVector, y: usize) -> Result<Vec<f64>, LossError> {
        let probs = p.probs();
        if y >= probs.len() {
            return Err(LossError::BadClass {
                index: y,
                classes: probs.len(),
            });
        }
        let py = probs[y].max(P_FLOOR);
        let g = grad_norm_unchecked(self.base, py).min(self.tau);
        let mut out = vec![0.0; probs.len()];
        out[y] = -g;
        Ok(out)
    }

    /// Huberized loss evaluated on raw logits through a floored softmax. This
    /// is the scalar that [`Self::grad_logits`] differentiates.
    pub fn value_logits(&self, logits: &[f64], y: usize) -> Result<f64, LossError> {
        let probs = softmax(logits)?;
        if y >= probs.len() {
            return Err(LossError::BadClass {
                index: y,
                classes: probs.len(),
            });
        }
        Ok(self.value_unchecked(probs[y].clamp(P_FLOOR, 1.0)))
    }

    /// Clipped gradient with respect to the logits, chaining the probability
    /// gradient through the softmax Jacobian:
    /// `d/dz_k = -min(grad_norm, tau) * p_y * (delta_yk - p_k)`.
    ///
    /// For unclipped cross entropy this reduces to `p - onehot(y)`. Below the
    /// probability floor the loss is constant, so the gradient is zero.
    pub fn grad_logits(&self, logits: &[f64], y: usize) -> Result<Vec<f64>, LossError> {
        let probs = softmax(logits)?;
        if y >= probs.len() {
            return Err(LossError::BadClass {
                index: y,
                classes: probs.len(),
            });
        }
        let py = probs[y];
        if py < P_FLOOR {
            return Ok(vec![0.0; probs.len()]);
        }
        let g = grad_norm_unchecked(self.base, py).min(self.tau);
        Ok(probs
            .iter()
            .enumerate()
            .map(|(k, &pk)| {
                let delta = if k == y { 1.0 } else { 0.0 };
                -g * py * (delta - pk)
            })
            .collect())
    }
}
