//! Clipped-gradient ratio estimation and clipping-threshold schedules.
//!
//! The proxy ratio compares the expected clipped gradient norm under the
//! fitted noise component to the one under the clean component,
//!
//! ```text
//! ratio(tau) = E_noise[min(g(H), tau)] / E_clean[min(g(H), tau)]
//! ```
//!
//! with both expectations taken over Gaussians truncated to the observed
//! cross-entropy range and `g(H)` the base-loss gradient norm at `p = e^-H`.
//! The optimized schedule binary-searches for the smallest `tau` whose ratio
//! reaches `1 + epsilon`; the manual baselines (fixed, linear decay,
//! exponential moving average) are provided for comparison.

use crate::gmm::{truncated_pdf, GmmFit};
use crate::loss::{grad_norm_from_ce_unchecked, BaseLoss, LossError};
use crate::TAU_CEILING;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ThresholdError {
    #[error("quadrature grid invalid: {0}")]
    BadGrid(String),
    #[error("grid [{grid_lo}, {grid_hi}] does not cover fit support [{lo}, {hi}]")]
    GridDoesNotCoverSupport {
        grid_lo: f64,
        grid_hi: f64,
        lo: f64,
        hi: f64,
    },
    #[error("tau must be >= 1, got {0}")]
    BadTau(f64),
    #[error("epsilon must be finite and positive, got {0}")]
    BadEpsilon(f64),
    #[error("clean-component integral vanished")]
    DegenerateCleanIntegral,
    #[error("invalid strategy parameter: {0}")]
    BadStrategy(String),
    #[error("optimized schedule stepped without a mixture fit")]
    MissingFit,
    #[error(transparent)]
    Loss(#[from] LossError),
}

/// Default number of midpoint-rule bins.
pub const DEFAULT_BINS: usize = 1024;

/// Midpoint-rule grid over a cross-entropy range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureGrid {
    bins: usize,
    lo: f64,
    hi: f64,
}

impl QuadratureGrid {
    pub fn new(bins: usize, lo: f64, hi: f64) -> Result<Self, ThresholdError> {
        if bins < 64 {
            return Err(ThresholdError::BadGrid(format!(
                "need at least 64 bins, got {bins}"
            )));
        }
        if !lo.is_finite() || !hi.is_finite() || lo >= hi || lo < 0.0 {
            return Err(ThresholdError::BadGrid(format!("bad range [{lo}, {hi}]")));
        }
        Ok(Self { bins, lo, hi })
    }

    /// Grid spanning exactly the fit's truncation support.
    pub fn over_support(fit: &GmmFit, bins: usize) -> Result<Self, ThresholdError> {
        Self::new(bins, fit.support_lo, fit.support_hi)
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }
}

/// A proxy-ratio evaluation at one threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioEstimate {
    pub tau: f64,
    pub ratio: f64,
}

/// Precomputed quadrature tables: gradient norms and truncated densities are
/// threshold-independent, so a solver can re-evaluate the ratio at many
/// thresholds cheaply.
struct RatioEvaluator {
    grad: Vec<f64>,
    pdf_noise: Vec<f64>,
    pdf_clean: Vec<f64>,
    degenerate: bool,
}

impl RatioEvaluator {
    fn new(fit: &GmmFit, base: BaseLoss, grid: &QuadratureGrid) -> Result<Self, ThresholdError> {
        base.validate()?;
        if grid.lo > fit.support_lo + 1e-12 || grid.hi < fit.support_hi - 1e-12 {
            return Err(ThresholdError::GridDoesNotCoverSupport {
                grid_lo: grid.lo,
                grid_hi: grid.hi,
                lo: fit.support_lo,
                hi: fit.support_hi,
            });
        }
        if fit.support_hi - fit.support_lo <= 1e-12 {
            return Ok(Self {
                grad: Vec::new(),
                pdf_noise: Vec::new(),
                pdf_clean: Vec::new(),
                degenerate: true,
            });
        }
        let delta = (grid.hi - grid.lo) / grid.bins as f64;
        let mut grad = Vec::with_capacity(grid.bins);
        let mut pdf_noise = Vec::with_capacity(grid.bins);
        let mut pdf_clean = Vec::with_capacity(grid.bins);
        for i in 0..grid.bins {
            let h = grid.lo + (i as f64 + 0.5) * delta;
            grad.push(grad_norm_from_ce_unchecked(base, h));
            pdf_noise.push(truncated_pdf(&fit.noise, fit.support_lo, fit.support_hi, h) * delta);
            pdf_clean.push(truncated_pdf(&fit.clean, fit.support_lo, fit.support_hi, h) * delta);
        }
        // renormalize the discretized masses so each sums to exactly one;
        // otherwise the two truncation quadrature errors leak into the ratio
        for masses in [&mut pdf_noise, &mut pdf_clean] {
            let total: f64 = masses.iter().sum();
            if total <= f64::MIN_POSITIVE {
                return Err(ThresholdError::DegenerateCleanIntegral);
            }
            for m in masses.iter_mut() {
                *m /= total;
            }
        }
        Ok(Self {
            grad,
            pdf_noise,
            pdf_clean,
            degenerate: false,
        })
    }

    fn ratio(&self, tau: f64) -> Result<f64, ThresholdError> {
        if self.degenerate {
            return Ok(1.0);
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..self.grad.len() {
            let w = self.grad[i].min(tau);
            num += w * self.pdf_noise[i];
            den += w * self.pdf_clean[i];
        }
        if den <= f64::MIN_POSITIVE {
            return Err(ThresholdError::DegenerateCleanIntegral);
        }
        Ok(num / den)
    }
}

/// Midpoint-rule estimate of the noise-to-clean clipped-gradient ratio.
pub fn estimate_ratio(
    fit: &GmmFit,
    base: BaseLoss,
    tau: f64,
    grid: &QuadratureGrid,
) -> Result<RatioEstimate, ThresholdError> {
    if !tau.is_finite() || tau < 1.0 {
        return Err(ThresholdError::BadTau(tau));
    }
    let eval = RatioEvaluator::new(fit, base, grid)?;
    Ok(RatioEstimate {
        tau,
        ratio: eval.ratio(tau)?,
    })
}

/// Largest useful threshold for a fit: the cross-entropy gradient norm at the
/// top of the observed range, capped at [`TAU_CEILING`]. Clipping beyond this
/// is inert.
pub fn tau_max_for(fit: &GmmFit) -> f64 {
    fit.support_hi.exp().clamp(1.0, TAU_CEILING)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    /// `|ratio(tau) - (1 + epsilon)| <= 1e-3`.
    Converged,
    /// The target ratio is already exceeded at `tau = 1`.
    AtLowerBound,
    /// The target ratio is unattainable on `[1, tau_max]`; `tau_max` returned.
    Unattainable,
    /// The ratio was non-monotone over the bracket scan; the result is the
    /// dense-grid argmin of `|ratio - (1 + epsilon)|`.
    GridFallback,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdSolution {
    pub tau: f64,
    pub ratio: f64,
    pub status: SolveStatus,
}

/// Ratio tolerance for the binary search.
pub const SOLVE_TOL: f64 = 1e-3;
const SOLVE_MAX_ITERS: usize = 60;

/// Binary search on `[1, tau_max]` for the smallest threshold whose ratio
/// reaches `1 + epsilon`.
pub fn solve_threshold(
    fit: &GmmFit,
    base: BaseLoss,
    epsilon: f64,
    grid: &QuadratureGrid,
) -> Result<ThresholdSolution, ThresholdError> {
    if !epsilon.is_finite() || epsilon <= 0.0 {
        return Err(ThresholdError::BadEpsilon(epsilon));
    }
    let target = 1.0 + epsilon;
    let tau_max = tau_max_for(fit);
    let eval = RatioEvaluator::new(fit, base, grid)?;

    let r_lo = eval.ratio(1.0)?;
    if r_lo >= target {
        return Ok(ThresholdSolution {
            tau: 1.0,
            ratio: r_lo,
            status: SolveStatus::AtLowerBound,
        });
    }
    let r_hi = eval.ratio(tau_max)?;
    if r_hi < target {
        return Ok(ThresholdSolution {
            tau: tau_max,
            ratio: r_hi,
            status: SolveStatus::Unattainable,
        });
    }

    // Coarse monotonicity scan over the bracket. Components with unequal
    // variances cross in the lower tail, which can dent the ratio by less
    // than 1e-6 relative just above tau = 1; only larger violations force
    // the fallback.
    let scan_points = 17;
    let ln_max = tau_max.ln();
    let mut prev = r_lo;
    let mut monotone = true;
    for i in 1..=scan_points {
        let tau = (ln_max * i as f64 / scan_points as f64).exp();
        let r = eval.ratio(tau)?;
        if r < prev - 1e-6 * prev.abs().max(1.0) {
            monotone = false;
            break;
        }
        prev = r;
    }
    if !monotone {
        log::warn!("ratio non-monotone over [1, {tau_max:.3}]; falling back to grid scan");
        let fallback_points = 4096;
        let mut best = (1.0, r_lo, (r_lo - target).abs(), 0usize);
        for i in 0..=fallback_points {
            let tau = (ln_max * i as f64 / fallback_points as f64).exp();
            let r = eval.ratio(tau)?;
            let miss = (r - target).abs();
            if miss < best.2 {
                best = (tau, r, miss, i);
            }
        }
        // polish between the argmin's neighbors; the curve rises through the
        // target there even when it dipped lower down
        let i = best.3;
        let (mut a, mut b) = (
            ln_max * i.saturating_sub(1) as f64 / fallback_points as f64,
            ln_max * (i + 1).min(fallback_points) as f64 / fallback_points as f64,
        );
        for _ in 0..SOLVE_MAX_ITERS {
            let m = 0.5 * (a + b);
            let tau = m.exp();
            let r = eval.ratio(tau)?;
            if (r - target).abs() < best.2 {
                best = (tau, r, (r - target).abs(), i);
            }
            if (r - target).abs() <= SOLVE_TOL {
                break;
            }
            if r >= target {
                b = m;
            } else {
                a = m;
            }
        }
        return Ok(ThresholdSolution {
            tau: best.0,
            ratio: best.1,
            status: SolveStatus::GridFallback,
        });
    }

    // bisection in log space; invariant ratio(a) < target <= ratio(b)
    let (mut a, mut b) = (0.0f64, ln_max);
    let mut best = (tau_max, r_hi);
    for _ in 0..SOLVE_MAX_ITERS {
        let m = 0.5 * (a + b);
        let tau = m.exp();
        let r = eval.ratio(tau)?;
        if (r - target).abs() < (best.1 - target).abs() {
            best = (tau, r);
        }
        if (r - target).abs() <= SOLVE_TOL {
            return Ok(ThresholdSolution {
                tau,
                ratio: r,
                status: SolveStatus::Converged,
            });
        }
        if r >= target {
            b = m;
        } else {
            a = m;
        }
    }
    let status = if (best.1 - target).abs() <= SOLVE_TOL {
        SolveStatus::Converged
    } else {
        SolveStatus::GridFallback
    };
    Ok(ThresholdSolution {
        tau: best.0,
        ratio: best.1,
        status,
    })
}

/// How the clipping threshold evolves over training steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdStrategy {
    /// Re-solve the threshold from the current mixture fit with
    /// `epsilon = lr * epsilon0`.
    Optimized { epsilon0: f64 },
    /// Constant threshold.
    Fixed { tau: f64 },
    /// `tau(t) = beta * (1 - t / total_steps)`, clamped to `[1, TAU_CEILING]`.
    Linear { beta: f64, total_steps: usize },
    /// `1/tau(t) = alpha / tau(t-1) + (1 - alpha)`, clamped.
    Ema { alpha: f64 },
}

impl ThresholdStrategy {
    pub fn validate(&self) -> Result<(), ThresholdError> {
        match *self {
            Self::Optimized { epsilon0 } if !epsilon0.is_finite() || epsilon0 <= 0.0 => Err(
                ThresholdError::BadStrategy(format!("epsilon0 must be positive, got {epsilon0}")),
            ),
            Self::Fixed { tau } if !tau.is_finite() || tau < 1.0 => {
                Err(ThresholdError::BadStrategy(format!("fixed tau must be >= 1, got {tau}")))
            }
            Self::Linear { beta, total_steps } if !beta.is_finite() || beta <= 0.0 || total_steps == 0 => {
                Err(ThresholdError::BadStrategy(format!(
                    "linear schedule needs beta > 0 and total_steps >= 1, got ({beta}, {total_steps})"
                )))
            }
            Self::Ema { alpha } if !alpha.is_finite() || alpha <= 0.0 || alpha >= 1.0 => {
                Err(ThresholdError::BadStrategy(format!("ema alpha must lie in (0, 1), got {alpha}")))
            }
            _ => Ok(()),
        }
    }

    /// Threshold in force before the first scheduled update. The optimized and
    /// EMA strategies start from the ceiling (no clipping); the others start
    /// on their own schedule.
    pub fn initial_tau(&self) -> f64 {
        match *self {
            Self::Optimized { .. } | Self::Ema { .. } => TAU_CEILING,
            Self::Fixed { tau } => tau.clamp(1.0, TAU_CEILING),
            Self::Linear { beta, .. } => beta.clamp(1.0, TAU_CEILING),
        }
    }
}

/// Current threshold plus the step at which it was produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdState {
    pub current_tau: f64,
    pub step: usize,
}

/// Advances the threshold state at training step `t`.
///
/// The optimized strategy needs a mixture fit and the current learning rate
/// (the ratio target is `1 + lr * epsilon0`); without a fit it carries the
/// previous threshold forward. Manual strategies ignore `fit` and `lr`.
pub fn schedule_next(
    strategy: &ThresholdStrategy,
    state: &ThresholdState,
    t: usize,
    lr: f64,
    fit: Option<&GmmFit>,
    base: BaseLoss,
) -> Result<ThresholdState, ThresholdError> {
    strategy.validate()?;
    let current_tau = match *strategy {
        ThresholdStrategy::Fixed { tau } => tau.clamp(1.0, TAU_CEILING),
        ThresholdStrategy::Linear { beta, total_steps } => {
            (beta * (1.0 - t as f64 / total_steps as f64)).clamp(1.0, TAU_CEILING)
        }
        ThresholdStrategy::Ema { alpha } => {
            let inv = alpha / state.current_tau + (1.0 - alpha);
            (1.0 / inv).clamp(1.0, TAU_CEILING)
        }
        ThresholdStrategy::Optimized { epsilon0 } => match fit {
            None => state.current_tau,
            Some(fit) => {
                let grid = QuadratureGrid::over_support(fit, DEFAULT_BINS);
                match grid {
                    Err(_) => state.current_tau, // degenerate support: carry forward
                    Ok(grid) => solve_threshold(fit, base, lr * epsilon0, &grid)?.tau,
                }
            }
        },
    };
    Ok(ThresholdState {
        current_tau,
        step: t,
    })
}
