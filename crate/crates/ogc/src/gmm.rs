//! Two-component Gaussian mixture fitting on scalar cross-entropy values.
//!
//! The mixture separates the low-loss ("clean") mode from the high-loss
//! ("noise") mode of the per-sample cross-entropy distribution. Fitting uses
//! plain 1-D expectation maximization with deterministic quantile or k-means
//! initialization; truncation to the observed value range is applied
//! downstream when the fitted components are integrated, not during EM, so
//! the per-iteration log-likelihood stays provably nondecreasing.

use statrs::function::erf::erfc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GmmError {
    #[error("need at least {min} values to fit, got {got}")]
    TooFewValues { got: usize, min: usize },
    #[error("values must be finite and nonnegative, got {0}")]
    InvalidValue(f64),
    #[error("invalid EM configuration: {0}")]
    BadConfig(String),
}

/// One Gaussian component of the mixture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianComponent {
    /// Mean in cross-entropy units (nats).
    pub mean: f64,
    /// Standard deviation (nats), kept above the variance floor.
    pub std: f64,
    /// Mixture weight in `[0, 1]`.
    pub weight: f64,
}

/// An ordered two-component fit: `clean.mean <= noise.mean`, weights sum to 1,
/// with the truncation support set to the observed value range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmmFit {
    pub clean: GaussianComponent,
    pub noise: GaussianComponent,
    pub support_lo: f64,
    pub support_hi: f64,
}

impl GmmFit {
    /// Posterior probabilities of the clean and noise components at `h`,
    /// the standard E-step quantities; they sum to 1.
    pub fn responsibilities(&self, h: f64) -> (f64, f64) {
        let ac = self.clean.weight * normal_pdf(h, self.clean.mean, self.clean.std);
        let an = self.noise.weight * normal_pdf(h, self.noise.mean, self.noise.std);
        let total = (ac + an).max(f64::MIN_POSITIVE);
        (ac / total, an / total)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMethod {
    /// Component means seeded at the 25th and 75th percentiles.
    Quantile,
    /// Two-means clustering seeded at the observed min and max.
    KMeans,
}

#[derive(Debug, Clone, Copy)]
pub struct EmConfig {
    pub max_iters: usize,
    /// Convergence tolerance on the log-likelihood change.
    pub tol: f64,
    /// Lower bound on component variance (nats squared).
    pub variance_floor: f64,
    pub init: InitMethod,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-6,
            variance_floor: 1e-4,
            init: InitMethod::Quantile,
        }
    }
}

impl EmConfig {
    fn validate(&self) -> Result<(), GmmError> {
        if self.max_iters < 1 {
            return Err(GmmError::BadConfig("max_iters must be >= 1".into()));
        }
        if !self.tol.is_finite() || self.tol <= 0.0 {
            return Err(GmmError::BadConfig("tol must be positive".into()));
        }
        if !self.variance_floor.is_finite() || self.variance_floor <= 0.0 {
            return Err(GmmError::BadConfig(
                "variance_floor must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Fit together with its per-iteration log-likelihood trace.
#[derive(Debug, Clone)]
pub struct EmReport {
    pub fit: GmmFit,
    /// Log-likelihood of the parameters entering each iteration.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimum number of values accepted by [`fit_2gmm`].
pub const MIN_FIT_VALUES: usize = 8;

/// Fits a two-component Gaussian mixture on nonnegative scalar values.
pub fn fit_2gmm(values: &[f64], cfg: &EmConfig) -> Result<GmmFit, GmmError> {
    fit_2gmm_report(values, cfg).map(|r| r.fit)
}

/// Same as [`fit_2gmm`] but also returns the log-likelihood trace and
/// convergence diagnostics.
pub fn fit_2gmm_report(values: &[f64], cfg: &EmConfig) -> Result<EmReport, GmmError> {
    cfg.validate()?;
    if values.len() < MIN_FIT_VALUES {
        return Err(GmmError::TooFewValues {
            got: values.len(),
            min: MIN_FIT_VALUES,
        });
    }
    for &v in values {
        if !v.is_finite() || v < 0.0 {
            return Err(GmmError::InvalidValue(v));
        }
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let std_floor = cfg.variance_floor.sqrt();

    if hi - lo <= 0.0 {
        // all values identical: both components collapse onto the point
        let comp = GaussianComponent {
            mean: lo,
            std: std_floor,
            weight: 0.5,
        };
        return Ok(EmReport {
            fit: GmmFit {
                clean: comp,
                noise: comp,
                support_lo: lo,
                support_hi: hi,
            },
            log_likelihood: Vec::new(),
            iterations: 0,
            converged: true,
        });
    }

    let (mut means, mut stds, mut weights) = initialize(values, cfg);
    let n = values.len() as f64;
    let mut ll_trace = Vec::with_capacity(cfg.max_iters);
    let mut converged = false;
    let mut iterations = 0;

    let mut resp = vec![0.0f64; values.len()]; // responsibility of component 0

    for iter in 0..cfg.max_iters {
        iterations = iter + 1;
        // E-step and log-likelihood of the incoming parameters
        let mut ll = 0.0;
        for (i, &v) in values.iter().enumerate() {
            let a0 = weights[0] * normal_pdf(v, means[0], stds[0]);
            let a1 = weights[1] * normal_pdf(v, means[1], stds[1]);
            let total = (a0 + a1).max(f64::MIN_POSITIVE);
            resp[i] = a0 / total;
            ll += total.ln();
        }
        ll_trace.push(ll);
        if iter > 0 {
            let prev = ll_trace[iter - 1];
            debug_assert!(
                ll >= prev - 1e-9 * prev.abs().max(1.0),
                "EM log-likelihood decreased"
            );
            if (ll - prev).abs() <= cfg.tol {
                converged = true;
                break;
            }
        }
        // M-step
        for k in 0..2 {
            let rk = |i: usize| if k == 0 { resp[i] } else { 1.0 - resp[i] };
            let total_r: f64 = (0..values.len()).map(rk).sum();
            let total_r = total_r.max(f64::MIN_POSITIVE);
            let mean = (0..values.len()).map(|i| rk(i) * values[i]).sum::<f64>() / total_r;
            let var = (0..values.len())
                .map(|i| rk(i) * (values[i] - mean).powi(2))
                .sum::<f64>()
                / total_r;
            means[k] = mean;
            stds[k] = var.max(cfg.variance_floor).sqrt();
            weights[k] = total_r / n;
        }
        let wsum = weights[0] + weights[1];
        weights[0] /= wsum;
        weights[1] /= wsum;
    }

    // order components by mean: clean below noise
    let (ic, inoise) = if means[0] <= means[1] { (0, 1) } else { (1, 0) };
    let fit = GmmFit {
        clean: GaussianComponent {
            mean: means[ic],
            std: stds[ic],
            weight: weights[ic],
        },
        noise: GaussianComponent {
            mean: means[inoise],
            std: stds[inoise],
            weight: weights[inoise],
        },
        support_lo: lo,
        support_hi: hi,
    };
    Ok(EmReport {
        fit,
        log_likelihood: ll_trace,
        iterations,
        converged,
    })
}

fn initialize(values: &[f64], cfg: &EmConfig) -> ([f64; 2], [f64; 2], [f64; 2]) {
    let std_floor = cfg.variance_floor.sqrt();
    match cfg.init {
        InitMethod::Quantile => {
            let mut sorted = values.to_vec();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let q = |frac: f64| sorted[((sorted.len() - 1) as f64 * frac).round() as usize];
            let mean_all = values.iter().sum::<f64>() / values.len() as f64;
            let var_all =
                values.iter().map(|v| (v - mean_all).powi(2)).sum::<f64>() / values.len() as f64;
            let std = var_all.max(cfg.variance_floor).sqrt();
            ([q(0.25), q(0.75)], [std, std], [0.5, 0.5])
        }
        InitMethod::KMeans => {
            let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut centers = [lo, hi];
            for _ in 0..50 {
                let mut sums = [0.0f64; 2];
                let mut counts = [0usize; 2];
                for &v in values {
                    let k = usize::from((v - centers[0]).abs() > (v - centers[1]).abs());
                    sums[k] += v;
                    counts[k] += 1;
                }
                let next = [
                    if counts[0] > 0 {
                        sums[0] / counts[0] as f64
                    } else {
                        centers[0]
                    },
                    if counts[1] > 0 {
                        sums[1] / counts[1] as f64
                    } else {
                        centers[1]
                    },
                ];
                if next == centers {
                    break;
                }
                centers = next;
            }
            let mut vars = [0.0f64; 2];
            let mut counts = [0usize; 2];
            for &v in values {
                let k = usize::from((v - centers[0]).abs() > (v - centers[1]).abs());
                vars[k] += (v - centers[k]).powi(2);
                counts[k] += 1;
            }
            let n = values.len() as f64;
            let stds = [
                (vars[0] / counts[0].max(1) as f64)
                    .max(cfg.variance_floor)
                    .sqrt()
                    .max(std_floor),
                (vars[1] / counts[1].max(1) as f64)
                    .max(cfg.variance_floor)
                    .sqrt()
                    .max(std_floor),
            ];
            (centers, stds, [counts[0] as f64 / n, counts[1] as f64 / n])
        }
    }
}

/// Gaussian density with mean `mean` and standard deviation `std`.
pub fn normal_pdf(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    (-0.5 * z * z).exp() / (std * (2.0 * std::f64::consts::PI).sqrt())
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        return 1.0;
    }
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Gaussian density renormalized over `[lo, hi]`; zero outside the support.
/// Infinite bounds recover the plain density. Requires `lo < hi`.
pub fn truncated_pdf(comp: &GaussianComponent, lo: f64, hi: f64, h: f64) -> f64 {
    assert!(lo < hi, "truncation support must satisfy lo < hi");
    if h < lo || h > hi {
        return 0.0;
    }
    let mass = normal_cdf((hi - comp.mean) / comp.std) - normal_cdf((lo - comp.mean) / comp.std);
    normal_pdf(h, comp.mean, comp.std) / mass.max(f64::MIN_POSITIVE)
}
