//! Quick self-checks over the library's key properties, runnable from the
//! CLI. These are trimmed-down versions of the full test suites: each check
//! finishes in well under a second so the whole pass stays interactive.

use crate::gmm::{fit_2gmm_report, EmConfig, GaussianComponent, GmmFit};
use crate::harness::queue::LossQueue;
use crate::loss::{self, BaseLoss, HuberizedLoss, ProbVector};
use crate::noise::{corrupt, NoiseSpec};
use crate::threshold::{
    estimate_ratio, solve_threshold, QuadratureGrid, SolveStatus, ThresholdState,
    ThresholdStrategy, DEFAULT_BINS,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

/// Outcome of one named check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, body: impl FnOnce() -> Result<String, String>) -> CheckResult {
    match body() {
        Ok(detail) => CheckResult {
            name,
            passed: true,
            detail,
        },
        Err(detail) => CheckResult {
            name,
            passed: false,
            detail,
        },
    }
}

/// Runs every check and returns the results in a fixed order.
pub fn run_all() -> Vec<CheckResult> {
    vec![
        check("loss-bounds", loss_bounds),
        check("huberized-continuity", huberized_continuity),
        check("tau-one-degeneracy", tau_one_degeneracy),
        check("clipped-gradient-norm", clipped_gradient_norm),
        check("logit-gradient-oracle", logit_gradient_oracle),
        check("gmm-recovery", gmm_recovery),
        check("ratio-quadrature-vs-sampling", ratio_quadrature_vs_sampling),
        check("threshold-solver", threshold_solver),
        check("schedule-closed-forms", schedule_closed_forms),
        check("queue-fifo", queue_fifo),
        check("noise-determinism", noise_determinism),
    ]
}

fn random_prob_vector(rng: &mut ChaCha12Rng, k: usize) -> ProbVector {
    // exponential spacings normalized onto the simplex
    let raw: Vec<f64> = (0..k)
        .map(|_| -rng.random_range(1e-12..1.0f64).ln())
        .collect();
    let sum: f64 = raw.iter().sum();
    ProbVector::new(raw.into_iter().map(|x| x / sum).collect()).unwrap()
}

fn loss_bounds() -> Result<String, String> {
    let mut rng = ChaCha12Rng::seed_from_u64(101);
    let trials = 20_000;
    for _ in 0..trials {
        let k = rng.random_range(2..=10);
        let p = random_prob_vector(&mut rng, k);
        let tau = (rng.random_range(0.0..4.0f64) * std::f64::consts::LN_10).exp();
        let hub = HuberizedLoss::new(BaseLoss::CrossEntropy, tau).map_err(|e| e.to_string())?;
        let log_term = 1.0 + hub.tau().ln();
        let mut sum = 0.0;
        for &pj in p.probs() {
            let v = hub.value_at_floor(pj);
            if v < (1.0 - pj) - 1e-9 || v > (1.0 - pj) * log_term + 1e-9 {
                return Err(format!("per-class bound violated at p={pj}, tau={tau}"));
            }
            sum += v;
        }
        let k = k as f64;
        if sum < (k - 1.0) - 1e-9 || sum > (k - 1.0) * log_term + 1e-9 {
            return Err(format!(
                "class-sum bound violated: sum={sum}, K={k}, tau={tau}"
            ));
        }
    }
    Ok(format!("{trials} random (p, tau) cases inside both bounds"))
}

fn huberized_continuity() -> Result<String, String> {
    let cases = [
        (BaseLoss::CrossEntropy, 4.0),
        (BaseLoss::Focal { gamma: 0.5 }, 4.0),
        (BaseLoss::GeneralizedCe { q: 0.7 }, 2.0),
    ];
    for (base, tau) in cases {
        let hub = HuberizedLoss::new(base, tau).map_err(|e| e.to_string())?;
        let pt = hub.clip_point();
        let mut delta = 1e-3;
        while delta >= 1e-8 {
            let gap = (hub.value_at_floor(pt - delta) - hub.value_at_floor(pt + delta)).abs();
            if gap > 2.0 * tau * delta * (1.0 + 1e-6) + 1e-12 {
                return Err(format!("{base:?}: gap {gap} at delta {delta}"));
            }
            delta /= 10.0;
        }
        let g = loss::grad_norm(base, pt).map_err(|e| e.to_string())?;
        if (g - tau).abs() > 1e-9 * tau {
            return Err(format!("{base:?}: clip-point gradient {g} != tau {tau}"));
        }
    }
    Ok("loss continuous with slope tau at the clip point for CE, FL, GCE".into())
}

fn tau_one_degeneracy() -> Result<String, String> {
    let hub = HuberizedLoss::new(BaseLoss::CrossEntropy, 1.0).map_err(|e| e.to_string())?;
    let mut p = 0.0005;
    while p <= 1.0 {
        let diff = (hub.value_at_floor(p) - (1.0 - p)).abs();
        if diff > 1e-12 {
            return Err(format!("tau = 1 differs from 1 - p by {diff} at p = {p}"));
        }
        p += 0.0005;
    }
    Ok("tau = 1 cross entropy is pointwise 1 - p".into())
}

fn clipped_gradient_norm() -> Result<String, String> {
    let mut rng = ChaCha12Rng::seed_from_u64(7);
    for _ in 0..2_000 {
        let k = rng.random_range(2..=8);
        let p = random_prob_vector(&mut rng, k);
        let tau = rng.random_range(1.0..100.0);
        let base = match rng.random_range(0..3) {
            0 => BaseLoss::CrossEntropy,
            1 => BaseLoss::Focal { gamma: 0.5 },
            _ => BaseLoss::GeneralizedCe { q: 0.7 },
        };
        let hub = HuberizedLoss::new(base, tau).map_err(|e| e.to_string())?;
        let g = hub.grad_probs(&p, 0).map_err(|e| e.to_string())?;
        let norm: f64 = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > tau + 1e-9 {
            return Err(format!("gradient norm {norm} above tau {tau}"));
        }
    }
    Ok("2000 random clipped gradients bounded by tau".into())
}

fn logit_gradient_oracle() -> Result<String, String> {
    let mut rng = ChaCha12Rng::seed_from_u64(23);
    let mut accepted = 0;
    while accepted < 100 {
        let base = match rng.random_range(0..3) {
            0 => BaseLoss::CrossEntropy,
            1 => BaseLoss::Focal { gamma: 0.5 },
            _ => BaseLoss::GeneralizedCe { q: 0.7 },
        };
        let tau = 10f64.powf(rng.random_range(0.0..2.0));
        let hub = HuberizedLoss::new(base, tau).map_err(|e| e.to_string())?;
        let k = rng.random_range(2..=5);
        let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
        let y = rng.random_range(0..k);
        let py = loss::softmax(&logits).map_err(|e| e.to_string())?[y];
        if (py - hub.clip_point()).abs() <= 1e-4 {
            continue;
        }
        let analytic = hub.grad_logits(&logits, y).map_err(|e| e.to_string())?;
        let norm: f64 = analytic.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm < 1e-6 {
            continue;
        }
        let step = 1e-5;
        let mut err2 = 0.0;
        for j in 0..k {
            let mut plus = logits.clone();
            let mut minus = logits.clone();
            plus[j] += step;
            minus[j] -= step;
            let fd = (hub.value_logits(&plus, y).map_err(|e| e.to_string())?
                - hub.value_logits(&minus, y).map_err(|e| e.to_string())?)
                / (2.0 * step);
            err2 += (fd - analytic[j]).powi(2);
        }
        if err2.sqrt() / norm > 1e-5 {
            return Err(format!(
                "finite-difference mismatch: rel err {}",
                err2.sqrt() / norm
            ));
        }
        accepted += 1;
    }
    Ok("100 random logit gradients match central finite differences".into())
}

fn gmm_recovery() -> Result<String, String> {
    let mut rng = ChaCha12Rng::seed_from_u64(11);
    let c = Normal::new(1.0, 0.3).unwrap();
    let n = Normal::new(4.0, 1.0).unwrap();
    let values: Vec<f64> = (0..4096)
        .map(|i| {
            let v: f64 = if i % 2 == 0 {
                c.sample(&mut rng)
            } else {
                n.sample(&mut rng)
            };
            v.max(0.0)
        })
        .collect();
    let report = fit_2gmm_report(&values, &EmConfig::default()).map_err(|e| e.to_string())?;
    let fit = report.fit;
    if (fit.clean.mean - 1.0).abs() > 0.2 || (fit.noise.mean - 4.0).abs() > 0.2 {
        return Err(format!(
            "means ({}, {}) off target",
            fit.clean.mean, fit.noise.mean
        ));
    }
    for w in report.log_likelihood.windows(2) {
        if w[1] < w[0] - 1e-9 * w[0].abs().max(1.0) {
            return Err(format!("log-likelihood decreased {} -> {}", w[0], w[1]));
        }
    }
    Ok(format!(
        "recovered means ({:.3}, {:.3}) in {} iterations, likelihood monotone",
        fit.clean.mean, fit.noise.mean, report.iterations
    ))
}

fn test_fit() -> GmmFit {
    GmmFit {
        clean: GaussianComponent {
            mean: 0.5,
            std: 0.2,
            weight: 0.5,
        },
        noise: GaussianComponent {
            mean: 3.0,
            std: 0.5,
            weight: 0.5,
        },
        support_lo: 0.0,
        support_hi: 5.0,
    }
}

fn ratio_quadrature_vs_sampling() -> Result<String, String> {
    let fit = test_fit();
    let grid = QuadratureGrid::over_support(&fit, DEFAULT_BINS).map_err(|e| e.to_string())?;
    let mut rng = ChaCha12Rng::seed_from_u64(19);
    let n = 200_000;
    let sample = |comp: &GaussianComponent, rng: &mut ChaCha12Rng| -> Vec<f64> {
        let dist = Normal::new(comp.mean, comp.std).unwrap();
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let x = dist.sample(rng);
            if (0.0..=5.0).contains(&x) {
                out.push(x);
            }
        }
        out
    };
    let hs_noise = sample(&fit.noise, &mut rng);
    let hs_clean = sample(&fit.clean, &mut rng);
    for tau in [2.0, 5.0, 20.0] {
        let mc = hs_noise.iter().map(|&h| h.exp().min(tau)).sum::<f64>()
            / hs_clean.iter().map(|&h| h.exp().min(tau)).sum::<f64>();
        let quad = estimate_ratio(&fit, BaseLoss::CrossEntropy, tau, &grid)
            .map_err(|e| e.to_string())?
            .ratio;
        let rel = (quad - mc).abs() / mc;
        if rel > 0.02 {
            return Err(format!(
                "tau {tau}: quadrature {quad} vs sampling {mc} (rel {rel})"
            ));
        }
    }
    Ok("quadrature ratio within 2% of 200k-sample estimates".into())
}

fn threshold_solver() -> Result<String, String> {
    let fit = test_fit();
    let grid = QuadratureGrid::over_support(&fit, DEFAULT_BINS).map_err(|e| e.to_string())?;
    let sol =
        solve_threshold(&fit, BaseLoss::CrossEntropy, 0.5, &grid).map_err(|e| e.to_string())?;
    if sol.status != SolveStatus::Converged || (sol.ratio - 1.5).abs() > 1e-3 {
        return Err(format!(
            "solver returned {:?} ratio {}",
            sol.status, sol.ratio
        ));
    }
    let identical = GmmFit {
        clean: GaussianComponent {
            mean: 2.0,
            std: 0.5,
            weight: 0.5,
        },
        noise: GaussianComponent {
            mean: 2.0,
            std: 0.5,
            weight: 0.5,
        },
        support_lo: 0.0,
        support_hi: 4.0,
    };
    let grid = QuadratureGrid::over_support(&identical, DEFAULT_BINS).map_err(|e| e.to_string())?;
    let sol = solve_threshold(&identical, BaseLoss::CrossEntropy, 0.5, &grid)
        .map_err(|e| e.to_string())?;
    if sol.status != SolveStatus::Unattainable {
        return Err(format!(
            "identical components should be unattainable, got {:?}",
            sol.status
        ));
    }
    Ok("solver hits the target ratio and flags unattainable inputs".into())
}

fn schedule_closed_forms() -> Result<String, String> {
    use crate::threshold::schedule_next;
    let linear = ThresholdStrategy::Linear {
        beta: 10.0,
        total_steps: 100,
    };
    let state = ThresholdState {
        current_tau: 10.0,
        step: 0,
    };
    for t in [0usize, 10, 50, 95, 100] {
        let next = schedule_next(&linear, &state, t, 0.1, None, BaseLoss::CrossEntropy)
            .map_err(|e| e.to_string())?;
        let expected = (10.0 * (1.0 - t as f64 / 100.0)).clamp(1.0, crate::TAU_CEILING);
        if next.current_tau != expected {
            return Err(format!(
                "linear at t={t}: {} != {expected}",
                next.current_tau
            ));
        }
    }
    let alpha = 0.9999;
    let ema = ThresholdStrategy::Ema { alpha };
    let mut state = ThresholdState {
        current_tau: ema.initial_tau(),
        step: 0,
    };
    for n in 1..=500usize {
        state = schedule_next(&ema, &state, n, 0.1, None, BaseLoss::CrossEntropy)
            .map_err(|e| e.to_string())?;
        let inv = alpha.powi(n as i32) / crate::TAU_CEILING + (1.0 - alpha.powi(n as i32));
        let closed = 1.0 / inv;
        if (state.current_tau - closed).abs() > 1e-9 * closed {
            return Err(format!("ema at n={n}: {} != {closed}", state.current_tau));
        }
    }
    Ok("linear and EMA schedules match their closed forms".into())
}

fn queue_fifo() -> Result<String, String> {
    let mut q = LossQueue::new(128);
    for i in 0..200 {
        q.push(i as f64);
        if q.len() > 128 {
            return Err(format!("occupancy {} above capacity", q.len()));
        }
    }
    let values = q.values();
    if values[0] != 72.0 || values[127] != 199.0 {
        return Err("eviction order not FIFO".into());
    }
    Ok("queue occupancy bounded, eviction strictly FIFO".into())
}

fn noise_determinism() -> Result<String, String> {
    let mut rng = ChaCha12Rng::seed_from_u64(3);
    let features: Vec<f64> = (0..2000).map(|_| rng.random_range(-2.0..2.0f64)).collect();
    let labels: Vec<usize> = (0..1000).map(|i| i % 4).collect();
    let spec = NoiseSpec::InstanceDependent {
        rate: 0.4,
        projections: 8,
        seed: 9,
    };
    let a = corrupt(&features, 2, &labels, 4, &spec, 5).map_err(|e| e.to_string())?;
    let b = corrupt(&features, 2, &labels, 4, &spec, 5).map_err(|e| e.to_string())?;
    if a != b {
        return Err("same seed produced different corruptions".into());
    }
    if (a.empirical_flip_rate() - 0.4).abs() > 0.05 {
        return Err(format!(
            "flip rate {} off target 0.4",
            a.empirical_flip_rate()
        ));
    }
    Ok(format!(
        "corruption deterministic, flip rate {:.3}",
        a.empirical_flip_rate()
    ))
}
