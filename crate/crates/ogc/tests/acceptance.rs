//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured quantities (visible with `cargo test -- --nocapture`).
//!
//! Every tolerance is pinned here, not computed at run time. The
//! direction-of-effect margin in criterion 8 was calibrated once from five
//! seeded baseline runs (observed OGC-minus-CE margins 0.039..0.166) and
//! frozen at 0.02.

use ogc::gmm::{fit_2gmm, fit_2gmm_report, EmConfig, GaussianComponent, GmmFit};
use ogc::harness::config::ExperimentConfig;
use ogc::harness::data::shuffled_batches;
use ogc::harness::train::seed_stream;
use ogc::harness::{export_distribution, last_k_epoch_mean_test_acc, train, write_metrics_csv};
use ogc::loss::{self, BaseLoss, HuberizedLoss, ProbVector};
use ogc::model::{sgd_step, Gradients, MlpModel, OptimizerState};
use ogc::threshold::{
    estimate_ratio, solve_threshold, tau_max_for, QuadratureGrid, SolveStatus, DEFAULT_BINS,
    SOLVE_TOL,
};
use ogc::TAU_CEILING;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use std::time::Instant;

fn pass(criterion: usize, label: &str, detail: &str) {
    println!("criterion {criterion} ({label}): PASS - {detail}");
}

fn random_prob_vector(rng: &mut ChaCha12Rng, k: usize) -> ProbVector {
    let raw: Vec<f64> = (0..k)
        .map(|_| -rng.random_range(1e-12..1.0f64).ln())
        .collect();
    let sum: f64 = raw.iter().sum();
    ProbVector::new(raw.into_iter().map(|x| x / sum).collect()).unwrap()
}

/// Criterion 1: per-class and class-sum bounds over 1e5 random probability
/// vectors and log-uniform thresholds, 1e-9 absolute slack, under 5 s.
#[test]
fn criterion_01_proposition_bounds() {
    let start = Instant::now();
    let mut rng = ChaCha12Rng::seed_from_u64(0xACCE_0001);
    let trials = 100_000;
    for _ in 0..trials {
        let k = rng.random_range(2..=10);
        let p = random_prob_vector(&mut rng, k);
        let tau = (rng.random_range(0.0..4.0f64) * std::f64::consts::LN_10).exp();
        let hub = HuberizedLoss::new(BaseLoss::CrossEntropy, tau).unwrap();
        let bound_factor = 1.0 + hub.tau().ln();
        let mut sum = 0.0;
        for &pj in p.probs() {
            let v = hub.value_at_floor(pj);
            assert!(
                v >= (1.0 - pj) - 1e-9,
                "lower bound: p={pj} tau={tau} v={v}"
            );
            assert!(
                v <= (1.0 - pj) * bound_factor + 1e-9,
                "upper bound: p={pj} tau={tau} v={v}"
            );
            sum += v;
        }
        let km1 = (k - 1) as f64;
        assert!(
            sum >= km1 - 1e-9,
            "sum lower bound: K={k} tau={tau} sum={sum}"
        );
        assert!(
            sum <= km1 * bound_factor + 1e-9,
            "sum upper bound: K={k} tau={tau} sum={sum}"
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}, limit 5 s");
    pass(
        1,
        "proposition bounds",
        &format!("{trials} cases, K<=10, tau in [1, 1e4], slack 1e-9, {elapsed:.2?}"),
    );
}

/// Criterion 2: continuity and slope-tau matching at the clip point for CE,
/// FL(0.5), GCE(0.7); tau = 1 CE equals 1 - p pointwise to 1e-12.
#[test]
fn criterion_02_huberization_correctness() {
    let cases = [
        (BaseLoss::CrossEntropy, "CE"),
        (BaseLoss::Focal { gamma: 0.5 }, "FL(0.5)"),
        (BaseLoss::GeneralizedCe { q: 0.7 }, "GCE(0.7)"),
    ];
    for (base, name) in cases {
        for tau in [1.5, 4.0, 20.0] {
            let hub = HuberizedLoss::new(base, tau).unwrap();
            let pt = hub.clip_point();
            assert!(pt > 0.0 && pt < 1.0, "{name} tau={tau}: clip point {pt}");

            // continuity: delta-sweep down to 1e-8
            let mut delta = 1e-2_f64.min(pt / 2.0).min((1.0 - pt) / 2.0);
            while delta >= 1e-8 {
                let gap = (hub.value(pt - delta).unwrap() - hub.value(pt + delta).unwrap()).abs();
                assert!(
                    gap <= 2.0 * tau * delta * (1.0 + 1e-6) + 1e-12,
                    "{name} tau={tau}: gap {gap} at delta {delta}"
                );
                delta /= 10.0;
            }

            // left slope is the tangent slope tau exactly
            let d = pt * 1e-5;
            let left = (hub.value(pt - d).unwrap() - hub.value(pt).unwrap()) / d;
            assert!(
                (left.abs() - tau).abs() <= 1e-6 * tau.max(1.0),
                "{name} tau={tau}: left slope {left}"
            );
            // right slope via Richardson extrapolation of forward quotients;
            // the step scales with the clip point because the loss curvature
            // grows like a power of 1/p there
            let d = pt * 1e-3;
            let q1 = (hub.value(pt + d).unwrap() - hub.value(pt).unwrap()) / d;
            let q2 = (hub.value(pt + d / 2.0).unwrap() - hub.value(pt).unwrap()) / (d / 2.0);
            let right = 2.0 * q2 - q1;
            assert!(
                (right.abs() - tau).abs() <= 1e-6 * tau.max(1.0),
                "{name} tau={tau}: right slope {right}"
            );
            // the defining equation of the clip point
            let g = loss::grad_norm(base, pt).unwrap();
            assert!(
                (g - tau).abs() <= 1e-9 * tau,
                "{name} tau={tau}: grad at clip {g}"
            );
        }
    }

    let mae_like = HuberizedLoss::new(BaseLoss::CrossEntropy, 1.0).unwrap();
    let mut p = 1e-6;
    while p <= 1.0 {
        assert!(
            (mae_like.value(p).unwrap() - (1.0 - p)).abs() <= 1e-12,
            "tau=1 deviates from 1-p at {p}"
        );
        p += 1e-3;
    }
    pass(
        2,
        "huberization",
        "continuity + slope tau at clip point (CE, FL 0.5, GCE 0.7); tau=1 CE == 1-p to 1e-12",
    );
}

/// Criterion 3: logit-space gradients vs central finite differences on 1e3
/// random cases, rel err <= 1e-5, excluding a 1e-4 clip-point neighborhood.
#[test]
fn criterion_03_gradient_oracle() {
    let mut rng = ChaCha12Rng::seed_from_u64(0xACCE_0003);
    let losses = [
        BaseLoss::CrossEntropy,
        BaseLoss::Focal { gamma: 0.5 },
        BaseLoss::Focal { gamma: 2.0 },
        BaseLoss::GeneralizedCe { q: 0.7 },
        BaseLoss::GeneralizedCe { q: 0.3 },
        BaseLoss::Mae,
    ];
    let mut accepted = 0usize;
    let mut attempts = 0usize;
    while accepted < 1000 {
        attempts += 1;
        assert!(attempts < 20_000, "case generator stalled");
        let base = losses[attempts % losses.len()];
        let tau = 10f64.powf(rng.random_range(0.0..3.0));
        let hub = HuberizedLoss::new(base, tau).unwrap();
        let k = rng.random_range(2..=10);
        let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
        let y = rng.random_range(0..k);
        let py = loss::softmax(&logits).unwrap()[y];
        if (py - hub.clip_point()).abs() <= 1e-4 {
            continue; // excluded kink neighborhood
        }
        let analytic = hub.grad_logits(&logits, y).unwrap();
        let norm: f64 = analytic.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm < 1e-6 {
            continue; // relative error ill-posed where the gradient vanishes
        }
        let step = 1e-5;
        let mut err2 = 0.0;
        for j in 0..k {
            let mut plus = logits.clone();
            let mut minus = logits.clone();
            plus[j] += step;
            minus[j] -= step;
            let fd = (hub.value_logits(&plus, y).unwrap() - hub.value_logits(&minus, y).unwrap())
                / (2.0 * step);
            err2 += (fd - analytic[j]).powi(2);
        }
        let rel = err2.sqrt() / norm;
        assert!(
            rel <= 1e-5,
            "case {attempts} ({base:?}, tau {tau}): rel err {rel}"
        );
        accepted += 1;
    }
    pass(
        3,
        "gradient oracle",
        &format!("1000 cases within rel err 1e-5 ({attempts} sampled)"),
    );
}

fn sample_fitted_mixture(seed: u64) -> GmmFit {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mu_c: f64 = rng.random_range(0.3..1.2);
    let sd_c: f64 = rng.random_range(0.08..mu_c / 3.2);
    let mu_n: f64 = mu_c + rng.random_range(1.0..3.0);
    let sd_n: f64 = rng.random_range(0.2..mu_n / 3.2);
    let n_clean = rng.random_range(1200..2900);
    let dist_c = Normal::new(mu_c, sd_c).unwrap();
    let dist_n = Normal::new(mu_n, sd_n).unwrap();
    let mut values: Vec<f64> = (0..n_clean)
        .map(|_| dist_c.sample(&mut rng).max(0.0))
        .collect();
    values.extend((0..4096 - n_clean).map(|_| dist_n.sample(&mut rng).max(0.0)));
    fit_2gmm(&values, &EmConfig::default()).unwrap()
}

fn sample_truncated(
    comp: &GaussianComponent,
    lo: f64,
    hi: f64,
    n: usize,
    rng: &mut ChaCha12Rng,
) -> Vec<f64> {
    let dist = Normal::new(comp.mean, comp.std).unwrap();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let x = dist.sample(rng);
        if x >= lo && x <= hi {
            out.push(x);
        }
    }
    out
}

/// Criterion 4: quadrature ratio within 1% of a 1e6-sample Monte-Carlo
/// estimate for 20 random fitted mixtures and tau in {1.5, 2, 5, 20};
/// doubling the bins moves the ratio by at most 0.1% relative.
#[test]
fn criterion_04_ratio_quadrature_vs_monte_carlo() {
    let mc_n = 1_000_000;
    let mut worst_mc = 0.0f64;
    let mut worst_bins = 0.0f64;
    for m in 0..20u64 {
        let fit = sample_fitted_mixture(0xACCE_0400 + m);
        let grid = QuadratureGrid::over_support(&fit, 1024).unwrap();
        let grid2 = QuadratureGrid::over_support(&fit, 2048).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(0xACCE_0440 + m);
        let hs_noise = sample_truncated(&fit.noise, fit.support_lo, fit.support_hi, mc_n, &mut rng);
        let hs_clean = sample_truncated(&fit.clean, fit.support_lo, fit.support_hi, mc_n, &mut rng);
        for tau in [1.5, 2.0, 5.0, 20.0] {
            let mc = hs_noise.iter().map(|&h| h.exp().min(tau)).sum::<f64>()
                / hs_clean.iter().map(|&h| h.exp().min(tau)).sum::<f64>();
            let quad = estimate_ratio(&fit, BaseLoss::CrossEntropy, tau, &grid)
                .unwrap()
                .ratio;
            let rel = (quad - mc).abs() / mc;
            assert!(
                rel <= 1e-2,
                "mixture {m} tau {tau}: quad {quad} vs mc {mc} (rel {rel})"
            );
            worst_mc = worst_mc.max(rel);

            let quad2 = estimate_ratio(&fit, BaseLoss::CrossEntropy, tau, &grid2)
                .unwrap()
                .ratio;
            let drift = (quad - quad2).abs() / quad2;
            assert!(
                drift <= 1e-3,
                "mixture {m} tau {tau}: bin doubling moved {drift}"
            );
            worst_bins = worst_bins.max(drift);
        }
    }
    pass(4, "ratio quadrature", &format!("20 mixtures x 4 taus: worst MC gap {worst_mc:.2e} (limit 1e-2), worst bin-doubling drift {worst_bins:.2e} (limit 1e-3)"));
}

/// Criterion 5: the solver lands within 1e-3 of the target ratio on separated
/// mixtures, cross-checked against a 1e4-point grid scan; identical
/// components return the unattainable flag.
#[test]
fn criterion_05_threshold_solver() {
    let epsilon = 0.5;
    let target = 1.0 + epsilon;
    for m in 0..10u64 {
        let fit = sample_fitted_mixture(0xACCE_0500 + m);
        let grid = QuadratureGrid::over_support(&fit, DEFAULT_BINS).unwrap();
        let sol = solve_threshold(&fit, BaseLoss::CrossEntropy, epsilon, &grid).unwrap();
        assert!(
            matches!(
                sol.status,
                SolveStatus::Converged | SolveStatus::GridFallback
            ),
            "mixture {m}: {:?}",
            sol.status
        );
        assert!(
            (sol.ratio - target).abs() <= SOLVE_TOL,
            "mixture {m}: ratio {} misses {target}",
            sol.ratio
        );
        // independent recomputation at the returned threshold
        let check = estimate_ratio(&fit, BaseLoss::CrossEntropy, sol.tau, &grid)
            .unwrap()
            .ratio;
        assert!((check - target).abs() <= SOLVE_TOL);

        // dense grid scan oracle
        let tau_max = tau_max_for(&fit);
        let points = 10_000;
        let mut best = (f64::INFINITY, 0.0f64);
        for i in 0..=points {
            let tau = (tau_max.ln() * i as f64 / points as f64).exp();
            let r = estimate_ratio(&fit, BaseLoss::CrossEntropy, tau, &grid)
                .unwrap()
                .ratio;
            let miss = (r - target).abs();
            if miss < best.0 {
                best = (miss, tau);
            }
        }
        let spacing = tau_max.ln() / points as f64;
        assert!(
            (sol.tau.ln() - best.1.ln()).abs() <= 2.0 * spacing,
            "mixture {m}: solver tau {} vs grid tau {}",
            sol.tau,
            best.1
        );
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
    let grid = QuadratureGrid::over_support(&identical, DEFAULT_BINS).unwrap();
    let sol = solve_threshold(&identical, BaseLoss::CrossEntropy, epsilon, &grid).unwrap();
    assert_eq!(sol.status, SolveStatus::Unattainable);
    assert_eq!(sol.tau, tau_max_for(&identical));
    pass(5, "threshold solver", "10 separated mixtures within 1e-3 of target, grid-scan agreement; identical components flag unattainable");
}

/// Criterion 6: mixture recovery on the reference synthetic problem within
/// the stated tolerances, monotone likelihood, under 1 s.
#[test]
fn criterion_06_gmm_recovery() {
    let start = Instant::now();
    let mut rng = ChaCha12Rng::seed_from_u64(0xACCE_0006);
    let clean = Normal::new(1.0, 0.3).unwrap();
    let noise = Normal::new(4.0, 1.0).unwrap();
    let values: Vec<f64> = (0..4096)
        .map(|i| {
            let v: f64 = if i % 2 == 0 {
                clean.sample(&mut rng)
            } else {
                noise.sample(&mut rng)
            };
            v.max(0.0)
        })
        .collect();
    let report = fit_2gmm_report(&values, &EmConfig::default()).unwrap();
    let fit = report.fit;
    assert!(
        (fit.clean.mean - 1.0).abs() <= 0.2,
        "clean mean {}",
        fit.clean.mean
    );
    assert!(
        (fit.noise.mean - 4.0).abs() <= 0.2,
        "noise mean {}",
        fit.noise.mean
    );
    assert!(
        (fit.clean.weight - 0.5).abs() <= 0.1,
        "clean weight {}",
        fit.clean.weight
    );
    assert!(
        (fit.noise.weight - 0.5).abs() <= 0.1,
        "noise weight {}",
        fit.noise.weight
    );
    for w in report.log_likelihood.windows(2) {
        assert!(
            w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0),
            "likelihood fell {} -> {}",
            w[0],
            w[1]
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}, limit 1 s");
    pass(
        6,
        "gmm recovery",
        &format!(
            "means ({:.3}, {:.3}), weights ({:.3}, {:.3}), {} monotone iterations, {elapsed:.2?}",
            fit.clean.mean, fit.noise.mean, fit.clean.weight, fit.noise.weight, report.iterations
        ),
    );
}

/// Brute-force risk minimization for criterion 7: classifiers assign
/// p(class 0 | x_i) on a 0.01 grid over a 3-point domain with K = 2.
struct RiskTables {
    /// clean_risk[g1][g2][g3] is folded as per-point contributions.
    clean: [Vec<f64>; 3],
    noisy: [Vec<f64>; 3],
}

impl RiskTables {
    /// `flip[i]` is the probability that point i's label is flipped to the
    /// other class; `marginal[i]` its weight under the clean distribution.
    fn new(hub: &HuberizedLoss, marginal: [f64; 3], labels: [usize; 3], flip: [f64; 3]) -> Self {
        let grid: Vec<f64> = (0..=100).map(|g| g as f64 / 100.0).collect();
        let mut clean: [Vec<f64>; 3] = Default::default();
        let mut noisy: [Vec<f64>; 3] = Default::default();
        for i in 0..3 {
            clean[i] = grid
                .iter()
                .map(|&p0| {
                    let p_true = if labels[i] == 0 { p0 } else { 1.0 - p0 };
                    marginal[i] * hub.value_at_floor(p_true)
                })
                .collect();
            noisy[i] = grid
                .iter()
                .map(|&p0| {
                    let p_true = if labels[i] == 0 { p0 } else { 1.0 - p0 };
                    let p_wrong = 1.0 - p_true;
                    marginal[i]
                        * ((1.0 - flip[i]) * hub.value_at_floor(p_true)
                            + flip[i] * hub.value_at_floor(p_wrong))
                })
                .collect();
        }
        Self { clean, noisy }
    }

    /// Exhaustive argmin over all 101^3 grid classifiers of both risks,
    /// returning (clean risk of clean argmin, clean risk of noisy argmin,
    /// noisy risk of clean argmin, noisy risk of noisy argmin).
    fn brute_force(&self) -> (f64, f64, f64, f64) {
        let mut best_clean = (f64::INFINITY, [0usize; 3]);
        let mut best_noisy = (f64::INFINITY, [0usize; 3]);
        for g1 in 0..=100 {
            for g2 in 0..=100 {
                let c12 = self.clean[0][g1] + self.clean[1][g2];
                let n12 = self.noisy[0][g1] + self.noisy[1][g2];
                for g3 in 0..=100 {
                    let c = c12 + self.clean[2][g3];
                    let n = n12 + self.noisy[2][g3];
                    if c < best_clean.0 {
                        best_clean = (c, [g1, g2, g3]);
                    }
                    if n < best_noisy.0 {
                        best_noisy = (n, [g1, g2, g3]);
                    }
                }
            }
        }
        let risk = |tables: &[Vec<f64>; 3], g: [usize; 3]| {
            tables[0][g[0]] + tables[1][g[1]] + tables[2][g[2]]
        };
        (
            best_clean.0,
            risk(&self.clean, best_noisy.1),
            risk(&self.noisy, best_clean.1),
            best_noisy.0,
        )
    }
}

/// Criterion 7: excess-risk bound checks for the symmetric, asymmetric, and
/// instance-dependent theorems by exhaustive grid minimization, under 30 s.
#[test]
fn criterion_07_excess_risk_bounds() {
    let start = Instant::now();
    let marginal = [0.5, 0.3, 0.2];
    let labels = [0usize, 1, 0];
    let k = 2.0f64;

    // symmetric noise: excess clean risk of the noisy minimizer is within
    // [0, log tau / (1 - eta K / (K - 1))]
    for eta in [0.1, 0.2] {
        for tau in [2.0, 4.0] {
            let hub = HuberizedLoss::new(BaseLoss::CrossEntropy, tau).unwrap();
            // under symmetric noise with K = 2 the flip probability is eta
            let tables = RiskTables::new(&hub, marginal, labels, [eta; 3]);
            let (clean_star, clean_of_noisy, _, _) = tables.brute_force();
            let excess = clean_of_noisy - clean_star;
            let bound = tau.ln() / (1.0 - eta * k / (k - 1.0));
            assert!(
                excess >= -1e-12,
                "eta {eta} tau {tau}: excess {excess} negative"
            );
            assert!(
                excess <= bound + 1e-9,
                "eta {eta} tau {tau}: excess {excess} above bound {bound}"
            );
        }
    }

    // asymmetric noise: rows (0.7, 0.3) and (0.9, 0.1); flip probability per
    // point is the off-diagonal mass of its true label's row
    let eta_by_class = [0.3, 0.1];
    let flip_asym = [
        eta_by_class[labels[0]],
        eta_by_class[labels[1]],
        eta_by_class[labels[2]],
    ];
    for tau in [2.0, 4.0] {
        let hub = HuberizedLoss::new(BaseLoss::CrossEntropy, tau).unwrap();
        let tables = RiskTables::new(&hub, marginal, labels, flip_asym);
        let (clean_star, _, noisy_of_clean, noisy_star) = tables.brute_force();
        assert!(
            clean_star.abs() <= 1e-12,
            "theorem hypothesis R(f*) = 0 violated: {clean_star}"
        );
        let excess = noisy_of_clean - noisy_star;
        let expected_clean_share: f64 = (0..3).map(|i| marginal[i] * (1.0 - flip_asym[i])).sum();
        let bound = (k - 1.0) * tau.ln() * expected_clean_share;
        assert!(excess >= -1e-12, "asym tau {tau}: excess {excess} negative");
        assert!(
            excess <= bound + 1e-9,
            "asym tau {tau}: excess {excess} above bound {bound}"
        );
    }

    // instance-dependent noise: a per-point noise-rate map
    let flip_inst = [0.1, 0.25, 0.4];
    for tau in [2.0, 4.0] {
        let hub = HuberizedLoss::new(BaseLoss::CrossEntropy, tau).unwrap();
        let tables = RiskTables::new(&hub, marginal, labels, flip_inst);
        let (clean_star, _, noisy_of_clean, noisy_star) = tables.brute_force();
        assert!(
            clean_star.abs() <= 1e-12,
            "theorem hypothesis R(f*) = 0 violated: {clean_star}"
        );
        let excess = noisy_of_clean - noisy_star;
        let expected_clean_share: f64 = (0..3).map(|i| marginal[i] * (1.0 - flip_inst[i])).sum();
        let bound = (k - 1.0) * tau.ln() * expected_clean_share;
        assert!(excess >= -1e-12, "inst tau {tau}: excess {excess} negative");
        assert!(
            excess <= bound + 1e-9,
            "inst tau {tau}: excess {excess} above bound {bound}"
        );
    }

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 30.0, "took {elapsed:?}, limit 30 s");
    pass(7, "excess-risk bounds", &format!("symmetric/asymmetric/instance-dependent bounds hold on 101^3 grid enumerations, {elapsed:.2?}"));
}

fn fig1_config(seed: u64, plain_ce: bool, noise_rate: f64, epochs: usize) -> ExperimentConfig {
    let noise = if noise_rate > 0.0 {
        format!("noise = \"symmetric\"\nnoise_rate = {noise_rate}\n")
    } else {
        String::new()
    };
    // the plain-CE baseline keeps the paper's parameter-clip but pins the
    // probability clip at the ceiling, where it is inert
    let strategy = if plain_ce {
        "strategy = \"fixed\"\nfixed_tau = 1e6\n".to_string()
    } else {
        "strategy = \"optimized\"\nepsilon0 = 20.0\n".to_string()
    };
    ExperimentConfig::from_toml_str(&format!(
        "dataset = \"blobs\"\nn_train = 512\nn_test = 512\nclasses = 2\nblob_std = 0.7\n\
         batch_size = 128\nepochs = {epochs}\nhidden_dims = [32]\n\
         lr = 0.1\nlr_milestones = [500, 1000]\n\
         queue_capacity = 4096\ntime_frame = 32\nwarmup_samples = 512\n\
         seed = {seed}\n{noise}{strategy}"
    ))
    .unwrap()
}

fn grad_means_from_dump(csv: &str) -> (f64, f64) {
    let (mut sum_f, mut n_f, mut sum_c, mut n_c) = (0.0, 0usize, 0.0, 0usize);
    for line in csv.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let g: f64 = cols[2].parse().unwrap();
        if cols[3] == "true" {
            sum_f += g;
            n_f += 1;
        } else {
            sum_c += g;
            n_c += 1;
        }
    }
    (sum_f / n_f as f64, sum_c / n_c as f64)
}

/// Criterion 8: end-to-end direction of effect on the 2-D blob binary task
/// with 40% symmetric noise, 1500 epochs, under 5 minutes.
///
/// The accuracy margin threshold 0.02 was calibrated once from five seeded
/// baseline pairs (observed margins 0.039, 0.051, 0.127, 0.166, 0.084) and
/// is frozen here.
#[test]
fn criterion_08_direction_of_effect() {
    const FROZEN_MARGIN: f64 = 0.02;
    let seed = 1;
    let start = Instant::now();

    // (a) early-training gradient separation of flipped vs clean samples
    let early = train(&fig1_config(seed, true, 0.4, 50)).unwrap();
    let mut buf = Vec::new();
    export_distribution(
        &early.model,
        &early.train_data,
        BaseLoss::CrossEntropy,
        &mut buf,
    )
    .unwrap();
    let (flipped_mean, clean_mean) = grad_means_from_dump(&String::from_utf8(buf).unwrap());
    assert!(
        flipped_mean > clean_mean,
        "epoch-50 gradient means: flipped {flipped_mean} vs clean {clean_mean}"
    );

    // (b) dynamic clipping beats the plain baseline under 40% noise
    let ce = train(&fig1_config(seed, true, 0.4, 1500)).unwrap();
    let ogc = train(&fig1_config(seed, false, 0.4, 1500)).unwrap();
    let acc_ce = last_k_epoch_mean_test_acc(&ce.metrics, 10);
    let acc_ogc = last_k_epoch_mean_test_acc(&ogc.metrics, 10);
    let margin = acc_ogc - acc_ce;
    assert!(
        margin >= FROZEN_MARGIN,
        "margin {margin:.4} below frozen threshold {FROZEN_MARGIN} (CE {acc_ce:.4}, OGC {acc_ogc:.4})"
    );

    // (c) clean-data control: the optimized threshold must not hurt
    let ce_clean = train(&fig1_config(seed, true, 0.0, 1500)).unwrap();
    let ogc_clean = train(&fig1_config(seed, false, 0.0, 1500)).unwrap();
    let acc_ce_clean = last_k_epoch_mean_test_acc(&ce_clean.metrics, 10);
    let acc_ogc_clean = last_k_epoch_mean_test_acc(&ogc_clean.metrics, 10);
    assert!(
        (acc_ogc_clean - acc_ce_clean).abs() <= 0.01,
        "clean control: CE {acc_ce_clean:.4} vs OGC {acc_ogc_clean:.4}"
    );

    let elapsed = start.elapsed();
    assert!(
        elapsed.as_secs_f64() < 300.0,
        "took {elapsed:?}, limit 5 min"
    );
    pass(8, "direction of effect", &format!("epoch-50 grad means {flipped_mean:.2} (flipped) > {clean_mean:.2} (clean); noisy margin {margin:+.4} >= {FROZEN_MARGIN}; clean control gap {:+.4}; {elapsed:.1?}", acc_ogc_clean - acc_ce_clean));
}

/// Criterion 9: the fixed strategy reproduces a constant-threshold loop
/// bit-for-bit; linear and EMA traces match their closed forms; thresholds
/// change only on the time frame.
#[test]
fn criterion_09_schedule_semantics() {
    let base_toml = "dataset = \"blobs\"\nn_train = 256\nn_test = 128\nblob_std = 0.8\n\
                     noise = \"symmetric\"\nnoise_rate = 0.4\n\
                     batch_size = 64\nepochs = 16\nhidden_dims = [16]\n\
                     queue_capacity = 256\nwarmup_samples = 64\ntime_frame = 8\n\
                     lr = 0.05\nlr_milestones = [8]\nseed = 11\n";

    // (i) fixed strategy == an independent constant-threshold training loop
    let tau_fixed = 2.0;
    let cfg = ExperimentConfig::from_toml_str(&format!(
        "{base_toml}strategy = \"fixed\"\nfixed_tau = {tau_fixed}\n"
    ))
    .unwrap();
    let out = train(&cfg).unwrap();
    assert!(
        out.tau_by_step.iter().all(|&t| t == tau_fixed),
        "fixed trace not constant"
    );

    let reference = {
        let (train_data, _) = ogc::harness::build_datasets(&cfg).unwrap();
        let schedule = cfg.lr_schedule().unwrap();
        let hub = HuberizedLoss::new(BaseLoss::CrossEntropy, tau_fixed).unwrap();
        let mut model = MlpModel::he_uniform(
            &cfg.layer_dims(train_data.dim, train_data.classes),
            seed_stream::subseed(cfg.seed, seed_stream::MODEL_INIT),
        )
        .unwrap();
        let mut opt = OptimizerState::new(
            &model,
            cfg.lr,
            cfg.momentum,
            cfg.weight_decay,
            cfg.param_clip,
        )
        .unwrap();
        let mut rng =
            ChaCha12Rng::seed_from_u64(seed_stream::subseed(cfg.seed, seed_stream::SHUFFLE));
        for epoch in 0..cfg.epochs {
            opt.lr = schedule.lr_at(epoch);
            for batch in shuffled_batches(train_data.len(), cfg.batch_size, &mut rng) {
                let mut grads = Gradients::zeros_like(&model);
                let mut caches = Vec::with_capacity(batch.len());
                for &i in &batch {
                    caches.push((i, model.forward_cached(train_data.feature(i)).unwrap()));
                }
                for (i, cache) in &caches {
                    let y = train_data.given_labels[*i];
                    let g = hub.grad_logits(cache.logits(), y).unwrap();
                    grads.add_assign(&model.backward(cache, &g).unwrap());
                }
                grads.scale(1.0 / batch.len() as f64);
                sgd_step(&mut model, &mut opt, &grads).unwrap();
            }
        }
        model
    };
    assert_eq!(
        out.model, reference,
        "fixed-strategy run differs from the constant-tau loop"
    );

    // (ii) linear trace matches its closed form exactly at every step
    let cfg = ExperimentConfig::from_toml_str(&format!(
        "{base_toml}strategy = \"linear\"\nlinear_beta = 10.0\n"
    ))
    .unwrap();
    let out = train(&cfg).unwrap();
    let total_steps = out.tau_by_step.len();
    let s = cfg.time_frame;
    for (idx, &tau) in out.tau_by_step.iter().enumerate() {
        let t = idx + 1;
        let t_update = (t / s) * s; // last update step, 0 before the first
        let expected =
            (10.0 * (1.0 - t_update as f64 / total_steps as f64)).clamp(1.0, TAU_CEILING);
        assert_eq!(tau, expected, "linear trace at step {t}");
    }

    // (iii) EMA trace matches its closed form (one application per update)
    let alpha = 0.999f64;
    let cfg = ExperimentConfig::from_toml_str(&format!(
        "{base_toml}strategy = \"ema\"\nema_alpha = {alpha}\n"
    ))
    .unwrap();
    let out = train(&cfg).unwrap();
    for (idx, &tau) in out.tau_by_step.iter().enumerate() {
        let t = idx + 1;
        let n = (t / s) as i32;
        let inv = alpha.powi(n) / TAU_CEILING + (1.0 - alpha.powi(n));
        let expected = (1.0 / inv).clamp(1.0, TAU_CEILING);
        assert!(
            (tau - expected).abs() <= 1e-9 * expected,
            "ema trace at step {t}: {tau} vs {expected}"
        );
    }

    // (iv) thresholds move only on the time frame for the optimized strategy
    let cfg =
        ExperimentConfig::from_toml_str(&format!("{base_toml}strategy = \"optimized\"\n")).unwrap();
    let out = train(&cfg).unwrap();
    for (idx, w) in out.tau_by_step.windows(2).enumerate() {
        if w[1] != w[0] {
            assert_eq!(
                (idx + 2) % s,
                0,
                "tau changed off-frame at step {}",
                idx + 2
            );
        }
    }
    pass(9, "schedule semantics", "fixed == constant-tau loop bit-for-bit; linear exact; EMA matches closed form; updates only at t mod s == 0");
}

/// Criterion 10: identical config and seed produce byte-identical metrics.
#[test]
fn criterion_10_determinism() {
    let cfg = ExperimentConfig::from_toml_str(
        "dataset = \"blobs\"\nn_train = 256\nn_test = 128\nblob_std = 0.8\n\
         noise = \"symmetric\"\nnoise_rate = 0.4\n\
         batch_size = 64\nepochs = 20\nhidden_dims = [16]\n\
         queue_capacity = 256\nwarmup_samples = 64\ntime_frame = 8\n\
         lr = 0.05\nlr_milestones = [10]\nseed = 42\n",
    )
    .unwrap();
    let mut csv_a = Vec::new();
    let mut csv_b = Vec::new();
    write_metrics_csv(&train(&cfg).unwrap().metrics, &mut csv_a).unwrap();
    write_metrics_csv(&train(&cfg).unwrap().metrics, &mut csv_b).unwrap();
    assert_eq!(
        csv_a, csv_b,
        "metrics CSV bytes differ between identical runs"
    );
    pass(
        10,
        "determinism",
        &format!("two runs, {} identical CSV bytes", csv_a.len()),
    );
}
