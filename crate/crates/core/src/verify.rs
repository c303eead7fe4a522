//! Invariant suites used by the acceptance tests and the CLI `verify`
//! command. Every tolerance is pinned here in code.

use crate::diffusion::{complex_noise, DiffusionSchedule, TweedieMode};
use crate::error::{Error, Result};
use crate::metrics;
use crate::operators::{
    convolve_adjoint, forward, loss_and_grad_dps, loss_and_grad_state, JacobianMode,
    MeasurementModel,
};
use crate::oracle::{densify_measurement, gaussian_posterior, spectrogram_to_vector};
use crate::rir::{self, RirSpec};
use crate::sampler::{self, InitMode, SamplerConfig, Variant};
use crate::score::{DeltaPrior, GaussianPrior, GmmPrior, ScoreProvider, Variance};
use crate::stft::{dot_real, istft, istft_adjoint, stft, Spectrogram, StftConfig};
use nalgebra::DVector;
use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::time::Instant;

/// Outcome of one acceptance check.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl CheckReport {
    pub fn line(&self) -> String {
        format!(
            "{} {} — {} [{:.2}s]",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail,
            self.seconds
        )
    }
}

pub const SUITES: &[&str] = &[
    "adjoint",
    "reconstruction",
    "gradients",
    "score-oracle",
    "langevin",
    "flow",
    "posterior-oracle",
    "pipeline",
    "schedule",
    "robustness",
];

/// Run one named suite, or every suite for `all`.
pub fn run_suite(selector: &str) -> Result<Vec<CheckReport>> {
    let run_one = |name: &str| -> Result<CheckReport> {
        let start = Instant::now();
        let mut report = match name {
            "adjoint" => check_adjoint(),
            "reconstruction" => check_reconstruction(),
            "gradients" => check_gradients(),
            "score-oracle" => check_score_oracle(),
            "langevin" => check_langevin(),
            "flow" => check_flow(),
            "posterior-oracle" => check_posterior_oracle(),
            "pipeline" => check_pipeline(),
            "schedule" => check_schedule(),
            "robustness" => check_robustness(),
            _ => {
                return Err(Error::domain(format!(
                    "unknown suite {name:?}; available: {}",
                    SUITES.join(", ")
                )))
            }
        }?;
        report.seconds = start.elapsed().as_secs_f64();
        Ok(report)
    };
    if selector == "all" {
        SUITES.iter().map(|s| run_one(s)).collect()
    } else {
        Ok(vec![run_one(selector)?])
    }
}

fn randn(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn rand_spec(cfg: &StftConfig, frames: usize, len: usize, rng: &mut ChaCha8Rng) -> Spectrogram {
    let data = Array2::from_shape_fn((cfg.freq_bins(), frames), |_| {
        Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    Spectrogram::new(data, cfg.clone(), len).expect("consistent shape")
}

/// Criterion: full-chain adjoint identity, 100 random trials across 5 shape
/// combinations, relative error <= 1e-10.
fn check_adjoint() -> Result<CheckReport> {
    const TOL: f64 = 1e-10;
    let shapes: [(usize, usize, usize, usize, usize); 5] = [
        (510, 128, 512, 3000, 129),
        (510, 128, 512, 777, 37),
        (64, 16, 64, 333, 17),
        (16, 4, 16, 200, 7),
        (4, 2, 4, 6, 3),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for (w, h, n, len, kk) in shapes {
        let cfg = StftConfig::new(w, h, n, 16e3)?;
        let k = randn(kk, &mut rng);
        let model = MeasurementModel::new(k, 0.0, cfg.clone(), len)?;
        for _ in 0..20 {
            let x = rand_spec(&cfg, model.frames(), len, &mut rng);
            let r = randn(model.output_len(), &mut rng);
            let lhs: f64 = forward(&model, &x)?
                .iter()
                .zip(&r)
                .map(|(a, b)| a * b)
                .sum();
            let corr = convolve_adjoint(&model.rir, &r)?;
            let adj = istft_adjoint(&corr, &cfg, model.frames())?;
            let rhs = dot_real(&x, &adj);
            let rel = (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-300);
            worst = worst.max(rel);
        }
    }
    Ok(CheckReport {
        name: "adjoint",
        passed: worst <= TOL,
        detail: format!("worst relative error {worst:.3e} over 100 trials (tol {TOL:.0e})"),
        seconds: 0.0,
    })
}

/// Criterion: istft(stft(x)) = x at relative L2 <= 1e-8 for the pinned
/// signal lengths.
fn check_reconstruction() -> Result<CheckReport> {
    const TOL: f64 = 1e-8;
    let cfg = StftConfig::speech_16k();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst = 0.0f64;
    for len in [1usize, 127, 128, 510, 16000, 80000] {
        let x = randn(len, &mut rng);
        let back = istft(&stft(&x, &cfg)?)?;
        let num: f64 = x
            .iter()
            .zip(&back)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let den: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        worst = worst.max(num / den.max(1e-300));
    }
    Ok(CheckReport {
        name: "reconstruction",
        passed: worst <= TOL,
        detail: format!("worst relative L2 {worst:.3e} over 6 lengths (tol {TOL:.0e})"),
        seconds: 0.0,
    })
}

/// Criterion: both likelihood gradients match central finite differences
/// (h = 1e-6) at relative error <= 1e-5 on >= 20 coordinates x 10 instances,
/// including DPS with the analytic Jacobian.
fn check_gradients() -> Result<CheckReport> {
    const TOL: f64 = 1e-5;
    const H: f64 = 1e-6;
    let cfg = StftConfig::new(4, 2, 4, 16e3)?;
    let sched = DiffusionSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut worst = 0.0f64;
    let mut checked = 0usize;

    for instance in 0..10 {
        let k = randn(3, &mut rng);
        let model = MeasurementModel::new(k, 0.0, cfg.clone(), 8)?;
        let x = rand_spec(&cfg, model.frames(), 8, &mut rng);
        let y = randn(model.output_len(), &mut rng);
        let mean = rand_spec(&cfg, model.frames(), 8, &mut rng);
        let tau = 0.55;
        let tweedie = if instance % 2 == 0 {
            TweedieMode::Exact
        } else {
            TweedieMode::SigmaSq
        };

        let state_pair = loss_and_grad_state(&model, &x, &y)?;
        let mut prior = GaussianPrior::scalar(mean.clone(), 0.5, sched.sigma_min)?;
        let dps_pair = loss_and_grad_dps(
            &model,
            &sched,
            &x,
            tau,
            &mut prior,
            &y,
            JacobianMode::Exact,
            tweedie,
        )?;

        for variant in 0..2 {
            let grad = if variant == 0 {
                &state_pair.1
            } else {
                &dps_pair.1
            };
            let loss_at = |xx: &Spectrogram| -> f64 {
                if variant == 0 {
                    loss_and_grad_state(&model, xx, &y).unwrap().0
                } else {
                    loss_and_grad_dps(
                        &model,
                        &sched,
                        xx,
                        tau,
                        &mut GaussianPrior::scalar(mean.clone(), 0.5, sched.sigma_min).unwrap(),
                        &y,
                        JacobianMode::Exact,
                        tweedie,
                    )
                    .unwrap()
                    .0
                }
            };
            let mut valid = 0usize;
            let mut attempts = 0usize;
            while valid < 20 && attempts < 200 {
                attempts += 1;
                let f = rng.random_range(0..x.freq_bins());
                let t = rng.random_range(0..x.frames());
                // imaginary parts of DC/Nyquist never reach the synthesis:
                // both sides of the comparison are structurally zero there
                let edge = f == 0 || f == x.freq_bins() - 1;
                let im = !edge && rng.random_bool(0.5);
                let mut xp = x.clone();
                let mut xm = x.clone();
                if im {
                    xp.data[(f, t)].im += H;
                    xm.data[(f, t)].im -= H;
                } else {
                    xp.data[(f, t)].re += H;
                    xm.data[(f, t)].re -= H;
                }
                let fd = (loss_at(&xp) - loss_at(&xm)) / (2.0 * H);
                let an = if im {
                    grad.data[(f, t)].im
                } else {
                    grad.data[(f, t)].re
                };
                if fd.abs() < 1e-9 {
                    continue; // windowed-out sample, no sensitivity to compare
                }
                worst = worst.max((an - fd).abs() / fd.abs());
                valid += 1;
                checked += 1;
            }
        }
    }
    Ok(CheckReport {
        name: "gradients",
        passed: worst <= TOL && checked >= 20 * 10 * 2,
        detail: format!(
            "worst relative error {worst:.3e} over {checked} coordinates (tol {TOL:.0e})"
        ),
        seconds: 0.0,
    })
}

/// Criterion: every analytic provider matches central finite differences of
/// its closed-form log-density at relative error <= 1e-6.
fn check_score_oracle() -> Result<CheckReport> {
    const TOL: f64 = 1e-6;
    const H: f64 = 1e-5;
    let cfg = StftConfig::new(4, 2, 4, 16e3)?;
    let sched = DiffusionSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let frames = cfg.num_frames(6);
    let x = rand_spec(&cfg, frames, 6, &mut rng);
    let m1 = rand_spec(&cfg, frames, 6, &mut rng);
    let m2 = rand_spec(&cfg, frames, 6, &mut rng);
    let sigma = 0.3;

    let vmap = Array2::from_shape_fn(x.data.dim(), |_| 0.2 + rng.random::<f64>());
    type LogDensity = Box<dyn Fn(&Spectrogram) -> f64>;
    let mut providers: Vec<(&str, Box<dyn ScoreProvider>, LogDensity)> = vec![
        (
            "gaussian",
            Box::new(GaussianPrior::scalar(m1.clone(), 0.5, sched.sigma_min)?),
            {
                let p = GaussianPrior::scalar(m1.clone(), 0.5, sched.sigma_min)?;
                Box::new(move |xx| p.log_density(xx, sigma).unwrap())
            },
        ),
        (
            "gaussian-per-bin",
            Box::new(GaussianPrior::new(
                m1.clone(),
                Variance::PerBin(vmap.clone()),
                sched.sigma_min,
            )?),
            {
                let p = GaussianPrior::new(m1.clone(), Variance::PerBin(vmap), sched.sigma_min)?;
                Box::new(move |xx| p.log_density(xx, sigma).unwrap())
            },
        ),
        (
            "gmm",
            Box::new(GmmPrior::new(
                vec![(0.4, m1.clone(), 0.5), (0.6, m2.clone(), 0.8)],
                sched.sigma_min,
            )?),
            {
                let p = GmmPrior::new(
                    vec![(0.4, m1.clone(), 0.5), (0.6, m2.clone(), 0.8)],
                    sched.sigma_min,
                )?;
                Box::new(move |xx| p.log_density(xx, sigma).unwrap())
            },
        ),
        (
            "delta",
            Box::new(DeltaPrior::new(m2.clone(), sched.sigma_min)?),
            {
                let p = DeltaPrior::new(m2.clone(), sched.sigma_min)?;
                Box::new(move |xx| p.log_density(xx, sigma).unwrap())
            },
        ),
    ];

    let mut worst = 0.0f64;
    let mut worst_name = "";
    for (name, provider, log_density) in providers.iter_mut() {
        let score = provider.score(&x, sigma)?;
        for f in 0..x.freq_bins() {
            for t in 0..x.frames() {
                for im in [false, true] {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    if im {
                        xp.data[(f, t)].im += H;
                        xm.data[(f, t)].im -= H;
                    } else {
                        xp.data[(f, t)].re += H;
                        xm.data[(f, t)].re -= H;
                    }
                    // score convention: half the stacked real gradient
                    let fd = (log_density(&xp) - log_density(&xm)) / (2.0 * H) / 2.0;
                    let an = if im {
                        score.data[(f, t)].im
                    } else {
                        score.data[(f, t)].re
                    };
                    let rel = (an - fd).abs() / fd.abs().max(1e-6);
                    if rel > worst {
                        worst = rel;
                        worst_name = name;
                    }
                }
            }
        }
    }
    Ok(CheckReport {
        name: "score-oracle",
        passed: worst <= TOL,
        detail: format!(
            "worst relative error {worst:.3e} ({worst_name}) across 4 providers (tol {TOL:.0e})"
        ),
        seconds: 0.0,
    })
}

/// Criterion: 200 Langevin corrector steps (r = 0.4) with the exact Gaussian
/// score at fixed sigma preserve the stationary variance within 5% over
/// 10^4 bins.
fn check_langevin() -> Result<CheckReport> {
    const TOL: f64 = 0.05;
    let sched = DiffusionSchedule::default();
    let cfg = StftConfig::new(2, 1, 2, 16e3)?;
    let frames = 5000;
    let zero = Spectrogram::zeros(cfg, frames, frames)?;
    let mut prior = GaussianPrior::scalar(zero.clone(), 1.0, sched.sigma_min)?;
    // tau with sigma(tau) = 0.2
    let tau = (0.2f64 / sched.sigma_min).ln() / (sched.sigma_max / sched.sigma_min).ln();
    let v = sched.perturbation_variance(tau)?;
    let target = 1.0 + v;
    let mut x = zero;
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    for _ in 0..200 {
        x = sampler::corrector_step(&x, tau, &sched, &mut prior, 0.4, &mut rng)?;
    }
    let emp: f64 = x.data.iter().map(|c| c.norm_sqr()).sum::<f64>() / x.data.len() as f64;
    let rel = (emp - target).abs() / target;
    Ok(CheckReport {
        name: "langevin",
        passed: rel <= TOL,
        detail: format!(
            "empirical per-bin variance {emp:.4} vs stationary {target:.4} (rel {rel:.3}, tol {TOL})"
        ),
        seconds: 0.0,
    })
}

/// Acklam's rational approximation to the standard normal quantile
/// (absolute error < 1.2e-9, far below the 3% decile tolerance).
fn normal_quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.38357751867269e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -normal_quantile(1.0 - p)
    }
}

fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    let idx = p * (sorted.len() - 1) as f64;
    let lo = idx.floor() as usize;
    let hi = idx.ceil() as usize;
    let frac = idx - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Criterion: 1000 probability-flow predictor steps from the exact terminal
/// marginal of a 1-bin Gaussian prior land on the prior: ten evenly spaced
/// quantiles within 3% of a prior standard deviation, over 10^4 runs.
fn check_flow() -> Result<CheckReport> {
    const TOL: f64 = 0.03;
    let sched = DiffusionSchedule::default();
    let sx2 = 0.09;
    // batch the independent 1-bin runs as bins of one spectrogram
    let cfg = StftConfig::new(2, 1, 2, 16e3)?;
    let frames = 5000;
    let zero = Spectrogram::zeros(cfg.clone(), frames, frames)?;
    let mut prior = GaussianPrior::scalar(zero.clone(), sx2, sched.sigma_min)?;
    let v_t = sched.perturbation_variance(sched.t_final)?;
    let mut rng = ChaCha8Rng::seed_from_u64(121);
    let mut x = zero.with_data(complex_noise(2, frames, sx2 + v_t, &mut rng));
    let n = 1000;
    let dtau = -sched.t_final / n as f64;
    for step in (1..=n).rev() {
        let tau = step as f64 * sched.t_final / n as f64;
        x = sampler::predictor_step(&x, tau, &sched, &mut prior, dtau)?;
    }
    let mut reals: Vec<f64> = x.data.iter().map(|c| c.re).collect();
    reals.sort_by(|a, b| a.total_cmp(b));
    let sd = (sx2 / 2.0).sqrt();
    let mut worst = 0.0f64;
    for i in 0..10 {
        let p = 0.05 + 0.1 * i as f64;
        let emp = empirical_quantile(&reals, p);
        let theory = sd * normal_quantile(p);
        worst = worst.max((emp - theory).abs() / sd);
    }
    Ok(CheckReport {
        name: "flow",
        passed: worst <= TOL,
        detail: format!(
            "worst decile deviation {worst:.4} prior standard deviations over {} runs (tol {TOL})",
            reals.len()
        ),
        seconds: 0.0,
    })
}

/// Criterion: on a tiny conjugate-Gaussian instance the 100-seed average of
/// the DPS estimate lands within 10% relative L2 of the closed-form posterior
/// mean.
fn check_posterior_oracle() -> Result<CheckReport> {
    const TOL: f64 = 0.10;
    let cfg = StftConfig::new(4, 2, 4, 16e3)?;
    let sched = DiffusionSchedule::default();
    let k = vec![1.0, 0.6, -0.3];
    let signal_len = 6;
    let model = MeasurementModel::new(k.clone(), 0.0, cfg.clone(), signal_len)?;
    let a = densify_measurement(&model)?;

    // draw a measurement and scale it to max-abs 1 so the sampler's input
    // normalization is the identity
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let x_gen = DVector::from_fn(a.ncols(), |_, _| 0.3 * rng.sample::<f64, _>(StandardNormal));
    let mut y_vec = &a * &x_gen;
    for v in y_vec.iter_mut() {
        *v += 0.002 * rng.sample::<f64, _>(StandardNormal);
    }
    let peak = y_vec.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let y: Vec<f64> = y_vec.iter().map(|v| v / peak).collect();

    let prior_var_total = 0.09;
    let eta = 0.01;
    let post = gaussian_posterior(
        &DVector::zeros(a.ncols()),
        prior_var_total / 2.0,
        &a,
        eta,
        &DVector::from_column_slice(&y),
    )?;

    let zero_mean = Spectrogram::zeros(cfg.clone(), model.frames(), signal_len)?;
    let base = SamplerConfig {
        n_steps: 50,
        zeta_peak: 100.0,
        jacobian: JacobianMode::Exact,
        tweedie_mode: TweedieMode::Exact,
        init: InitMode::SigmaTGaussian,
        variant: Variant::Dps,
        ..SamplerConfig::default()
    };
    let seeds = 100;
    let mut mean = DVector::zeros(a.ncols());
    for seed in 0..seeds {
        let mut prior = GaussianPrior::scalar(zero_mean.clone(), prior_var_total, sched.sigma_min)?;
        let cfg_run = SamplerConfig { seed, ..base };
        let out = sampler::run(&y, &k, &mut prior, &cfg, &sched, &cfg_run)?;
        mean += spectrogram_to_vector(&out.estimate);
    }
    mean /= seeds as f64;
    let rel = (&mean - &post.mean).norm() / post.mean.norm();
    Ok(CheckReport {
        name: "posterior-oracle",
        passed: rel <= TOL,
        detail: format!("mean-estimate relative L2 error {rel:.4} over {seeds} seeds (tol {TOL})"),
        seconds: 0.0,
    })
}

/// Deterministic speech-shaped test signal: pitch-glided harmonics under a
/// syllabic envelope with a breath floor and one fricative burst.
pub fn speech_like(len: usize, sample_rate: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut phase = 0.0f64;
    let mut x = vec![0.0; len];
    for (n, sample) in x.iter_mut().enumerate() {
        let t = n as f64 / sample_rate;
        let f0 = 110.0 + 40.0 * (2.0 * std::f64::consts::PI * 1.3 * t).sin();
        phase += 2.0 * std::f64::consts::PI * f0 / sample_rate;
        let mut v = 0.0;
        for (h, a) in [
            (1.0, 1.0),
            (2.0, 0.6),
            (3.0, 0.45),
            (4.0, 0.3),
            (5.0, 0.2),
            (8.0, 0.1),
        ] {
            v += a * (h * phase + 0.7 * h).sin();
        }
        let env = 0.5 * (1.0 + (2.0 * std::f64::consts::PI * 2.7 * t - 0.5).sin()).powf(1.5) + 0.05;
        let noise: f64 = rng.sample(StandardNormal);
        *sample = v * env + 0.02 * noise;
    }
    // fricative burst over one eighth of the signal
    let start = (0.7 * len as f64) as usize;
    let burst = len / 8;
    for i in 0..burst.min(len.saturating_sub(start)) {
        let w = 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / burst.max(1) as f64).cos());
        let noise: f64 = rng.sample(StandardNormal);
        x[start + i] += 0.3 * w * noise;
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        for v in x.iter_mut() {
            *v *= 0.95 / peak;
        }
    }
    x
}

/// Shared pipeline runner for the delta-prior oracle: returns
/// (SI-SDR dB, residual-consistency dB).
fn delta_pipeline(snr_db: f64) -> Result<(f64, f64)> {
    let fs = 16_000.0;
    let len = 16_000;
    let stft_cfg = StftConfig::speech_16k();
    let sched = DiffusionSchedule::default();
    let clean = speech_like(len, fs, 11);
    let spec = RirSpec {
        t60: 0.5,
        drr_db: 0.0,
        length: 8000,
        direct_delay: 64,
        sample_rate: fs,
        seed: 5,
    };
    let k = rir::synth_rir(&spec)?;
    let y = rir::make_measurement(&clean, &k, snr_db, 99)?;
    let (sy, sk) = sampler::normalization_factors(&y, &k);
    let scaled: Vec<f64> = clean.iter().map(|v| v * sk / sy).collect();
    let target = stft(&scaled, &stft_cfg)?;
    let mut prior = DeltaPrior::new(target, 0.0)?;
    let cfg = SamplerConfig {
        seed: 1,
        ..SamplerConfig::default()
    };
    let out = sampler::run(&y, &k, &mut prior, &stft_cfg, &sched, &cfg)?;
    let si = metrics::si_sdr(&out.waveform, &clean)?;
    let rc = metrics::residual_consistency(&y, &k, &out.waveform)?;
    Ok((si, rc))
}

/// Criterion: delta prior at the clean spectrogram, synthetic T60 = 0.5 s RIR,
/// noiseless measurement, 1 s at 16 kHz: SI-SDR >= 30 dB and measurement
/// consistency <= -20 dB in under 30 s.
fn check_pipeline() -> Result<CheckReport> {
    const SI_MIN: f64 = 30.0;
    const RC_MAX: f64 = -20.0;
    const BUDGET: f64 = 30.0;
    let start = Instant::now();
    let (si, rc) = delta_pipeline(f64::INFINITY)?;
    let elapsed = start.elapsed().as_secs_f64();
    Ok(CheckReport {
        name: "pipeline",
        passed: si >= SI_MIN && rc <= RC_MAX && elapsed < BUDGET,
        detail: format!(
            "SI-SDR {si:.1} dB (>= {SI_MIN}), residual {rc:.1} dB (<= {RC_MAX}), {elapsed:.1}s (< {BUDGET}s)"
        ),
        seconds: 0.0,
    })
}

/// Criterion: schedule exactness at the pinned operating points.
fn check_schedule() -> Result<CheckReport> {
    let sched = DiffusionSchedule::default();
    let zp = sampler::zeta_prime(0.9, 2500.0, 0.9)?;
    let s0 = sched.noise_level(0.0)?;
    let s1 = sched.noise_level(1.0)?;
    let ok = zp == 2500.0 && s0 == 0.05 && s1 == 0.5;
    Ok(CheckReport {
        name: "schedule",
        passed: ok,
        detail: format!("zeta'(0.9) = {zp}, sigma(0) = {s0}, sigma(1) = {s1} (all exact)"),
        seconds: 0.0,
    })
}

/// Criterion: the delta-prior pipeline degrades gracefully under measurement
/// noise: SI-SDR monotone non-increasing over SNR {inf, 20, 10, 0} dB and the
/// noiseless-vs-20 dB gap under 3 dB.
fn check_robustness() -> Result<CheckReport> {
    const GAP_MAX: f64 = 3.0;
    let snrs = [f64::INFINITY, 20.0, 10.0, 0.0];
    let mut sis = Vec::new();
    for snr in snrs {
        sis.push(delta_pipeline(snr)?.0);
    }
    let monotone = sis.windows(2).all(|w| w[1] <= w[0] + 1e-9);
    let gap = sis[0] - sis[1];
    Ok(CheckReport {
        name: "robustness",
        passed: monotone && gap < GAP_MAX,
        detail: format!(
            "SI-SDR at inf/20/10/0 dB: {:.1}/{:.1}/{:.1}/{:.1} dB; gap {:.2} dB (< {GAP_MAX}), monotone {}",
            sis[0], sis[1], sis[2], sis[3], gap, monotone
        ),
        seconds: 0.0,
    })
}
