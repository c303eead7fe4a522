//! Pluggable score-function providers.
//!
//! A score here is the gradient of the log-density of the sigma-diffused
//! state in the complex convention matching [`crate::diffusion`]: per bin it
//! equals half the stacked (re, im) gradient, i.e. the conjugate Wirtinger
//! derivative. With that convention the reverse-ODE and Langevin formulas
//! apply verbatim, and for a Gaussian with total per-bin variance `s2` the
//! score is `(mu - x)/s2`.
//!
//! Analytic priors (Gaussian, mixture, delta) expose their closed-form
//! log-densities so tests can verify every score against finite differences.
//! Trained networks plug in through the wire protocol in [`wire`].

pub mod wire;

use crate::error::{Error, Result};
use crate::stft::Spectrogram;
use ndarray::Array2;
use num_complex::Complex64;

pub use wire::{serve, ExternalProvider, WireClient};

/// Source of score estimates `s(X, sigma)` and, optionally, score
/// Jacobian-vector products.
///
/// Implementations must be deterministic: identical inputs give identical
/// outputs. A provider handles one request at a time (`&mut self`); run
/// several providers for parallel sampling.
pub trait ScoreProvider {
    /// Whether [`ScoreProvider::jvp`] is available.
    fn supports_jvp(&self) -> bool {
        false
    }

    /// Score of the sigma-diffused density at `x`, same shape as `x`.
    fn score(&mut self, x: &Spectrogram, sigma: f64) -> Result<Spectrogram>;

    /// Jacobian-vector product of the score at `x`, applied to `direction`.
    fn jvp(
        &mut self,
        _x: &Spectrogram,
        _sigma: f64,
        _direction: &Spectrogram,
    ) -> Result<Spectrogram> {
        Err(Error::Capability(
            "provider does not support Jacobian-vector products".into(),
        ))
    }
}

/// Per-bin or uniform prior variance (total complex variance per bin).
#[derive(Debug, Clone)]
pub enum Variance {
    Scalar(f64),
    PerBin(Array2<f64>),
}

impl Variance {
    fn validate(&self, shape: (usize, usize)) -> Result<()> {
        match self {
            Variance::Scalar(v) => {
                if !v.is_finite() || *v <= 0.0 {
                    return Err(Error::domain("prior variance must be positive"));
                }
            }
            Variance::PerBin(m) => {
                if m.dim() != shape {
                    return Err(Error::contract(
                        "per-bin variance shape does not match the mean",
                    ));
                }
                if m.iter().any(|v| !v.is_finite() || *v <= 0.0) {
                    return Err(Error::domain(
                        "prior variance must be positive in every bin",
                    ));
                }
            }
        }
        Ok(())
    }

    fn at(&self, f: usize, t: usize) -> f64 {
        match self {
            Variance::Scalar(v) => *v,
            Variance::PerBin(m) => m[(f, t)],
        }
    }
}

fn perturbed_v(sigma: f64, sigma_min: f64) -> Result<f64> {
    if sigma < sigma_min {
        return Err(Error::domain(format!(
            "sigma {sigma} below the provider's sigma_min {sigma_min}"
        )));
    }
    Ok(sigma * sigma - sigma_min * sigma_min)
}

fn check_shape(x: &Spectrogram, reference: &Spectrogram) -> Result<()> {
    if !x.same_shape(reference) {
        return Err(Error::contract(format!(
            "state shape {:?} does not match the prior shape {:?}",
            x.data.dim(),
            reference.data.dim()
        )));
    }
    Ok(())
}

/// Exact score oracle for a complex Gaussian prior `N(mean, var)` diffused to
/// noise level sigma. `sigma_min` fixes the map from the conditioning level to
/// the accumulated variance: `v = sigma^2 - sigma_min^2` (pass the schedule's
/// value for the exact diffused score, or 0 for the plain `v = sigma^2`
/// convention).
#[derive(Debug, Clone)]
pub struct GaussianPrior {
    pub mean: Spectrogram,
    pub var: Variance,
    pub sigma_min: f64,
}

impl GaussianPrior {
    pub fn new(mean: Spectrogram, var: Variance, sigma_min: f64) -> Result<Self> {
        var.validate(mean.data.dim())?;
        if sigma_min < 0.0 {
            return Err(Error::domain("sigma_min must be nonnegative"));
        }
        Ok(GaussianPrior {
            mean,
            var,
            sigma_min,
        })
    }

    pub fn scalar(mean: Spectrogram, var: f64, sigma_min: f64) -> Result<Self> {
        GaussianPrior::new(mean, Variance::Scalar(var), sigma_min)
    }

    /// Log-density of the sigma-diffused prior at `x` (circular complex
    /// Gaussian per bin, total variance var + v).
    pub fn log_density(&self, x: &Spectrogram, sigma: f64) -> Result<f64> {
        check_shape(x, &self.mean)?;
        let v = perturbed_v(sigma, self.sigma_min)?;
        let mut acc = 0.0;
        for f in 0..x.freq_bins() {
            for t in 0..x.frames() {
                let s2 = self.var.at(f, t) + v;
                let d = x.data[(f, t)] - self.mean.data[(f, t)];
                acc -= d.norm_sqr() / s2 + (std::f64::consts::PI * s2).ln();
            }
        }
        Ok(acc)
    }
}

impl ScoreProvider for GaussianPrior {
    fn supports_jvp(&self) -> bool {
        true
    }

    fn score(&mut self, x: &Spectrogram, sigma: f64) -> Result<Spectrogram> {
        check_shape(x, &self.mean)?;
        let v = perturbed_v(sigma, self.sigma_min)?;
        let mut data = Array2::zeros(x.data.dim());
        for f in 0..x.freq_bins() {
            for t in 0..x.frames() {
                let s2 = self.var.at(f, t) + v;
                data[(f, t)] = (self.mean.data[(f, t)] - x.data[(f, t)]) / s2;
            }
        }
        Ok(x.with_data(data))
    }

    fn jvp(&mut self, x: &Spectrogram, sigma: f64, direction: &Spectrogram) -> Result<Spectrogram> {
        check_shape(direction, &self.mean)?;
        let v = perturbed_v(sigma, self.sigma_min)?;
        let mut data = Array2::zeros(direction.data.dim());
        for f in 0..x.freq_bins() {
            for t in 0..x.frames() {
                let s2 = self.var.at(f, t) + v;
                data[(f, t)] = -direction.data[(f, t)] / s2;
            }
        }
        Ok(direction.with_data(data))
    }
}

/// Exact score oracle for a Gaussian mixture prior (scalar variance per
/// component). Responsibilities are computed with log-sum-exp.
#[derive(Debug, Clone)]
pub struct GmmPrior {
    pub components: Vec<(f64, Spectrogram, f64)>,
    pub sigma_min: f64,
}

impl GmmPrior {
    pub fn new(components: Vec<(f64, Spectrogram, f64)>, sigma_min: f64) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::domain("mixture needs at least one component"));
        }
        let wsum: f64 = components.iter().map(|(w, _, _)| w).sum();
        if components
            .iter()
            .any(|(w, _, v)| !w.is_finite() || *w <= 0.0 || !v.is_finite() || *v <= 0.0)
        {
            return Err(Error::domain("weights and variances must be positive"));
        }
        if (wsum - 1.0).abs() > 1e-12 {
            return Err(Error::domain(format!("weights sum to {wsum}, expected 1")));
        }
        let shape = components[0].1.data.dim();
        if components.iter().any(|(_, m, _)| m.data.dim() != shape) {
            return Err(Error::contract("component means differ in shape"));
        }
        Ok(GmmPrior {
            components,
            sigma_min,
        })
    }

    /// Per-component log joint `log w_j + log N_j(x)` at diffusion variance v.
    fn log_joints(&self, x: &Spectrogram, v: f64) -> Vec<f64> {
        self.components
            .iter()
            .map(|(w, mean, var)| {
                let s2 = var + v;
                let mut acc = w.ln();
                for (xi, mi) in x.data.iter().zip(mean.data.iter()) {
                    acc -= (xi - mi).norm_sqr() / s2 + (std::f64::consts::PI * s2).ln();
                }
                acc
            })
            .collect()
    }

    pub fn log_density(&self, x: &Spectrogram, sigma: f64) -> Result<f64> {
        check_shape(x, &self.components[0].1)?;
        let v = perturbed_v(sigma, self.sigma_min)?;
        Ok(log_sum_exp(&self.log_joints(x, v)))
    }
}

fn log_sum_exp(vals: &[f64]) -> f64 {
    let m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + vals.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

impl ScoreProvider for GmmPrior {
    fn score(&mut self, x: &Spectrogram, sigma: f64) -> Result<Spectrogram> {
        check_shape(x, &self.components[0].1)?;
        let v = perturbed_v(sigma, self.sigma_min)?;
        let joints = self.log_joints(x, v);
        let lse = log_sum_exp(&joints);
        let mut data = Array2::<Complex64>::zeros(x.data.dim());
        for ((_, mean, var), lj) in self.components.iter().zip(&joints) {
            let resp = (lj - lse).exp();
            let s2 = var + v;
            for (d, (xi, mi)) in data.iter_mut().zip(x.data.iter().zip(mean.data.iter())) {
                *d += (mi - xi) * (resp / s2);
            }
        }
        Ok(x.with_data(data))
    }
}

/// Prior concentrated on a single known spectrogram; the diffused density is
/// `N(target, v)` and the score is `(target - x)/v`.
#[derive(Debug, Clone)]
pub struct DeltaPrior {
    pub target: Spectrogram,
    pub sigma_min: f64,
}

impl DeltaPrior {
    pub fn new(target: Spectrogram, sigma_min: f64) -> Result<Self> {
        if sigma_min < 0.0 {
            return Err(Error::domain("sigma_min must be nonnegative"));
        }
        Ok(DeltaPrior { target, sigma_min })
    }

    fn v(&self, sigma: f64) -> Result<f64> {
        let v = perturbed_v(sigma, self.sigma_min)?;
        if v <= 0.0 {
            return Err(Error::domain(
                "delta-prior score undefined at zero perturbation variance",
            ));
        }
        Ok(v)
    }

    pub fn log_density(&self, x: &Spectrogram, sigma: f64) -> Result<f64> {
        check_shape(x, &self.target)?;
        let v = self.v(sigma)?;
        let mut acc = 0.0;
        for (xi, ti) in x.data.iter().zip(self.target.data.iter()) {
            acc -= (xi - ti).norm_sqr() / v + (std::f64::consts::PI * v).ln();
        }
        Ok(acc)
    }
}

impl ScoreProvider for DeltaPrior {
    fn supports_jvp(&self) -> bool {
        true
    }

    fn score(&mut self, x: &Spectrogram, sigma: f64) -> Result<Spectrogram> {
        check_shape(x, &self.target)?;
        let v = self.v(sigma)?;
        Ok(x.with_data((&self.target.data - &x.data).mapv(|c| c / v)))
    }

    fn jvp(&mut self, x: &Spectrogram, sigma: f64, direction: &Spectrogram) -> Result<Spectrogram> {
        check_shape(direction, &self.target)?;
        let v = self.v(sigma)?;
        let _ = x;
        Ok(direction.with_data(direction.data.mapv(|c| -c / v)))
    }
}

/// Provider returning an all-zero score; turns the sampler into pure noise
/// dynamics. Used to ablate and to equate the two likelihood variants.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroScore;

impl ScoreProvider for ZeroScore {
    fn supports_jvp(&self) -> bool {
        true
    }

    fn score(&mut self, x: &Spectrogram, _sigma: f64) -> Result<Spectrogram> {
        Ok(x.with_data(Array2::zeros(x.data.dim())))
    }

    fn jvp(
        &mut self,
        x: &Spectrogram,
        _sigma: f64,
        direction: &Spectrogram,
    ) -> Result<Spectrogram> {
        let _ = x;
        Ok(direction.with_data(Array2::zeros(direction.data.dim())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stft::StftConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    const SMIN: f64 = 0.05;

    fn rand_spec(rng: &mut ChaCha8Rng) -> Spectrogram {
        let cfg = StftConfig::new(4, 2, 4, 16e3).unwrap();
        let data = Array2::from_shape_fn((3, 4), |_| {
            Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
        });
        Spectrogram::new(data, cfg, 6).unwrap()
    }

    /// Check score == half the finite-difference gradient of log_density.
    fn fd_score_check(
        mut log_density: impl FnMut(&Spectrogram) -> f64,
        x: &Spectrogram,
        score: &Spectrogram,
        tol: f64,
    ) {
        let h = 1e-5;
        for f in 0..x.freq_bins() {
            for t in 0..x.frames() {
                for im in [false, true] {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    if im {
                        xp.data[(f, t)].im += h;
                        xm.data[(f, t)].im -= h;
                    } else {
                        xp.data[(f, t)].re += h;
                        xm.data[(f, t)].re -= h;
                    }
                    let fd = (log_density(&xp) - log_density(&xm)) / (2.0 * h) / 2.0;
                    let an = if im {
                        score.data[(f, t)].im
                    } else {
                        score.data[(f, t)].re
                    };
                    let denom = fd.abs().max(1e-9);
                    assert!(
                        (an - fd).abs() / denom <= tol,
                        "bin ({f},{t},im={im}): {an} vs fd {fd}"
                    );
                }
            }
        }
    }

    #[test]
    fn gaussian_score_at_mean_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let mean = rand_spec(&mut rng);
        let mut p = GaussianPrior::scalar(mean.clone(), 0.7, SMIN).unwrap();
        let s = p.score(&mean, 0.3).unwrap();
        assert!(s.data.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn gaussian_score_single_bin_value() {
        // mu = 0, var 1, v = 1 (sigma 1, sigma_min 0): score = -x/2
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let x = rand_spec(&mut rng);
        let zero = x.with_data(Array2::zeros(x.data.dim()));
        let mut p = GaussianPrior::scalar(zero, 1.0, 0.0).unwrap();
        let s = p.score(&x, 1.0).unwrap();
        for (si, xi) in s.data.iter().zip(x.data.iter()) {
            assert!((si + xi / 2.0).norm() <= 1e-14);
        }
    }

    #[test]
    fn gaussian_score_matches_log_density_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let mean = rand_spec(&mut rng);
        let x = rand_spec(&mut rng);
        let p = GaussianPrior::scalar(mean, 0.4, SMIN).unwrap();
        let s = p.clone().score(&x, 0.3).unwrap();
        fd_score_check(|xx| p.log_density(xx, 0.3).unwrap(), &x, &s, 1e-6);
    }

    #[test]
    fn gaussian_per_bin_variance_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let mean = rand_spec(&mut rng);
        let x = rand_spec(&mut rng);
        let vmap = Array2::from_shape_fn(mean.data.dim(), |_| 0.2 + rng.random::<f64>());
        let p = GaussianPrior::new(mean, Variance::PerBin(vmap), SMIN).unwrap();
        let s = p.clone().score(&x, 0.25).unwrap();
        fd_score_check(|xx| p.log_density(xx, 0.25).unwrap(), &x, &s, 1e-6);
    }

    #[test]
    fn gmm_single_component_reduces_to_gaussian() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let mean = rand_spec(&mut rng);
        let x = rand_spec(&mut rng);
        let mut gauss = GaussianPrior::scalar(mean.clone(), 0.6, SMIN).unwrap();
        let mut gmm = GmmPrior::new(vec![(1.0, mean, 0.6)], SMIN).unwrap();
        let a = gauss.score(&x, 0.4).unwrap();
        let b = gmm.score(&x, 0.4).unwrap();
        for (u, v) in a.data.iter().zip(b.data.iter()) {
            assert!((u - v).norm() <= 1e-13 * (1.0 + u.norm()));
        }
    }

    #[test]
    fn gmm_far_inside_one_basin() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let m1 = rand_spec(&mut rng);
        // second component far away
        let m2 = m1.with_data(m1.data.mapv(|c| c + Complex64::new(40.0, -40.0)));
        let x = m1.with_data(m1.data.mapv(|c| c + Complex64::new(0.05, 0.02)));
        let mut gmm = GmmPrior::new(vec![(0.5, m1.clone(), 0.3), (0.5, m2, 0.3)], SMIN).unwrap();
        let mut near = GaussianPrior::scalar(m1, 0.3, SMIN).unwrap();
        let a = gmm.score(&x, 0.2).unwrap();
        let b = near.score(&x, 0.2).unwrap();
        for (u, v) in a.data.iter().zip(b.data.iter()) {
            assert!((u - v).norm() <= 1e-6 * (1.0 + v.norm()));
        }
    }

    #[test]
    fn gmm_score_matches_log_density_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let m1 = rand_spec(&mut rng);
        let m2 = rand_spec(&mut rng);
        let x = rand_spec(&mut rng);
        let p = GmmPrior::new(vec![(0.3, m1, 0.5), (0.7, m2, 0.9)], SMIN).unwrap();
        let s = p.clone().score(&x, 0.35).unwrap();
        fd_score_check(|xx| p.log_density(xx, 0.35).unwrap(), &x, &s, 1e-6);
        assert!(!p.supports_jvp());
    }

    #[test]
    fn gmm_weights_validated() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let m = rand_spec(&mut rng);
        assert!(GmmPrior::new(vec![(0.5, m.clone(), 0.1)], SMIN).is_err());
        assert!(GmmPrior::new(vec![(1.0, m, -0.1)], SMIN).is_err());
    }

    #[test]
    fn delta_score_behaviour() {
        let mut rng = ChaCha8Rng::seed_from_u64(38);
        let target = rand_spec(&mut rng);
        let mut p = DeltaPrior::new(target.clone(), SMIN).unwrap();
        let s = p.score(&target, 0.4).unwrap();
        assert!(s.data.iter().all(|c| c.norm() == 0.0));

        // v large -> score -> 0 pointwise
        let x = rand_spec(&mut rng);
        let far = DeltaPrior::new(target.clone(), 0.0)
            .unwrap()
            .score(&x, 1e4)
            .unwrap();
        assert!(far.data.iter().all(|c| c.norm() < 1e-6));

        // singular at sigma = sigma_min
        assert!(p.score(&x, SMIN).is_err());

        let p2 = DeltaPrior::new(target, SMIN).unwrap();
        let s = p2.clone().score(&x, 0.4).unwrap();
        fd_score_check(|xx| p2.log_density(xx, 0.4).unwrap(), &x, &s, 1e-6);
    }

    #[test]
    fn jvp_matches_directional_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(39);
        let mean = rand_spec(&mut rng);
        let x = rand_spec(&mut rng);
        let u = rand_spec(&mut rng);
        let sigma = 0.3;
        let h = 1e-6;

        let mut providers: Vec<Box<dyn ScoreProvider>> = vec![
            Box::new(GaussianPrior::scalar(mean.clone(), 0.5, SMIN).unwrap()),
            Box::new(DeltaPrior::new(mean.clone(), SMIN).unwrap()),
        ];
        for p in providers.iter_mut() {
            assert!(p.supports_jvp());
            let jv = p.jvp(&x, sigma, &u).unwrap();
            let xp = x.with_data(&x.data + &u.data * Complex64::new(h, 0.0));
            let xm = x.with_data(&x.data - &u.data * Complex64::new(h, 0.0));
            let sp = p.score(&xp, sigma).unwrap();
            let sm = p.score(&xm, sigma).unwrap();
            for (j, (a, b)) in jv.data.iter().zip(sp.data.iter().zip(sm.data.iter())) {
                let fd = (a - b) / (2.0 * h);
                assert!((j - fd).norm() <= 1e-5 * (1.0 + fd.norm()));
            }
        }
    }

    #[test]
    fn providers_are_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let mean = rand_spec(&mut rng);
        let x = rand_spec(&mut rng);
        let mut p = GaussianPrior::scalar(mean, 0.5, SMIN).unwrap();
        let a = p.score(&x, 0.3).unwrap();
        let b = p.score(&x, 0.3).unwrap();
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn zero_score_provider() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let x = rand_spec(&mut rng);
        let mut z = ZeroScore;
        assert!(z
            .score(&x, 0.5)
            .unwrap()
            .data
            .iter()
            .all(|c| c.norm() == 0.0));
        assert!(z
            .jvp(&x, 0.5, &x)
            .unwrap()
            .data
            .iter()
            .all(|c| c.norm() == 0.0));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mean = rand_spec(&mut rng);
        let cfg = StftConfig::new(4, 2, 4, 16e3).unwrap();
        let wrong = Spectrogram::new(Array2::zeros((3, 5)), cfg, 6).unwrap();
        let mut p = GaussianPrior::scalar(mean, 0.5, SMIN).unwrap();
        assert!(matches!(p.score(&wrong, 0.3), Err(Error::Contract(_))));
    }
}
