//! Variance-Exploding diffusion schedule: coefficients, perturbation kernel
//! and Tweedie denoising.
//!
//! Complex-noise convention used throughout the crate: a per-bin complex
//! variance of `v` means `v/2` in each of the real and imaginary parts. Score
//! providers follow the matching convention (the score is half the stacked
//! real/imag gradient of the log-density), which makes the reverse ODE and
//! Langevin corrector formulas hold verbatim with these kernels.

use crate::error::{Error, Result};
use crate::stft::Spectrogram;
use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Which variance scales the score in the Tweedie posterior-mean step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TweedieMode {
    /// Scale by the conditioning level squared, sigma(tau)^2.
    SigmaSq,
    /// Scale by the exact accumulated perturbation variance,
    /// v(tau) = sigma(tau)^2 - sigma_min^2.
    Exact,
}

/// Geometric noise schedule `sigma(tau) = sigma_min (sigma_max/sigma_min)^tau`
/// on `tau in [0, t_final]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub t_final: f64,
}

impl Default for DiffusionSchedule {
    fn default() -> Self {
        DiffusionSchedule {
            sigma_min: 0.05,
            sigma_max: 0.5,
            t_final: 1.0,
        }
    }
}

impl DiffusionSchedule {
    pub fn new(sigma_min: f64, sigma_max: f64, t_final: f64) -> Result<Self> {
        if !sigma_min.is_finite() || sigma_min <= 0.0 || sigma_min >= sigma_max {
            return Err(Error::domain(format!(
                "need 0 < sigma_min < sigma_max, got {sigma_min} and {sigma_max}"
            )));
        }
        if !t_final.is_finite() || t_final <= 0.0 {
            return Err(Error::domain("t_final must be positive"));
        }
        Ok(DiffusionSchedule {
            sigma_min,
            sigma_max,
            t_final,
        })
    }

    fn check_tau(&self, tau: f64) -> Result<()> {
        if !(0.0..=self.t_final).contains(&tau) {
            return Err(Error::domain(format!(
                "tau {tau} outside [0, {}]",
                self.t_final
            )));
        }
        Ok(())
    }

    fn ratio(&self) -> f64 {
        self.sigma_max / self.sigma_min
    }

    /// Diffusion coefficient g(tau) of the forward process.
    pub fn diffusion_coefficient(&self, tau: f64) -> Result<f64> {
        self.check_tau(tau)?;
        let r = self.ratio();
        Ok(self.sigma_min * r.powf(tau) * (2.0 * r.ln()).sqrt())
    }

    /// Noise level sigma(tau) fed to score providers as the conditioner.
    pub fn noise_level(&self, tau: f64) -> Result<f64> {
        self.check_tau(tau)?;
        Ok(self.sigma_min * self.ratio().powf(tau))
    }

    /// Variance accumulated by the forward process up to `tau`,
    /// the closed form of the integral of g^2.
    pub fn perturbation_variance(&self, tau: f64) -> Result<f64> {
        let s = self.noise_level(tau)?;
        Ok(s * s - self.sigma_min * self.sigma_min)
    }

    /// Draw `x0` diffused to time `tau`: x0 + sqrt(v(tau)) * Z with Z circular
    /// complex standard normal per bin.
    pub fn perturb_sample<R: Rng>(
        &self,
        x0: &Spectrogram,
        tau: f64,
        rng: &mut R,
    ) -> Result<Spectrogram> {
        let v = self.perturbation_variance(tau)?;
        let noise = complex_noise(x0.freq_bins(), x0.frames(), v, rng);
        Ok(x0.with_data(&x0.data + &noise))
    }

    /// Posterior-mean denoiser `x + c * score` where `c` is sigma(tau)^2 or
    /// the exact perturbation variance depending on `mode`.
    pub fn tweedie_denoise(
        &self,
        x: &Spectrogram,
        tau: f64,
        score: &Spectrogram,
        mode: TweedieMode,
    ) -> Result<Spectrogram> {
        if !x.same_shape(score) {
            return Err(Error::contract(format!(
                "score shape {:?} does not match state shape {:?}",
                score.data.dim(),
                x.data.dim()
            )));
        }
        let c = self.tweedie_scale(tau, mode)?;
        Ok(x.with_data(&x.data + &score.data * Complex64::new(c, 0.0)))
    }

    /// The scale applied to the score inside [`Self::tweedie_denoise`].
    pub fn tweedie_scale(&self, tau: f64, mode: TweedieMode) -> Result<f64> {
        Ok(match mode {
            TweedieMode::SigmaSq => {
                let s = self.noise_level(tau)?;
                s * s
            }
            TweedieMode::Exact => self.perturbation_variance(tau)?,
        })
    }
}

/// Circular complex Gaussian noise with total per-bin variance `total_var`
/// (each of re/im gets half).
pub fn complex_noise<R: Rng>(
    bins: usize,
    frames: usize,
    total_var: f64,
    rng: &mut R,
) -> Array2<Complex64> {
    let s = (total_var / 2.0).max(0.0).sqrt();
    Array2::from_shape_fn((bins, frames), |_| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(s * re, s * im)
    })
}
