//! Linear measurement operator `A = (convolve with k) . istft`, its adjoint,
//! and the measurement-loss gradients for both likelihood variants.
//!
//! Gradients are with respect to the spectrogram treated as interleaved
//! (re, im) real pairs and are exact transposes of the forward chain, so they
//! match central finite differences to rounding.

use crate::diffusion::{DiffusionSchedule, TweedieMode};
use crate::error::{Error, Result};
use crate::fft;
use crate::score::ScoreProvider;
use crate::stft::{istft, istft_adjoint, Spectrogram, StftConfig};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Whether the DPS likelihood gradient is propagated through the score
/// (via a Jacobian-vector product) or the score is treated as a constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JacobianMode {
    Exact,
    Identity,
}

/// Time-domain measurement model `y = k * x + n` with the clean signal
/// parameterized by its spectrogram.
#[derive(Debug, Clone)]
pub struct MeasurementModel {
    pub rir: Vec<f64>,
    pub noise_level: f64,
    pub stft_cfg: StftConfig,
    pub signal_len: usize,
}

impl MeasurementModel {
    pub fn new(
        rir: Vec<f64>,
        noise_level: f64,
        stft_cfg: StftConfig,
        signal_len: usize,
    ) -> Result<Self> {
        if rir.is_empty() {
            return Err(Error::domain("RIR must have at least one tap"));
        }
        if noise_level < 0.0 {
            return Err(Error::domain("noise level must be nonnegative"));
        }
        if signal_len == 0 {
            return Err(Error::domain("signal length must be positive"));
        }
        Ok(MeasurementModel {
            rir,
            noise_level,
            stft_cfg,
            signal_len,
        })
    }

    /// Length of the forward-operator output, `signal_len + K - 1`.
    pub fn output_len(&self) -> usize {
        self.signal_len + self.rir.len() - 1
    }

    /// Frame count of spectrograms this model operates on.
    pub fn frames(&self) -> usize {
        self.stft_cfg.num_frames(self.signal_len)
    }

    fn check_state(&self, x: &Spectrogram) -> Result<()> {
        if x.config != self.stft_cfg
            || x.frames() != self.frames()
            || x.original_len != self.signal_len
        {
            return Err(Error::contract(format!(
                "state ({} bins x {} frames, len {}) inconsistent with model ({} frames, len {})",
                x.freq_bins(),
                x.frames(),
                x.original_len,
                self.frames(),
                self.signal_len
            )));
        }
        Ok(())
    }

    fn check_measurement(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.output_len() {
            return Err(Error::contract(format!(
                "measurement length {} != signal_len + K - 1 = {}",
                y.len(),
                self.output_len()
            )));
        }
        Ok(())
    }
}

/// Full linear convolution via FFT, length `len(x) + len(k) - 1`.
pub fn convolve(k: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    if k.is_empty() || x.is_empty() {
        return Err(Error::domain("convolution inputs must be nonempty"));
    }
    let out_len = k.len() + x.len() - 1;
    let n = fft::next_pow2(out_len);
    let mut a = vec![Complex64::default(); n];
    let mut b = vec![Complex64::default(); n];
    for (dst, src) in a.iter_mut().zip(k.iter()) {
        dst.re = *src;
    }
    for (dst, src) in b.iter_mut().zip(x.iter()) {
        dst.re = *src;
    }
    fft::fft_in_place(&mut a);
    fft::fft_in_place(&mut b);
    for (u, v) in a.iter_mut().zip(b.iter()) {
        *u *= v;
    }
    fft::ifft_in_place(&mut a);
    let scale = 1.0 / n as f64;
    Ok(a[..out_len].iter().map(|c| c.re * scale).collect())
}

/// Adjoint of `x -> k * x`: correlation of the residual with `k`, truncated to
/// the domain length `len(r) - len(k) + 1`.
pub fn convolve_adjoint(k: &[f64], r: &[f64]) -> Result<Vec<f64>> {
    if k.is_empty() || r.is_empty() {
        return Err(Error::domain("adjoint inputs must be nonempty"));
    }
    if r.len() < k.len() {
        return Err(Error::contract(format!(
            "residual of {} samples shorter than kernel of {}",
            r.len(),
            k.len()
        )));
    }
    let domain_len = r.len() - k.len() + 1;
    let rev: Vec<f64> = k.iter().rev().cloned().collect();
    let full = convolve(&rev, r)?;
    Ok(full[k.len() - 1..k.len() - 1 + domain_len].to_vec())
}

/// Forward measurement operator without noise: `k * istft(X)`.
pub fn forward(model: &MeasurementModel, x: &Spectrogram) -> Result<Vec<f64>> {
    model.check_state(x)?;
    convolve(&model.rir, &istft(x)?)
}

/// Squared-residual loss at a spectrogram and its exact gradient:
/// `-2 A^T (y - A X)` in the real-pair convention.
pub(crate) fn data_loss_grad(
    model: &MeasurementModel,
    x: &Spectrogram,
    y: &[f64],
) -> Result<(f64, Spectrogram)> {
    let pred = forward(model, x)?;
    let resid: Vec<f64> = y.iter().zip(&pred).map(|(a, b)| a - b).collect();
    let loss: f64 = resid.iter().map(|v| v * v).sum();
    let corr = convolve_adjoint(&model.rir, &resid)?;
    let mut grad = istft_adjoint(&corr, &model.stft_cfg, model.frames())?;
    grad.data.mapv_inplace(|c| c * -2.0);
    grad.original_len = model.signal_len;
    Ok((loss, grad))
}

/// State-approximation likelihood: loss and gradient of
/// `|| y - k * istft(X_tau) ||^2` with respect to `X_tau`.
pub fn loss_and_grad_state(
    model: &MeasurementModel,
    x_tau: &Spectrogram,
    y: &[f64],
) -> Result<(f64, Spectrogram)> {
    model.check_measurement(y)?;
    data_loss_grad(model, x_tau, y)
}

/// Posterior-mean likelihood: loss and gradient of
/// `|| y - k * istft(Xhat_0) ||^2` where `Xhat_0` is the Tweedie denoised
/// state. With `JacobianMode::Exact` the gradient propagates through the
/// score via the provider's Jacobian-vector product (score Jacobians of true
/// log-densities are symmetric, so the JVP doubles as the transpose).
#[allow(clippy::too_many_arguments)]
pub fn loss_and_grad_dps(
    model: &MeasurementModel,
    sched: &DiffusionSchedule,
    x_tau: &Spectrogram,
    tau: f64,
    provider: &mut dyn ScoreProvider,
    y: &[f64],
    jacobian: JacobianMode,
    tweedie: TweedieMode,
) -> Result<(f64, Spectrogram)> {
    model.check_measurement(y)?;
    model.check_state(x_tau)?;
    if jacobian == JacobianMode::Exact && !provider.supports_jvp() {
        return Err(Error::Capability(
            "exact jacobian requested but the provider does not support JVPs".into(),
        ));
    }
    let sigma = sched.noise_level(tau)?;
    let score = provider.score(x_tau, sigma)?;
    let x0_hat = sched.tweedie_denoise(x_tau, tau, &score, tweedie)?;
    let (loss, g0) = data_loss_grad(model, &x0_hat, y)?;
    let grad = match jacobian {
        JacobianMode::Identity => g0,
        JacobianMode::Exact => {
            let c = sched.tweedie_scale(tau, tweedie)?;
            let jg = provider.jvp(x_tau, sigma, &g0)?;
            g0.with_data(&g0.data + &jg.data * Complex64::new(c, 0.0))
        }
    };
    Ok((loss, grad))
}
