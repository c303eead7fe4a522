//! Synthetic room impulse responses with controllable decay time and
//! direct-to-reverberant ratio, plus measurement synthesis and decay
//! verification.
//!
//! The generator models the late field only: a unit direct tap followed by
//! white Gaussian noise under an exponential envelope whose energy decays
//! 60 dB over `t60`. DRR is defined as direct-tap energy against everything
//! else (no early-reflection window). Real RIRs can be loaded from file
//! through the CLI instead.

use crate::error::{Error, Result};
use crate::operators::convolve;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Generative parameters of a synthetic RIR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RirSpec {
    pub t60: f64,
    pub drr_db: f64,
    pub length: usize,
    pub direct_delay: usize,
    pub sample_rate: f64,
    pub seed: u64,
}

impl RirSpec {
    fn validate(&self) -> Result<()> {
        if !self.t60.is_finite() || self.t60 <= 0.0 {
            return Err(Error::domain("t60 must be positive"));
        }
        if !self.sample_rate.is_finite() || self.sample_rate <= 0.0 {
            return Err(Error::domain("sample_rate must be positive"));
        }
        if self.length < self.direct_delay + 2 {
            return Err(Error::domain(
                "length must leave at least one tail sample after the direct tap",
            ));
        }
        if !self.drr_db.is_finite() {
            return Err(Error::domain("drr_db must be finite"));
        }
        Ok(())
    }
}

/// Decay rate (per second) of the amplitude envelope for a given t60:
/// energy falls 60 dB when exp(-2 a t) = 1e-6.
fn envelope_rate(t60: f64) -> f64 {
    3.0 * std::f64::consts::LN_10 / t60
}

/// Synthesize a RIR: unit direct impulse plus an exponentially decaying
/// Gaussian tail scaled to the requested DRR, peak-normalized.
pub fn synth_rir(spec: &RirSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut k = vec![0.0; spec.length];
    k[spec.direct_delay] = 1.0;
    let rate = envelope_rate(spec.t60);
    let mut tail_energy = 0.0;
    for (off, tap) in k.iter_mut().skip(spec.direct_delay + 1).enumerate() {
        let t = (off + 1) as f64 / spec.sample_rate;
        let w: f64 = rng.sample(StandardNormal);
        let v = w * (-rate * t).exp();
        *tap = v;
        tail_energy += v * v;
    }
    if tail_energy <= 0.0 {
        return Err(Error::domain("degenerate tail"));
    }
    // direct energy is 1; scale the tail to hit the DRR target exactly
    let gain = (10f64.powf(-spec.drr_db / 10.0) / tail_energy).sqrt();
    for v in k.iter_mut().skip(spec.direct_delay + 1) {
        *v *= gain;
    }
    let peak = k.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for v in k.iter_mut() {
        *v /= peak;
    }
    Ok(k)
}

/// Reverberation time via Schroeder backward integration: least-squares line
/// through the -5..-25 dB segment of the energy-decay curve, extrapolated
/// to -60 dB.
pub fn measure_t60(k: &[f64], sample_rate: f64) -> Result<f64> {
    if k.is_empty() {
        return Err(Error::domain("empty impulse response"));
    }
    let mut energy = vec![0.0; k.len()];
    let mut acc = 0.0;
    for (i, v) in k.iter().enumerate().rev() {
        acc += v * v;
        energy[i] = acc;
    }
    let total = energy[0];
    if total <= 0.0 {
        return Err(Error::domain("impulse response has no energy"));
    }
    let db: Vec<f64> = energy
        .iter()
        .map(|e| 10.0 * (e / total).max(1e-300).log10())
        .collect();
    let i5 = db
        .iter()
        .position(|&d| d <= -5.0)
        .ok_or_else(|| Error::Estimation("decay never reaches -5 dB".into()))?;
    let i25 = db
        .iter()
        .position(|&d| d <= -25.0)
        .ok_or_else(|| Error::Estimation("decay never reaches -25 dB".into()))?;
    if i25 <= i5 + 1 {
        return Err(Error::Estimation("no decaying segment to fit".into()));
    }
    // least-squares line db = a + b * t over the segment
    let n = (i25 - i5 + 1) as f64;
    let (mut st, mut sd, mut stt, mut std_) = (0.0, 0.0, 0.0, 0.0);
    for (i, d) in db.iter().enumerate().take(i25 + 1).skip(i5) {
        let t = i as f64 / sample_rate;
        st += t;
        sd += d;
        stt += t * t;
        std_ += t * d;
    }
    let denom = n * stt - st * st;
    if denom.abs() < 1e-30 {
        return Err(Error::Estimation("degenerate fit segment".into()));
    }
    let slope = (n * std_ - st * sd) / denom;
    if slope >= 0.0 {
        return Err(Error::Estimation("energy curve does not decay".into()));
    }
    Ok(-60.0 / slope)
}

/// Direct-to-reverberant ratio in dB, with the direct path taken as the
/// single largest-magnitude tap.
pub fn measure_drr(k: &[f64]) -> Result<f64> {
    if k.is_empty() {
        return Err(Error::domain("empty impulse response"));
    }
    let peak = k
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(i, _)| i)
        .unwrap();
    let direct = k[peak] * k[peak];
    let rest: f64 = k
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != peak)
        .map(|(_, v)| v * v)
        .sum();
    if rest <= 0.0 {
        return Err(Error::Estimation("no reverberant tail".into()));
    }
    Ok(10.0 * (direct / rest).log10())
}

/// Reverberant measurement `y = k * x + n` at an exact signal-to-noise ratio
/// (the realized noise vector is rescaled so the ratio holds to rounding);
/// `snr_db = +inf` disables the noise.
pub fn make_measurement(x: &[f64], k: &[f64], snr_db: f64, seed: u64) -> Result<Vec<f64>> {
    let clean = convolve(k, x)?;
    if snr_db.is_infinite() && snr_db > 0.0 {
        return Ok(clean);
    }
    let signal_energy: f64 = clean.iter().map(|v| v * v).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise: Vec<f64> = (0..clean.len())
        .map(|_| rng.sample(StandardNormal))
        .collect();
    let noise_energy: f64 = noise.iter().map(|v| v * v).sum();
    let target = signal_energy * 10f64.powf(-snr_db / 10.0);
    let gain = if noise_energy > 0.0 {
        (target / noise_energy).sqrt()
    } else {
        0.0
    };
    for v in noise.iter_mut() {
        *v *= gain;
    }
    Ok(clean.iter().zip(&noise).map(|(a, b)| a + b).collect())
}
