//! Surrogate instrumental metrics: scale-invariant SDR, log-spectral
//! distance, and measurement consistency. Infinities are capped at +-100 dB
//! so reports stay finite in CSV output.

use crate::error::{Error, Result};
use crate::operators::convolve;
use crate::stft::{stft, StftConfig};
use serde::{Deserialize, Serialize};

pub const DB_CAP: f64 = 100.0;
const LSD_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub si_sdr_db: f64,
    pub lsd_db: f64,
    pub residual_db: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn cap_db(x: f64) -> f64 {
    x.clamp(-DB_CAP, DB_CAP)
}

/// Scale-invariant signal-to-distortion ratio in dB: the estimate is
/// projected onto the reference and the projected-to-residual energy ratio is
/// reported, so any nonzero rescaling of the estimate gives the same value.
pub fn si_sdr(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::contract(format!(
            "length mismatch: estimate {}, reference {}",
            estimate.len(),
            reference.len()
        )));
    }
    let ref_energy = dot(reference, reference);
    if ref_energy <= 0.0 {
        return Err(Error::domain("reference signal is identically zero"));
    }
    let alpha = dot(estimate, reference) / ref_energy;
    let target_energy = alpha * alpha * ref_energy;
    let noise_energy: f64 = estimate
        .iter()
        .zip(reference)
        .map(|(e, r)| {
            let d = e - alpha * r;
            d * d
        })
        .sum();
    if noise_energy <= 0.0 {
        return Ok(DB_CAP);
    }
    if target_energy <= 0.0 {
        return Ok(-DB_CAP);
    }
    Ok(cap_db(10.0 * (target_energy / noise_energy).log10()))
}

/// RMS log-spectral distance in dB between the magnitude spectrograms of the
/// two signals, with a small floor inside the logarithms.
pub fn log_spectral_distance(estimate: &[f64], reference: &[f64], cfg: &StftConfig) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::contract(format!(
            "length mismatch: estimate {}, reference {}",
            estimate.len(),
            reference.len()
        )));
    }
    let se = stft(estimate, cfg)?;
    let sr = stft(reference, cfg)?;
    let mut acc = 0.0;
    let mut count = 0usize;
    for (a, b) in se.data.iter().zip(sr.data.iter()) {
        let d = 20.0 * ((a.norm() + LSD_EPS).log10() - (b.norm() + LSD_EPS).log10());
        acc += d * d;
        count += 1;
    }
    Ok((acc / count as f64).sqrt())
}

/// Measurement consistency `20 log10(||y - k * xhat|| / ||y||)` in dB
/// (negative when the estimate explains any of the measurement).
pub fn residual_consistency(y: &[f64], k: &[f64], estimate: &[f64]) -> Result<f64> {
    let pred = convolve(k, estimate)?;
    if pred.len() != y.len() {
        return Err(Error::contract(format!(
            "k * estimate has {} samples, measurement has {}",
            pred.len(),
            y.len()
        )));
    }
    let resid: f64 = y
        .iter()
        .zip(&pred)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let ynorm: f64 = dot(y, y).sqrt();
    if resid <= 0.0 {
        return Ok(-DB_CAP);
    }
    if ynorm <= 0.0 {
        return Ok(DB_CAP);
    }
    Ok(cap_db(20.0 * (resid / ynorm).log10()))
}

/// Full report against a reference signal.
pub fn report(
    y: &[f64],
    k: &[f64],
    estimate: &[f64],
    reference: &[f64],
    cfg: &StftConfig,
) -> Result<MetricReport> {
    Ok(MetricReport {
        si_sdr_db: si_sdr(estimate, reference)?,
        lsd_db: log_spectral_distance(estimate, reference, cfg)?,
        residual_db: residual_consistency(y, k, estimate)?,
    })
}
