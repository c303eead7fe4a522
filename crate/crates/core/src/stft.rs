//! Short-time Fourier analysis/synthesis and the exact adjoint of synthesis.
//!
//! Analysis windows the zero-padded signal with a square-root Hann window and
//! transforms each frame; synthesis is weighted overlap-add with the same
//! window, divided by the accumulated squared window, which makes
//! `istft(stft(x)) = x` exact to rounding for any window/hop pair with
//! nonvanishing overlap (no COLA condition required).
//!
//! Framing rule: the signal is zero-padded by `window_len - hop` samples on
//! the left so every real sample carries the same accumulated window weight as
//! an interior sample of an infinite tiling, frames start at multiples of
//! `hop`, and the frame count is `ceil((len + window_len - hop) / hop)`.
//! Synthesis output is truncated back to the recorded original length.
//!
//! Gradients elsewhere in the crate treat a spectrogram as the real vector of
//! interleaved (re, im) pairs; [`istft_adjoint`] is the exact transpose of
//! [`istft`] under that convention, including the one-sided-spectrum weights
//! (interior bins count twice, DC/Nyquist once).

use crate::error::{Error, Result};
use crate::fft;
use ndarray::Array2;
use num_complex::Complex64;

/// Analysis/synthesis configuration. The window is square-root Hann
/// (periodic), zero-padded symmetrically inside the FFT buffer when
/// `fft_len > window_len`.
#[derive(Debug, Clone)]
pub struct StftConfig {
    pub window_len: usize,
    pub hop: usize,
    pub fft_len: usize,
    pub sample_rate: f64,
    window: Vec<f64>,
}

impl PartialEq for StftConfig {
    fn eq(&self, other: &Self) -> bool {
        self.window_len == other.window_len
            && self.hop == other.hop
            && self.fft_len == other.fft_len
            && self.sample_rate == other.sample_rate
    }
}

impl StftConfig {
    pub fn new(window_len: usize, hop: usize, fft_len: usize, sample_rate: f64) -> Result<Self> {
        if window_len == 0 || hop == 0 {
            return Err(Error::domain("window_len and hop must be positive"));
        }
        if hop > window_len {
            return Err(Error::domain(format!(
                "hop {hop} exceeds window_len {window_len}"
            )));
        }
        if fft_len < window_len {
            return Err(Error::domain(format!(
                "fft_len {fft_len} smaller than window_len {window_len}"
            )));
        }
        if !fft_len.is_multiple_of(2) {
            return Err(Error::domain("fft_len must be even"));
        }
        if !sample_rate.is_finite() || sample_rate <= 0.0 {
            return Err(Error::domain("sample_rate must be positive"));
        }
        let window = sqrt_hann(window_len);
        let cfg = StftConfig {
            window_len,
            hop,
            fft_len,
            sample_rate,
            window,
        };
        // overlap-add feasibility: the accumulated squared window must stay
        // bounded away from zero over the covered span
        let frames = cfg.num_frames(4 * window_len);
        let den = cfg.wola_weight(frames);
        let off = cfg.edge_pad();
        let span = &den[off..den.len() - off];
        if span.iter().cloned().fold(f64::INFINITY, f64::min) < 1e-6 {
            return Err(Error::domain(
                "window/hop pair gives vanishing overlap-add weight",
            ));
        }
        Ok(cfg)
    }

    /// 510-point sqrt-Hann window, 128-sample hop, 512-point FFT, 16 kHz.
    pub fn speech_16k() -> Self {
        StftConfig::new(510, 128, 512, 16_000.0).expect("valid built-in config")
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// One-sided bin count, `fft_len/2 + 1`.
    pub fn freq_bins(&self) -> usize {
        self.fft_len / 2 + 1
    }

    /// Zero padding applied on the left of the signal before framing.
    pub fn edge_pad(&self) -> usize {
        self.window_len - self.hop
    }

    /// Frame count for a signal of `len` samples.
    pub fn num_frames(&self, len: usize) -> usize {
        (len + self.window_len - self.hop).div_ceil(self.hop)
    }

    /// Accumulated squared synthesis window over `frames` frames.
    pub fn wola_weight(&self, frames: usize) -> Vec<f64> {
        let padded = (frames.max(1) - 1) * self.hop + self.window_len;
        let mut den = vec![0.0; padded];
        for t in 0..frames {
            let s = t * self.hop;
            for (j, w) in self.window.iter().enumerate() {
                den[s + j] += w * w;
            }
        }
        den
    }

    /// Relative spread of the accumulated squared window over interior
    /// positions. Zero only for hops that tile the window exactly.
    pub fn cola_ripple(&self) -> f64 {
        let frames = 8 * self.window_len.div_ceil(self.hop) + 8;
        let den = self.wola_weight(frames);
        let off = self.window_len; // clear of both edges
        let span = &den[off..den.len() - off];
        let min = span.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = span.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mean = span.iter().sum::<f64>() / span.len() as f64;
        (max - min) / mean
    }

    fn fft_offset(&self) -> usize {
        (self.fft_len - self.window_len) / 2
    }
}

fn sqrt_hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| {
            let h = 0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos());
            h.sqrt()
        })
        .collect()
}

/// Complex one-sided spectrogram of a real signal, `freq_bins x frames`,
/// with the analysis configuration and the pre-padding signal length attached
/// so synthesis can truncate exactly.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub data: Array2<Complex64>,
    pub config: StftConfig,
    pub original_len: usize,
}

impl Spectrogram {
    pub fn new(data: Array2<Complex64>, config: StftConfig, original_len: usize) -> Result<Self> {
        if data.nrows() != config.freq_bins() {
            return Err(Error::contract(format!(
                "spectrogram has {} rows, config expects {} bins",
                data.nrows(),
                config.freq_bins()
            )));
        }
        if original_len > data.ncols() * config.hop {
            return Err(Error::contract(format!(
                "original_len {} exceeds synthesis span of {} frames",
                original_len,
                data.ncols()
            )));
        }
        Ok(Spectrogram {
            data,
            config,
            original_len,
        })
    }

    pub fn zeros(config: StftConfig, frames: usize, original_len: usize) -> Result<Self> {
        let data = Array2::zeros((config.freq_bins(), frames));
        Spectrogram::new(data, config, original_len)
    }

    pub fn freq_bins(&self) -> usize {
        self.data.nrows()
    }

    pub fn frames(&self) -> usize {
        self.data.ncols()
    }

    pub fn same_shape(&self, other: &Spectrogram) -> bool {
        self.data.dim() == other.data.dim()
    }

    /// Spectrogram with identical config/shape and the given data.
    pub fn with_data(&self, data: Array2<Complex64>) -> Spectrogram {
        Spectrogram {
            data,
            config: self.config.clone(),
            original_len: self.original_len,
        }
    }
}

/// Real-pair inner product: sum of re*re + im*im over all bins.
pub fn dot_real(a: &Spectrogram, b: &Spectrogram) -> f64 {
    a.data
        .iter()
        .zip(b.data.iter())
        .map(|(x, y)| x.re * y.re + x.im * y.im)
        .sum()
}

/// Forward short-time Fourier transform.
pub fn stft(x: &[f64], cfg: &StftConfig) -> Result<Spectrogram> {
    if x.is_empty() {
        return Err(Error::domain("cannot transform an empty signal"));
    }
    let frames = cfg.num_frames(x.len());
    let off = cfg.edge_pad();
    let padded_len = (frames - 1) * cfg.hop + cfg.window_len;
    let mut padded = vec![0.0; padded_len];
    padded[off..off + x.len()].copy_from_slice(x);

    let bins = cfg.freq_bins();
    let woff = cfg.fft_offset();
    let mut data = Array2::zeros((bins, frames));
    let mut buf = vec![Complex64::default(); cfg.fft_len];
    for t in 0..frames {
        let s = t * cfg.hop;
        buf.fill(Complex64::default());
        for (j, w) in cfg.window.iter().enumerate() {
            buf[woff + j] = Complex64::new(padded[s + j] * w, 0.0);
        }
        fft::fft_in_place(&mut buf);
        for f in 0..bins {
            data[(f, t)] = buf[f];
        }
    }
    Spectrogram::new(data, cfg.clone(), x.len())
}

/// Weighted overlap-add synthesis, truncated to the recorded original length.
pub fn istft(spec: &Spectrogram) -> Result<Vec<f64>> {
    let cfg = &spec.config;
    let frames = spec.frames();
    if frames == 0 || spec.original_len == 0 {
        return Err(Error::contract("spectrogram has no frames or zero length"));
    }
    let padded_len = (frames - 1) * cfg.hop + cfg.window_len;
    let mut num = vec![0.0; padded_len];
    let woff = cfg.fft_offset();
    let nfft = cfg.fft_len;
    let bins = cfg.freq_bins();
    let mut buf = vec![Complex64::default(); nfft];
    for t in 0..frames {
        // rebuild the Hermitian spectrum from the one-sided bins; the real
        // part after the inverse transform is the synthesis frame, so the
        // imaginary parts of DC/Nyquist are annihilated by construction
        buf[0] = spec.data[(0, t)];
        buf[nfft / 2] = spec.data[(bins - 1, t)];
        for f in 1..bins - 1 {
            let v = spec.data[(f, t)];
            buf[f] = v;
            buf[nfft - f] = v.conj();
        }
        fft::ifft_in_place(&mut buf);
        let s = t * cfg.hop;
        let scale = 1.0 / nfft as f64;
        for (j, w) in cfg.window.iter().enumerate() {
            num[s + j] += buf[woff + j].re * scale * w;
        }
    }
    let den = cfg.wola_weight(frames);
    let off = cfg.edge_pad();
    let out = (0..spec.original_len)
        .map(|i| num[off + i] / den[off + i].max(1e-12))
        .collect();
    Ok(out)
}

/// Exact transpose of the [`istft`] linear map for a given frame count, under
/// the real inner products on both sides.
pub fn istft_adjoint(x: &[f64], cfg: &StftConfig, frames: usize) -> Result<Spectrogram> {
    if frames == 0 {
        return Err(Error::contract("frame count must be positive"));
    }
    if x.len() > frames * cfg.hop {
        return Err(Error::contract(format!(
            "signal of {} samples exceeds the synthesis span of {} frames",
            x.len(),
            frames
        )));
    }
    let padded_len = (frames - 1) * cfg.hop + cfg.window_len;
    let den = cfg.wola_weight(frames);
    let off = cfg.edge_pad();
    let mut full = vec![0.0; padded_len];
    for (i, v) in x.iter().enumerate() {
        full[off + i] = v / den[off + i].max(1e-12);
    }

    let bins = cfg.freq_bins();
    let woff = cfg.fft_offset();
    let nfft = cfg.fft_len;
    let mut data = Array2::zeros((bins, frames));
    let mut buf = vec![Complex64::default(); nfft];
    for t in 0..frames {
        let s = t * cfg.hop;
        buf.fill(Complex64::default());
        for (j, w) in cfg.window.iter().enumerate() {
            buf[woff + j] = Complex64::new(full[s + j] * w, 0.0);
        }
        fft::fft_in_place(&mut buf);
        // adjoint of "real part of the Hermitian inverse transform": interior
        // bins appear twice in the synthesis sum, DC/Nyquist once
        let base = 1.0 / nfft as f64;
        data[(0, t)] = buf[0] * base;
        data[(bins - 1, t)] = buf[nfft / 2] * base;
        for f in 1..bins - 1 {
            data[(f, t)] = buf[f] * (2.0 * base);
        }
    }
    Spectrogram::new(data, cfg.clone(), x.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn randn(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    fn rand_spec(cfg: &StftConfig, frames: usize, len: usize, rng: &mut ChaCha8Rng) -> Spectrogram {
        let data = Array2::from_shape_fn((cfg.freq_bins(), frames), |_| {
            Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
        });
        Spectrogram::new(data, cfg.clone(), len).unwrap()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a
            .iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let den: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        num / den.max(1e-300)
    }

    #[test]
    fn config_invariants() {
        assert!(StftConfig::new(0, 1, 4, 16e3).is_err());
        assert!(StftConfig::new(4, 8, 8, 16e3).is_err()); // hop > window
        assert!(StftConfig::new(8, 4, 4, 16e3).is_err()); // fft < window
        assert!(StftConfig::new(510, 128, 511, 16e3).is_err()); // odd fft
        let cfg = StftConfig::speech_16k();
        assert_eq!(cfg.freq_bins(), 257);
        assert_eq!(cfg.window().len(), 510);
    }

    #[test]
    fn cola_ripple_is_small_but_not_zero_for_speech_config() {
        // 128 does not tile the 510-point Hann period: the accumulated
        // window is constant only to ~1.3e-3, and synthesis divides it out.
        let r = StftConfig::speech_16k().cola_ripple();
        assert!(r > 1e-4 && r < 3e-3, "ripple {r}");
        // dyadic pair tiles exactly
        let r = StftConfig::new(4, 2, 4, 16e3).unwrap().cola_ripple();
        assert!(r < 1e-12, "ripple {r}");
    }

    #[test]
    fn zero_signal_gives_zero_spectrogram() {
        let cfg = StftConfig::speech_16k();
        let spec = stft(&vec![0.0; 1000], &cfg).unwrap();
        assert!(spec.data.iter().all(|c| c.norm() == 0.0));
        let back = istft(&spec).unwrap();
        assert!(back.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_signal_rejected() {
        assert!(matches!(
            stft(&[], &StftConfig::speech_16k()),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn sinusoid_at_bin_center_concentrates() {
        let cfg = StftConfig::speech_16k();
        // bin 32 of a 512-point FFT at 16 kHz -> 1000 Hz
        let f_bin = 32;
        let freq = f_bin as f64 * cfg.sample_rate / cfg.fft_len as f64;
        let x: Vec<f64> = (0..16000)
            .map(|n| (2.0 * std::f64::consts::PI * freq * n as f64 / cfg.sample_rate).sin())
            .collect();
        let spec = stft(&x, &cfg).unwrap();
        // interior frame, away from edge padding
        let t = spec.frames() / 2;
        let total: f64 = (0..spec.freq_bins())
            .map(|f| spec.data[(f, t)].norm_sqr())
            .sum();
        // energy within +-1 bin of the target (window mainlobe spans ~2 bins)
        let near: f64 = (f_bin - 1..=f_bin + 1)
            .map(|f| spec.data[(f, t)].norm_sqr())
            .sum();
        assert!(near / total >= 0.99, "concentration {}", near / total);
    }

    #[test]
    fn roundtrip_many_lengths() {
        let cfg = StftConfig::speech_16k();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for len in [1usize, 127, 128, 510, 511, 513, 16000] {
            let x = randn(len, &mut rng);
            let back = istft(&stft(&x, &cfg).unwrap()).unwrap();
            assert_eq!(back.len(), len);
            assert!(rel_err(&back, &x) <= 1e-10, "len {len}");
        }
    }

    #[test]
    fn linearity_of_both_transforms() {
        let cfg = StftConfig::new(16, 4, 16, 16e3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (a, b) = (1.7, -0.4);
        let x1 = randn(100, &mut rng);
        let x2 = randn(100, &mut rng);
        let mix: Vec<f64> = x1.iter().zip(&x2).map(|(u, v)| a * u + b * v).collect();
        let s1 = stft(&x1, &cfg).unwrap();
        let s2 = stft(&x2, &cfg).unwrap();
        let sm = stft(&mix, &cfg).unwrap();
        for ((u, v), w) in s1.data.iter().zip(s2.data.iter()).zip(sm.data.iter()) {
            assert!((a * u + b * v - w).norm() <= 1e-12 * (1.0 + w.norm()));
        }

        let frames = s1.frames();
        let z1 = rand_spec(&cfg, frames, 100, &mut rng);
        let z2 = rand_spec(&cfg, frames, 100, &mut rng);
        let y1 = istft(&z1).unwrap();
        let y2 = istft(&z2).unwrap();
        let zmix =
            z1.with_data(&z1.data * Complex64::new(a, 0.0) + &z2.data * Complex64::new(b, 0.0));
        let ymix = istft(&zmix).unwrap();
        for i in 0..100 {
            let expect = a * y1[i] + b * y2[i];
            assert!((ymix[i] - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
        }
    }

    #[test]
    fn adjoint_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (w, h, n, len) in [(4, 2, 4, 6), (16, 4, 16, 50), (510, 128, 512, 700)] {
            let cfg = StftConfig::new(w, h, n, 16e3).unwrap();
            let frames = cfg.num_frames(len);
            for _ in 0..20 {
                let spec = rand_spec(&cfg, frames, len, &mut rng);
                let x = randn(len, &mut rng);
                let lhs: f64 = istft(&spec)
                    .unwrap()
                    .iter()
                    .zip(&x)
                    .map(|(u, v)| u * v)
                    .sum();
                let adj = istft_adjoint(&x, &cfg, frames).unwrap();
                let rhs = dot_real(&spec, &adj);
                assert!(
                    (lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()).max(1e-30),
                    "cfg ({w},{h},{n}): {lhs} vs {rhs}"
                );
            }
        }
    }

    #[test]
    fn adjoint_of_zero_is_zero() {
        let cfg = StftConfig::new(4, 2, 4, 16e3).unwrap();
        let adj = istft_adjoint(&[0.0; 6], &cfg, 4).unwrap();
        assert!(adj.data.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn adjoint_length_mismatch_rejected() {
        let cfg = StftConfig::new(4, 2, 4, 16e3).unwrap();
        // 4 frames span at most 8 samples
        assert!(matches!(
            istft_adjoint(&[0.0; 9], &cfg, 4),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn energy_ratio_nearly_constant() {
        // tight frame up to the WOLA ripple; measured constant for the
        // speech config is fft_len * mean accumulated window ~ 1020
        let cfg = StftConfig::speech_16k();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut ratios = Vec::new();
        for _ in 0..6 {
            let x = randn(16000, &mut rng);
            let spec = stft(&x, &cfg).unwrap();
            let mut e = 0.0;
            for f in 0..spec.freq_bins() {
                let wgt = if f == 0 || f == spec.freq_bins() - 1 {
                    1.0
                } else {
                    2.0
                };
                for t in 0..spec.frames() {
                    e += wgt * spec.data[(f, t)].norm_sqr();
                }
            }
            let ex: f64 = x.iter().map(|v| v * v).sum();
            ratios.push(e / ex);
        }
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        assert!((mean - 1020.0).abs() < 1.0, "mean ratio {mean}");
        for r in &ratios {
            assert!((r - mean).abs() / mean <= 5e-5, "ratio {r} vs mean {mean}");
        }
    }
}
