//! Closed-form and brute-force references for desk-scale verification.
//!
//! The measurement chain is materialized column-by-column into a dense matrix
//! over the real coordinates of the spectrogram (interleaved re/im, bin-major
//! in the order `(f * frames + t) * 2 + part`), and linear-Gaussian posteriors
//! are evaluated exactly. Everything here is deliberately capped to tiny
//! instances.

use crate::error::{Error, Result};
use crate::operators::{forward, MeasurementModel};
use crate::stft::Spectrogram;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Largest state dimension (real coordinates) accepted by the dense
/// posterior solver.
pub const MAX_POSTERIOR_DIM: usize = 64;

/// Largest bin count accepted by [`densify_measurement`].
pub const MAX_DENSIFY_BINS: usize = 256;

/// Exact posterior of a linear-Gaussian model with isotropic prior.
#[derive(Debug, Clone)]
pub struct GaussianPosterior {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

/// Posterior of `x ~ N(prior_mean, prior_var I)` given `y = A x + eta n`:
/// mean `mu + S A^T (A S A^T + eta^2 I)^{-1} (y - A mu)` and the matching
/// covariance.
pub fn gaussian_posterior(
    prior_mean: &DVector<f64>,
    prior_var: f64,
    a: &DMatrix<f64>,
    eta: f64,
    y: &DVector<f64>,
) -> Result<GaussianPosterior> {
    let (m, n) = a.shape();
    if prior_mean.len() != n || y.len() != m {
        return Err(Error::contract(format!(
            "dimension mismatch: A is {m}x{n}, mean {}, y {}",
            prior_mean.len(),
            y.len()
        )));
    }
    if n > MAX_POSTERIOR_DIM {
        return Err(Error::domain(format!(
            "state dimension {n} exceeds the dense-solver cap {MAX_POSTERIOR_DIM}"
        )));
    }
    if !eta.is_finite() || eta <= 0.0 {
        return Err(Error::domain("eta must be positive"));
    }
    if !prior_var.is_finite() || prior_var <= 0.0 {
        return Err(Error::domain("prior variance must be positive"));
    }
    // S = prior_var A A^T + eta^2 I, m x m
    let mut s = a * a.transpose() * prior_var;
    for i in 0..m {
        s[(i, i)] += eta * eta;
    }
    let chol = s
        .cholesky()
        .ok_or_else(|| Error::Numerical("innovation covariance is singular".into()))?;
    // K = prior_var A^T S^{-1}, n x m
    let k = (chol.solve(&(a * prior_var))).transpose();
    let mean = prior_mean + &k * (y - a * prior_mean);
    let mut covariance = DMatrix::identity(n, n) * prior_var;
    covariance -= &k * a * prior_var;
    Ok(GaussianPosterior { mean, covariance })
}

/// Flatten a spectrogram into its real-coordinate vector.
pub fn spectrogram_to_vector(spec: &Spectrogram) -> DVector<f64> {
    let (bins, frames) = spec.data.dim();
    let mut v = DVector::zeros(2 * bins * frames);
    for f in 0..bins {
        for t in 0..frames {
            let c = spec.data[(f, t)];
            v[(f * frames + t) * 2] = c.re;
            v[(f * frames + t) * 2 + 1] = c.im;
        }
    }
    v
}

/// Inverse of [`spectrogram_to_vector`], using `template` for shape/config.
pub fn vector_to_spectrogram(v: &DVector<f64>, template: &Spectrogram) -> Result<Spectrogram> {
    let (bins, frames) = template.data.dim();
    if v.len() != 2 * bins * frames {
        return Err(Error::contract(format!(
            "vector of {} entries does not fit a {bins}x{frames} spectrogram",
            v.len()
        )));
    }
    let mut out = template.clone();
    for f in 0..bins {
        for t in 0..frames {
            out.data[(f, t)] = Complex64::new(v[(f * frames + t) * 2], v[(f * frames + t) * 2 + 1]);
        }
    }
    Ok(out)
}

/// Materialize the measurement operator `A = conv . istft` column by column
/// by pushing coordinate basis spectrograms through the forward chain.
pub fn densify_measurement(model: &MeasurementModel) -> Result<DMatrix<f64>> {
    let bins = model.stft_cfg.freq_bins();
    let frames = model.frames();
    if bins * frames > MAX_DENSIFY_BINS {
        return Err(Error::domain(format!(
            "refusing to materialize {} bins (cap {MAX_DENSIFY_BINS})",
            bins * frames
        )));
    }
    let n = 2 * bins * frames;
    let m = model.output_len();
    let mut a = DMatrix::zeros(m, n);
    let mut basis = Spectrogram::zeros(model.stft_cfg.clone(), frames, model.signal_len)?;
    for f in 0..bins {
        for t in 0..frames {
            for part in 0..2 {
                basis.data[(f, t)] = if part == 0 {
                    Complex64::new(1.0, 0.0)
                } else {
                    Complex64::new(0.0, 1.0)
                };
                let col = forward(model, &basis)?;
                let j = (f * frames + t) * 2 + part;
                for (i, v) in col.iter().enumerate() {
                    a[(i, j)] = *v;
                }
                basis.data[(f, t)] = Complex64::default();
            }
        }
    }
    Ok(a)
}
