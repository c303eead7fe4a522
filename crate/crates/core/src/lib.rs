//! Score-guided diffusion sampling for informed single-channel dereverberation.
//!
//! The engine recovers an anechoic signal from a reverberant, noisy measurement
//! `y = k * x + n` with a known room impulse response `k`. Sampling runs a
//! predictor–corrector scheme over the reverse probability-flow ODE of a
//! Variance-Exploding diffusion process in the complex STFT domain, steered by
//! a measurement-consistency gradient. Two likelihood approximations are
//! provided: the posterior-mean form (DPS, gradient at the Tweedie denoised
//! state) and the state form (StateDPS, gradient at the raw state).
//!
//! Score functions come from pluggable [`score::ScoreProvider`]s: exact
//! analytic priors (Gaussian, mixture, delta) for verification, or an external
//! process speaking a small binary protocol over stdin/stdout.

pub mod diffusion;
pub mod error;
pub mod fft;
pub mod metrics;
pub mod operators;
pub mod oracle;
pub mod rir;
pub mod sampler;
pub mod score;
pub mod stft;
pub mod verify;

pub use diffusion::{DiffusionSchedule, TweedieMode};
pub use error::{Error, Result};
pub use operators::{JacobianMode, MeasurementModel};
pub use rir::RirSpec;
pub use sampler::{InitMode, SampleResult, SamplerConfig, Variant};
pub use score::ScoreProvider;
pub use stft::{Spectrogram, StftConfig};
