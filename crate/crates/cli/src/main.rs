//! `derev`: informed single-channel dereverberation by diffusion posterior
//! sampling. Synthesizes reverberant measurements, recovers anechoic speech
//! with a known RIR, and verifies the engine's numerical invariants.

mod commands;
mod manifest;
mod wav;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use commands::{DereverbParams, ProviderSpec, ReverberateParams, RirSource};
use derev_core::rir::RirSpec;
use derev_core::sampler::{InitMode, SamplerConfig, Variant};
use derev_core::{JacobianMode, TweedieMode};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Environment variable holding a default external provider command line.
const PROVIDER_ENV: &str = "DEREV_PROVIDER";

#[derive(Parser)]
#[command(name = "derev", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Convolve clean speech with a RIR and add measurement noise.
    Reverberate(ReverberateArgs),
    /// Recover anechoic speech from a measurement with a known RIR.
    Dereverb(DereverbArgs),
    /// Synthesize or analyze room impulse responses.
    Rir {
        #[command(subcommand)]
        cmd: RirCmd,
    },
    /// Run numerical invariant suites (exit 0 only if everything passes).
    Verify {
        /// Suite name or `all`.
        #[arg(default_value = "all")]
        suite: String,
    },
    /// Re-execute a command from its manifest.
    Rerun {
        manifest: PathBuf,
        /// Write outputs to this path instead of the recorded one.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_snr(s: &str) -> Result<f64, String> {
    if s.eq_ignore_ascii_case("inf") || s.eq_ignore_ascii_case("infinity") {
        return Ok(f64::INFINITY);
    }
    s.parse::<f64>()
        .map_err(|e| format!("invalid SNR {s:?}: {e}"))
}

#[derive(Args)]
struct RirSynthFlags {
    /// Reverberation time of the synthetic RIR in seconds.
    #[arg(long, default_value_t = 0.5)]
    t60: f64,
    /// Direct-to-reverberant ratio of the synthetic RIR in dB.
    #[arg(long, default_value_t = -9.0)]
    drr: f64,
    /// Length of the synthetic RIR in samples.
    #[arg(long, default_value_t = 8000)]
    rir_len: usize,
    /// Direct-path delay in samples.
    #[arg(long, default_value_t = 64)]
    rir_delay: usize,
    /// Seed for the synthetic RIR tail.
    #[arg(long, default_value_t = 0)]
    rir_seed: u64,
}

impl RirSynthFlags {
    fn spec(&self) -> RirSpec {
        RirSpec {
            t60: self.t60,
            drr_db: self.drr,
            length: self.rir_len,
            direct_delay: self.rir_delay,
            sample_rate: wav::SAMPLE_RATE as f64,
            seed: self.rir_seed,
        }
    }
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct ReverberateArgs {
    /// Clean input waveform (16 kHz mono WAV).
    clean: PathBuf,
    /// RIR waveform to convolve with; omit to synthesize one.
    #[arg(long)]
    rir: Option<PathBuf>,
    #[command(flatten)]
    synth: RirSynthFlags,
    /// Measurement SNR in dB, or `inf` for noiseless.
    #[arg(long, value_parser = parse_snr, default_value = "inf")]
    snr: f64,
    /// Measurement-noise seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output measurement path (manifest written alongside).
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy)]
enum VariantArg {
    Dps,
    Statedps,
}

#[derive(ValueEnum, Clone, Copy)]
enum JacobianArg {
    Exact,
    Identity,
}

#[derive(ValueEnum, Clone, Copy)]
enum InitArg {
    UnitGaussian,
    SigmaTGaussian,
}

#[derive(ValueEnum, Clone, Copy)]
enum TweedieArg {
    SigmaSq,
    Exact,
}

#[derive(ValueEnum, Clone, Copy)]
enum PriorArg {
    Zero,
    Gaussian,
    Delta,
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct DereverbArgs {
    /// Reverberant measurement (16 kHz mono WAV).
    measurement: PathBuf,
    /// Known room impulse response (16 kHz mono WAV).
    #[arg(long)]
    rir: PathBuf,
    /// External score-provider command line (spawned as a child process);
    /// defaults to $DEREV_PROVIDER when set.
    #[arg(long)]
    provider: Option<String>,
    /// Response timeout for the external provider, seconds.
    #[arg(long, default_value_t = 30.0)]
    provider_timeout: f64,
    /// Built-in analytic prior (used when no external provider is given).
    #[arg(long, value_enum)]
    prior: Option<PriorArg>,
    /// Prior variance per bin (gaussian prior).
    #[arg(long, default_value_t = 0.1)]
    prior_var: f64,
    /// sigma_min the prior maps conditioning levels through; default 0
    /// (delta) or the schedule's value (gaussian).
    #[arg(long)]
    prior_sigma_min: Option<f64>,
    /// Clean waveform the delta prior concentrates on.
    #[arg(long)]
    prior_target: Option<PathBuf>,
    /// Clean reference for metric reporting.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Reverse diffusion steps N.
    #[arg(long, default_value_t = 50)]
    steps: usize,
    /// Langevin corrector step size r.
    #[arg(long, default_value_t = 0.4)]
    corrector_snr: f64,
    /// Langevin corrector iterations per step.
    #[arg(long, default_value_t = 1)]
    corrector_steps: usize,
    /// Likelihood approximation.
    #[arg(long, value_enum, default_value_t = VariantArg::Dps)]
    variant: VariantArg,
    /// Peak of the saw-tooth measurement-weight schedule.
    #[arg(long, default_value_t = 2500.0)]
    zeta_peak: f64,
    /// Normalized time of the saw-tooth apex.
    #[arg(long, default_value_t = 0.9)]
    zeta_breakpoint: f64,
    /// Whether the DPS gradient flows through the score.
    #[arg(long, value_enum, default_value_t = JacobianArg::Identity)]
    jacobian: JacobianArg,
    /// Initial reverse-state distribution.
    #[arg(long, value_enum, default_value_t = InitArg::UnitGaussian)]
    init: InitArg,
    /// Variance used in the Tweedie denoising step.
    #[arg(long, value_enum, default_value_t = TweedieArg::SigmaSq)]
    tweedie: TweedieArg,
    /// Sampler seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output estimate path (trace/metrics/manifest written alongside).
    #[arg(long)]
    out: PathBuf,
}

impl DereverbArgs {
    fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            n_steps: self.steps,
            corrector_snr: self.corrector_snr,
            corrector_steps: self.corrector_steps,
            variant: match self.variant {
                VariantArg::Dps => Variant::Dps,
                VariantArg::Statedps => Variant::StateDps,
            },
            zeta_peak: self.zeta_peak,
            zeta_breakpoint: self.zeta_breakpoint,
            jacobian: match self.jacobian {
                JacobianArg::Exact => JacobianMode::Exact,
                JacobianArg::Identity => JacobianMode::Identity,
            },
            init: match self.init {
                InitArg::UnitGaussian => InitMode::UnitGaussian,
                InitArg::SigmaTGaussian => InitMode::SigmaTGaussian,
            },
            seed: self.seed,
            tweedie_mode: match self.tweedie {
                TweedieArg::SigmaSq => TweedieMode::SigmaSq,
                TweedieArg::Exact => TweedieMode::Exact,
            },
        }
    }

    fn provider_spec(&self) -> Result<ProviderSpec> {
        let schedule_sigma_min = derev_core::DiffusionSchedule::default().sigma_min;
        if let Some(cmdline) = &self.provider {
            let command: Vec<String> = cmdline.split_whitespace().map(String::from).collect();
            if command.is_empty() {
                bail!("--provider command line is empty");
            }
            return Ok(ProviderSpec::External {
                command,
                timeout_secs: self.provider_timeout,
            });
        }
        if let Some(prior) = self.prior {
            return Ok(match prior {
                PriorArg::Zero => ProviderSpec::Zero,
                PriorArg::Gaussian => ProviderSpec::Gaussian {
                    var: self.prior_var,
                    sigma_min: self.prior_sigma_min.unwrap_or(schedule_sigma_min),
                },
                PriorArg::Delta => ProviderSpec::Delta {
                    target: self
                        .prior_target
                        .clone()
                        .ok_or_else(|| anyhow::anyhow!("--prior delta needs --prior-target"))?,
                    sigma_min: self.prior_sigma_min.unwrap_or(0.0),
                },
            });
        }
        if let Ok(cmdline) = std::env::var(PROVIDER_ENV) {
            let command: Vec<String> = cmdline.split_whitespace().map(String::from).collect();
            if !command.is_empty() {
                return Ok(ProviderSpec::External {
                    command,
                    timeout_secs: self.provider_timeout,
                });
            }
        }
        bail!("no score provider: pass --provider, --prior, or set ${PROVIDER_ENV}")
    }
}

#[derive(Subcommand)]
enum RirCmd {
    /// Generate a synthetic RIR and write it as WAV.
    #[command(allow_negative_numbers = true)]
    Synth {
        #[command(flatten)]
        flags: RirSynthFlags,
        #[arg(long)]
        out: PathBuf,
    },
    /// Report measured T60 and DRR of a RIR file.
    Measure { rir: PathBuf },
}

/// Temporary sibling used for atomic writes.
pub fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(format!(".tmp-{}", std::process::id()));
    path.with_file_name(name)
}

/// Write a file via temp-then-rename so partial output never lands.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = tmp_path(path);
    std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("moving {} into place", path.display()))?;
    Ok(())
}

/// Derived output path: `dir/stem.suffix` next to `out`.
pub fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().unwrap_or_default().to_string_lossy();
    out.with_file_name(format!("{stem}.{suffix}"))
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    if let Some(core) = err.downcast_ref::<derev_core::Error>() {
        match core {
            derev_core::Error::Provider(_) => 3,
            derev_core::Error::Protocol(_) => 4,
            _ => 1,
        }
    } else {
        1
    }
}

fn dispatch(cli: Cli) -> Result<u8> {
    match cli.cmd {
        Cmd::Reverberate(args) => {
            let rir = match &args.rir {
                Some(path) => RirSource::File(path.clone()),
                None => RirSource::Synth(args.synth.spec()),
            };
            commands::execute_reverberate(&ReverberateParams {
                clean: args.clean.clone(),
                rir,
                snr_db: args.snr,
                seed: args.seed,
                out: args.out.clone(),
            })?;
            Ok(0)
        }
        Cmd::Dereverb(args) => {
            let params = DereverbParams {
                measurement: args.measurement.clone(),
                rir: args.rir.clone(),
                provider: args.provider_spec()?,
                sampler: args.sampler_config(),
                reference: args.reference.clone(),
                out: args.out.clone(),
            };
            commands::execute_dereverb(&params)?;
            Ok(0)
        }
        Cmd::Rir { cmd } => match cmd {
            RirCmd::Synth { flags, out } => {
                commands::execute_rir_synth(&flags.spec(), &out)?;
                Ok(0)
            }
            RirCmd::Measure { rir } => {
                commands::execute_rir_measure(&rir)?;
                Ok(0)
            }
        },
        Cmd::Verify { suite } => {
            let all_passed = commands::execute_verify(&suite)?;
            Ok(if all_passed { 0 } else { 5 })
        }
        Cmd::Rerun { manifest, out } => {
            commands::execute_rerun(&manifest, out)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
