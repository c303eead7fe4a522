//! Command implementations shared by the argument parser and `rerun`.

use crate::manifest::{Manifest, MeasurementInfo, Outputs, ProviderInfo, Trace};
use crate::{sibling, wav, write_atomic};
use anyhow::{anyhow, bail, Result};
use derev_core::rir::{self, RirSpec};
use derev_core::sampler::{self, SamplerConfig};
use derev_core::score::{DeltaPrior, ExternalProvider, GaussianPrior, ScoreProvider, ZeroScore};
use derev_core::stft::{stft, Spectrogram, StftConfig};
use derev_core::{metrics, verify, DiffusionSchedule};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

#[derive(Debug, Clone)]
pub enum RirSource {
    File(PathBuf),
    Synth(RirSpec),
}

#[derive(Debug, Clone)]
pub struct ReverberateParams {
    pub clean: PathBuf,
    pub rir: RirSource,
    pub snr_db: f64,
    pub seed: u64,
    pub out: PathBuf,
}

#[derive(Debug, Clone)]
pub enum ProviderSpec {
    External {
        command: Vec<String>,
        timeout_secs: f64,
    },
    Zero,
    Gaussian {
        var: f64,
        sigma_min: f64,
    },
    Delta {
        target: PathBuf,
        sigma_min: f64,
    },
}

#[derive(Debug, Clone)]
pub struct DereverbParams {
    pub measurement: PathBuf,
    pub rir: PathBuf,
    pub provider: ProviderSpec,
    pub sampler: SamplerConfig,
    pub reference: Option<PathBuf>,
    pub out: PathBuf,
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

/// Full-precision decimal for CSV output (17 significant digits).
fn fmt_full(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn execute_reverberate(p: &ReverberateParams) -> Result<PathBuf> {
    let clean = wav::read_mono(&p.clean)?;
    let mut manifest = Manifest::new("reverberate");
    manifest.inputs.clean = Some(path_str(&p.clean));
    let k = match &p.rir {
        RirSource::File(path) => {
            manifest.inputs.rir = Some(path_str(path));
            wav::read_mono(path)?
        }
        RirSource::Synth(spec) => {
            let k = rir::synth_rir(spec)?;
            let rir_out = sibling(&p.out, "rir.wav");
            wav::write_mono(&rir_out, &k)?;
            manifest.rir_spec = Some(*spec);
            manifest.outputs.rir = Some(path_str(&rir_out));
            k
        }
    };
    let y = rir::make_measurement(&clean, &k, p.snr_db, p.seed)?;
    wav::write_mono(&p.out, &y)?;
    manifest.measurement = Some(MeasurementInfo {
        snr_db: p.snr_db,
        seed: p.seed,
    });
    manifest.outputs.measurement = Some(path_str(&p.out));
    let mpath = sibling(&p.out, "manifest.toml");
    manifest.save(&mpath)?;
    println!(
        "wrote {} ({} samples) and {}",
        p.out.display(),
        y.len(),
        mpath.display()
    );
    Ok(mpath)
}

fn provider_info(spec: &ProviderSpec) -> ProviderInfo {
    match spec {
        ProviderSpec::External {
            command,
            timeout_secs,
        } => ProviderInfo {
            kind: "external".into(),
            command: Some(command.clone()),
            timeout_secs: Some(*timeout_secs),
            var: None,
            sigma_min: None,
            target: None,
        },
        ProviderSpec::Zero => ProviderInfo {
            kind: "zero".into(),
            command: None,
            timeout_secs: None,
            var: None,
            sigma_min: None,
            target: None,
        },
        ProviderSpec::Gaussian { var, sigma_min } => ProviderInfo {
            kind: "gaussian".into(),
            command: None,
            timeout_secs: None,
            var: Some(*var),
            sigma_min: Some(*sigma_min),
            target: None,
        },
        ProviderSpec::Delta { target, sigma_min } => ProviderInfo {
            kind: "delta".into(),
            command: None,
            timeout_secs: None,
            var: None,
            sigma_min: Some(*sigma_min),
            target: Some(path_str(target)),
        },
    }
}

fn build_provider(
    spec: &ProviderSpec,
    stft_cfg: &StftConfig,
    signal_len: usize,
    scale: f64,
) -> Result<Box<dyn ScoreProvider>> {
    let frames = stft_cfg.num_frames(signal_len);
    Ok(match spec {
        ProviderSpec::External {
            command,
            timeout_secs,
        } => Box::new(ExternalProvider::spawn(
            command,
            Duration::from_secs_f64(*timeout_secs),
        )?),
        ProviderSpec::Zero => Box::new(ZeroScore),
        ProviderSpec::Gaussian { var, sigma_min } => {
            let mean = Spectrogram::zeros(stft_cfg.clone(), frames, signal_len)?;
            Box::new(GaussianPrior::scalar(mean, *var, *sigma_min)?)
        }
        ProviderSpec::Delta { target, sigma_min } => {
            let clean = wav::read_mono(target)?;
            if clean.len() != signal_len {
                bail!(
                    "prior target has {} samples but the measurement implies {}",
                    clean.len(),
                    signal_len
                );
            }
            let scaled: Vec<f64> = clean.iter().map(|v| v * scale).collect();
            Box::new(DeltaPrior::new(stft(&scaled, stft_cfg)?, *sigma_min)?)
        }
    })
}

pub fn execute_dereverb(p: &DereverbParams) -> Result<PathBuf> {
    let y = wav::read_mono(&p.measurement)?;
    let k = wav::read_mono(&p.rir)?;
    if y.len() < k.len() + 1 {
        bail!(
            "measurement of {} samples is too short for a {}-tap RIR",
            y.len(),
            k.len()
        );
    }
    let signal_len = y.len() - k.len() + 1;
    let stft_cfg = StftConfig::speech_16k();
    let sched = DiffusionSchedule::default();
    let (s_y, s_k) = sampler::normalization_factors(&y, &k);
    let mut provider = build_provider(&p.provider, &stft_cfg, signal_len, s_k / s_y)?;
    let result = sampler::run(&y, &k, provider.as_mut(), &stft_cfg, &sched, &p.sampler)?;
    wav::write_mono(&p.out, &result.waveform)?;

    let mut manifest = Manifest::new("dereverb");
    manifest.inputs.measurement = Some(path_str(&p.measurement));
    manifest.inputs.rir = Some(path_str(&p.rir));
    manifest.sampler = Some(p.sampler);
    manifest.provider = Some(provider_info(&p.provider));
    manifest.outputs = Outputs {
        estimate: Some(path_str(&p.out)),
        ..Outputs::default()
    };

    // residual trace: execution order, tau descending
    let n = p.sampler.n_steps;
    let taus: Vec<f64> = (0..n)
        .map(|i| (n - i) as f64 * sched.t_final / n as f64)
        .collect();
    let trace_path = sibling(&p.out, "trace.csv");
    let mut csv = String::from("step,tau,residual\n");
    for (i, (tau, r)) in taus.iter().zip(&result.per_step_residuals).enumerate() {
        let _ = writeln!(csv, "{},{},{}", i + 1, fmt_full(*tau), fmt_full(*r));
    }
    write_atomic(&trace_path, csv.as_bytes())?;
    manifest.outputs.trace = Some(path_str(&trace_path));
    manifest.trace = Some(Trace {
        tau: taus,
        residual: result.per_step_residuals.clone(),
    });

    if let Some(reference) = &p.reference {
        let reference_samples = wav::read_mono(reference)?;
        if reference_samples.len() != signal_len {
            bail!(
                "reference has {} samples but the measurement implies {}",
                reference_samples.len(),
                signal_len
            );
        }
        let report = metrics::report(&y, &k, &result.waveform, &reference_samples, &stft_cfg)?;
        let metrics_path = sibling(&p.out, "metrics.csv");
        let csv = format!(
            "si_sdr_db,lsd_db,residual_db\n{},{},{}\n",
            fmt_full(report.si_sdr_db),
            fmt_full(report.lsd_db),
            fmt_full(report.residual_db)
        );
        write_atomic(&metrics_path, csv.as_bytes())?;
        manifest.inputs.reference = Some(path_str(reference));
        manifest.outputs.metrics = Some(path_str(&metrics_path));
        manifest.metrics = Some(report);
        println!(
            "SI-SDR {:.2} dB, LSD {:.2} dB, residual {:.2} dB",
            report.si_sdr_db, report.lsd_db, report.residual_db
        );
    } else {
        let residual_db = metrics::residual_consistency(&y, &k, &result.waveform)?;
        println!("residual consistency {residual_db:.2} dB (no reference supplied)");
    }

    let mpath = sibling(&p.out, "manifest.toml");
    manifest.save(&mpath)?;
    println!("wrote {} and {}", p.out.display(), mpath.display());
    Ok(mpath)
}

pub fn execute_rir_synth(spec: &RirSpec, out: &Path) -> Result<PathBuf> {
    let k = rir::synth_rir(spec)?;
    wav::write_mono(out, &k)?;
    let mut manifest = Manifest::new("rir-synth");
    manifest.rir_spec = Some(*spec);
    manifest.outputs.rir = Some(path_str(out));
    let mpath = sibling(out, "manifest.toml");
    manifest.save(&mpath)?;
    match rir::measure_t60(&k, spec.sample_rate) {
        Ok(measured) => println!(
            "wrote {} (target t60 {:.3} s, measured {:.3} s)",
            out.display(),
            spec.t60,
            measured
        ),
        Err(e) => println!("wrote {} (t60 not measurable: {e})", out.display()),
    }
    Ok(mpath)
}

pub fn execute_rir_measure(path: &Path) -> Result<()> {
    let k = wav::read_mono(path)?;
    let t60 = rir::measure_t60(&k, wav::SAMPLE_RATE as f64)?;
    println!("t60_s {t60:.4}");
    match rir::measure_drr(&k) {
        Ok(drr) => println!("drr_db {drr:.2}"),
        Err(e) => println!("drr_db unavailable ({e})"),
    }
    Ok(())
}

/// Returns false if any check failed.
pub fn execute_verify(suite: &str) -> Result<bool> {
    let reports = verify::run_suite(suite).map_err(|e| anyhow!(e))?;
    let mut all = true;
    for r in &reports {
        println!("{}", r.line());
        all &= r.passed;
    }
    Ok(all)
}

pub fn execute_rerun(manifest_path: &Path, out_override: Option<PathBuf>) -> Result<()> {
    let m = Manifest::load(manifest_path)?;
    match m.run.command.as_str() {
        "reverberate" => {
            let clean = m
                .inputs
                .clean
                .as_ref()
                .ok_or_else(|| anyhow!("manifest lacks inputs.clean"))?;
            let rir = if let Some(spec) = m.rir_spec {
                RirSource::Synth(spec)
            } else {
                RirSource::File(PathBuf::from(
                    m.inputs
                        .rir
                        .as_ref()
                        .ok_or_else(|| anyhow!("manifest lacks a RIR source"))?,
                ))
            };
            let meas = m
                .measurement
                .ok_or_else(|| anyhow!("manifest lacks [measurement]"))?;
            let out = out_override
                .or_else(|| m.outputs.measurement.as_ref().map(PathBuf::from))
                .ok_or_else(|| anyhow!("manifest lacks outputs.measurement"))?;
            execute_reverberate(&ReverberateParams {
                clean: PathBuf::from(clean),
                rir,
                snr_db: meas.snr_db,
                seed: meas.seed,
                out,
            })?;
            Ok(())
        }
        "dereverb" => {
            let measurement = m
                .inputs
                .measurement
                .as_ref()
                .ok_or_else(|| anyhow!("manifest lacks inputs.measurement"))?;
            let rir = m
                .inputs
                .rir
                .as_ref()
                .ok_or_else(|| anyhow!("manifest lacks inputs.rir"))?;
            let info = m
                .provider
                .as_ref()
                .ok_or_else(|| anyhow!("manifest lacks [provider]"))?;
            let provider = match info.kind.as_str() {
                "external" => ProviderSpec::External {
                    command: info
                        .command
                        .clone()
                        .ok_or_else(|| anyhow!("external provider without a command"))?,
                    timeout_secs: info.timeout_secs.unwrap_or(30.0),
                },
                "zero" => ProviderSpec::Zero,
                "gaussian" => ProviderSpec::Gaussian {
                    var: info.var.unwrap_or(0.1),
                    sigma_min: info.sigma_min.unwrap_or(0.0),
                },
                "delta" => ProviderSpec::Delta {
                    target: PathBuf::from(
                        info.target
                            .as_ref()
                            .ok_or_else(|| anyhow!("delta provider without a target"))?,
                    ),
                    sigma_min: info.sigma_min.unwrap_or(0.0),
                },
                other => bail!("unknown provider kind {other:?}"),
            };
            let sampler_cfg = m
                .sampler
                .ok_or_else(|| anyhow!("manifest lacks [sampler]"))?;
            let out = out_override
                .or_else(|| m.outputs.estimate.as_ref().map(PathBuf::from))
                .ok_or_else(|| anyhow!("manifest lacks outputs.estimate"))?;
            execute_dereverb(&DereverbParams {
                measurement: PathBuf::from(measurement),
                rir: PathBuf::from(rir),
                provider,
                sampler: sampler_cfg,
                reference: m.inputs.reference.as_ref().map(PathBuf::from),
                out,
            })?;
            Ok(())
        }
        "rir-synth" => {
            let spec = m
                .rir_spec
                .ok_or_else(|| anyhow!("manifest lacks [rir_spec]"))?;
            let out = out_override
                .or_else(|| m.outputs.rir.as_ref().map(PathBuf::from))
                .ok_or_else(|| anyhow!("manifest lacks outputs.rir"))?;
            execute_rir_synth(&spec, &out)?;
            Ok(())
        }
        other => bail!("manifest records unknown command {other:?}"),
    }
}
