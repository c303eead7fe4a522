//! Mono WAV input/output. Output is always 32-bit float at the engine's
//! sample rate; 16-bit PCM is accepted on input and converted.

use anyhow::{bail, Context, Result};
use std::path::Path;

pub const SAMPLE_RATE: u32 = 16_000;

pub fn read_mono(path: &Path) -> Result<Vec<f64>> {
    let mut reader =
        hound::WavReader::open(path).with_context(|| format!("opening {}", path.display()))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        bail!(
            "{}: expected mono, got {} channels",
            path.display(),
            spec.channels
        );
    }
    if spec.sample_rate != SAMPLE_RATE {
        bail!(
            "{}: expected {} Hz, got {} Hz",
            path.display(),
            SAMPLE_RATE,
            spec.sample_rate
        );
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()?,
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => bail!(
            "{}: unsupported format {bits}-bit {fmt:?} (need 32-bit float or 16-bit PCM)",
            path.display()
        ),
    };
    if samples.is_empty() {
        bail!("{}: empty audio stream", path.display());
    }
    Ok(samples)
}

/// Write 32-bit float mono atomically (temp file + rename).
pub fn write_mono(path: &Path, samples: &[f64]) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let tmp = super::tmp_path(path);
    {
        let mut writer = hound::WavWriter::create(&tmp, spec)
            .with_context(|| format!("creating {}", tmp.display()))?;
        for s in samples {
            writer.write_sample(*s as f32)?;
        }
        writer.finalize()?;
    }
    std::fs::rename(&tmp, path).with_context(|| format!("moving {} into place", path.display()))?;
    Ok(())
}
