//! Reference external score provider speaking the binary protocol on
//! stdin/stdout. Serves an exact zero-mean Gaussian score (or a zero score)
//! so the wire path can be validated end to end against the in-process
//! implementation. The `--malform` modes deliberately violate the protocol
//! for negative testing.

use clap::{Parser, ValueEnum};
use derev_core::score::{serve, ScoreProvider, ZeroScore};
use derev_core::stft::Spectrogram;
use derev_core::{Error, Result};
use std::io::{Read, Write};
use std::process::ExitCode;

#[derive(ValueEnum, Clone, Copy)]
enum PriorKind {
    Gaussian,
    Zero,
}

#[derive(ValueEnum, Clone, Copy)]
enum Malform {
    BadMagic,
    WrongShape,
    WrongType,
}

#[derive(Parser)]
#[command(name = "derev-ref-provider", version, about)]
struct Args {
    /// Which analytic score to serve.
    #[arg(long, value_enum, default_value_t = PriorKind::Gaussian)]
    prior: PriorKind,
    /// Prior variance per bin (gaussian).
    #[arg(long, default_value_t = 1.0)]
    var: f64,
    /// sigma_min mapping conditioning levels to perturbation variance.
    #[arg(long, default_value_t = 0.0)]
    sigma_min: f64,
    /// Do not advertise JVP support in the handshake.
    #[arg(long)]
    no_jvp: bool,
    /// Deliberately break the protocol (for negative tests).
    #[arg(long, value_enum)]
    malform: Option<Malform>,
}

/// Zero-mean Gaussian prior over any incoming shape.
struct ZeroMeanGaussian {
    var: f64,
    sigma_min: f64,
    advertise_jvp: bool,
}

impl ZeroMeanGaussian {
    fn total_var(&self, sigma: f64) -> Result<f64> {
        if sigma < self.sigma_min {
            return Err(Error::Domain(format!(
                "sigma {sigma} below sigma_min {}",
                self.sigma_min
            )));
        }
        Ok(self.var + sigma * sigma - self.sigma_min * self.sigma_min)
    }
}

impl ScoreProvider for ZeroMeanGaussian {
    fn supports_jvp(&self) -> bool {
        self.advertise_jvp
    }

    fn score(&mut self, x: &Spectrogram, sigma: f64) -> Result<Spectrogram> {
        let s2 = self.total_var(sigma)?;
        Ok(x.with_data(x.data.mapv(|c| -c / s2)))
    }

    fn jvp(
        &mut self,
        _x: &Spectrogram,
        sigma: f64,
        direction: &Spectrogram,
    ) -> Result<Spectrogram> {
        let s2 = self.total_var(sigma)?;
        Ok(direction.with_data(direction.data.mapv(|c| -c / s2)))
    }
}

/// Answer one request with a deliberately broken response and exit.
fn run_malformed(mode: Malform) -> std::io::Result<()> {
    let mut stdin = std::io::stdin().lock();
    let mut stdout = std::io::stdout().lock();
    match mode {
        Malform::BadMagic => {
            stdout.write_all(b"NOPE")?;
            stdout.write_all(&[0u8])?;
            stdout.flush()?;
            // keep the stream open so the client fails on the handshake,
            // not on EOF racing it
            let mut sink = Vec::new();
            let _ = stdin.read_to_end(&mut sink);
            Ok(())
        }
        Malform::WrongShape | Malform::WrongType => {
            stdout.write_all(b"DPS1")?;
            stdout.write_all(&[0u8])?;
            stdout.flush()?;
            let mut head = [0u8; 1 + 8 + 4 + 4];
            stdin.read_exact(&mut head)?;
            let rtype = head[0];
            let f = u32::from_le_bytes(head[9..13].try_into().unwrap());
            let t = u32::from_le_bytes(head[13..17].try_into().unwrap());
            let mut payload = vec![0u8; (f as usize) * (t as usize) * 8];
            stdin.read_exact(&mut payload)?;
            let (resp_type, resp_t) = match mode {
                Malform::WrongShape => (rtype, t - 1),
                Malform::WrongType => (rtype.wrapping_add(7), t),
                Malform::BadMagic => unreachable!(),
            };
            stdout.write_all(&[resp_type])?;
            stdout.write_all(&f.to_le_bytes())?;
            stdout.write_all(&resp_t.to_le_bytes())?;
            stdout.write_all(&vec![0u8; (f as usize) * (resp_t as usize) * 8])?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Some(mode) = args.malform {
        return match run_malformed(mode) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("malformed-provider error: {e}");
                ExitCode::FAILURE
            }
        };
    }
    let stdin = std::io::stdin().lock();
    let stdout = std::io::stdout().lock();
    let served = match args.prior {
        PriorKind::Gaussian => {
            let mut provider = ZeroMeanGaussian {
                var: args.var,
                sigma_min: args.sigma_min,
                advertise_jvp: !args.no_jvp,
            };
            serve(&mut provider, stdin, stdout)
        }
        PriorKind::Zero => serve(&mut ZeroScore, stdin, stdout),
    };
    match served {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("provider error: {e}");
            ExitCode::FAILURE
        }
    }
}
