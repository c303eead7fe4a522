//! Binary score-provider protocol over a child process's stdin/stdout.
//!
//! All integers and floats are little-endian. On startup the provider sends
//! the magic `"DPS1"` followed by one flags byte (bit 0: supports JVP). Each
//! request is `u8 type` (0 shutdown, 1 score, 2 jvp), `f64 sigma`, `u32 F`,
//! `u32 T`, then `F*T*2` f32 values interleaved (re, im) in frequency-major
//! row-major order; JVP requests append a second block of the same size (the
//! direction). Responses echo the type, then `u32 F`, `u32 T` and one payload
//! block. Anything else on the wire is a protocol error.
//!
//! The client keeps exactly one request in flight; responses are read on a
//! dedicated thread so every wait carries a timeout.

use crate::error::{Error, Result};
use crate::score::ScoreProvider;
use crate::stft::{Spectrogram, StftConfig};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use num_complex::Complex64;
use std::io::{BufReader, BufWriter, Read, Write};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc;
use std::time::Duration;

pub const MAGIC: [u8; 4] = *b"DPS1";
pub const FLAG_JVP: u8 = 1;
pub const REQ_SHUTDOWN: u8 = 0;
pub const REQ_SCORE: u8 = 1;
pub const REQ_JVP: u8 = 2;

/// Default wait for a provider response.
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

const MAX_BINS: u64 = 1 << 24;

fn write_payload(w: &mut impl Write, spec: &Spectrogram) -> std::io::Result<()> {
    for f in 0..spec.freq_bins() {
        for t in 0..spec.frames() {
            let c = spec.data[(f, t)];
            w.write_f32::<LittleEndian>(c.re as f32)?;
            w.write_f32::<LittleEndian>(c.im as f32)?;
        }
    }
    Ok(())
}

fn read_payload(
    r: &mut impl Read,
    bins: usize,
    frames: usize,
) -> std::io::Result<Array2<Complex64>> {
    let mut data = Array2::zeros((bins, frames));
    for f in 0..bins {
        for t in 0..frames {
            let re = r.read_f32::<LittleEndian>()? as f64;
            let im = r.read_f32::<LittleEndian>()? as f64;
            data[(f, t)] = Complex64::new(re, im);
        }
    }
    Ok(data)
}

fn check_dims(f: u32, t: u32) -> Result<(usize, usize)> {
    let bins = f as u64 * t as u64;
    if f == 0 || t == 0 || bins > MAX_BINS {
        return Err(Error::Protocol(format!(
            "unreasonable frame dimensions {f} x {t}"
        )));
    }
    Ok((f as usize, t as usize))
}

struct ResponseFrame {
    rtype: u8,
    bins: usize,
    frames: usize,
    data: Array2<Complex64>,
}

enum WireEvent {
    Handshake(u8),
    Frame(ResponseFrame),
    Closed(String),
}

fn reader_loop(mut r: impl Read, tx: mpsc::Sender<WireEvent>) {
    let mut magic = [0u8; 4];
    if let Err(e) = r.read_exact(&mut magic) {
        let _ = tx.send(WireEvent::Closed(format!("handshake read failed: {e}")));
        return;
    }
    if magic != MAGIC {
        let _ = tx.send(WireEvent::Closed(format!(
            "bad handshake magic {magic:02x?}"
        )));
        return;
    }
    let flags = match r.read_u8() {
        Ok(b) => b,
        Err(e) => {
            let _ = tx.send(WireEvent::Closed(format!("handshake flags: {e}")));
            return;
        }
    };
    if tx.send(WireEvent::Handshake(flags)).is_err() {
        return;
    }
    loop {
        let rtype = match r.read_u8() {
            Ok(b) => b,
            Err(e) => {
                let _ = tx.send(WireEvent::Closed(format!("stream ended: {e}")));
                return;
            }
        };
        let parse = (|| -> Result<ResponseFrame> {
            let f = r.read_u32::<LittleEndian>().map_err(Error::Io)?;
            let t = r.read_u32::<LittleEndian>().map_err(Error::Io)?;
            let (bins, frames) = check_dims(f, t)?;
            let data = read_payload(&mut r, bins, frames).map_err(Error::Io)?;
            Ok(ResponseFrame {
                rtype,
                bins,
                frames,
                data,
            })
        })();
        match parse {
            Ok(frame) => {
                if tx.send(WireEvent::Frame(frame)).is_err() {
                    return;
                }
            }
            Err(e) => {
                let _ = tx.send(WireEvent::Closed(format!("malformed response: {e}")));
                return;
            }
        }
    }
}

/// Protocol client over arbitrary byte streams.
pub struct WireClient {
    writer: Box<dyn Write + Send>,
    rx: mpsc::Receiver<WireEvent>,
    supports_jvp: bool,
    timeout: Duration,
    shut_down: bool,
}

impl WireClient {
    /// Perform the handshake over the given transport. Spawns the reader
    /// thread; fails if the provider does not identify itself in time.
    pub fn connect(
        reader: impl Read + Send + 'static,
        writer: impl Write + Send + 'static,
        timeout: Duration,
    ) -> Result<Self> {
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || reader_loop(reader, tx));
        let flags = match rx.recv_timeout(timeout) {
            Ok(WireEvent::Handshake(flags)) => flags,
            Ok(WireEvent::Frame(_)) => {
                return Err(Error::Protocol("frame received before handshake".into()))
            }
            Ok(WireEvent::Closed(msg)) => return Err(Error::Protocol(msg)),
            Err(_) => return Err(Error::Provider("handshake timed out".into())),
        };
        Ok(WireClient {
            writer: Box::new(writer),
            rx,
            supports_jvp: flags & FLAG_JVP != 0,
            timeout,
            shut_down: false,
        })
    }

    fn request(
        &mut self,
        rtype: u8,
        sigma: f64,
        x: &Spectrogram,
        extra: Option<&Spectrogram>,
    ) -> Result<Spectrogram> {
        let send = (|| -> std::io::Result<()> {
            self.writer.write_u8(rtype)?;
            self.writer.write_f64::<LittleEndian>(sigma)?;
            self.writer
                .write_u32::<LittleEndian>(x.freq_bins() as u32)?;
            self.writer.write_u32::<LittleEndian>(x.frames() as u32)?;
            write_payload(&mut self.writer, x)?;
            if let Some(dir) = extra {
                write_payload(&mut self.writer, dir)?;
            }
            self.writer.flush()
        })();
        send.map_err(|e| Error::Provider(format!("request write failed: {e}")))?;

        let frame = match self.rx.recv_timeout(self.timeout) {
            Ok(WireEvent::Frame(frame)) => frame,
            Ok(WireEvent::Handshake(_)) => {
                return Err(Error::Protocol("unexpected second handshake".into()))
            }
            Ok(WireEvent::Closed(msg)) => return Err(Error::Protocol(msg)),
            Err(mpsc::RecvTimeoutError::Timeout) => {
                return Err(Error::Provider(format!(
                    "provider response timed out after {:?}",
                    self.timeout
                )))
            }
            Err(mpsc::RecvTimeoutError::Disconnected) => {
                return Err(Error::Provider("provider stream closed".into()))
            }
        };
        if frame.rtype != rtype {
            return Err(Error::Protocol(format!(
                "response type {} does not echo request type {rtype}",
                frame.rtype
            )));
        }
        if frame.bins != x.freq_bins() || frame.frames != x.frames() {
            return Err(Error::Protocol(format!(
                "response shape {}x{} does not match request {}x{}",
                frame.bins,
                frame.frames,
                x.freq_bins(),
                x.frames()
            )));
        }
        Ok(x.with_data(frame.data))
    }

    /// Send the shutdown request. Further requests fail.
    pub fn shutdown(&mut self) {
        if !self.shut_down {
            self.shut_down = true;
            let _ = self.writer.write_u8(REQ_SHUTDOWN);
            let _ = self.writer.flush();
        }
    }
}

impl ScoreProvider for WireClient {
    fn supports_jvp(&self) -> bool {
        self.supports_jvp
    }

    fn score(&mut self, x: &Spectrogram, sigma: f64) -> Result<Spectrogram> {
        self.request(REQ_SCORE, sigma, x, None)
    }

    fn jvp(&mut self, x: &Spectrogram, sigma: f64, direction: &Spectrogram) -> Result<Spectrogram> {
        if !self.supports_jvp {
            return Err(Error::Capability(
                "provider handshake did not advertise JVP support".into(),
            ));
        }
        self.request(REQ_JVP, sigma, x, Some(direction))
    }
}

/// Score provider running in a child process, connected over its
/// stdin/stdout. The child is asked to shut down and reaped on drop.
pub struct ExternalProvider {
    client: WireClient,
    child: Child,
}

impl ExternalProvider {
    pub fn spawn(argv: &[String], timeout: Duration) -> Result<Self> {
        let (program, args) = argv
            .split_first()
            .ok_or_else(|| Error::Provider("empty provider command line".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Provider(format!("failed to spawn {program:?}: {e}")))?;
        let stdout = child.stdout.take().expect("piped stdout");
        let stdin = child.stdin.take().expect("piped stdin");
        let client = WireClient::connect(stdout, stdin, timeout).inspect_err(|_| {
            let _ = child.kill();
            let _ = child.wait();
        })?;
        Ok(ExternalProvider { client, child })
    }
}

impl ScoreProvider for ExternalProvider {
    fn supports_jvp(&self) -> bool {
        self.client.supports_jvp()
    }

    fn score(&mut self, x: &Spectrogram, sigma: f64) -> Result<Spectrogram> {
        self.client.score(x, sigma)
    }

    fn jvp(&mut self, x: &Spectrogram, sigma: f64, direction: &Spectrogram) -> Result<Spectrogram> {
        self.client.jvp(x, sigma, direction)
    }
}

impl Drop for ExternalProvider {
    fn drop(&mut self) {
        self.client.shutdown();
        for _ in 0..20 {
            match self.child.try_wait() {
                Ok(Some(_)) => return,
                Ok(None) => std::thread::sleep(Duration::from_millis(50)),
                Err(_) => break,
            }
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Provider-side loop: answer score/JVP requests from `reader` on `writer`
/// until a shutdown request or EOF. Shapes are reconstructed with a synthetic
/// analysis config (scores never resynthesize, only shapes matter).
pub fn serve(
    provider: &mut dyn ScoreProvider,
    reader: impl Read,
    writer: impl Write,
) -> Result<()> {
    let mut r = BufReader::new(reader);
    let mut w = BufWriter::new(writer);
    w.write_all(&MAGIC)?;
    w.write_u8(if provider.supports_jvp() { FLAG_JVP } else { 0 })?;
    w.flush()?;

    let mut cached_cfg: Option<(usize, StftConfig)> = None;
    loop {
        let rtype = match r.read_u8() {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(()),
            Err(e) => return Err(e.into()),
        };
        if rtype == REQ_SHUTDOWN {
            return Ok(());
        }
        if rtype != REQ_SCORE && rtype != REQ_JVP {
            return Err(Error::Protocol(format!("unknown request type {rtype}")));
        }
        let sigma = r.read_f64::<LittleEndian>()?;
        let f = r.read_u32::<LittleEndian>()?;
        let t = r.read_u32::<LittleEndian>()?;
        let (bins, frames) = check_dims(f, t)?;
        if bins < 2 {
            return Err(Error::Protocol("need at least two frequency bins".into()));
        }
        let cfg = match &cached_cfg {
            Some((b, cfg)) if *b == bins => cfg.clone(),
            _ => {
                let fft_len = 2 * (bins - 1);
                let cfg = StftConfig::new(fft_len, fft_len / 2, fft_len, 16_000.0)?;
                cached_cfg = Some((bins, cfg.clone()));
                cfg
            }
        };
        let data = read_payload(&mut r, bins, frames)?;
        let x = Spectrogram::new(data, cfg.clone(), frames * cfg.hop)?;
        let out = if rtype == REQ_SCORE {
            provider.score(&x, sigma)?
        } else {
            let dir_data = read_payload(&mut r, bins, frames)?;
            let dir = x.with_data(dir_data);
            provider.jvp(&x, sigma, &dir)?
        };
        w.write_u8(rtype)?;
        w.write_u32::<LittleEndian>(f)?;
        w.write_u32::<LittleEndian>(t)?;
        write_payload(&mut w, &out)?;
        w.flush()?;
    }
}
