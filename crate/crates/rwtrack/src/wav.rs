//! WAV input and output. Integer samples are scaled to [−1, 1).

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use hound::{SampleFormat as HoundFormat, WavReader, WavSpec, WavWriter};

use crate::config::SampleFormat;
use crate::error::{CliError, Result};

type Reader = WavReader<BufReader<File>>;

fn open(path: &Path) -> Result<Reader> {
    WavReader::open(path).map_err(|e| wav_error(path, e))
}

fn wav_error(path: &Path, e: hound::Error) -> CliError {
    match e {
        hound::Error::IoError(io) => CliError::io(path, io),
        other => CliError::Input(format!("{}: {other}", path.display())),
    }
}

/// Checks a WAV header against the channel count and sample rate the
/// pipeline was configured for.
pub fn check_spec(path: &Path, spec: &WavSpec, channels: usize, sample_rate: f64) -> Result<()> {
    if spec.channels as usize != channels {
        return Err(CliError::Input(format!(
            "{}: {} channels, but the geometry has {channels} microphones",
            path.display(),
            spec.channels
        )));
    }
    if (spec.sample_rate as f64 - sample_rate).abs() > 1e-9 {
        return Err(CliError::Input(format!(
            "{}: sampled at {} Hz, expected {sample_rate} Hz (no resampling)",
            path.display(),
            spec.sample_rate
        )));
    }
    Ok(())
}

/// Interleaved samples of any supported encoding as `f64`.
fn samples(reader: &mut Reader) -> Box<dyn Iterator<Item = hound::Result<f64>> + '_> {
    let spec = reader.spec();
    match spec.sample_format {
        HoundFormat::Float => Box::new(reader.samples::<f32>().map(|s| s.map(f64::from))),
        HoundFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f64;
            Box::new(
                reader
                    .samples::<i32>()
                    .map(move |s| s.map(|v| v as f64 * scale)),
            )
        }
    }
}

/// Reads a whole file, one vector per channel.
pub fn read_wav(path: &Path) -> Result<(Vec<Vec<f64>>, WavSpec)> {
    let mut reader = open(path)?;
    let spec = reader.spec();
    let n = spec.channels as usize;
    let mut channels = vec![Vec::with_capacity(reader.duration() as usize); n];
    for (i, s) in samples(&mut reader).enumerate() {
        channels[i % n].push(s.map_err(|e| wav_error(path, e))?);
    }
    Ok((channels, spec))
}

/// Streams overlapping analysis frames from a file, holding one frame.
pub struct FrameReader {
    path: std::path::PathBuf,
    reader: Reader,
    frame_len: usize,
    hop: usize,
    frame: Vec<Vec<f64>>,
    started: bool,
    spec: WavSpec,
}

impl FrameReader {
    pub fn open(
        path: &Path,
        channels: usize,
        sample_rate: f64,
        frame_len: usize,
        hop: usize,
    ) -> Result<Self> {
        let reader = open(path)?;
        let spec = reader.spec();
        check_spec(path, &spec, channels, sample_rate)?;
        Ok(Self {
            path: path.to_owned(),
            reader,
            frame_len,
            hop,
            frame: vec![vec![0.0; frame_len]; channels],
            started: false,
            spec,
        })
    }

    pub fn spec(&self) -> WavSpec {
        self.spec
    }

    /// Samples per channel in the file.
    pub fn len(&self) -> usize {
        self.reader.duration() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The next frame, or `None` once fewer than a hop of new samples
    /// remain.
    pub fn next_frame(&mut self) -> Result<Option<&[Vec<f64>]>> {
        let (fresh, offset) = if self.started {
            for ch in &mut self.frame {
                ch.copy_within(self.hop.., 0);
            }
            (self.hop, self.frame_len - self.hop)
        } else {
            (self.frame_len, 0)
        };
        let n = self.frame.len();
        let path = &self.path;
        let mut it = samples(&mut self.reader);
        for t in 0..fresh {
            for c in 0..n {
                match it.next() {
                    Some(s) => self.frame[c][offset + t] = s.map_err(|e| wav_error(path, e))?,
                    None => return Ok(None),
                }
            }
        }
        drop(it);
        self.started = true;
        Ok(Some(&self.frame))
    }
}

/// Writes channels as an interleaved WAV file.
pub fn write_wav(
    path: &Path,
    channels: &[Vec<f64>],
    sample_rate: u32,
    format: SampleFormat,
) -> Result<()> {
    let spec = WavSpec {
        channels: channels.len() as u16,
        sample_rate,
        bits_per_sample: match format {
            SampleFormat::I16 => 16,
            SampleFormat::F32 => 32,
        },
        sample_format: match format {
            SampleFormat::I16 => HoundFormat::Int,
            SampleFormat::F32 => HoundFormat::Float,
        },
    };
    let err = |e| wav_error(path, e);
    let mut w = WavWriter::create(path, spec).map_err(err)?;
    let len = channels.first().map_or(0, Vec::len);
    for t in 0..len {
        for ch in channels {
            let x = ch[t];
            match format {
                SampleFormat::I16 => {
                    let v = (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                    w.write_sample(v).map_err(err)?;
                }
                SampleFormat::F32 => w.write_sample(x as f32).map_err(err)?,
            }
        }
    }
    w.finalize().map_err(err)
}
