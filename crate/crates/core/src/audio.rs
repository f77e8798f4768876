//! Mono waveforms and 16-bit PCM WAV file I/O.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// The only sample rate used anywhere in the pipeline.
pub const SAMPLE_RATE: u32 = 16_000;

/// A mono audio signal. Samples are nominally in [-1, 1]; synthesis
/// peak-normalizes below that, mixing may push individual samples past it,
/// and the WAV writer clamps on output.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>) -> Self {
        Waveform { samples, sample_rate: SAMPLE_RATE }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Largest absolute sample value.
    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    /// Mean squared amplitude.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64
    }
}

/// Writes a waveform as 16 kHz mono 16-bit signed PCM. Samples are clamped
/// to [-1, 1] before quantization. The write is atomic (temp file + rename).
pub fn write_wav(path: &Path, wave: &Waveform) -> Result<()> {
    if wave.sample_rate != SAMPLE_RATE {
        return Err(Error::invalid(format!(
            "wav writer expects {} Hz, got {}",
            SAMPLE_RATE, wave.sample_rate
        )));
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let tmp = temp_path(path)?;
    {
        let mut writer =
            hound::WavWriter::create(&tmp, spec).map_err(|e| Error::Wav(e.to_string()))?;
        for &s in &wave.samples {
            let clamped = s.clamp(-1.0, 1.0);
            let q = (clamped * 32767.0).round() as i16;
            writer.write_sample(q).map_err(|e| Error::Wav(e.to_string()))?;
        }
        writer.finalize().map_err(|e| Error::Wav(e.to_string()))?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads a 16 kHz mono PCM WAV file into a waveform in [-1, 1].
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let mut reader = hound::WavReader::open(path)
        .map_err(|e| Error::Wav(format!("{}: {}", path.display(), e)))?;
    let spec = reader.spec();
    if spec.sample_rate != SAMPLE_RATE || spec.channels != 1 {
        return Err(Error::Wav(format!(
            "{}: expected {} Hz mono, got {} Hz {} ch",
            path.display(),
            SAMPLE_RATE,
            spec.sample_rate,
            spec.channels
        )));
    }
    let samples: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Int => {
            let bits = spec.bits_per_sample;
            if bits == 0 || bits > 32 {
                return Err(Error::Wav(format!("unsupported PCM bit depth {}", bits)));
            }
            let denom = (1u64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / denom))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Wav(e.to_string()))?
        }
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Wav(e.to_string()))?,
    };
    Ok(Waveform::new(samples))
}

/// Temp-file path in the same directory as `path`, for atomic writes.
pub(crate) fn temp_path(path: &Path) -> Result<std::path::PathBuf> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("bad output path {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    Ok(path.with_file_name(tmp_name))
}
