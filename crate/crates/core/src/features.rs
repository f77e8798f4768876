//! Log-Mel feature extraction with frame stacking and downsampling.
//!
//! 25 ms Hann-windowed frames every 10 ms, 512-point magnitude spectrum,
//! 64 triangular Mel filters over 0-8000 Hz, natural log with a floor.
//! Frames are then stacked with two left neighbors and decimated by 3 for a
//! 30 ms frame rate.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rustfft::{num_complex::Complex, Fft, FftPlanner};

use crate::audio::Waveform;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct FeatureConfig {
    pub n_mels: usize,
    pub window_ms: f64,
    pub shift_ms: f64,
    pub stack_left: usize,
    pub downsample: usize,
    pub log_floor: f64,
    /// Per-utterance, per-coefficient mean/variance normalization applied
    /// after the log. Off by default.
    pub normalize: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            n_mels: 64,
            window_ms: 25.0,
            shift_ms: 10.0,
            stack_left: 2,
            downsample: 3,
            log_floor: 1e-10,
            normalize: false,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_ms <= self.shift_ms || self.shift_ms <= 0.0 {
            return Err(Error::config("need window_ms > shift_ms > 0"));
        }
        if self.n_mels < 2 {
            return Err(Error::config("n_mels must be at least 2"));
        }
        if self.downsample < 1 {
            return Err(Error::config("downsample must be at least 1"));
        }
        if self.log_floor <= 0.0 {
            return Err(Error::config("log_floor must be positive"));
        }
        Ok(())
    }

    /// Feature dimension after stacking.
    pub fn stacked_dim(&self) -> usize {
        (self.stack_left + 1) * self.n_mels
    }
}

/// A time x dimension feature grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: Array2<f64>,
    pub frame_rate_ms: f64,
}

impl FeatureMatrix {
    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }
}

const FFT_SIZE: usize = 512;

/// Extracts T x n_mels log-Mel features at the 10 ms frame rate.
pub fn log_mel(wave: &Waveform, cfg: &FeatureConfig) -> Result<FeatureMatrix> {
    cfg.validate()?;
    let sr = wave.sample_rate as f64;
    let win = (cfg.window_ms / 1000.0 * sr).round() as usize;
    let shift = (cfg.shift_ms / 1000.0 * sr).round() as usize;
    if wave.len() < win {
        return Err(Error::TooShort(format!(
            "{} samples < one {} sample window",
            wave.len(),
            win
        )));
    }
    if win > FFT_SIZE {
        return Err(Error::config(format!("window {} exceeds FFT size {}", win, FFT_SIZE)));
    }
    let frames = (wave.len() - win) / shift + 1;
    let window = hann(win);
    let filters = mel_filterbank(cfg.n_mels, wave.sample_rate);
    let fft = FftPlanner::new().plan_fft_forward(FFT_SIZE);

    let mut values = Array2::zeros((frames, cfg.n_mels));
    let mut buf = vec![Complex::new(0.0, 0.0); FFT_SIZE];
    let mut mags = vec![0.0f64; FFT_SIZE / 2 + 1];
    for t in 0..frames {
        let start = t * shift;
        frame_magnitudes(&wave.samples[start..start + win], &window, &*fft, &mut buf, &mut mags);
        for (m, filter) in filters.iter().enumerate() {
            let mut energy = 0.0;
            for &(bin, w) in filter {
                energy += w * mags[bin];
            }
            values[[t, m]] = energy.max(cfg.log_floor).ln();
        }
    }
    if cfg.normalize {
        normalize_per_coefficient(&mut values);
    }
    Ok(FeatureMatrix { values, frame_rate_ms: cfg.shift_ms })
}

/// Zero-mean, unit-variance per coefficient over the utterance's frames.
/// Constant coefficients are centered but not scaled.
fn normalize_per_coefficient(values: &mut Array2<f64>) {
    let t = values.nrows() as f64;
    for mut col in values.columns_mut() {
        let mean = col.iter().sum::<f64>() / t;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / t;
        let scale = if var > 1e-12 { 1.0 / var.sqrt() } else { 1.0 };
        for v in col.iter_mut() {
            *v = (*v - mean) * scale;
        }
    }
}

/// Stacks each kept frame with `stack_left` left neighbors (edge-padded by
/// repeating frame 0) and keeps every `downsample`-th frame starting at 0.
pub fn stack_downsample(feat: &FeatureMatrix, cfg: &FeatureConfig) -> FeatureMatrix {
    let t_in = feat.frames();
    let d_in = feat.dim();
    let t_out = t_in.div_ceil(cfg.downsample);
    let mut values = Array2::zeros((t_out, (cfg.stack_left + 1) * d_in));
    for (row, t) in (0..t_in).step_by(cfg.downsample).enumerate() {
        for k in 0..=cfg.stack_left {
            // offset stack_left..0 maps to frames t-stack_left..t
            let src = t.saturating_sub(cfg.stack_left - k);
            let dst = k * d_in;
            values
                .row_mut(row)
                .slice_mut(ndarray::s![dst..dst + d_in])
                .assign(&feat.values.row(src));
        }
    }
    FeatureMatrix {
        values,
        frame_rate_ms: feat.frame_rate_ms * cfg.downsample as f64,
    }
}

fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()))
        .collect()
}

fn frame_magnitudes(
    frame: &[f64],
    window: &[f64],
    fft: &dyn Fft<f64>,
    buf: &mut [Complex<f64>],
    mags: &mut [f64],
) {
    for (i, slot) in buf.iter_mut().enumerate() {
        *slot = if i < frame.len() {
            Complex::new(frame[i] * window[i], 0.0)
        } else {
            Complex::new(0.0, 0.0)
        };
    }
    fft.process(buf);
    for (i, m) in mags.iter_mut().enumerate() {
        *m = buf[i].norm();
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Sparse triangular filters as (bin, weight) lists, weights normalized to
/// unit sum per filter.
fn mel_filterbank(n_mels: usize, sample_rate: u32) -> Vec<Vec<(usize, f64)>> {
    let f_max = sample_rate as f64 / 2.0;
    let mel_points: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(hz_to_mel(f_max) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / FFT_SIZE as f64;
    let n_bins = FFT_SIZE / 2 + 1;
    let mut filters = Vec::with_capacity(n_mels);
    for m in 0..n_mels {
        let (lo, mid, hi) = (mel_points[m], mel_points[m + 1], mel_points[m + 2]);
        let mut taps = Vec::new();
        for bin in 0..n_bins {
            let f = bin as f64 * bin_hz;
            let w = if f > lo && f < mid {
                (f - lo) / (mid - lo)
            } else if (f - mid).abs() < 1e-12 {
                1.0
            } else if f > mid && f < hi {
                (hi - f) / (hi - mid)
            } else {
                0.0
            };
            if w > 0.0 {
                taps.push((bin, w));
            }
        }
        let total: f64 = taps.iter().map(|&(_, w)| w).sum();
        if total > 0.0 {
            for tap in &mut taps {
                tap.1 /= total;
            }
        }
        filters.push(taps);
    }
    filters
}

/// Binary feature dump: u32 frames, u32 dim, f32 frame_rate_ms header, then
/// row-major little-endian f32 values. Written atomically.
pub fn write_feature_dump(path: &Path, feat: &FeatureMatrix) -> Result<()> {
    let tmp = crate::audio::temp_path(path)?;
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        f.write_all(&(feat.frames() as u32).to_le_bytes())?;
        f.write_all(&(feat.dim() as u32).to_le_bytes())?;
        f.write_all(&(feat.frame_rate_ms as f32).to_le_bytes())?;
        for v in feat.values.iter() {
            f.write_all(&(*v as f32).to_le_bytes())?;
        }
        f.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_feature_dump(path: &Path) -> Result<FeatureMatrix> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let frames = read_u32(&mut f, path)? as usize;
    let dim = read_u32(&mut f, path)? as usize;
    let mut rate = [0u8; 4];
    f.read_exact(&mut rate)
        .map_err(|_| corrupt(path, "truncated header"))?;
    let frame_rate_ms = f32::from_le_bytes(rate) as f64;
    let mut values = Array2::zeros((frames, dim));
    let mut b = [0u8; 4];
    for v in values.iter_mut() {
        f.read_exact(&mut b).map_err(|_| corrupt(path, "truncated data"))?;
        *v = f32::from_le_bytes(b) as f64;
    }
    Ok(FeatureMatrix { values, frame_rate_ms })
}

fn read_u32(f: &mut impl Read, path: &Path) -> Result<u32> {
    let mut b = [0u8; 4];
    f.read_exact(&mut b).map_err(|_| corrupt(path, "truncated header"))?;
    Ok(u32::from_le_bytes(b))
}

fn corrupt(path: &Path, reason: &str) -> Error {
    Error::CorruptFile { path: path.display().to_string(), reason: reason.to_string() }
}

/// Frame-averaged feature vector, for separability checks.
pub fn mean_frame(feat: &FeatureMatrix) -> ndarray::Array1<f64> {
    let t = feat.frames() as f64;
    feat.values.sum_axis(ndarray::Axis(0)) / t
}

pub fn l2_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
