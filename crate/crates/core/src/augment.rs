//! Audio- and feature-level augmentation.
//!
//! Waveforms get reverberation (impulse-response convolution) and additive
//! background noise at a target SNR, each applied independently with 60%
//! probability by default. Feature matrices get frequency and time masking
//! where masked cells are refilled with Gaussian noise matching the masked
//! region's statistics.

use ndarray::Array2;
use rand::Rng;

use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::rng::{stream, stream_rng};

/// A room impulse response at the pipeline sample rate.
#[derive(Debug, Clone)]
pub struct AcousticImpulseResponse {
    pub taps: Vec<f64>,
    pub sample_rate: u32,
}

impl AcousticImpulseResponse {
    pub fn new(taps: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::invalid("impulse response must be nonempty"));
        }
        if taps.iter().map(|t| t * t).sum::<f64>() <= 0.0 {
            return Err(Error::invalid("impulse response must carry energy"));
        }
        Ok(AcousticImpulseResponse { taps, sample_rate })
    }
}

#[derive(Debug, Clone)]
pub struct CorruptionPolicy {
    pub p_reverb: f64,
    pub p_noise: f64,
    pub snr_low_db: f64,
    pub snr_high_db: f64,
}

impl Default for CorruptionPolicy {
    fn default() -> Self {
        CorruptionPolicy { p_reverb: 0.6, p_noise: 0.6, snr_low_db: 10.0, snr_high_db: 20.0 }
    }
}

impl CorruptionPolicy {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_reverb", self.p_reverb), ("p_noise", self.p_noise)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        if self.snr_low_db > self.snr_high_db {
            return Err(Error::config("snr_low_db must not exceed snr_high_db"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SpecAugmentConfig {
    pub n_freq_masks: usize,
    pub max_freq_fraction: f64,
    pub max_time_mask_fraction: f64,
    pub time_mask_count_fraction: f64,
    pub time_mask_count_cap: usize,
}

impl Default for SpecAugmentConfig {
    fn default() -> Self {
        SpecAugmentConfig {
            n_freq_masks: 2,
            max_freq_fraction: 0.375,
            max_time_mask_fraction: 0.05,
            time_mask_count_fraction: 0.05,
            time_mask_count_cap: 10,
        }
    }
}

impl SpecAugmentConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in [
            ("max_freq_fraction", self.max_freq_fraction),
            ("max_time_mask_fraction", self.max_time_mask_fraction),
            ("time_mask_count_fraction", self.time_mask_count_fraction),
        ] {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::config(format!("{name} must be in (0, 1], got {f}")));
            }
        }
        Ok(())
    }
}

/// Convolves `x` with the impulse response, truncates to the input length,
/// and renormalizes to the input's peak.
pub fn reverberate(x: &Waveform, air: &AcousticImpulseResponse) -> Result<Waveform> {
    if x.sample_rate != air.sample_rate {
        return Err(Error::invalid(format!(
            "sample rate mismatch: {} vs {}",
            x.sample_rate, air.sample_rate
        )));
    }
    let mut out = convolve_truncate(&x.samples, &air.taps);
    let in_peak = x.peak();
    let out_peak = out.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if in_peak > 0.0 && out_peak > 0.0 {
        let scale = in_peak / out_peak;
        for s in &mut out {
            *s *= scale;
        }
    }
    Ok(Waveform { samples: out, sample_rate: x.sample_rate })
}

/// Linear convolution truncated to the length of `x`.
pub fn convolve_truncate(x: &[f64], taps: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (i, slot) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, &t) in taps.iter().enumerate().take(i + 1) {
            acc += t * x[i - j];
        }
        *slot = acc;
    }
    out
}

/// Adds noise scaled so the signal-to-noise power ratio equals `snr_db`.
/// Noise longer than the signal is cropped from its start; shorter noise is
/// tiled cyclically.
pub fn mix_noise(x: &Waveform, noise: &Waveform, snr_db: f64) -> Result<Waveform> {
    let p_x = x.power();
    if p_x <= 0.0 {
        return Err(Error::DegenerateSignal("signal has zero power".into()));
    }
    if noise.is_empty() {
        return Err(Error::DegenerateSignal("noise is empty".into()));
    }
    let fitted: Vec<f64> = (0..x.len()).map(|i| noise.samples[i % noise.len()]).collect();
    let p_n = fitted.iter().map(|s| s * s).sum::<f64>() / fitted.len() as f64;
    if p_n <= 0.0 {
        return Err(Error::DegenerateSignal("noise has zero power".into()));
    }
    let gain = (p_x / (p_n * 10f64.powf(snr_db / 10.0))).sqrt();
    let samples = x
        .samples
        .iter()
        .zip(&fitted)
        .map(|(s, n)| s + gain * n)
        .collect();
    Ok(Waveform { samples, sample_rate: x.sample_rate })
}

/// What `corrupt` decided and applied for one draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorruptionOutcome {
    pub reverb: Option<usize>,
    pub noise: Option<usize>,
    pub snr_db: Option<f64>,
}

impl CorruptionOutcome {
    pub fn clean(&self) -> bool {
        self.reverb.is_none() && self.noise.is_none()
    }
}

/// Applies the corruption policy with two independent seeded coin flips:
/// reverberation first (if drawn), then noise at a uniformly drawn SNR.
pub fn corrupt(
    x: &Waveform,
    policy: &CorruptionPolicy,
    air_pool: &[AcousticImpulseResponse],
    noise_pool: &[Waveform],
    rng_seed: u64,
) -> Result<(Waveform, CorruptionOutcome)> {
    policy.validate()?;
    if policy.p_reverb > 0.0 && air_pool.is_empty() {
        return Err(Error::config("p_reverb > 0 but the impulse-response pool is empty"));
    }
    if policy.p_noise > 0.0 && noise_pool.is_empty() {
        return Err(Error::config("p_noise > 0 but the noise pool is empty"));
    }
    let mut rng = stream_rng(rng_seed, &[stream::CORRUPT]);
    let do_reverb = rng.random::<f64>() < policy.p_reverb;
    let do_noise = rng.random::<f64>() < policy.p_noise;

    let mut out = x.clone();
    let mut outcome = CorruptionOutcome { reverb: None, noise: None, snr_db: None };
    if do_reverb {
        let idx = rng.random_range(0..air_pool.len());
        out = reverberate(&out, &air_pool[idx])?;
        outcome.reverb = Some(idx);
    }
    if do_noise {
        let idx = rng.random_range(0..noise_pool.len());
        let clip = &noise_pool[idx];
        // random crop window when the clip is longer than the signal
        let slack = clip.len().saturating_sub(out.len());
        let offset = rng.random_range(0..=slack);
        let cropped = Waveform {
            samples: clip.samples[offset..].to_vec(),
            sample_rate: clip.sample_rate,
        };
        let snr = rng.random_range(policy.snr_low_db..=policy.snr_high_db);
        out = mix_noise(&out, &cropped, snr)?;
        outcome.noise = Some(idx);
        outcome.snr_db = Some(snr);
    }
    Ok((out, outcome))
}

/// One rectangular masked region of a feature matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskRegion {
    pub t_start: usize,
    pub t_len: usize,
    pub f_start: usize,
    pub f_len: usize,
}

impl MaskRegion {
    pub fn cells(&self) -> usize {
        self.t_len * self.f_len
    }
}

/// SpecAugment with Gaussian fill, also reporting the drawn mask regions.
///
/// Frequency masks share a combined budget of floor(max_freq_fraction * bins)
/// split evenly; time-mask count is max(1, min(floor(fraction * T), cap)).
/// Each masked cell is replaced by a Gaussian sample with the mean and
/// variance of the original values inside that mask's region; overlapping
/// masks are refilled by the last-applied mask.
pub fn spec_augment_with_masks(
    feat: &FeatureMatrix,
    cfg: &SpecAugmentConfig,
    rng_seed: u64,
) -> (FeatureMatrix, Vec<MaskRegion>) {
    let t = feat.frames();
    let bins = feat.dim();
    debug_assert!(t >= 1 && bins >= 2);
    let mut rng = stream_rng(rng_seed, &[stream::SPEC_AUGMENT]);

    let mut masks = Vec::new();
    let freq_budget = (cfg.max_freq_fraction * bins as f64).floor() as usize;
    let per_mask = if cfg.n_freq_masks == 0 { 0 } else { freq_budget / cfg.n_freq_masks };
    for _ in 0..cfg.n_freq_masks {
        let width = rng.random_range(0..=per_mask);
        let start = rng.random_range(0..=bins - width);
        masks.push(MaskRegion { t_start: 0, t_len: t, f_start: start, f_len: width });
    }

    let max_time_width = (cfg.max_time_mask_fraction * t as f64).floor() as usize;
    let n_time = ((cfg.time_mask_count_fraction * t as f64).floor() as usize)
        .min(cfg.time_mask_count_cap)
        .max(1);
    for _ in 0..n_time {
        let width = rng.random_range(0..=max_time_width);
        let start = rng.random_range(0..=t - width);
        masks.push(MaskRegion { t_start: start, t_len: width, f_start: 0, f_len: bins });
    }

    let original = &feat.values;
    let mut values = original.clone();
    for m in &masks {
        if m.cells() == 0 {
            continue;
        }
        let (mean, var) = region_stats(original, m);
        let std = var.sqrt();
        for ti in m.t_start..m.t_start + m.t_len {
            for fi in m.f_start..m.f_start + m.f_len {
                values[[ti, fi]] = mean + std * standard_normal(&mut rng);
            }
        }
    }
    (
        FeatureMatrix { values, frame_rate_ms: feat.frame_rate_ms },
        masks,
    )
}

pub fn spec_augment(feat: &FeatureMatrix, cfg: &SpecAugmentConfig, rng_seed: u64) -> FeatureMatrix {
    spec_augment_with_masks(feat, cfg, rng_seed).0
}

/// Population mean and variance of the original values inside a region.
fn region_stats(values: &Array2<f64>, m: &MaskRegion) -> (f64, f64) {
    let n = m.cells() as f64;
    let mut sum = 0.0;
    for ti in m.t_start..m.t_start + m.t_len {
        for fi in m.f_start..m.f_start + m.f_len {
            sum += values[[ti, fi]];
        }
    }
    let mean = sum / n;
    let mut ss = 0.0;
    for ti in m.t_start..m.t_start + m.t_len {
        for fi in m.f_start..m.f_start + m.f_len {
            let d = values[[ti, fi]] - mean;
            ss += d * d;
        }
    }
    (mean, ss / n)
}

/// Box-Muller standard normal draw (two uniforms per call, fixed order).
fn standard_normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
