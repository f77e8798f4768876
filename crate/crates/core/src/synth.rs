//! Deterministic parametric speech synthesizer.
//!
//! Each vocabulary token is rendered as a short harmonic tone burst whose
//! fundamental frequency is a fixed function of the token id, scaled by a
//! voice profile's pitch. Profiles also control speaking rate and harmonic
//! timbre. This stands in for a real TTS engine as the source of synthetic
//! training audio: crude, but distinct tokens are acoustically separable and
//! the same (tokens, profile, seed) triple always renders the same waveform.

use rand::Rng;

use crate::audio::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng};
use crate::vocab::{Vocabulary, BLANK};

/// Pitch range profiles are drawn from, in Hz.
pub const PITCH_RANGE: (f64, f64) = (90.0, 300.0);
/// Speaking-rate multiplier range.
pub const RATE_RANGE: (f64, f64) = (0.8, 1.25);
/// Base token burst duration before rate scaling, seconds.
const BURST_SECS: f64 = 0.120;
/// Silence between tokens, seconds.
const GAP_SECS: f64 = 0.020;
/// Per-token duration jitter amplitude.
const DURATION_JITTER: f64 = 0.03;
/// Rendered waveforms are normalized to this peak.
const TARGET_PEAK: f64 = 0.5;

/// A discrete synthetic speaker identity. Fully determined by
/// (pool seed, profile id).
#[derive(Debug, Clone, PartialEq)]
pub struct VoiceProfile {
    pub profile_id: u32,
    /// Fundamental-frequency scale anchor, Hz in [90, 300].
    pub base_pitch: f64,
    /// Duration multiplier in [0.8, 1.25].
    pub rate_scale: f64,
    /// Amplitudes of harmonics 1..=3, each in [0, 1].
    pub harmonic_weights: [f64; 3],
}

/// Draws `count` voice profiles deterministically from `pool_seed`.
///
/// Profile `k` consumes a fixed number of draws, so it depends only on
/// (pool_seed, k): a larger pool from the same seed is a superset.
pub fn sample_profiles(pool_seed: u64, count: usize) -> Result<Vec<VoiceProfile>> {
    if count == 0 {
        return Err(Error::invalid("profile count must be at least 1"));
    }
    let mut rng = stream_rng(pool_seed, &[stream::PROFILES]);
    let mut profiles = Vec::with_capacity(count);
    for id in 0..count {
        let base_pitch = rng.random_range(PITCH_RANGE.0..=PITCH_RANGE.1);
        let rate_scale = rng.random_range(RATE_RANGE.0..=RATE_RANGE.1);
        let harmonic_weights = [
            rng.random_range(0.0..=1.0),
            rng.random_range(0.0..=1.0),
            rng.random_range(0.0..=1.0),
        ];
        profiles.push(VoiceProfile {
            profile_id: id as u32,
            base_pitch,
            rate_scale,
            harmonic_weights,
        });
    }
    Ok(profiles)
}

/// Token fundamental frequency: semitone-spaced from 220 Hz, octave-folded
/// into [200, 2000] Hz, then scaled by the profile pitch.
pub fn token_frequency(token_id: u32, profile: &VoiceProfile) -> f64 {
    let mut f = 220.0 * (token_id as f64 / 12.0).exp2();
    while f > 2000.0 {
        f /= 2.0;
    }
    while f < 200.0 {
        f *= 2.0;
    }
    f * (profile.base_pitch / 150.0)
}

/// Renders a token sequence as a waveform under one voice profile.
///
/// Each token becomes a 120 ms (rate-scaled, seed-jittered +-3%) harmonic
/// burst at `token_frequency`, with 20 ms of silence between tokens and the
/// result peak-normalized to 0.5. Pure function of its arguments.
pub fn synthesize(
    tokens: &[u32],
    profile: &VoiceProfile,
    seed: u64,
    vocab: &Vocabulary,
) -> Result<Waveform> {
    if tokens.is_empty() {
        return Err(Error::invalid("cannot synthesize an empty token sequence"));
    }
    for &t in tokens {
        if t == BLANK || !vocab.contains_id(t) {
            return Err(Error::UnknownToken(t));
        }
    }
    let mut rng = stream_rng(seed, &[stream::SYNTH, profile.profile_id as u64]);
    let gap_len = (GAP_SECS * SAMPLE_RATE as f64).round() as usize;
    let mut samples = Vec::new();
    for (i, &t) in tokens.iter().enumerate() {
        let jitter = rng.random_range(-1.0..=1.0) * DURATION_JITTER;
        let secs = BURST_SECS * profile.rate_scale * (1.0 + jitter);
        let n = (secs * SAMPLE_RATE as f64).round() as usize;
        render_burst(token_frequency(t, profile), &profile.harmonic_weights, n, &mut samples);
        if i + 1 < tokens.len() {
            samples.extend(std::iter::repeat(0.0).take(gap_len));
        }
    }
    let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak > 0.0 {
        let scale = TARGET_PEAK / peak;
        for s in &mut samples {
            *s *= scale;
        }
    }
    Ok(Waveform::new(samples))
}

/// One harmonic tone burst with a 5 ms raised-cosine fade at each end.
fn render_burst(f0: f64, weights: &[f64; 3], n: usize, out: &mut Vec<f64>) {
    let fade = (0.005 * SAMPLE_RATE as f64) as usize;
    let fade = fade.min(n / 2);
    for i in 0..n {
        let t = i as f64 / SAMPLE_RATE as f64;
        let mut s = 0.0;
        for (k, &w) in weights.iter().enumerate() {
            let freq = f0 * (k + 1) as f64;
            s += w * (2.0 * std::f64::consts::PI * freq * t).sin();
        }
        let env = if fade == 0 {
            1.0
        } else if i < fade {
            0.5 * (1.0 - (std::f64::consts::PI * i as f64 / fade as f64).cos())
        } else if i >= n - fade {
            0.5 * (1.0 - (std::f64::consts::PI * (n - 1 - i) as f64 / fade as f64).cos())
        } else {
            1.0
        };
        out.push(s * env);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::from_words((0..30).map(|i| format!("w{i}"))).unwrap()
    }

    fn fixed_profile(base_pitch: f64) -> VoiceProfile {
        VoiceProfile {
            profile_id: 0,
            base_pitch,
            rate_scale: 1.0,
            harmonic_weights: [1.0, 0.3, 0.1],
        }
    }

    /// Frequency of the dominant FFT peak of a rendered waveform.
    fn dominant_peak_hz(wave: &Waveform) -> f64 {
        use rustfft::{num_complex::Complex, FftPlanner};
        let n = 8192;
        let mut buf: Vec<Complex<f64>> = wave
            .samples
            .iter()
            .copied()
            .chain(std::iter::repeat(0.0))
            .take(n)
            .map(|s| Complex::new(s, 0.0))
            .collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let (best, _) = buf[..n / 2]
            .iter()
            .enumerate()
            .fold((0usize, 0.0f64), |(bi, bm), (i, c)| {
                let m = c.norm_sqr();
                if m > bm {
                    (i, m)
                } else {
                    (bi, bm)
                }
            });
        best as f64 * SAMPLE_RATE as f64 / n as f64
    }

    #[test]
    fn profiles_are_deterministic_and_within_ranges() {
        let a = sample_profiles(7, 500).unwrap();
        let b = sample_profiles(7, 500).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 500);
        for (i, p) in a.iter().enumerate() {
            assert_eq!(p.profile_id, i as u32);
            assert!(p.base_pitch >= PITCH_RANGE.0 && p.base_pitch <= PITCH_RANGE.1);
            assert!(p.rate_scale >= RATE_RANGE.0 && p.rate_scale <= RATE_RANGE.1);
            assert!(p.harmonic_weights.iter().all(|w| (0.0..=1.0).contains(w)));
        }
    }

    #[test]
    fn smaller_pool_is_a_prefix_of_larger() {
        let small = sample_profiles(7, 32).unwrap();
        let large = sample_profiles(7, 500).unwrap();
        assert_eq!(small.len(), 32);
        assert_eq!(&large[..32], &small[..]);
    }

    #[test]
    fn zero_count_is_invalid() {
        assert!(sample_profiles(7, 0).is_err());
    }

    #[test]
    fn synthesis_is_deterministic() {
        let v = vocab();
        let p = fixed_profile(150.0);
        let a = synthesize(&[1, 5, 3], &p, 42, &v).unwrap();
        let b = synthesize(&[1, 5, 3], &p, 42, &v).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_and_unknown_tokens_rejected() {
        let v = vocab();
        let p = fixed_profile(150.0);
        assert!(matches!(synthesize(&[], &p, 0, &v), Err(Error::InvalidArgument(_))));
        assert!(matches!(synthesize(&[99], &p, 0, &v), Err(Error::UnknownToken(99))));
        assert!(matches!(synthesize(&[BLANK], &p, 0, &v), Err(Error::UnknownToken(0))));
    }

    #[test]
    fn distinct_tokens_have_separated_spectral_peaks() {
        let v = vocab();
        let p = fixed_profile(150.0);
        let a = synthesize(&[5], &p, 0, &v).unwrap();
        let b = synthesize(&[10], &p, 0, &v).unwrap();
        let fa = dominant_peak_hz(&a);
        let fb = dominant_peak_hz(&b);
        assert!(
            (fa - fb).abs() >= 20.0,
            "peaks too close: {fa:.1} Hz vs {fb:.1} Hz"
        );
    }

    #[test]
    fn doubling_pitch_doubles_the_dominant_peak() {
        let v = vocab();
        let low = synthesize(&[3], &fixed_profile(100.0), 0, &v).unwrap();
        let high = synthesize(&[3], &fixed_profile(200.0), 0, &v).unwrap();
        let fl = dominant_peak_hz(&low);
        let fh = dominant_peak_hz(&high);
        let ratio = fh / fl;
        assert!(
            (ratio - 2.0).abs() <= 0.1,
            "expected ~2x peak ratio, got {ratio:.3} ({fl:.1} -> {fh:.1})"
        );
    }

    #[test]
    fn output_is_bounded_by_half() {
        let v = vocab();
        let p = VoiceProfile {
            profile_id: 9,
            base_pitch: 290.0,
            rate_scale: 1.25,
            harmonic_weights: [1.0, 1.0, 1.0],
        };
        let w = synthesize(&[1, 2, 3, 4], &p, 11, &v).unwrap();
        assert!(w.peak() <= 0.5 + 1e-12);
        assert!(w.peak() > 0.49);
    }

    #[test]
    fn token_frequency_folds_into_band() {
        let p = fixed_profile(150.0);
        for id in 0..200 {
            let f = token_frequency(id, &p);
            assert!((200.0..=2000.0).contains(&f), "id {id} -> {f}");
        }
    }
}
