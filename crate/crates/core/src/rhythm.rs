//! Onset strength, tempo estimation and dynamic-programming beat tracking.
//!
//! The tracker maximizes the sum of onset strengths at the chosen beats plus
//! `alpha` times a penalty on every inter-beat gap that departs from the
//! ideal period. The penalty is `-(ln(gap / period))^2`.
//!
//! Envelope index `n` measures the change between STFT frames `n` and `n + 1`,
//! and beat times are reported as `frame / frame_rate`. An impulse at sample
//! `s` first enters frame `floor((s - N) / H) + 1`, so reported beat times
//! lead the audio by roughly one frame length.

use crate::error::{Error, Result};
use crate::timbre::{MelSpectrogram, LOG_FLOOR};

pub const DEFAULT_ALPHA: f64 = 680.0;
pub const DEFAULT_BPM_RANGE: (f64, f64) = (30.0, 240.0);

/// Minimum share of the strongest autocorrelation a sub-multiple lag must
/// keep to be taken as the beat period.
const HARMONIC_SHARE: f64 = 0.5;
const MAX_HARMONIC: usize = 8;

/// Half-wave-rectified log-mel flux, one value per pair of adjacent frames.
#[derive(Debug, Clone, PartialEq)]
pub struct OnsetEnvelope {
    pub values: Vec<f64>,
    /// Frames per second (`sample_rate / hop`).
    pub frame_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TempoEstimate {
    pub tempo_bpm: f64,
    /// Ideal beat spacing in envelope frames; fractional.
    pub beat_period: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeatSequence {
    pub beat_frames: Vec<usize>,
    pub beat_times: Vec<f64>,
    pub tempo_bpm: f64,
}

pub fn onset_envelope(mel: &MelSpectrogram) -> Result<OnsetEnvelope> {
    let frames = mel.values.nrows();
    if frames < 2 {
        return Err(Error::InsufficientAudio {
            needed_s: 2.0 / mel.frame_rate,
            available_s: frames as f64 / mel.frame_rate,
        });
    }
    let log_mel = mel.values.mapv(|s| (s + LOG_FLOOR).ln());
    let values = log_mel
        .outer_iter()
        .zip(log_mel.outer_iter().skip(1))
        .map(|(prev, cur)| {
            cur.iter()
                .zip(prev.iter())
                .map(|(c, p)| (c - p).max(0.0))
                .sum()
        })
        .collect();
    Ok(OnsetEnvelope {
        values,
        frame_rate: mel.frame_rate,
    })
}

fn autocorrelation(x: &[f64], max_lag: usize) -> Vec<f64> {
    let t = x.len();
    (0..=max_lag)
        .map(|lag| {
            let s: f64 = x.iter().zip(&x[lag..]).map(|(a, b)| a * b).sum();
            s / (t - lag) as f64
        })
        .collect()
}

/// Global tempo from the autocorrelation of the mean-removed envelope.
///
/// The strongest lag inside `bpm_range` is located first. When one of its
/// integer sub-multiples (down to the fastest allowed tempo) still carries at
/// least half of that correlation, the shortest such sub-multiple is taken,
/// since a pulse train correlates at every multiple of its own period. The
/// period is then refined to a fraction of a frame by the centroid of the
/// positive correlation around the peak.
pub fn estimate_tempo(env: &OnsetEnvelope, bpm_range: (f64, f64)) -> Result<TempoEstimate> {
    let (bpm_lo, bpm_hi) = bpm_range;
    if !(bpm_lo > 0.0 && bpm_hi > bpm_lo) {
        return Err(Error::InvalidConfig(format!(
            "bpm range {bpm_lo}..{bpm_hi}"
        )));
    }
    if env.values.iter().all(|&v| v == 0.0) {
        return Err(Error::NoOnsets);
    }
    let t = env.values.len();
    let mean = env.values.iter().sum::<f64>() / t as f64;
    let x: Vec<f64> = env.values.iter().map(|v| v - mean).collect();

    let min_lag = ((60.0 * env.frame_rate / bpm_hi).ceil() as usize).max(1);
    let max_lag = ((60.0 * env.frame_rate / bpm_lo).floor() as usize).min(t.saturating_sub(2));
    if max_lag < min_lag {
        return Err(Error::InsufficientAudio {
            needed_s: (min_lag + 2) as f64 / env.frame_rate,
            available_s: t as f64 / env.frame_rate,
        });
    }
    let ac = autocorrelation(&x, max_lag + 1);
    if ac[0] <= 0.0 {
        return Err(Error::NoOnsets);
    }

    let mut peak = min_lag;
    for lag in min_lag..=max_lag {
        if ac[lag] > ac[peak] {
            peak = lag;
        }
    }

    let support = |lag: usize| -> f64 {
        (lag.saturating_sub(1)..=lag + 1)
            .filter(|&l| l < ac.len())
            .map(|l| ac[l].max(0.0))
            .sum()
    };
    let peak_support = support(peak);
    let mut divisor = 1;
    for m in 2..=MAX_HARMONIC {
        let c = peak as f64 / m as f64;
        if c.ceil() < min_lag as f64 {
            break;
        }
        let candidates = [c.floor() as usize, c.ceil() as usize];
        let best = candidates
            .iter()
            .filter(|&&l| l >= min_lag && l <= max_lag)
            .map(|&l| support(l))
            .fold(0.0, f64::max);
        if peak_support > 0.0 && best >= HARMONIC_SHARE * peak_support {
            divisor = m;
        }
    }

    let (mut num, mut den) = (0.0, 0.0);
    for (lag, a) in ac.iter().enumerate().take(peak + 2).skip(peak - 1) {
        let w = a.max(0.0);
        num += w * lag as f64;
        den += w;
    }
    let refined = if den > 0.0 { num / den } else { peak as f64 };
    let beat_period = refined / divisor as f64;
    Ok(TempoEstimate {
        tempo_bpm: 60.0 * env.frame_rate / beat_period,
        beat_period,
    })
}

/// Gap penalty `-(ln(gap / period))^2`; zero when the gap equals the period.
pub fn transition_cost(gap: f64, period: f64) -> f64 {
    let r = (gap / period).ln();
    -r * r
}

/// Admissible gaps between consecutive beats, `[period/2, 2 period]` rounded.
pub fn gap_bounds(period: f64) -> (usize, usize) {
    let lo = ((period / 2.0).round() as usize).max(1);
    let hi = ((2.0 * period).round() as usize).max(lo);
    (lo, hi)
}

fn normalized(env: &OnsetEnvelope) -> Result<Vec<f64>> {
    let n = env.values.len() as f64;
    let mean = env.values.iter().sum::<f64>() / n;
    let var = env.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std > 0.0) {
        return Err(Error::NoOnsets);
    }
    Ok(env.values.iter().map(|v| v / std).collect())
}

/// Onset strength of the beats plus `alpha` times the gap penalties, on the
/// unit-variance envelope the tracker optimizes.
pub fn beat_objective(
    env: &OnsetEnvelope,
    beat_frames: &[usize],
    period: f64,
    alpha: f64,
) -> Result<f64> {
    let o = normalized(env)?;
    let onsets: f64 = beat_frames.iter().map(|&t| o[t]).sum();
    let penalty: f64 = beat_frames
        .windows(2)
        .map(|w| transition_cost((w[1] - w[0]) as f64, period))
        .sum();
    Ok(onsets + alpha * penalty)
}

/// Dynamic-programming beat tracker.
///
/// `score(t) = O(t) + max_prev { alpha F(t - prev, period) + score(prev) }`
/// over predecessors at admissible gaps. A frame only links to a predecessor
/// when that term is positive; otherwise it opens a new chain. The last beat
/// is the frame with the best score and the sequence is recovered by
/// following predecessors back to the start.
pub fn track_beats(env: &OnsetEnvelope, beat_period: f64, alpha: f64) -> Result<BeatSequence> {
    if env.values.is_empty() {
        return Err(Error::NoOnsets);
    }
    if !(beat_period >= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "beat period {beat_period} frames < 1"
        )));
    }
    let o = normalized(env)?;
    let (gap_lo, gap_hi) = gap_bounds(beat_period);

    let t_len = o.len();
    let mut score = vec![0.0; t_len];
    let mut back: Vec<Option<usize>> = vec![None; t_len];
    for t in 0..t_len {
        let mut best: Option<(f64, usize)> = None;
        if t >= gap_lo {
            let first = t.saturating_sub(gap_hi);
            for (prev, s) in score.iter().enumerate().take(t - gap_lo + 1).skip(first) {
                let cand = alpha * transition_cost((t - prev) as f64, beat_period) + s;
                if best.is_none_or(|(b, _)| cand > b) {
                    best = Some((cand, prev));
                }
            }
        }
        match best {
            Some((b, prev)) if b > 0.0 => {
                score[t] = o[t] + b;
                back[t] = Some(prev);
            }
            _ => score[t] = o[t],
        }
    }

    let mut end = 0;
    for t in 1..t_len {
        if score[t] > score[end] {
            end = t;
        }
    }
    let mut beat_frames = vec![end];
    while let Some(prev) = back[*beat_frames.last().unwrap()] {
        beat_frames.push(prev);
    }
    beat_frames.reverse();

    let beat_times = beat_frames
        .iter()
        .map(|&f| f as f64 / env.frame_rate)
        .collect();
    Ok(BeatSequence {
        beat_frames,
        beat_times,
        tempo_bpm: 60.0 * env.frame_rate / beat_period,
    })
}

/// Twelve tempo statistics appended to the fingerprint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TempoBlock {
    pub values: [f64; TempoBlock::LEN],
}

impl TempoBlock {
    pub const LEN: usize = 12;
    pub const NAMES: [&'static str; TempoBlock::LEN] = [
        "tempo_bpm",
        "beat_count",
        "mean_ibi_s",
        "std_ibi_s",
        "min_ibi_s",
        "max_ibi_s",
        "median_ibi_s",
        "onset_mean",
        "onset_std",
        "onset_max",
        "beat_strength_mean",
        "beat_strength_std",
    ];

    pub fn zeros() -> Self {
        TempoBlock {
            values: [0.0; Self::LEN],
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        Self::NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| self.values[i])
    }
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    if x.is_empty() {
        return (0.0, 0.0);
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn median(x: &[f64]) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let mid = s.len() / 2;
    if s.len().is_multiple_of(2) {
        0.5 * (s[mid - 1] + s[mid])
    } else {
        s[mid]
    }
}

pub fn tempo_block(beats: &BeatSequence, env: &OnsetEnvelope) -> TempoBlock {
    if beats.beat_frames.is_empty() {
        return TempoBlock::zeros();
    }
    let ibis: Vec<f64> = beats.beat_times.windows(2).map(|w| w[1] - w[0]).collect();
    let (ibi_mean, ibi_std, ibi_min, ibi_max, ibi_median) = if ibis.is_empty() {
        (0.0, 0.0, 0.0, 0.0, 0.0)
    } else {
        let (m, s) = mean_std(&ibis);
        let min = ibis.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = ibis.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (m, s, min, max, median(&ibis))
    };
    let (onset_mean, onset_std) = mean_std(&env.values);
    let onset_max = env.values.iter().cloned().fold(0.0, f64::max);
    let strengths: Vec<f64> = beats
        .beat_frames
        .iter()
        .filter_map(|&f| env.values.get(f).copied())
        .collect();
    let (strength_mean, strength_std) = mean_std(&strengths);

    TempoBlock {
        values: [
            beats.tempo_bpm,
            beats.beat_frames.len() as f64,
            ibi_mean,
            ibi_std,
            ibi_min,
            ibi_max,
            ibi_median,
            onset_mean,
            onset_std,
            onset_max,
            strength_mean,
            strength_std,
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;

    const FRAME_RATE: f64 = 22050.0 / 512.0;

    fn env(values: Vec<f64>) -> OnsetEnvelope {
        OnsetEnvelope {
            values,
            frame_rate: FRAME_RATE,
        }
    }

    fn click_envelope(period: f64, len: usize) -> OnsetEnvelope {
        let mut v = vec![0.0; len];
        let mut t: f64 = 3.0;
        while (t as usize) < len {
            v[t.round() as usize] = 1.0;
            t += period;
        }
        env(v)
    }

    #[test]
    fn constant_mel_has_no_flux() {
        let mel = MelSpectrogram {
            values: Array2::from_elem((10, 26), 3.0),
            frame_rate: FRAME_RATE,
        };
        let e = onset_envelope(&mel).unwrap();
        assert_eq!(e.values.len(), 9);
        assert!(e.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn step_up_spikes_step_down_does_not() {
        let mut v = Array2::from_elem((10, 4), 1.0);
        for i in 5..10 {
            v.row_mut(i).fill(10.0);
        }
        let e = onset_envelope(&MelSpectrogram {
            values: v.clone(),
            frame_rate: FRAME_RATE,
        })
        .unwrap();
        for (n, &x) in e.values.iter().enumerate() {
            if n == 4 {
                assert!(
                    (x - 4.0 * (10.0f64 + LOG_FLOOR).ln() + 4.0 * (1.0f64 + LOG_FLOOR).ln()).abs()
                        < 1e-12
                );
            } else {
                assert_eq!(x, 0.0);
            }
        }

        let down = v.mapv(|x| 11.0 - x);
        let e = onset_envelope(&MelSpectrogram {
            values: down,
            frame_rate: FRAME_RATE,
        })
        .unwrap();
        assert!(e.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_frame_is_insufficient() {
        let mel = MelSpectrogram {
            values: Array2::zeros((1, 26)),
            frame_rate: FRAME_RATE,
        };
        assert!(matches!(
            onset_envelope(&mel),
            Err(Error::InsufficientAudio { .. })
        ));
    }

    #[test]
    fn tempo_of_click_envelopes() {
        for bpm in [60.0, 90.0, 120.0, 150.0, 180.0] {
            let period = 60.0 * FRAME_RATE / bpm;
            let est = estimate_tempo(&click_envelope(period, 1300), DEFAULT_BPM_RANGE).unwrap();
            assert!((est.tempo_bpm - bpm).abs() < 3.0, "{bpm}: {est:?}");
        }
    }

    #[test]
    fn silent_envelope_has_no_tempo() {
        assert!(matches!(
            estimate_tempo(&env(vec![0.0; 500]), DEFAULT_BPM_RANGE),
            Err(Error::NoOnsets)
        ));
        assert!(matches!(
            track_beats(&env(vec![]), 10.0, 680.0),
            Err(Error::NoOnsets)
        ));
        assert!(matches!(
            track_beats(&env(vec![0.0; 50]), 10.0, 680.0),
            Err(Error::NoOnsets)
        ));
    }

    #[test]
    fn penalty_vanishes_at_the_period() {
        assert_eq!(transition_cost(21.5, 21.5), 0.0);
        assert!(transition_cost(20.0, 21.5) < 0.0);
        assert_eq!(transition_cost(10.0, 20.0), transition_cost(40.0, 20.0));
    }

    #[test]
    fn without_penalty_beats_follow_the_onsets() {
        let mut v = vec![0.0; 100];
        v[30] = 1.0;
        v[50] = 2.0;
        let beats = track_beats(&env(v), 20.0, 0.0).unwrap();
        assert_eq!(beats.beat_frames, vec![30, 50]);
        assert!((beats.tempo_bpm - 60.0 * FRAME_RATE / 20.0).abs() < 1e-12);
        assert_eq!(beats.beat_times[0], 30.0 / FRAME_RATE);
    }

    #[test]
    fn tracks_a_regular_click_envelope() {
        let period = 60.0 * FRAME_RATE / 120.0;
        let e = click_envelope(period, 1300);
        let beats = track_beats(&e, period, DEFAULT_ALPHA).unwrap();
        let clicks: Vec<usize> = (0..e.values.len()).filter(|&i| e.values[i] > 0.0).collect();
        let hits = clicks
            .iter()
            .filter(|&&c| beats.beat_frames.iter().any(|&b| b.abs_diff(c) <= 1))
            .count();
        assert!(hits as f64 >= 0.9 * clicks.len() as f64);
    }

    #[test]
    fn tempo_block_degenerate_cases() {
        let e = env(vec![0.5; 20]);
        let none = BeatSequence {
            beat_frames: vec![],
            beat_times: vec![],
            tempo_bpm: 0.0,
        };
        assert_eq!(tempo_block(&none, &e), TempoBlock::zeros());

        let one = BeatSequence {
            beat_frames: vec![3],
            beat_times: vec![3.0 / FRAME_RATE],
            tempo_bpm: 100.0,
        };
        let b = tempo_block(&one, &e);
        assert_eq!(b.get("beat_count"), Some(1.0));
        for name in [
            "mean_ibi_s",
            "std_ibi_s",
            "min_ibi_s",
            "max_ibi_s",
            "median_ibi_s",
        ] {
            assert_eq!(b.get(name), Some(0.0));
        }
    }

    #[test]
    fn tempo_block_regular_beats() {
        let e = OnsetEnvelope {
            values: (0..40)
                .map(|i| if i % 5 == 0 { 2.0 } else { 0.0 })
                .collect(),
            frame_rate: 10.0,
        };
        let frames: Vec<usize> = (0..40).step_by(5).collect();
        let beats = BeatSequence {
            beat_times: frames.iter().map(|&f| f as f64 / 10.0).collect(),
            beat_frames: frames,
            tempo_bpm: 120.0,
        };
        let b = tempo_block(&beats, &e);
        assert_eq!(b.get("tempo_bpm"), Some(120.0));
        assert_eq!(b.get("beat_count"), Some(8.0));
        assert!((b.get("mean_ibi_s").unwrap() - 0.5).abs() < 1e-12);
        assert!(b.get("std_ibi_s").unwrap() < 1e-12);
        assert!((b.get("median_ibi_s").unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(b.get("onset_max"), Some(2.0));
        assert!((b.get("onset_mean").unwrap() - 0.4).abs() < 1e-12);
        assert_eq!(b.get("beat_strength_mean"), Some(2.0));
        assert_eq!(b.get("beat_strength_std"), Some(0.0));
    }

    fn random_envelope(seed: u64, len: usize) -> Vec<f64> {
        // small LCG; the tests only need arbitrary non-negative data
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        (0..len)
            .map(|_| {
                s = s
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                let u = (s >> 11) as f64 / (1u64 << 53) as f64;
                if u > 0.8 {
                    u * 5.0
                } else {
                    u * 0.3
                }
            })
            .collect()
    }

    proptest! {
        #[test]
        fn beats_respect_gap_bounds_and_are_locally_optimal(seed in any::<u64>(), period in 6.0f64..30.0) {
            let e = env(random_envelope(seed, 400));
            let beats = track_beats(&e, period, DEFAULT_ALPHA).unwrap();
            let (lo, hi) = gap_bounds(period);
            for w in beats.beat_frames.windows(2) {
                prop_assert!(w[1] > w[0]);
                let g = w[1] - w[0];
                prop_assert!(g >= lo && g <= hi);
            }
            let best = beat_objective(&e, &beats.beat_frames, period, DEFAULT_ALPHA).unwrap();
            for i in 0..beats.beat_frames.len() {
                for delta in [-1i64, 1] {
                    let mut moved = beats.beat_frames.clone();
                    let f = moved[i] as i64 + delta;
                    if f < 0 || f as usize >= e.values.len() {
                        continue;
                    }
                    moved[i] = f as usize;
                    let feasible = moved.windows(2).all(|w| w[1] > w[0] && (lo..=hi).contains(&(w[1] - w[0])));
                    if feasible {
                        let alt = beat_objective(&e, &moved, period, DEFAULT_ALPHA).unwrap();
                        prop_assert!(alt <= best + 1e-9, "moving beat {} by {} improves {} -> {}", i, delta, best, alt);
                    }
                }
            }
        }

        #[test]
        fn beats_invariant_to_envelope_scale(seed in any::<u64>(), scale in 0.01f64..100.0) {
            let v = random_envelope(seed, 300);
            let a = track_beats(&env(v.clone()), 12.0, DEFAULT_ALPHA).unwrap();
            let b = track_beats(&env(v.iter().map(|x| x * scale).collect()), 12.0, DEFAULT_ALPHA).unwrap();
            prop_assert_eq!(a.beat_frames, b.beat_frames);
        }
    }
}
