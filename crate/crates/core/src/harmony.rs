//! MIDI-pitch spectrogram and 12-class chromagram.

use ndarray::Array2;

use crate::spectral::Spectrogram;

pub const NUM_PITCHES: usize = 128;
pub const NUM_CHROMA: usize = 12;

/// Equal-tempered MIDI pitch of STFT bin `k` (A4 = 69 at 440 Hz).
///
/// Returns `None` for DC and for bins whose rounded pitch falls outside 0..=127.
pub fn bin_to_midi(k: usize, frame_size: usize, sample_rate: u32) -> Option<usize> {
    if k == 0 {
        return None;
    }
    let f = k as f64 * sample_rate as f64 / frame_size as f64;
    let p = (69.0 + 12.0 * (f / 440.0).log2()).round();
    (0.0..=127.0).contains(&p).then_some(p as usize)
}

/// Energy per MIDI pitch, `[frame][pitch]`.
#[derive(Debug, Clone)]
pub struct PitchSpectrogram {
    pub values: Array2<f64>,
}

/// Energy per pitch class, `[frame][class]`; class 0 is C.
#[derive(Debug, Clone)]
pub struct ChromaMatrix {
    pub values: Array2<f64>,
}

/// Sum spectrogram bins into the MIDI pitch each one maps to.
pub fn log_freq_spectrogram(spec: &Spectrogram) -> PitchSpectrogram {
    let layout = spec.layout;
    let pitch_of: Vec<Option<usize>> = (0..spec.num_bins())
        .map(|k| bin_to_midi(k, layout.frame_size, layout.sample_rate))
        .collect();
    let mut out = Array2::zeros((spec.num_frames(), NUM_PITCHES));
    for (frame, mut dst) in spec.values.outer_iter().zip(out.outer_iter_mut()) {
        for (&e, p) in frame.iter().zip(&pitch_of) {
            if let Some(p) = *p {
                dst[p] += e;
            }
        }
    }
    PitchSpectrogram { values: out }
}

/// Fold pitches onto classes by `p mod 12`.
pub fn chromagram(pitch: &PitchSpectrogram) -> ChromaMatrix {
    let mut out = Array2::zeros((pitch.values.nrows(), NUM_CHROMA));
    for (frame, mut dst) in pitch.values.outer_iter().zip(out.outer_iter_mut()) {
        for (p, &e) in frame.iter().enumerate() {
            dst[p % NUM_CHROMA] += e;
        }
    }
    ChromaMatrix { values: out }
}
