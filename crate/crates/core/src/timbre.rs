//! Mel filterbank energies and MFCCs.

use std::f64::consts::PI;

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::spectral::Spectrogram;

/// Floor added before taking logarithms of energies.
pub const LOG_FLOOR: f64 = 1e-10;

const MEL_SCALE: f64 = 1127.0;
const MEL_BREAK_HZ: f64 = 700.0;

/// `1127 ln(1 + f / 700)`.
pub fn hz_to_mel(f: f64) -> Result<f64> {
    if !(f >= 0.0) {
        return Err(Error::Domain(format!("frequency {f} Hz is negative")));
    }
    Ok(MEL_SCALE * (f / MEL_BREAK_HZ).ln_1p())
}

pub fn mel_to_hz(mel: f64) -> f64 {
    MEL_BREAK_HZ * (mel / MEL_SCALE).exp_m1()
}

/// Triangular filters equally spaced on the mel scale from 0 Hz to Nyquist.
#[derive(Debug, Clone)]
pub struct MelFilterBank {
    /// `[filter][bin]`
    pub weights: Array2<f64>,
    pub center_freqs: Vec<f64>,
    /// The `M + 2` filter edges, in mel.
    pub boundary_mels: Vec<f64>,
    // nonzero bin span per filter, for the sparse product
    spans: Vec<(usize, usize)>,
}

impl MelFilterBank {
    pub fn num_filters(&self) -> usize {
        self.weights.nrows()
    }

    pub fn num_bins(&self) -> usize {
        self.weights.ncols()
    }
}

pub fn build_mel_filterbank(
    num_filters: usize,
    frame_size: usize,
    sample_rate: u32,
) -> Result<MelFilterBank> {
    if num_filters == 0 {
        return Err(Error::InvalidConfig("need at least one mel filter".into()));
    }
    if frame_size < 2 || sample_rate == 0 {
        return Err(Error::InvalidConfig(format!(
            "frame size {frame_size} / sample rate {sample_rate}"
        )));
    }
    let n_bins = frame_size / 2 + 1;
    let top = hz_to_mel(sample_rate as f64 / 2.0)?;
    let n_edges = num_filters + 2;
    let boundary_mels: Vec<f64> = (0..n_edges)
        .map(|i| top * i as f64 / (n_edges - 1) as f64)
        .collect();
    let edge_bins: Vec<f64> = boundary_mels
        .iter()
        .map(|&m| mel_to_hz(m) * frame_size as f64 / sample_rate as f64)
        .collect();

    let mut weights = Array2::zeros((num_filters, n_bins));
    let mut spans = Vec::with_capacity(num_filters);
    for m in 0..num_filters {
        let (lo, mid, hi) = (edge_bins[m], edge_bins[m + 1], edge_bins[m + 2]);
        let first = lo.ceil() as usize;
        let last = (hi.floor() as usize).min(n_bins - 1);
        for k in first..=last {
            let x = k as f64;
            let w = if x <= mid {
                (x - lo) / (mid - lo)
            } else {
                (hi - x) / (hi - mid)
            };
            weights[[m, k]] = w.max(0.0);
        }
        spans.push((first.min(n_bins), last + 1));
    }

    let center_freqs = boundary_mels[1..=num_filters]
        .iter()
        .map(|&m| mel_to_hz(m))
        .collect();
    Ok(MelFilterBank {
        weights,
        center_freqs,
        boundary_mels,
        spans,
    })
}

/// Mel energies `[frame][filter]`.
#[derive(Debug, Clone)]
pub struct MelSpectrogram {
    pub values: Array2<f64>,
    /// Frames per second of the source spectrogram.
    pub frame_rate: f64,
}

/// MFCCs `[frame][coefficient]`.
#[derive(Debug, Clone)]
pub struct MfccMatrix {
    pub values: Array2<f64>,
}

/// `S(frame, m) = Σ_k Θ(frame, k) J_m(k)`.
pub fn mel_energies(spec: &Spectrogram, fb: &MelFilterBank) -> Result<MelSpectrogram> {
    if spec.num_bins() != fb.num_bins() {
        return Err(Error::shape(
            "mel filterbank bins",
            fb.num_bins(),
            spec.num_bins(),
        ));
    }
    let mut out = Array2::zeros((spec.num_frames(), fb.num_filters()));
    for (frame, mut dst) in spec.values.outer_iter().zip(out.outer_iter_mut()) {
        for (m, &(a, b)) in fb.spans.iter().enumerate() {
            if a >= b {
                continue;
            }
            let w = fb.weights.row(m);
            dst[m] = (a..b).map(|k| frame[k] * w[k]).sum();
        }
    }
    Ok(MelSpectrogram {
        values: out,
        frame_rate: spec.layout.frame_rate(),
    })
}

/// DCT-II of log mel energies: `Λ(n) = Σ_m ln(S(m) + ε) cos(πn(m + ½)/M)`.
pub fn mfcc(mel: &MelSpectrogram, n_coeffs: usize) -> Result<MfccMatrix> {
    let n_filters = mel.values.ncols();
    if n_coeffs > n_filters {
        return Err(Error::InvalidConfig(format!(
            "{n_coeffs} coefficients requested from {n_filters} mel filters"
        )));
    }
    let basis = dct_basis(n_coeffs, n_filters);
    let log_mel = mel.values.mapv(|s| (s + LOG_FLOOR).ln());
    Ok(MfccMatrix {
        values: log_mel.dot(&basis.t()),
    })
}

/// `[n][m] = cos(πn(m + ½)/M)`.
pub fn dct_basis(n_coeffs: usize, n_filters: usize) -> Array2<f64> {
    Array2::from_shape_fn((n_coeffs, n_filters), |(n, m)| {
        (PI * n as f64 * (m as f64 + 0.5) / n_filters as f64).cos()
    })
}

impl MfccMatrix {
    pub fn num_coeffs(&self) -> usize {
        self.values.len_of(Axis(1))
    }
}
