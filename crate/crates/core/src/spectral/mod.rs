//! Analysis windows, short-time Fourier transform and power spectrogram.

mod fft;

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Error, Result};

pub use fft::Radix2Fft;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Hann,
    Rectangular,
}

impl std::str::FromStr for WindowKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hann" => Ok(WindowKind::Hann),
            "rectangular" | "rect" | "boxcar" => Ok(WindowKind::Rectangular),
            other => Err(Error::InvalidConfig(format!("unknown window `{other}`"))),
        }
    }
}

/// Periodic Hann `0.5 (1 - cos(2πn/N))`, or all ones.
pub fn make_window(kind: WindowKind, len: usize) -> Result<Vec<f64>> {
    if len < 2 {
        return Err(Error::InvalidConfig(format!("window length {len} < 2")));
    }
    Ok(match kind {
        WindowKind::Hann => (0..len)
            .map(|n| 0.5 * (1.0 - (2.0 * PI * n as f64 / len as f64).cos()))
            .collect(),
        WindowKind::Rectangular => vec![1.0; len],
    })
}

/// Frame size, hop and window of the STFT.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub frame_size: usize,
    pub hop: usize,
    pub window: WindowKind,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig {
            frame_size: 2048,
            hop: 512,
            window: WindowKind::Hann,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame_size < 2 || !self.frame_size.is_power_of_two() {
            return Err(Error::InvalidConfig(format!(
                "frame size {} must be a power of two >= 2",
                self.frame_size
            )));
        }
        if self.hop == 0 || self.hop > self.frame_size {
            return Err(Error::InvalidConfig(format!(
                "hop {} must lie in 1..={}",
                self.hop, self.frame_size
            )));
        }
        Ok(())
    }

    pub fn num_bins(&self) -> usize {
        self.frame_size / 2 + 1
    }

    /// Number of frames lying fully inside a signal of `len` samples.
    pub fn num_frames(&self, len: usize) -> usize {
        if len < self.frame_size {
            0
        } else {
            (len - self.frame_size) / self.hop + 1
        }
    }
}

/// Where a set of frames came from: enough to map frames and bins to time and Hz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameLayout {
    pub frame_size: usize,
    pub hop: usize,
    pub sample_rate: u32,
}

impl FrameLayout {
    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.hop as f64
    }

    pub fn frame_time(&self, m: usize) -> f64 {
        (m * self.hop) as f64 / self.sample_rate as f64
    }

    pub fn bin_frequency(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate as f64 / self.frame_size as f64
    }
}

/// Complex STFT coefficients, `[frame][bin]` with bins `0..=N/2`.
#[derive(Debug, Clone)]
pub struct ComplexSpectrum {
    pub values: Array2<Complex64>,
    pub layout: FrameLayout,
}

/// Power spectrogram, `[frame][bin]`.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub values: Array2<f64>,
    pub layout: FrameLayout,
}

impl ComplexSpectrum {
    pub fn num_frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_bins(&self) -> usize {
        self.values.ncols()
    }

    pub fn frame_times(&self) -> Vec<f64> {
        (0..self.num_frames())
            .map(|m| self.layout.frame_time(m))
            .collect()
    }
}

impl Spectrogram {
    pub fn num_frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_bins(&self) -> usize {
        self.values.ncols()
    }
}

/// Short-time Fourier transform over frames lying fully inside the signal.
///
/// Frame `m` covers samples `[mH, mH + N)`; no centering or padding is applied.
pub fn stft(signal: &AudioClip, cfg: &StftConfig) -> Result<ComplexSpectrum> {
    cfg.validate()?;
    let n = cfg.frame_size;
    if signal.len() < n {
        return Err(Error::InsufficientAudio {
            needed_s: n as f64 / signal.sample_rate as f64,
            available_s: signal.duration_s(),
        });
    }
    let window = make_window(cfg.window, n)?;
    let fft = Radix2Fft::new(n);
    let n_frames = cfg.num_frames(signal.len());
    let n_bins = cfg.num_bins();

    let rows: Vec<Vec<Complex64>> = (0..n_frames)
        .into_par_iter()
        .map_init(
            || vec![Complex64::new(0.0, 0.0); n],
            |buf, m| {
                let frame = &signal.samples[m * cfg.hop..m * cfg.hop + n];
                for ((b, &x), &w) in buf.iter_mut().zip(frame).zip(&window) {
                    *b = Complex64::new(x * w, 0.0);
                }
                fft.process(buf);
                buf[..n_bins].to_vec()
            },
        )
        .collect();

    let flat: Vec<Complex64> = rows.into_iter().flatten().collect();
    let values =
        Array2::from_shape_vec((n_frames, n_bins), flat).expect("frame rows have uniform length");
    Ok(ComplexSpectrum {
        values,
        layout: FrameLayout {
            frame_size: n,
            hop: cfg.hop,
            sample_rate: signal.sample_rate,
        },
    })
}

/// Element-wise squared magnitude.
pub fn power_spectrogram(spec: &ComplexSpectrum) -> Spectrogram {
    Spectrogram {
        values: spec.values.mapv(|z| z.norm_sqr()),
        layout: spec.layout,
    }
}
