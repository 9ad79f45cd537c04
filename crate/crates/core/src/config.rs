use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fingerprint::FingerprintLayout;
use crate::harmony::NUM_CHROMA;
use crate::rhythm::{TempoBlock, DEFAULT_ALPHA, DEFAULT_BPM_RANGE};
use crate::spectral::{StftConfig, WindowKind};

/// Every tunable of the fingerprinting and recommendation pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub sample_rate: u32,
    pub frame_size: usize,
    pub hop: usize,
    pub window: WindowKind,
    pub n_mels: usize,
    pub n_mfcc: usize,
    pub segment_start_s: f64,
    pub segment_dur_s: f64,
    pub variance_target: f64,
    pub k: usize,
    pub alpha: f64,
    pub bpm_range: [f64; 2],
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            sample_rate: 22050,
            frame_size: 2048,
            hop: 512,
            window: WindowKind::Hann,
            n_mels: 26,
            n_mfcc: 13,
            segment_start_s: 60.0,
            segment_dur_s: 60.0,
            variance_target: 0.95,
            k: 3,
            alpha: DEFAULT_ALPHA,
            bpm_range: [DEFAULT_BPM_RANGE.0, DEFAULT_BPM_RANGE.1],
        }
    }
}

impl PipelineConfig {
    pub fn stft(&self) -> StftConfig {
        StftConfig {
            frame_size: self.frame_size,
            hop: self.hop,
            window: self.window,
        }
    }

    pub fn layout(&self) -> FingerprintLayout {
        FingerprintLayout {
            spectrum: self.frame_size / 2 + 1,
            mfcc: self.n_mfcc,
            chroma: NUM_CHROMA,
            tempo: TempoBlock::LEN,
        }
    }

    pub fn fingerprint_len(&self) -> usize {
        self.layout().len()
    }

    pub fn validate(&self) -> Result<()> {
        self.stft().validate()?;
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.sample_rate == 0 {
            return fail("sample rate must be positive".into());
        }
        if self.n_mels == 0 || self.n_mfcc == 0 || self.n_mfcc > self.n_mels {
            return fail(format!(
                "{} MFCCs from {} mel filters",
                self.n_mfcc, self.n_mels
            ));
        }
        if !(self.segment_dur_s > 0.0) || !(self.segment_start_s >= 0.0) {
            return fail(format!(
                "segment start {} s, duration {} s",
                self.segment_start_s, self.segment_dur_s
            ));
        }
        if !(self.variance_target > 0.0 && self.variance_target <= 1.0) {
            return fail(format!(
                "variance target {} outside (0, 1]",
                self.variance_target
            ));
        }
        if self.k == 0 {
            return fail("k must be at least 1".into());
        }
        if !(self.alpha >= 0.0) {
            return fail(format!("alpha {} must be non-negative", self.alpha));
        }
        let [lo, hi] = self.bpm_range;
        if !(lo > 0.0 && hi > lo) {
            return fail(format!("bpm range {lo}..{hi}"));
        }
        Ok(())
    }
}
