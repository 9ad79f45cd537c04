//! WAV decoding, mono mixdown, resampling and analysis-segment extraction.
//!
//! Only RIFF/WAVE containers are understood. Compressed sources have to be
//! converted to WAV beforehand.

use std::path::Path;

use crate::error::{Error, Result};

const WAVE_FORMAT_PCM: u16 = 1;
const WAVE_FORMAT_IEEE_FLOAT: u16 = 3;
const WAVE_FORMAT_EXTENSIBLE: u16 = 0xFFFE;

/// A mono signal and its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

/// Decoded audio before mixdown, one buffer per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiChannelClip {
    pub channels: Vec<Vec<f64>>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        AudioClip {
            samples,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

impl MultiChannelClip {
    pub fn num_frames(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }
}

impl From<AudioClip> for MultiChannelClip {
    fn from(clip: AudioClip) -> Self {
        MultiChannelClip {
            channels: vec![clip.samples],
            sample_rate: clip.sample_rate,
        }
    }
}

fn le_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn le_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

struct FmtChunk {
    format: u16,
    channels: u16,
    sample_rate: u32,
    bits_per_sample: u16,
}

fn parse_fmt(body: &[u8]) -> Result<FmtChunk> {
    if body.len() < 16 {
        return Err(Error::Decode("fmt chunk shorter than 16 bytes".into()));
    }
    let mut format = le_u16(body, 0);
    if format == WAVE_FORMAT_EXTENSIBLE {
        // cbSize, validBits, channelMask, then the sub-format GUID whose
        // first two bytes carry the real format tag.
        if body.len() < 40 {
            return Err(Error::Decode(
                "truncated WAVE_FORMAT_EXTENSIBLE header".into(),
            ));
        }
        format = le_u16(body, 24);
    }
    Ok(FmtChunk {
        format,
        channels: le_u16(body, 2),
        sample_rate: le_u32(body, 4),
        bits_per_sample: le_u16(body, 14),
    })
}

/// Decode a RIFF/WAVE byte stream into per-channel buffers in [-1, 1].
///
/// Supported encodings are 16- and 24-bit signed integer PCM and 32-bit IEEE
/// float. Integer samples are divided by 2^(bits-1).
pub fn decode_wav(bytes: &[u8]) -> Result<MultiChannelClip> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Decode("missing RIFF/WAVE header".into()));
    }

    let mut fmt = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = le_u32(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        // Streaming writers leave the size at its maximum; take what is there.
        let body_end = body_start.saturating_add(size).min(bytes.len());
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => fmt = Some(parse_fmt(body)?),
            b"data" => data = Some(body),
            _ => {}
        }
        pos = body_start.saturating_add(size).saturating_add(size & 1);
    }

    let fmt = fmt.ok_or_else(|| Error::Decode("no fmt chunk".into()))?;
    let data = data.ok_or_else(|| Error::Decode("no data chunk".into()))?;

    if fmt.channels == 0 {
        return Err(Error::Decode("zero channels declared".into()));
    }
    if fmt.sample_rate == 0 {
        return Err(Error::Decode("zero sample rate declared".into()));
    }

    let bytes_per_sample = match (fmt.format, fmt.bits_per_sample) {
        (WAVE_FORMAT_PCM, 16) => 2,
        (WAVE_FORMAT_PCM, 24) => 3,
        (WAVE_FORMAT_IEEE_FLOAT, 32) => 4,
        (format, bits) => {
            return Err(Error::UnsupportedFormat(format!(
                "format tag {format} with {bits} bits per sample"
            )))
        }
    };

    let n_channels = fmt.channels as usize;
    let frame_bytes = bytes_per_sample * n_channels;
    let n_frames = data.len() / frame_bytes;
    if n_frames == 0 {
        return Err(Error::Decode(
            "data chunk holds no complete sample frame".into(),
        ));
    }

    let mut channels = vec![Vec::with_capacity(n_frames); n_channels];
    for frame in data.chunks_exact(frame_bytes) {
        for (ch, raw) in frame.chunks_exact(bytes_per_sample).enumerate() {
            let v = match bytes_per_sample {
                2 => i16::from_le_bytes([raw[0], raw[1]]) as f64 / 32768.0,
                3 => {
                    // sign-extend through the top byte of an i32
                    let s = i32::from_le_bytes([0, raw[0], raw[1], raw[2]]) >> 8;
                    s as f64 / 8_388_608.0
                }
                _ => {
                    let f = f32::from_le_bytes([raw[0], raw[1], raw[2], raw[3]]);
                    if !f.is_finite() {
                        return Err(Error::Decode("non-finite float sample".into()));
                    }
                    f as f64
                }
            };
            channels[ch].push(v);
        }
    }

    Ok(MultiChannelClip {
        channels,
        sample_rate: fmt.sample_rate,
    })
}

/// Read and decode a WAV file from disk.
pub fn read_wav(path: impl AsRef<Path>) -> Result<MultiChannelClip> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes)
}

/// Encode as 16-bit PCM WAV. Samples are scaled by 32768, rounded and clipped.
pub fn encode_wav_pcm16(clip: &MultiChannelClip) -> Vec<u8> {
    let n_channels = clip.channels.len() as u16;
    let n_frames = clip.num_frames();
    let block_align = 2 * n_channels as u32;
    let data_len = n_frames as u32 * block_align;

    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&WAVE_FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&n_channels.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate * block_align).to_le_bytes());
    out.extend_from_slice(&(block_align as u16).to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for i in 0..n_frames {
        for ch in &clip.channels {
            let q = (ch[i] * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
            out.extend_from_slice(&q.to_le_bytes());
        }
    }
    out
}

/// Mix one or two channels down to mono by the sample-wise mean.
pub fn to_mono(clip: &MultiChannelClip) -> Result<AudioClip> {
    match clip.channels.as_slice() {
        [mono] => Ok(AudioClip::new(mono.clone(), clip.sample_rate)),
        [left, right] => {
            if left.len() != right.len() {
                return Err(Error::shape(
                    "stereo channel length",
                    left.len(),
                    right.len(),
                ));
            }
            let samples = left.iter().zip(right).map(|(l, r)| 0.5 * (l + r)).collect();
            Ok(AudioClip::new(samples, clip.sample_rate))
        }
        [] => Err(Error::Decode("clip has no channels".into())),
        many => Err(Error::UnsupportedFormat(format!(
            "{} channels, only mono and stereo are supported",
            many.len()
        ))),
    }
}

/// Linear-interpolation resampler.
///
/// Output length is `round(len * target / source)`; output sample `i` sits at
/// source position `i * source / target`, clamped to the last input sample.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if target_rate == 0 {
        return Err(Error::InvalidConfig(
            "target sample rate must be positive".into(),
        ));
    }
    if clip.sample_rate == target_rate || clip.is_empty() {
        return Ok(AudioClip::new(clip.samples.clone(), target_rate));
    }

    let src = &clip.samples;
    let ratio = clip.sample_rate as f64 / target_rate as f64;
    let out_len = (src.len() as f64 / ratio).round() as usize;
    let last = src.len() - 1;
    let samples = (0..out_len)
        .map(|i| {
            let pos = i as f64 * ratio;
            let idx = pos.floor() as usize;
            if idx >= last {
                return src[last];
            }
            let frac = pos - idx as f64;
            src[idx] + frac * (src[idx + 1] - src[idx])
        })
        .collect();
    Ok(AudioClip::new(samples, target_rate))
}

/// Cut `dur_s` seconds starting at `start_s`.
///
/// When the track ends inside the requested window but is long enough overall,
/// the window slides left to the latest position that fits.
pub fn extract_segment(clip: &AudioClip, start_s: f64, dur_s: f64) -> Result<AudioClip> {
    if !(dur_s > 0.0) || !(start_s >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "segment start {start_s} s / duration {dur_s} s"
        )));
    }
    let sr = clip.sample_rate as f64;
    let len = (dur_s * sr).round() as usize;
    if clip.len() < len {
        return Err(Error::InsufficientAudio {
            needed_s: dur_s,
            available_s: clip.duration_s(),
        });
    }
    let start = ((start_s * sr).round() as usize).min(clip.len() - len);
    Ok(AudioClip::new(
        clip.samples[start..start + len].to_vec(),
        clip.sample_rate,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn wav_bytes(format: u16, channels: u16, bits: u16, sr: u32, data: &[u8]) -> Vec<u8> {
        let block = channels * bits / 8;
        let mut out = Vec::new();
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&(36 + data.len() as u32).to_le_bytes());
        out.extend_from_slice(b"WAVEfmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&format.to_le_bytes());
        out.extend_from_slice(&channels.to_le_bytes());
        out.extend_from_slice(&sr.to_le_bytes());
        out.extend_from_slice(&(sr * block as u32).to_le_bytes());
        out.extend_from_slice(&block.to_le_bytes());
        out.extend_from_slice(&bits.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&(data.len() as u32).to_le_bytes());
        out.extend_from_slice(data);
        out
    }

    #[test]
    fn decodes_hand_built_pcm16_fixture() {
        let data: Vec<u8> = [0i16, 16384, -16384, 32767]
            .iter()
            .flat_map(|s| s.to_le_bytes())
            .collect();
        let clip = decode_wav(&wav_bytes(1, 1, 16, 8000, &data)).unwrap();
        assert_eq!(clip.sample_rate, 8000);
        assert_eq!(clip.channels.len(), 1);
        assert_eq!(clip.channels[0], vec![0.0, 0.5, -0.5, 32767.0 / 32768.0]);
        assert!((clip.channels[0][3] - 0.99997).abs() < 1e-5);
    }

    #[test]
    fn decodes_pcm24_and_float32() {
        let data24: Vec<u8> = [0x40_0000i32, -0x40_0000]
            .iter()
            .flat_map(|s| s.to_le_bytes()[..3].to_vec())
            .collect();
        let clip = decode_wav(&wav_bytes(1, 1, 24, 44100, &data24)).unwrap();
        assert_eq!(clip.channels[0], vec![0.5, -0.5]);

        let dataf: Vec<u8> = [0.25f32, -1.0]
            .iter()
            .flat_map(|s| s.to_le_bytes())
            .collect();
        let clip = decode_wav(&wav_bytes(3, 1, 32, 44100, &dataf)).unwrap();
        assert_eq!(clip.channels[0], vec![0.25, -1.0]);
    }

    #[test]
    fn stereo_splits_into_equal_channels() {
        let data: Vec<u8> = [100i16, -100, 200, -200, 300, -300]
            .iter()
            .flat_map(|s| s.to_le_bytes())
            .collect();
        let clip = decode_wav(&wav_bytes(1, 2, 16, 22050, &data)).unwrap();
        assert_eq!(clip.channels.len(), 2);
        assert_eq!(clip.channels[0].len(), 3);
        assert_eq!(clip.channels[1].len(), 3);
        assert_eq!(clip.channels[1][2], -300.0 / 32768.0);
    }

    #[test]
    fn empty_data_chunk_is_a_decode_error() {
        let err = decode_wav(&wav_bytes(1, 1, 16, 22050, &[])).unwrap_err();
        assert!(matches!(err, Error::Decode(_)), "{err:?}");
    }

    #[test]
    fn garbage_and_truncation_are_decode_errors() {
        assert!(matches!(decode_wav(b"not a wav"), Err(Error::Decode(_))));
        let full = wav_bytes(1, 1, 16, 22050, &[1, 2, 3, 4]);
        assert!(matches!(decode_wav(&full[..30]), Err(Error::Decode(_))));
    }

    #[test]
    fn unsupported_bit_depths() {
        let err = decode_wav(&wav_bytes(1, 1, 8, 22050, &[1, 2])).unwrap_err();
        assert!(matches!(err, Error::UnsupportedFormat(_)));
        let err = decode_wav(&wav_bytes(7, 1, 8, 22050, &[1, 2])).unwrap_err();
        assert!(matches!(err, Error::UnsupportedFormat(_)));
    }

    #[test]
    fn skips_unknown_chunks_with_padding() {
        let mut bytes = wav_bytes(1, 1, 16, 16000, &[0, 64]);
        // splice a 3-byte LIST chunk (padded to 4) in front of fmt
        let list = [b"LIST".as_slice(), &3u32.to_le_bytes(), &[1, 2, 3, 0]].concat();
        bytes.splice(12..12, list);
        let clip = decode_wav(&bytes).unwrap();
        assert_eq!(clip.channels[0], vec![0.5]);
    }

    #[test]
    fn mono_mixdown() {
        let st = MultiChannelClip {
            channels: vec![vec![1.0], vec![0.0]],
            sample_rate: 1,
        };
        assert_eq!(to_mono(&st).unwrap().samples, vec![0.5]);

        let st = MultiChannelClip {
            channels: vec![vec![0.5, 0.5], vec![-0.5, 0.5]],
            sample_rate: 1,
        };
        assert_eq!(to_mono(&st).unwrap().samples, vec![0.0, 0.5]);

        let mono = MultiChannelClip {
            channels: vec![vec![0.3, -0.3]],
            sample_rate: 1,
        };
        assert_eq!(to_mono(&mono).unwrap().samples, vec![0.3, -0.3]);

        let surround = MultiChannelClip {
            channels: vec![vec![0.0]; 3],
            sample_rate: 1,
        };
        assert!(matches!(
            to_mono(&surround),
            Err(Error::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn resample_constant_and_identity() {
        let clip = AudioClip::new(vec![0.7; 44100], 44100);
        let down = resample(&clip, 22050).unwrap();
        assert_eq!(down.sample_rate, 22050);
        assert_eq!(down.len(), 22050);
        assert!(down.samples.iter().all(|&v| (v - 0.7).abs() < 1e-15));

        let same = resample(&clip, 44100).unwrap();
        assert_eq!(same, clip);
    }

    #[test]
    fn resample_length_rounds() {
        let clip = AudioClip::new(vec![0.0; 1001], 44100);
        assert_eq!(resample(&clip, 22050).unwrap().len(), 501);
        let clip = AudioClip::new(vec![0.0; 10], 8000);
        assert_eq!(resample(&clip, 22050).unwrap().len(), 28);
    }

    #[test]
    fn segment_inside_track() {
        let sr = 100;
        let clip = AudioClip::new((0..180 * sr).map(|i| i as f64).collect(), sr as u32);
        let seg = extract_segment(&clip, 60.0, 60.0).unwrap();
        assert_eq!(seg.len(), 60 * sr);
        assert_eq!(seg.samples[0], (60 * sr) as f64);
    }

    #[test]
    fn default_segment_length_at_22050() {
        let clip = AudioClip::new(vec![0.0; 180 * 22050], 22050);
        let seg = extract_segment(&clip, 60.0, 60.0).unwrap();
        assert_eq!(seg.len(), 1_323_000);
    }

    #[test]
    fn segment_slides_left_when_track_ends_early() {
        let sr = 100;
        let clip = AudioClip::new((0..90 * sr).map(|i| i as f64).collect(), sr as u32);
        let seg = extract_segment(&clip, 60.0, 60.0).unwrap();
        assert_eq!(seg.samples[0], (30 * sr) as f64);
        assert_eq!(*seg.samples.last().unwrap(), (90 * sr - 1) as f64);
    }

    #[test]
    fn segment_longer_than_track_fails() {
        let clip = AudioClip::new(vec![0.0; 30 * 100], 100);
        match extract_segment(&clip, 60.0, 60.0) {
            Err(Error::InsufficientAudio { available_s, .. }) => assert_eq!(available_s, 30.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn pcm16_round_trip_within_one_lsb(samples in proptest::collection::vec(-1.0f64..=1.0, 1..200)) {
            let clip = AudioClip::new(samples.clone(), 22050);
            let back = decode_wav(&encode_wav_pcm16(&clip.into())).unwrap();
            for (a, b) in samples.iter().zip(&back.channels[0]) {
                prop_assert!((a - b).abs() <= 1.0 / 32768.0);
            }
        }

        #[test]
        fn resample_to_own_rate_is_identity(
            samples in proptest::collection::vec(-1.0f64..1.0, 1..100),
            rate in 1u32..100_000,
        ) {
            let clip = AudioClip::new(samples, rate);
            prop_assert_eq!(resample(&clip, rate).unwrap(), clip);
        }

        #[test]
        fn mono_and_segment_commute(
            pairs in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 20..200),
            start in 0.0f64..3.0,
            dur in 0.1f64..1.0,
        ) {
            let st = MultiChannelClip {
                channels: vec![pairs.iter().map(|p| p.0).collect(), pairs.iter().map(|p| p.1).collect()],
                sample_rate: 10,
            };
            let a = extract_segment(&to_mono(&st).unwrap(), start, dur).unwrap();
            let seg_l = extract_segment(&AudioClip::new(st.channels[0].clone(), 10), start, dur).unwrap();
            let seg_r = extract_segment(&AudioClip::new(st.channels[1].clone(), 10), start, dur).unwrap();
            let b = to_mono(&MultiChannelClip { channels: vec![seg_l.samples, seg_r.samples], sample_rate: 10 }).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
