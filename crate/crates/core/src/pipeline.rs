//! End-to-end orchestration: audio file to fingerprint, corpus to model,
//! model to recommendations.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;

use crate::audio::{extract_segment, read_wav, resample, to_mono, AudioClip, MultiChannelClip};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::fingerprint::{assemble_fingerprint, row_means, Fingerprint, PcaModel};
use crate::harmony::{chromagram, log_freq_spectrogram, ChromaMatrix};
use crate::recommend::{
    distance_matrix, evaluate_genre_accuracy, top_k, EvaluationReport, RecommendationSet,
};
use crate::rhythm::{
    estimate_tempo, onset_envelope, tempo_block, track_beats, BeatSequence, OnsetEnvelope,
    TempoBlock,
};
use crate::spectral::{power_spectrogram, stft, Spectrogram};
use crate::store::{IndexRecord, ModelFile, TagEntry, TrackEntry};
use crate::timbre::{
    build_mel_filterbank, mel_energies, mfcc, MelFilterBank, MelSpectrogram, MfccMatrix,
};

/// Every intermediate of one track's analysis.
#[derive(Debug, Clone)]
pub struct TrackFeatures {
    pub spectrogram: Spectrogram,
    pub mel: MelSpectrogram,
    pub mfcc: MfccMatrix,
    pub chroma: ChromaMatrix,
    pub onset: OnsetEnvelope,
    /// `None` when the segment has no usable pulse; the tempo block is then zero.
    pub beats: Option<BeatSequence>,
    pub tempo: TempoBlock,
    pub fingerprint: Fingerprint,
}

/// Feature extractor bound to one configuration. Cheap to share across threads.
#[derive(Debug, Clone)]
pub struct Analyzer {
    config: PipelineConfig,
    filterbank: MelFilterBank,
}

impl Analyzer {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let filterbank =
            build_mel_filterbank(config.n_mels, config.frame_size, config.sample_rate)?;
        Ok(Analyzer { config, filterbank })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    /// Mono mixdown, resampling to the working rate, then the analysis segment.
    pub fn prepare(&self, clip: &MultiChannelClip) -> Result<AudioClip> {
        let mono = to_mono(clip)?;
        let mono = resample(&mono, self.config.sample_rate)?;
        extract_segment(
            &mono,
            self.config.segment_start_s,
            self.config.segment_dur_s,
        )
    }

    pub fn analyze(&self, track_id: &str, segment: &AudioClip) -> Result<TrackFeatures> {
        let spectrogram = power_spectrogram(&stft(segment, &self.config.stft())?);
        let mel = mel_energies(&spectrogram, &self.filterbank)?;
        let mfcc = mfcc(&mel, self.config.n_mfcc)?;
        let chroma = chromagram(&log_freq_spectrogram(&spectrogram));
        let onset = onset_envelope(&mel)?;

        let beats = match self.beats(&onset) {
            Ok(b) => Some(b),
            Err(e @ (Error::NoOnsets | Error::InsufficientAudio { .. })) => {
                log::debug!("{track_id}: no beat structure ({e}); tempo block left at zero");
                None
            }
            Err(e) => return Err(e),
        };
        let tempo = beats
            .as_ref()
            .map_or_else(TempoBlock::zeros, |b| tempo_block(b, &onset));

        let fingerprint = assemble_fingerprint(
            track_id,
            &self.config.layout(),
            &row_means(&spectrogram.values)?,
            &row_means(&mfcc.values)?,
            &row_means(&chroma.values)?,
            &tempo,
        )?;
        Ok(TrackFeatures {
            spectrogram,
            mel,
            mfcc,
            chroma,
            onset,
            beats,
            tempo,
            fingerprint,
        })
    }

    fn beats(&self, onset: &OnsetEnvelope) -> Result<BeatSequence> {
        let [lo, hi] = self.config.bpm_range;
        let tempo = estimate_tempo(onset, (lo, hi))?;
        track_beats(onset, tempo.beat_period, self.config.alpha)
    }

    pub fn analyze_file(&self, track_id: &str, path: impl AsRef<Path>) -> Result<TrackFeatures> {
        let clip = read_wav(path)?;
        self.analyze(track_id, &self.prepare(&clip)?)
    }
}

/// A track that could not be fingerprinted.
#[derive(Debug)]
pub struct ScanFailure {
    pub track_id: String,
    pub path: PathBuf,
    pub error: Error,
}

impl fmt::Display for ScanFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} ({}): {}",
            self.track_id,
            self.path.display(),
            self.error
        )
    }
}

#[derive(Debug)]
pub struct ScanReport {
    /// Sorted by track id.
    pub records: Vec<IndexRecord>,
    pub failures: Vec<ScanFailure>,
}

struct ScanJob {
    track_id: String,
    stored_path: String,
    file: PathBuf,
    genres: Vec<String>,
}

fn jobs_from_tags(input_dir: &Path, tags: &[TagEntry]) -> Vec<ScanJob> {
    tags.iter()
        .map(|t| {
            let p = Path::new(&t.path);
            ScanJob {
                track_id: t.tags.track_id.clone(),
                stored_path: t.path.clone(),
                file: if p.is_absolute() {
                    p.to_path_buf()
                } else {
                    input_dir.join(p)
                },
                genres: t.tags.genres.iter().cloned().collect(),
            }
        })
        .collect()
}

fn jobs_from_dir(input_dir: &Path) -> Result<Vec<ScanJob>> {
    let entries = std::fs::read_dir(input_dir).map_err(|e| Error::io(input_dir, e))?;
    let mut jobs = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(input_dir, e))?.path();
        let is_wav = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("wav"));
        if !is_wav || !path.is_file() {
            continue;
        }
        let (Some(stem), Some(name)) = (path.file_stem(), path.file_name()) else {
            continue;
        };
        jobs.push(ScanJob {
            track_id: stem.to_string_lossy().into_owned(),
            stored_path: name.to_string_lossy().into_owned(),
            file: path.clone(),
            genres: Vec::new(),
        });
    }
    Ok(jobs)
}

/// Fingerprint a corpus.
///
/// With tags, each tag row names one track whose path is resolved against
/// `input_dir` when relative. Without tags every `.wav` file directly inside
/// `input_dir` is a track identified by its file stem. `jobs = 0` uses all
/// cores. Per-track failures are collected, not fatal; a scan with no
/// successful track fails with [`Error::EmptyCorpus`].
pub fn scan(
    input_dir: &Path,
    tags: Option<&[TagEntry]>,
    config: &PipelineConfig,
    jobs: usize,
) -> Result<ScanReport> {
    let analyzer = Analyzer::new(config.clone())?;
    let work = match tags {
        Some(t) => jobs_from_tags(input_dir, t),
        None => jobs_from_dir(input_dir)?,
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let outcomes: Vec<_> = pool.install(|| {
        work.into_par_iter()
            .map(
                |job| match analyzer.analyze_file(&job.track_id, &job.file) {
                    Ok(features) => Ok(IndexRecord::new(
                        job.track_id,
                        job.stored_path,
                        job.genres,
                        features.fingerprint.values,
                    )),
                    Err(error) => Err(ScanFailure {
                        track_id: job.track_id,
                        path: job.file,
                        error,
                    }),
                },
            )
            .collect()
    });

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(r) => records.push(r),
            Err(f) => failures.push(f),
        }
    }
    if records.is_empty() {
        for f in &failures {
            log::warn!("skipped {f}");
        }
        return Err(Error::EmptyCorpus);
    }
    records.sort_by(|a, b| a.track_id.cmp(&b.track_id));
    failures.sort_by(|a, b| a.track_id.cmp(&b.track_id));
    Ok(ScanReport { records, failures })
}

/// Fit standardization and PCA on the indexed fingerprints and reduce every
/// track. Input order does not matter.
///
/// Returns the persisted model together with the in-memory fit, which still
/// knows the variance ratios of the discarded axes.
pub fn build_model(
    records: &[IndexRecord],
    config: &PipelineConfig,
) -> Result<(ModelFile, PcaModel)> {
    config.validate()?;
    if records.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "PCA needs at least 2 indexed tracks, got {}",
            records.len()
        )));
    }
    let mut sorted: Vec<&IndexRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.track_id.cmp(&b.track_id));
    if let Some(w) = sorted.windows(2).find(|w| w[0].track_id == w[1].track_id) {
        return Err(Error::DuplicateTrack(w[0].track_id.clone()));
    }

    let d = config.fingerprint_len();
    let mut corpus = Array2::zeros((sorted.len(), d));
    for (mut row, r) in corpus.outer_iter_mut().zip(&sorted) {
        if r.fingerprint.len() != d {
            return Err(Error::shape(
                format!("fingerprint of {}", r.track_id),
                d,
                r.fingerprint.len(),
            ));
        }
        row.assign(&ndarray::ArrayView1::from(&r.fingerprint[..]));
    }

    let pca = PcaModel::fit(&corpus, config.variance_target)?;
    let reduced = sorted
        .iter()
        .map(|r| {
            pca.project(&Fingerprint {
                track_id: r.track_id.clone(),
                values: r.fingerprint.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let tracks = sorted
        .iter()
        .map(|r| TrackEntry {
            track_id: r.track_id.clone(),
            path: r.path.clone(),
            genres: r.genres.clone(),
        })
        .collect();
    Ok((ModelFile::new(config.clone(), &pca, tracks, &reduced), pca))
}

pub fn recommend(model: &ModelFile, track_id: &str, k: usize) -> Result<RecommendationSet> {
    let dist = distance_matrix(&model.reduced_fingerprints())?;
    top_k(&dist, track_id, k)
}

pub fn evaluate(model: &ModelFile, k: usize) -> Result<EvaluationReport> {
    let dist = distance_matrix(&model.reduced_fingerprints())?;
    let missing: Vec<String> = model
        .tracks
        .iter()
        .filter(|t| t.genres.iter().all(|g| g.trim().is_empty()))
        .map(|t| t.track_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::TagsMissing(missing));
    }
    evaluate_genre_accuracy(&dist, &model.track_tags(), k)
}

/// `component,ratio,cumulative` for every computed axis, with a header row.
pub fn write_variance_curve<W: Write>(mut out: W, pca: &PcaModel) -> std::io::Result<()> {
    writeln!(out, "component,ratio,cumulative")?;
    for (i, (r, c)) in pca
        .all_variance_ratio
        .iter()
        .zip(pca.cumulative_variance())
        .enumerate()
    {
        writeln!(out, "{},{r},{c}", i + 1)?;
    }
    Ok(())
}

/// First two reduced coordinates per track, `track_id,pc1,pc2,genres`.
pub fn write_scatter<W: Write>(mut out: W, model: &ModelFile) -> std::io::Result<()> {
    writeln!(out, "track_id,pc1,pc2,genres")?;
    for t in &model.tracks {
        let v = &model.reduced[&t.track_id];
        let pc = |i: usize| v.get(i).copied().unwrap_or(0.0);
        writeln!(
            out,
            "{},{},{},{}",
            t.track_id,
            pc(0),
            pc(1),
            t.genres.join("|")
        )?;
    }
    Ok(())
}

/// Intermediates that `inspect` can dump.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feature {
    Spec,
    Mfcc,
    Chroma,
    Onset,
    Beats,
    Fingerprint,
}

impl std::str::FromStr for Feature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "spec" => Feature::Spec,
            "mfcc" => Feature::Mfcc,
            "chroma" => Feature::Chroma,
            "onset" => Feature::Onset,
            "beats" => Feature::Beats,
            "fingerprint" => Feature::Fingerprint,
            other => return Err(Error::InvalidConfig(format!("unknown feature `{other}`"))),
        })
    }
}

fn write_row<W: Write>(out: &mut W, values: impl IntoIterator<Item = f64>) -> std::io::Result<()> {
    let line: Vec<String> = values.into_iter().map(|v| v.to_string()).collect();
    writeln!(out, "{}", line.join(","))
}

fn write_matrix<W: Write>(out: &mut W, m: &Array2<f64>) -> std::io::Result<()> {
    m.outer_iter()
        .try_for_each(|row| write_row(out, row.iter().copied()))
}

/// Headerless CSV of one intermediate: one row per frame for matrices and
/// the onset envelope, `frame,time_s` per beat, a single row for the
/// fingerprint.
pub fn write_feature<W: Write>(
    mut out: W,
    features: &TrackFeatures,
    feature: Feature,
) -> std::io::Result<()> {
    match feature {
        Feature::Spec => write_matrix(&mut out, &features.spectrogram.values),
        Feature::Mfcc => write_matrix(&mut out, &features.mfcc.values),
        Feature::Chroma => write_matrix(&mut out, &features.chroma.values),
        Feature::Onset => features
            .onset
            .values
            .iter()
            .try_for_each(|v| writeln!(out, "{v}")),
        Feature::Beats => match &features.beats {
            Some(b) => b
                .beat_frames
                .iter()
                .zip(&b.beat_times)
                .try_for_each(|(f, t)| writeln!(out, "{f},{t}")),
            None => Ok(()),
        },
        Feature::Fingerprint => write_row(&mut out, features.fingerprint.values.iter().copied()),
    }
}

/// Index records keyed by id, for joining with model tracks.
pub fn records_by_id(records: &[IndexRecord]) -> HashMap<&str, &IndexRecord> {
    records.iter().map(|r| (r.track_id.as_str(), r)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::encode_wav_pcm16;
    use crate::fingerprint::FINGERPRINT_LEN;
    use crate::recommend::TrackTags;
    use std::f64::consts::PI;

    fn short_config() -> PipelineConfig {
        PipelineConfig {
            segment_start_s: 0.0,
            segment_dur_s: 4.0,
            ..Default::default()
        }
    }

    fn tone(freq: f64, secs: f64, clicks_bpm: Option<f64>) -> AudioClip {
        let sr = 22050;
        let n = (secs * sr as f64) as usize;
        let period = clicks_bpm.map(|b| (60.0 / b * sr as f64) as usize);
        let samples = (0..n)
            .map(|i| {
                let t = i as f64 / sr as f64;
                let click = period.is_some_and(|p| i % p < 40) as u8 as f64 * 0.5;
                0.3 * (2.0 * PI * freq * t).sin() + click
            })
            .collect();
        AudioClip::new(samples, sr)
    }

    #[test]
    fn analyze_produces_full_fingerprint() {
        let a = Analyzer::new(short_config()).unwrap();
        let seg = a.prepare(&tone(440.0, 5.0, Some(120.0)).into()).unwrap();
        let f = a.analyze("t", &seg).unwrap();
        assert_eq!(f.fingerprint.values.len(), FINGERPRINT_LEN);
        assert_eq!(f.mfcc.values.ncols(), 13);
        assert_eq!(f.chroma.values.ncols(), 12);
        let beats = f.beats.expect("click train has beats");
        assert!((beats.tempo_bpm - 120.0).abs() < 3.0, "{}", beats.tempo_bpm);
    }

    #[test]
    fn silence_gets_zero_tempo_block() {
        let a = Analyzer::new(short_config()).unwrap();
        let f = a
            .analyze("s", &AudioClip::new(vec![0.0; 22050 * 4], 22050))
            .unwrap();
        assert!(f.beats.is_none());
        assert_eq!(f.tempo, TempoBlock::zeros());
    }

    #[test]
    fn scan_collects_failures_and_sorts() {
        let dir = tempfile::tempdir().unwrap();
        for (name, freq) in [("b", 330.0), ("a", 220.0)] {
            let wav = encode_wav_pcm16(&tone(freq, 4.5, Some(100.0)).into());
            std::fs::write(dir.path().join(format!("{name}.wav")), wav).unwrap();
        }
        std::fs::write(dir.path().join("c.wav"), b"RIFF garbage").unwrap();
        std::fs::write(dir.path().join("notes.txt"), b"ignored").unwrap();

        let report = scan(dir.path(), None, &short_config(), 2).unwrap();
        let ids: Vec<_> = report.records.iter().map(|r| r.track_id.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);
        assert_eq!(report.failures.len(), 1);
        assert_eq!(report.failures[0].track_id, "c");

        let tags = vec![TagEntry {
            path: "a.wav".into(),
            tags: TrackTags::new("x", ["Pop"]).unwrap(),
        }];
        let report = scan(dir.path(), Some(&tags), &short_config(), 1).unwrap();
        assert_eq!(report.records[0].genres, ["pop"]);
        assert_eq!(report.records[0].path, "a.wav");

        let empty = tempfile::tempdir().unwrap();
        assert!(matches!(
            scan(empty.path(), None, &short_config(), 1),
            Err(Error::EmptyCorpus)
        ));
    }

    fn record(id: &str, genre: &str, values: Vec<f64>) -> IndexRecord {
        IndexRecord::new(id, format!("{id}.wav"), vec![genre.into()], values)
    }

    #[test]
    fn build_is_order_independent_and_evaluates() {
        let config = PipelineConfig::default();
        let mut records: Vec<IndexRecord> = (0..6)
            .map(|i| {
                let g = if i < 3 { "x" } else { "y" };
                let base = if i < 3 { 0.0 } else { 10.0 };
                let v = (0..FINGERPRINT_LEN)
                    .map(|j| base + ((i * 31 + j * 7) % 13) as f64 * 0.01)
                    .collect();
                record(&format!("t{i}"), g, v)
            })
            .collect();
        let (m1, _) = build_model(&records, &config).unwrap();
        records.reverse();
        let (m2, _) = build_model(&records, &config).unwrap();
        assert_eq!(m1, m2);

        let report = evaluate(&m1, 2).unwrap();
        assert_eq!(report.accuracy, 1.0);
        let rec = recommend(&m1, "t0", 2).unwrap();
        assert_eq!(rec.neighbors.len(), 2);
        assert!(matches!(recommend(&m1, "zz", 2), Err(Error::NotFound(_))));
    }

    #[test]
    fn build_needs_two_tracks() {
        let r = record("a", "x", vec![0.0; FINGERPRINT_LEN]);
        assert!(matches!(
            build_model(&[r], &PipelineConfig::default()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn feature_names_parse() {
        assert_eq!("chroma".parse::<Feature>().unwrap(), Feature::Chroma);
        assert!("tempo".parse::<Feature>().is_err());
    }
}
