//! On-disk formats: the JSON-lines fingerprint index, the JSON model file and
//! the genre-tag CSV.
//!
//! Reals are written with 17 significant digits so that every `f64` reads back
//! bit-for-bit.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::fingerprint::{PcaModel, ReducedFingerprint};
use crate::recommend::TrackTags;

pub const SCHEMA_VERSION: u32 = 1;

/// Writes floats as `d.dddddddddddddddde±x`.
struct ExactFloatFormatter;

impl serde_json::ser::Formatter for ExactFloatFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }
}

fn to_json_line<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, ExactFloatFormatter);
    value
        .serialize(&mut ser)
        .map_err(|e| Error::Schema(e.to_string()))?;
    buf.push(b'\n');
    Ok(buf)
}

fn ensure_finite(what: &str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::Schema(format!("{what}[{i}] is not finite"))),
        None => Ok(()),
    }
}

/// One fingerprinted track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexRecord {
    pub schema: u32,
    pub track_id: String,
    pub path: String,
    pub genres: Vec<String>,
    pub fingerprint: Vec<f64>,
}

impl IndexRecord {
    pub fn new(
        track_id: impl Into<String>,
        path: impl Into<String>,
        genres: Vec<String>,
        fingerprint: Vec<f64>,
    ) -> Self {
        IndexRecord {
            schema: SCHEMA_VERSION,
            track_id: track_id.into(),
            path: path.into(),
            genres,
            fingerprint,
        }
    }

    pub fn tags(&self) -> Result<TrackTags> {
        TrackTags::new(&self.track_id, &self.genres)
    }
}

pub fn write_index(path: impl AsRef<Path>, records: &[IndexRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut seen = HashSet::new();
    for r in records {
        if !seen.insert(r.track_id.as_str()) {
            return Err(Error::DuplicateTrack(r.track_id.clone()));
        }
        ensure_finite(&format!("fingerprint of {}", r.track_id), &r.fingerprint)?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        w.write_all(&to_json_line(r)?)
            .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read an index whose fingerprints must all have `dim` values.
pub fn read_index(path: impl AsRef<Path>, dim: usize) -> Result<Vec<IndexRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: IndexRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if rec.schema != SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "line {line_no}: schema {} (expected {SCHEMA_VERSION})",
                rec.schema
            )));
        }
        if rec.fingerprint.len() != dim {
            return Err(Error::Parse {
                line: line_no,
                message: format!(
                    "fingerprint of {} has {} values, expected {dim}",
                    rec.track_id,
                    rec.fingerprint.len()
                ),
            });
        }
        if !seen.insert(rec.track_id.clone()) {
            return Err(Error::DuplicateTrack(rec.track_id));
        }
        records.push(rec);
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackEntry {
    pub track_id: String,
    pub path: String,
    pub genres: Vec<String>,
}

/// A fitted PCA model together with the reduced vectors of its corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema: u32,
    pub config: PipelineConfig,
    pub variance_target: f64,
    pub n_components: usize,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub components: Vec<Vec<f64>>,
    pub explained_variance_ratio: Vec<f64>,
    pub tracks: Vec<TrackEntry>,
    pub reduced: BTreeMap<String, Vec<f64>>,
}

impl ModelFile {
    pub fn new(
        config: PipelineConfig,
        model: &PcaModel,
        tracks: Vec<TrackEntry>,
        reduced: &[ReducedFingerprint],
    ) -> Self {
        ModelFile {
            schema: SCHEMA_VERSION,
            config,
            variance_target: model.variance_target,
            n_components: model.n_components(),
            mean: model.mean.clone(),
            scale: model.scale.clone(),
            components: model.components.outer_iter().map(|r| r.to_vec()).collect(),
            explained_variance_ratio: model.explained_variance_ratio.clone(),
            tracks,
            reduced: reduced
                .iter()
                .map(|r| (r.track_id.clone(), r.values.clone()))
                .collect(),
        }
    }

    /// The projection half of the model. Ratios beyond `n_components` are not
    /// persisted, so `all_variance_ratio` only holds the retained ones.
    pub fn pca_model(&self) -> PcaModel {
        let d = self.mean.len();
        let flat: Vec<f64> = self.components.iter().flatten().copied().collect();
        PcaModel {
            mean: self.mean.clone(),
            scale: self.scale.clone(),
            components: Array2::from_shape_vec((self.n_components, d), flat)
                .expect("validated dimensions"),
            explained_variance_ratio: self.explained_variance_ratio.clone(),
            variance_target: self.variance_target,
            all_variance_ratio: self.explained_variance_ratio.clone(),
        }
    }

    /// Reduced vectors in track order.
    pub fn reduced_fingerprints(&self) -> Vec<ReducedFingerprint> {
        self.tracks
            .iter()
            .filter_map(|t| {
                self.reduced.get(&t.track_id).map(|v| ReducedFingerprint {
                    track_id: t.track_id.clone(),
                    values: v.clone(),
                })
            })
            .collect()
    }

    pub fn track_tags(&self) -> Vec<TrackTags> {
        self.tracks
            .iter()
            .filter_map(|t| TrackTags::new(&t.track_id, &t.genres).ok())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let schema = |msg: String| Err(Error::Schema(msg));
        if self.schema != SCHEMA_VERSION {
            return schema(format!(
                "schema {} (expected {SCHEMA_VERSION})",
                self.schema
            ));
        }
        let d = self.config.fingerprint_len();
        let k = self.n_components;
        if self.mean.len() != d || self.scale.len() != d {
            return schema(format!(
                "mean/scale have {}/{} values, expected {d}",
                self.mean.len(),
                self.scale.len()
            ));
        }
        if self.scale.iter().any(|s| !(*s > 0.0)) {
            return schema("scale entries must be positive".into());
        }
        if self.components.len() != k || self.explained_variance_ratio.len() != k {
            return schema(format!(
                "{} components / {} ratios for n_components = {k}",
                self.components.len(),
                self.explained_variance_ratio.len()
            ));
        }
        if let Some((i, row)) = self
            .components
            .iter()
            .enumerate()
            .find(|(_, r)| r.len() != d)
        {
            return schema(format!(
                "component {i} has {} values, expected {d}",
                row.len()
            ));
        }
        let mut ids = HashSet::new();
        for t in &self.tracks {
            if !ids.insert(t.track_id.as_str()) {
                return Err(Error::DuplicateTrack(t.track_id.clone()));
            }
        }
        for (id, v) in &self.reduced {
            if !ids.contains(id.as_str()) {
                return schema(format!("reduced entry for unknown track {id}"));
            }
            if v.len() != k {
                return schema(format!(
                    "reduced entry {id} has {} values, expected {k}",
                    v.len()
                ));
            }
        }
        Ok(())
    }
}

pub fn write_model(path: impl AsRef<Path>, model: &ModelFile) -> Result<()> {
    let path = path.as_ref();
    model.validate()?;
    ensure_finite("mean", &model.mean)?;
    ensure_finite("scale", &model.scale)?;
    ensure_finite("explained_variance_ratio", &model.explained_variance_ratio)?;
    for c in &model.components {
        ensure_finite("components", c)?;
    }
    for v in model.reduced.values() {
        ensure_finite("reduced", v)?;
    }
    std::fs::write(path, to_json_line(model)?).map_err(|e| Error::io(path, e))
}

pub fn read_model(path: impl AsRef<Path>) -> Result<ModelFile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let model: ModelFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    model.validate()?;
    Ok(model)
}

/// A row of the tag CSV.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagEntry {
    pub path: String,
    pub tags: TrackTags,
}

const TAG_HEADER: [&str; 3] = ["track_id", "path", "genres"];

/// Load `track_id,path,genres` rows; genres are `|`-separated.
pub fn load_tags(path: impl AsRef<Path>) -> Result<Vec<TagEntry>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let header = reader.headers().map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if header.iter().collect::<Vec<_>>() != TAG_HEADER {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{}`", TAG_HEADER.join(",")),
        });
    }

    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let track_id = row[0].to_string();
        if !seen.insert(track_id.clone()) {
            return Err(Error::DuplicateTrack(track_id));
        }
        let tags = TrackTags::new(track_id, row[2].split('|'))?;
        out.push(TagEntry {
            path: row[1].to_string(),
            tags,
        });
    }
    Ok(out)
}

pub fn write_tags(path: impl AsRef<Path>, entries: &[TagEntry]) -> Result<()> {
    let path = path.as_ref();
    let to_err = |e: csv::Error| Error::io(path, io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(to_err)?;
    w.write_record(TAG_HEADER).map_err(to_err)?;
    for e in entries {
        let genres: Vec<&str> = e.tags.genres.iter().map(String::as_str).collect();
        w.write_record([e.tags.track_id.as_str(), e.path.as_str(), &genres.join("|")])
            .map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
