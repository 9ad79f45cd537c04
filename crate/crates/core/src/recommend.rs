//! Euclidean distance matrix, top-K retrieval and genre-match evaluation.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fingerprint::ReducedFingerprint;

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub track_ids: Vec<String>,
    pub values: Array2<f64>,
    index: HashMap<String, usize>,
}

impl DistanceMatrix {
    /// Wrap a precomputed matrix; it must be square with matching ids.
    pub fn from_parts(track_ids: Vec<String>, values: Array2<f64>) -> Result<Self> {
        let n = track_ids.len();
        if values.dim() != (n, n) {
            return Err(Error::shape("distance matrix side", n, values.nrows()));
        }
        let mut index = HashMap::with_capacity(n);
        for (i, id) in track_ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicateTrack(id.clone()));
            }
        }
        Ok(DistanceMatrix {
            track_ids,
            values,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.track_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.track_ids.is_empty()
    }

    pub fn position(&self, track_id: &str) -> Option<usize> {
        self.index.get(track_id).copied()
    }

    pub fn distance(&self, a: &str, b: &str) -> Option<f64> {
        Some(self.values[[self.position(a)?, self.position(b)?]])
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// All pairwise Euclidean distances; symmetric by construction, zero diagonal.
pub fn distance_matrix(reduced: &[ReducedFingerprint]) -> Result<DistanceMatrix> {
    let n = reduced.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "distance matrix needs at least 2 tracks, got {n}"
        )));
    }
    let dim = reduced[0].values.len();
    if let Some(bad) = reduced.iter().find(|r| r.values.len() != dim) {
        return Err(Error::shape(
            format!("reduced fingerprint {}", bad.track_id),
            dim,
            bad.values.len(),
        ));
    }

    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i + 1..n)
                .map(|j| euclidean(&reduced[i].values, &reduced[j].values))
                .collect()
        })
        .collect();
    let mut values = Array2::zeros((n, n));
    for (i, row) in upper.iter().enumerate() {
        for (off, &d) in row.iter().enumerate() {
            let j = i + 1 + off;
            values[[i, j]] = d;
            values[[j, i]] = d;
        }
    }
    DistanceMatrix::from_parts(reduced.iter().map(|r| r.track_id.clone()).collect(), values)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub track_id: String,
    pub distance: f64,
}

/// The `k` nearest tracks to one target, nearest first.
#[derive(Debug, Clone, PartialEq)]
pub struct RecommendationSet {
    pub target_id: String,
    pub neighbors: Vec<Neighbor>,
}

fn neighbor_order(a: &Neighbor, b: &Neighbor) -> Ordering {
    a.distance
        .total_cmp(&b.distance)
        .then_with(|| a.track_id.cmp(&b.track_id))
}

/// Nearest `k` non-target tracks; equal distances are ordered by track id.
pub fn top_k(dist: &DistanceMatrix, target_id: &str, k: usize) -> Result<RecommendationSet> {
    let i = dist
        .position(target_id)
        .ok_or_else(|| Error::NotFound(target_id.to_string()))?;
    let max = dist.len() - 1;
    if k == 0 || k > max {
        return Err(Error::InvalidK { k, max });
    }
    let mut all: Vec<Neighbor> = dist
        .track_ids
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(j, id)| Neighbor {
            track_id: id.clone(),
            distance: dist.values[[i, j]],
        })
        .collect();
    all.sort_by(neighbor_order);
    all.truncate(k);
    Ok(RecommendationSet {
        target_id: target_id.to_string(),
        neighbors: all,
    })
}

/// A track's genre labels, trimmed and lowercased.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrackTags {
    pub track_id: String,
    pub genres: BTreeSet<String>,
}

impl TrackTags {
    /// Normalizes each genre; empty labels are dropped.
    pub fn new<I, S>(track_id: impl Into<String>, genres: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let track_id = track_id.into();
        let genres: BTreeSet<String> = genres
            .into_iter()
            .map(|g| g.as_ref().trim().to_lowercase())
            .filter(|g| !g.is_empty())
            .collect();
        if genres.is_empty() {
            return Err(Error::TagsMissing(vec![track_id]));
        }
        Ok(TrackTags { track_id, genres })
    }

    pub fn shares_genre(&self, other: &TrackTags) -> bool {
        !self.genres.is_disjoint(&other.genres)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackOutcome {
    pub recommendations: RecommendationSet,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub k: usize,
    pub successes: usize,
    pub accuracy: f64,
    /// In distance-matrix order.
    pub per_track: Vec<TrackOutcome>,
}

/// A request succeeds when any of the target's top-k shares a genre with it;
/// accuracy is successes over requests, one request per track.
pub fn evaluate_genre_accuracy(
    dist: &DistanceMatrix,
    tags: &[TrackTags],
    k: usize,
) -> Result<EvaluationReport> {
    let by_id: HashMap<&str, &TrackTags> = tags.iter().map(|t| (t.track_id.as_str(), t)).collect();
    let missing: Vec<String> = dist
        .track_ids
        .iter()
        .filter(|id| !by_id.contains_key(id.as_str()))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(Error::TagsMissing(missing));
    }

    let mut per_track = Vec::with_capacity(dist.len());
    for id in &dist.track_ids {
        let recs = top_k(dist, id, k)?;
        let own = by_id[id.as_str()];
        let success = recs
            .neighbors
            .iter()
            .any(|nb| own.shares_genre(by_id[nb.track_id.as_str()]));
        per_track.push(TrackOutcome {
            recommendations: recs,
            success,
        });
    }
    let successes = per_track.iter().filter(|o| o.success).count();
    Ok(EvaluationReport {
        k,
        successes,
        accuracy: successes as f64 / dist.len() as f64,
        per_track,
    })
}
