//! Fingerprint assembly, corpus standardization and PCA reduction.
//!
//! A fingerprint is the concatenation of per-feature time averages: the power
//! spectrogram (one value per bin), the MFCCs, the chroma classes, followed by
//! the twelve tempo statistics. With the default 2048-sample frame and 13
//! MFCCs that is 1025 + 13 + 12 + 12 = 1062 values.

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::harmony::NUM_CHROMA;
use crate::linalg::symmetric_eigen;
use crate::rhythm::TempoBlock;

pub const DEFAULT_SPECTRUM_LEN: usize = 1025;
pub const DEFAULT_MFCC_LEN: usize = 13;
pub const FINGERPRINT_LEN: usize =
    DEFAULT_SPECTRUM_LEN + DEFAULT_MFCC_LEN + NUM_CHROMA + TempoBlock::LEN;

/// Columns with a smaller standard deviation are treated as constant.
const DEGENERATE_STD: f64 = 1e-12;
/// Eigenvalues below this fraction of the total variance count as zero.
const RANK_TOLERANCE: f64 = 1e-12;

/// Block sizes of a fingerprint, in layout order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FingerprintLayout {
    pub spectrum: usize,
    pub mfcc: usize,
    pub chroma: usize,
    pub tempo: usize,
}

impl Default for FingerprintLayout {
    fn default() -> Self {
        FingerprintLayout {
            spectrum: DEFAULT_SPECTRUM_LEN,
            mfcc: DEFAULT_MFCC_LEN,
            chroma: NUM_CHROMA,
            tempo: TempoBlock::LEN,
        }
    }
}

impl FingerprintLayout {
    pub fn len(&self) -> usize {
        self.spectrum + self.mfcc + self.chroma + self.tempo
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mfcc_offset(&self) -> usize {
        self.spectrum
    }

    pub fn chroma_offset(&self) -> usize {
        self.spectrum + self.mfcc
    }

    pub fn tempo_offset(&self) -> usize {
        self.spectrum + self.mfcc + self.chroma
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fingerprint {
    pub track_id: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedFingerprint {
    pub track_id: String,
    pub values: Vec<f64>,
}

/// Mean of each column over all rows (`[frame][feature]` -> `[feature]`).
pub fn row_means(matrix: &Array2<f64>) -> Result<Vec<f64>> {
    if matrix.nrows() == 0 {
        return Err(Error::shape("frames for averaging", 1, 0));
    }
    Ok(matrix.mean_axis(Axis(0)).expect("non-empty axis").to_vec())
}

pub fn assemble_fingerprint(
    track_id: impl Into<String>,
    layout: &FingerprintLayout,
    spectrum_means: &[f64],
    mfcc_means: &[f64],
    chroma_means: &[f64],
    tempo: &TempoBlock,
) -> Result<Fingerprint> {
    for (what, expected, actual) in [
        ("spectrum block", layout.spectrum, spectrum_means.len()),
        ("mfcc block", layout.mfcc, mfcc_means.len()),
        ("chroma block", layout.chroma, chroma_means.len()),
        ("tempo block", layout.tempo, tempo.values.len()),
    ] {
        if expected != actual {
            return Err(Error::shape(what, expected, actual));
        }
    }
    let mut values = Vec::with_capacity(layout.len());
    values.extend_from_slice(spectrum_means);
    values.extend_from_slice(mfcc_means);
    values.extend_from_slice(chroma_means);
    values.extend_from_slice(&tempo.values);
    if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Domain(format!(
            "fingerprint value {bad} is not finite"
        )));
    }
    Ok(Fingerprint {
        track_id: track_id.into(),
        values,
    })
}

/// Column centre and spread removed before PCA.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

/// Column-wise z-score with population standard deviation.
///
/// Constant columns keep scale 1 and standardize to exactly 0.
pub fn standardize(corpus: &Array2<f64>) -> Result<(Array2<f64>, Standardization)> {
    let n = corpus.nrows();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "standardization needs at least 2 tracks, got {n}"
        )));
    }
    let mean = corpus.mean_axis(Axis(0)).expect("n >= 2").to_vec();
    let mut scale = Vec::with_capacity(corpus.ncols());
    let mut degenerate = Vec::with_capacity(corpus.ncols());
    for (j, col) in corpus.axis_iter(Axis(1)).enumerate() {
        let var = col.iter().map(|x| (x - mean[j]).powi(2)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        let flat = !(std >= DEGENERATE_STD);
        degenerate.push(flat);
        scale.push(if flat { 1.0 } else { std });
    }
    let z = Array2::from_shape_fn(corpus.dim(), |(i, j)| {
        if degenerate[j] {
            0.0
        } else {
            (corpus[[i, j]] - mean[j]) / scale[j]
        }
    });
    Ok((z, Standardization { mean, scale }))
}

/// Principal axes of a centered data matrix.
#[derive(Debug, Clone)]
pub struct PcaFit {
    /// `[component][feature]`, one row per non-zero eigenvalue, descending.
    pub components: Array2<f64>,
    pub explained_variance_ratio: Vec<f64>,
    /// Smallest count whose cumulative ratio reaches the target.
    pub n_components: usize,
}

/// Fit principal components and pick the count that retains `variance_target`.
///
/// The data is centered again internally. With fewer rows than columns the
/// eigenproblem is solved on the `n x n` Gram matrix and mapped back to feature
/// space. Each component is signed so its largest-magnitude entry is positive.
pub fn fit_pca(data: &Array2<f64>, variance_target: f64) -> Result<PcaFit> {
    let (n, d) = data.dim();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "PCA needs at least 2 rows, got {n}"
        )));
    }
    if !(variance_target > 0.0 && variance_target <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "variance target {variance_target} outside (0, 1]"
        )));
    }
    let center = data.mean_axis(Axis(0)).expect("n >= 2");
    let x = data - &center;
    let total_var = x.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if !(total_var > 0.0) {
        return Err(Error::InsufficientData("corpus has no variance".into()));
    }

    let mut axes: Vec<(f64, Vec<f64>)> = Vec::new();
    if d <= n {
        let cov = x.t().dot(&x) / n as f64;
        let (vals, vecs) = symmetric_eigen(&cov);
        for (i, &lambda) in vals.iter().enumerate() {
            if lambda > RANK_TOLERANCE * total_var {
                axes.push((lambda, vecs.column(i).to_vec()));
            }
        }
    } else {
        let gram = x.dot(&x.t()) / n as f64;
        let (vals, vecs) = symmetric_eigen(&gram);
        for (i, &lambda) in vals.iter().enumerate() {
            if lambda > RANK_TOLERANCE * total_var {
                let u = x.t().dot(&vecs.column(i));
                axes.push((lambda, u.to_vec()));
            }
        }
    }

    // Re-orthonormalize in eigenvalue order; removes the rounding left by
    // the Gram-to-feature mapping.
    let mut components: Vec<Vec<f64>> = Vec::with_capacity(axes.len());
    let mut ratios = Vec::with_capacity(axes.len());
    for (lambda, mut u) in axes {
        for prev in &components {
            let dot: f64 = u.iter().zip(prev).map(|(a, b)| a * b).sum();
            u.iter_mut().zip(prev).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            continue;
        }
        let pivot = u.iter().cloned().fold(
            0.0f64,
            |best, v| if v.abs() > best.abs() { v } else { best },
        );
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        u.iter_mut().for_each(|v| *v *= sign / norm);
        components.push(u);
        ratios.push(lambda / total_var);
    }

    let rank = components.len();
    let mut cumulative = 0.0;
    let mut n_components = rank;
    for (k, r) in ratios.iter().enumerate() {
        cumulative += r;
        if cumulative >= variance_target {
            n_components = k + 1;
            break;
        }
    }

    let flat: Vec<f64> = components.into_iter().flatten().collect();
    Ok(PcaFit {
        components: Array2::from_shape_vec((rank, d), flat).expect("uniform rows"),
        explained_variance_ratio: ratios,
        n_components,
    })
}

/// Standardization plus the retained principal axes; maps fingerprints to
/// reduced coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// `[n_components][feature]`, orthonormal rows.
    pub components: Array2<f64>,
    pub explained_variance_ratio: Vec<f64>,
    pub variance_target: f64,
    /// Ratios of every non-null axis, including those past `n_components`.
    pub all_variance_ratio: Vec<f64>,
}

impl PcaModel {
    /// Standardize the corpus (`[track][feature]`) and fit PCA on it.
    pub fn fit(corpus: &Array2<f64>, variance_target: f64) -> Result<PcaModel> {
        let (z, st) = standardize(corpus)?;
        let fit = fit_pca(&z, variance_target)?;
        let k = fit.n_components;
        Ok(PcaModel {
            mean: st.mean,
            scale: st.scale,
            components: fit.components.slice(ndarray::s![..k, ..]).to_owned(),
            explained_variance_ratio: fit.explained_variance_ratio[..k].to_vec(),
            variance_target,
            all_variance_ratio: fit.explained_variance_ratio,
        })
    }

    pub fn n_components(&self) -> usize {
        self.components.nrows()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `components . ((x - mean) / scale)`.
    pub fn project_values(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.dim() {
            return Err(Error::shape("fingerprint", self.dim(), values.len()));
        }
        let z: Vec<f64> = values
            .iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((x, m), s)| (x - m) / s)
            .collect();
        Ok(self
            .components
            .outer_iter()
            .map(|c| c.iter().zip(&z).map(|(a, b)| a * b).sum())
            .collect())
    }

    pub fn project(&self, fp: &Fingerprint) -> Result<ReducedFingerprint> {
        Ok(ReducedFingerprint {
            track_id: fp.track_id.clone(),
            values: self.project_values(&fp.values)?,
        })
    }

    /// Map reduced coordinates back to standardized feature space.
    pub fn reconstruct_standardized(&self, reduced: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (c, &w) in self.components.outer_iter().zip(reduced) {
            out.iter_mut().zip(c.iter()).for_each(|(o, v)| *o += w * v);
        }
        out
    }

    /// Cumulative explained-variance ratio over every computed axis.
    pub fn cumulative_variance(&self) -> Vec<f64> {
        self.all_variance_ratio
            .iter()
            .scan(0.0, |acc, r| {
                *acc += r;
                Some(*acc)
            })
            .collect()
    }
}
