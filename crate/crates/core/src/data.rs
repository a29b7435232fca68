//! Dataset representation: per-face embeddings with their frame, track and
//! identity indices, plus the derived track-level and co-occurrence views.

use std::collections::{BTreeMap, HashSet};

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{CclError, Result};

/// Per-face embedding matrix (`N x D`, row-major) with optional index arrays.
///
/// Missing index values are stored as `-1`: an untracked face has
/// `track_id == -1`, an unlabeled one `label == -1`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    pub features: Array2<f32>,
    pub frame_id: Option<Vec<i64>>,
    pub track_id: Option<Vec<i64>>,
    pub label: Option<Vec<i64>>,
}

impl FeatureSet {
    /// Wraps a feature matrix, rejecting empty shapes and non-finite or
    /// all-zero rows.
    pub fn new(features: Array2<f32>) -> Result<Self> {
        let fs = FeatureSet {
            features,
            frame_id: None,
            track_id: None,
            label: None,
        };
        fs.validate()?;
        Ok(fs)
    }

    pub fn with_frames(mut self, frame_id: Vec<i64>) -> Result<Self> {
        check_len("frame_id", frame_id.len(), self.len())?;
        self.frame_id = Some(frame_id);
        Ok(self)
    }

    pub fn with_tracks(mut self, track_id: Vec<i64>) -> Result<Self> {
        check_len("track_id", track_id.len(), self.len())?;
        self.track_id = Some(track_id);
        Ok(self)
    }

    pub fn with_labels(mut self, label: Vec<i64>) -> Result<Self> {
        check_len("label", label.len(), self.len())?;
        if let Some(&bad) = label.iter().find(|&&l| l < -1) {
            return Err(CclError::invalid(format!("label {bad} is not a class id or -1")));
        }
        self.label = Some(label);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Number of identity classes `C`, i.e. one past the largest label.
    pub fn num_classes(&self) -> usize {
        self.label
            .as_ref()
            .and_then(|l| l.iter().copied().max())
            .map_or(0, |m| (m + 1).max(0) as usize)
    }

    /// Replace the feature matrix while carrying the index arrays through.
    pub fn with_features(&self, features: Array2<f32>) -> Result<Self> {
        check_len("features", features.nrows(), self.len())?;
        let fs = FeatureSet {
            features,
            frame_id: self.frame_id.clone(),
            track_id: self.track_id.clone(),
            label: self.label.clone(),
        };
        fs.validate()?;
        Ok(fs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.nrows() == 0 || self.features.ncols() == 0 {
            return Err(CclError::invalid(format!(
                "feature matrix must be non-empty, got {}x{}",
                self.features.nrows(),
                self.features.ncols()
            )));
        }
        for (row, r) in self.features.outer_iter().enumerate() {
            if r.iter().any(|v| !v.is_finite()) {
                return Err(CclError::NonFinite { row });
            }
            if r.iter().all(|&v| v == 0.0) {
                return Err(CclError::ZeroNorm { row });
            }
        }
        for (name, arr) in [
            ("frame_id", &self.frame_id),
            ("track_id", &self.track_id),
            ("label", &self.label),
        ] {
            if let Some(a) = arr {
                check_len(name, a.len(), self.len())?;
            }
        }
        Ok(())
    }
}

fn check_len(name: &str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(CclError::invalid(format!(
            "{name} has {got} entries but there are {expected} rows"
        )));
    }
    Ok(())
}

/// One aggregated, unit-norm row per track, ordered by ascending `track_id`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackFeatureSet {
    pub features: Array2<f32>,
    pub track_id: Vec<i64>,
    pub label: Vec<i64>,
}

impl TrackFeatureSet {
    pub fn len(&self) -> usize {
        self.track_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.track_id.is_empty()
    }
}

/// Unordered pairs of distinct rows that appear in the same frame.
///
/// Pairs are stored as `(i, j)` with `i < j`, sorted ascending.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CooccurrenceSet {
    pairs: Vec<(usize, usize)>,
    lookup: HashSet<(usize, usize)>,
}

impl CooccurrenceSet {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut out: Vec<(usize, usize)> = Vec::new();
        for (a, b) in pairs {
            if a == b {
                return Err(CclError::invalid(format!("co-occurrence pair ({a}, {a}) is reflexive")));
            }
            out.push((a.min(b), a.max(b)));
        }
        out.sort_unstable();
        out.dedup();
        let lookup = out.iter().copied().collect();
        Ok(CooccurrenceSet { pairs: out, lookup })
    }

    pub fn contains(&self, a: usize, b: usize) -> bool {
        self.lookup.contains(&(a.min(b), a.max(b)))
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Largest row index referenced by any pair, if any.
    pub fn max_index(&self) -> Option<usize> {
        self.pairs.iter().map(|&(_, b)| b).max()
    }
}

fn row_norm(row: ArrayView1<'_, f32>) -> f64 {
    row.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
}

/// Scale every row of `m` to unit Euclidean norm.
pub fn normalize_rows(m: &Array2<f32>) -> Result<Array2<f32>> {
    let mut out = m.clone();
    for (row, mut r) in out.outer_iter_mut().enumerate() {
        let norm = row_norm(r.view());
        if !norm.is_finite() {
            return Err(CclError::NonFinite { row });
        }
        if norm == 0.0 {
            return Err(CclError::ZeroNorm { row });
        }
        r.mapv_inplace(|v| (v as f64 / norm) as f32);
    }
    Ok(out)
}

pub fn l2_normalize(fs: &FeatureSet) -> Result<FeatureSet> {
    Ok(FeatureSet {
        features: normalize_rows(&fs.features)?,
        frame_id: fs.frame_id.clone(),
        track_id: fs.track_id.clone(),
        label: fs.label.clone(),
    })
}

/// Mean-pool rows per track and normalize each track mean.
///
/// Every row must carry a track id `>= 0`; a track whose rows disagree on the
/// ground-truth label is rejected.
pub fn aggregate_tracks(fs: &FeatureSet) -> Result<TrackFeatureSet> {
    let tracks = fs
        .track_id
        .as_ref()
        .ok_or_else(|| CclError::invalid("feature set has no track ids"))?;
    let mut members: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (row, &t) in tracks.iter().enumerate() {
        if t < 0 {
            return Err(CclError::invalid(format!("row {row} has no track id")));
        }
        members.entry(t).or_default().push(row);
    }

    let dim = fs.dim();
    let mut features = Array2::<f32>::zeros((members.len(), dim));
    let mut track_id = Vec::with_capacity(members.len());
    let mut label = Vec::with_capacity(members.len());
    for (out_row, (&t, rows)) in members.iter().enumerate() {
        let mut acc = Array1::<f64>::zeros(dim);
        for &r in rows {
            acc.zip_mut_with(&fs.features.row(r), |a, &v| *a += v as f64);
        }
        acc /= rows.len() as f64;
        let norm = acc.dot(&acc).sqrt();
        if norm == 0.0 {
            return Err(CclError::ZeroNorm { row: out_row });
        }
        features
            .row_mut(out_row)
            .assign(&acc.mapv(|v| (v / norm) as f32));

        let l = match &fs.label {
            Some(labels) => {
                let first = labels[rows[0]];
                if let Some(&r) = rows.iter().find(|&&r| labels[r] != first) {
                    return Err(CclError::invalid(format!(
                        "track {t} mixes labels {first} and {} (row {r})",
                        labels[r]
                    )));
                }
                first
            }
            None => -1,
        };
        track_id.push(t);
        label.push(l);
    }
    Ok(TrackFeatureSet {
        features,
        track_id,
        label,
    })
}

/// All unordered pairs of rows sharing a frame id. Rows with a negative frame
/// id are treated as having no known frame.
pub fn build_cooccurrence(fs: &FeatureSet) -> Result<CooccurrenceSet> {
    let frames = fs
        .frame_id
        .as_ref()
        .ok_or_else(|| CclError::invalid("feature set has no frame ids"))?;
    Ok(cooccurrence_from_frames(frames))
}

pub(crate) fn cooccurrence_from_frames(frames: &[i64]) -> CooccurrenceSet {
    let mut by_frame: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (row, &f) in frames.iter().enumerate() {
        if f >= 0 {
            by_frame.entry(f).or_default().push(row);
        }
    }
    let mut pairs = Vec::new();
    for rows in by_frame.values() {
        for (k, &a) in rows.iter().enumerate() {
            for &b in &rows[k + 1..] {
                pairs.push((a, b));
            }
        }
    }
    pairs.sort_unstable();
    let lookup = pairs.iter().copied().collect();
    CooccurrenceSet { pairs, lookup }
}

/// Mean of the rows in each label group, normalized to unit length.
///
/// Labels must be contiguous `0..k`. A group whose mean is exactly zero keeps
/// the zero vector.
pub fn group_means(points: &Array2<f32>, labels: &[usize]) -> Result<Array2<f32>> {
    if labels.len() != points.nrows() {
        return Err(CclError::Dimension {
            expected: points.nrows(),
            got: labels.len(),
        });
    }
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut sums = Array2::<f64>::zeros((k, points.ncols()));
    let mut counts = vec![0usize; k];
    for (row, &l) in points.outer_iter().zip(labels) {
        counts[l] += 1;
        sums.row_mut(l).zip_mut_with(&row, |a, &v| *a += v as f64);
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(CclError::invalid(format!("cluster {empty} has no members")));
    }
    let mut out = Array2::<f32>::zeros((k, points.ncols()));
    for (c, (mut dst, src)) in out.outer_iter_mut().zip(sums.outer_iter()).enumerate() {
        let mean = src.mapv(|v| v / counts[c] as f64);
        let norm = mean.dot(&mean).sqrt();
        let scale = if norm > 0.0 { 1.0 / norm } else { 1.0 };
        dst.assign(&mean.mapv(|v| (v * scale) as f32));
    }
    Ok(out)
}
