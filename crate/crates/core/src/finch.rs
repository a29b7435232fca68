//! First-neighbor hierarchical clustering.
//!
//! Each sample is linked to its nearest other sample under cosine distance;
//! the connected components of that graph form the first partition. Each later
//! partition repeats the linking on the normalized means of the previous
//! partition's clusters, so the hierarchy runs fine to coarse without any
//! cluster-count parameter.

use ndarray::Array2;
use rayon::prelude::*;

use crate::data::{group_means, normalize_rows};
use crate::error::{CclError, Result};
use crate::metrics;
use crate::union_find::{relabel_contiguous, UnionFind};

/// Row-chunk height for the blocked neighbor search.
pub const DEFAULT_CHUNK_ROWS: usize = 64;
const COL_TILE: usize = 64;

/// Index of the nearest other item for every item.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FirstNeighborMap {
    kappa: Vec<usize>,
}

impl FirstNeighborMap {
    pub fn new(kappa: Vec<usize>) -> Result<Self> {
        let n = kappa.len();
        for (i, &k) in kappa.iter().enumerate() {
            if k == i || k >= n {
                return Err(CclError::invalid(format!("first neighbor of {i} is {k}")));
            }
        }
        Ok(FirstNeighborMap { kappa })
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.kappa
    }

    pub fn len(&self) -> usize {
        self.kappa.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kappa.is_empty()
    }
}

/// Dot product with a fixed 8-lane accumulation order, so the result is
/// bitwise reproducible and symmetric in its arguments.
#[inline]
pub(crate) fn dot8(a: &[f32], b: &[f32]) -> f32 {
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    let mut acc = [0.0f32; 8];
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// Nearest neighbors for rows `start..start+len` against all rows of `x`.
fn neighbors_for_chunk(x: &[f32], dim: usize, rows: usize, start: usize, len: usize) -> Vec<usize> {
    let mut best = vec![(f32::NEG_INFINITY, usize::MAX); len];
    for tile in (0..rows).step_by(COL_TILE) {
        let tile_end = (tile + COL_TILE).min(rows);
        for (r, slot) in best.iter_mut().enumerate() {
            let i = start + r;
            let xi = &x[i * dim..(i + 1) * dim];
            for j in tile..tile_end {
                if j == i {
                    continue;
                }
                let s = dot8(xi, &x[j * dim..(j + 1) * dim]);
                // strict comparison keeps the lowest index on ties
                if s > slot.0 || slot.1 == usize::MAX {
                    *slot = (s, j);
                }
            }
        }
    }
    best.into_iter().map(|(_, j)| j).collect()
}

/// Exact first neighbors under cosine distance, ties broken by lowest index.
///
/// Rows are normalized internally; an all-zero row has similarity zero to
/// everything.
pub fn first_neighbors(points: &Array2<f32>) -> Result<FirstNeighborMap> {
    first_neighbors_with(points, DEFAULT_CHUNK_ROWS, true)
}

/// [`first_neighbors`] with an explicit chunk height and optional rayon
/// parallelism. The result does not depend on either setting.
pub fn first_neighbors_with(points: &Array2<f32>, chunk_rows: usize, parallel: bool) -> Result<FirstNeighborMap> {
    let (rows, dim) = points.dim();
    if rows < 2 {
        return Err(CclError::invalid(format!(
            "first-neighbor search needs at least 2 points, got {rows}"
        )));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(CclError::invalid("points contain non-finite values"));
    }
    let unit = unit_rows(points);
    let x = unit.as_slice().expect("standard layout");
    let chunk_rows = chunk_rows.max(1);
    let starts: Vec<usize> = (0..rows).step_by(chunk_rows).collect();
    let run = |&start: &usize| {
        let len = chunk_rows.min(rows - start);
        neighbors_for_chunk(x, dim, rows, start, len)
    };
    let chunks: Vec<Vec<usize>> = if parallel {
        starts.par_iter().map(run).collect()
    } else {
        starts.iter().map(run).collect()
    };
    Ok(FirstNeighborMap {
        kappa: chunks.into_iter().flatten().collect(),
    })
}

fn unit_rows(points: &Array2<f32>) -> Array2<f32> {
    let mut out = points.as_standard_layout().into_owned();
    for mut r in out.outer_iter_mut() {
        let norm = r.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
        if norm > 0.0 {
            r.mapv_inplace(|v| (v as f64 / norm) as f32);
        }
    }
    out
}

/// Connected components of the graph with an edge from every item to its
/// first neighbor. Two items sharing a first neighbor are both joined to it,
/// so that clause of the adjacency needs no separate edge.
pub fn link_components(kappa: &FirstNeighborMap) -> Vec<usize> {
    let mut uf = UnionFind::new(kappa.len());
    for (i, &k) in kappa.kappa.iter().enumerate() {
        uf.union(i, k);
    }
    uf.labels()
}

/// Fine-to-coarse partitions of the samples.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionHierarchy {
    /// One contiguous label vector per level, finest first.
    pub partitions: Vec<Vec<usize>>,
    pub cluster_counts: Vec<usize>,
    /// Normalized cluster means per level (`cluster_counts[l] x D`).
    pub means: Vec<Array2<f32>>,
}

impl PartitionHierarchy {
    pub fn levels(&self) -> usize {
        self.partitions.len()
    }

    /// Partition by 1-based level index.
    pub fn partition(&self, level: usize) -> Result<&[usize]> {
        if level == 0 || level > self.partitions.len() {
            return Err(CclError::Config(format!(
                "partition index {level} out of range: hierarchy has L = {} partitions",
                self.partitions.len()
            )));
        }
        Ok(&self.partitions[level - 1])
    }
}

/// Build the full hierarchy. Rows are normalized first.
///
/// Recursion stops before a level would collapse to a single cluster or fail
/// to reduce the cluster count.
pub fn finch_hierarchy(points: &Array2<f32>) -> Result<PartitionHierarchy> {
    if points.nrows() < 2 {
        return Err(CclError::invalid(format!(
            "hierarchy needs at least 2 samples, got {}",
            points.nrows()
        )));
    }
    let x = normalize_rows(points)?;
    let first = link_components(&first_neighbors(&x)?);
    let mut counts = vec![count(&first)];
    let mut means = vec![group_means(&x, &first)?];
    let mut partitions = vec![first];

    loop {
        let prev_count = *counts.last().unwrap();
        if prev_count < 2 {
            break;
        }
        let merged = link_components(&first_neighbors(means.last().unwrap())?);
        let next_count = count(&merged);
        if next_count <= 1 || next_count >= prev_count {
            break;
        }
        let broadcast: Vec<usize> = partitions.last().unwrap().iter().map(|&c| merged[c]).collect();
        let labels = relabel_contiguous(&broadcast);
        means.push(group_means(&x, &labels)?);
        counts.push(next_count);
        partitions.push(labels);
    }
    log::debug!("first-neighbor hierarchy cluster counts: {counts:?}");
    Ok(PartitionHierarchy {
        partitions,
        cluster_counts: counts,
        means,
    })
}

fn count(labels: &[usize]) -> usize {
    labels.iter().copied().max().map_or(0, |m| m + 1)
}

/// Normalized per-cluster means of `points`.
pub fn cluster_means(points: &Array2<f32>, labels: &[usize]) -> Result<Array2<f32>> {
    group_means(points, labels)
}

/// Weighted purity of a partition against ground truth.
pub fn partition_purity(labels: &[usize], gt: &[i64]) -> Result<f64> {
    Ok(metrics::wcp(labels, gt)?.acc)
}
