//! Mini-batch K-means, the alternative weak-label source.

use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CclError, Result};
use crate::union_find::relabel_contiguous;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub batch_size: usize,
    pub max_iters: usize,
    pub seed: u64,
    /// k-means++ seeding looks at `init_oversample * k` sampled points.
    pub init_oversample: usize,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeansConfig {
            k,
            batch_size: 1024,
            max_iters: 100,
            seed,
            init_oversample: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    /// Contiguous labels; fewer than `k` distinct values when clusters ended empty.
    pub labels: Vec<usize>,
    pub centers: Array2<f32>,
    /// Full-data quantization cost after each iteration.
    pub cost_trace: Vec<f64>,
}

impl KMeansResult {
    pub fn effective_k(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| m + 1)
    }
}

fn sq_dist(a: ArrayView1<'_, f32>, b: ArrayView1<'_, f32>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

fn nearest(centers: &Array2<f32>, x: ArrayView1<'_, f32>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centers.outer_iter().enumerate() {
        let d = sq_dist(row, x);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn assign_all(points: &Array2<f32>, centers: &Array2<f32>) -> (Vec<usize>, f64) {
    let res: Vec<(usize, f64)> = (0..points.nrows())
        .into_par_iter()
        .map(|i| nearest(centers, points.row(i)))
        .collect();
    // summed in index order so the cost is independent of scheduling
    let cost = res.iter().map(|r| r.1).sum();
    (res.into_iter().map(|r| r.0).collect(), cost)
}

/// k-means++ on a random subsample of the data.
fn init_plus_plus(points: &Array2<f32>, cfg: &KMeansConfig, rng: &mut ChaCha8Rng) -> Array2<f32> {
    let n = points.nrows();
    let m = (cfg.init_oversample.max(1) * cfg.k).min(n);
    let pool: Vec<usize> = rand::seq::index::sample(rng, n, m).into_vec();
    let mut chosen = vec![pool[rng.random_range(0..m)]];
    let mut d2: Vec<f64> = pool.iter().map(|&p| sq_dist(points.row(p), points.row(chosen[0]))).collect();
    while chosen.len() < cfg.k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut t = rng.random::<f64>() * total;
            let mut idx = m - 1;
            for (i, &w) in d2.iter().enumerate() {
                if t < w {
                    idx = i;
                    break;
                }
                t -= w;
            }
            idx
        } else {
            // every pooled point coincides with a center; take an unused one
            let unused: Vec<usize> = (0..m).filter(|&i| !chosen.contains(&pool[i])).collect();
            if unused.is_empty() {
                rng.random_range(0..m)
            } else {
                unused[rng.random_range(0..unused.len())]
            }
        };
        let c = pool[pick];
        chosen.push(c);
        for (w, &p) in d2.iter_mut().zip(&pool) {
            *w = w.min(sq_dist(points.row(p), points.row(c)));
        }
    }
    Array2::from_shape_fn((cfg.k, points.ncols()), |(c, d)| points[[chosen[c], d]])
}

/// Streaming mini-batch K-means with per-center step size `1 / count`.
pub fn minibatch_kmeans(points: &Array2<f32>, cfg: &KMeansConfig) -> Result<KMeansResult> {
    let n = points.nrows();
    if cfg.k == 0 || cfg.k > n {
        return Err(CclError::invalid(format!("k = {} is outside 1..={n}", cfg.k)));
    }
    if cfg.batch_size == 0 {
        return Err(CclError::invalid("batch_size must be at least 1"));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(CclError::invalid("points contain non-finite values"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut centers = init_plus_plus(points, cfg, &mut rng);
    let mut counts = vec![0u64; cfg.k];
    let mut trace = Vec::with_capacity(cfg.max_iters);
    let batch = cfg.batch_size.min(n);

    for _ in 0..cfg.max_iters {
        let idx: Vec<usize> = (0..batch).map(|_| rng.random_range(0..n)).collect();
        let assigned: Vec<usize> = idx.iter().map(|&i| nearest(&centers, points.row(i)).0).collect();
        for (&i, &c) in idx.iter().zip(&assigned) {
            counts[c] += 1;
            let eta = 1.0 / counts[c] as f32;
            let x = points.row(i);
            centers
                .row_mut(c)
                .zip_mut_with(&x, |m, &v| *m = (1.0 - eta) * *m + eta * v);
        }
        trace.push(assign_all(points, &centers).1);
    }

    let (raw, _) = assign_all(points, &centers);
    let labels = relabel_contiguous(&raw);
    let effective = labels.iter().copied().max().map_or(0, |m| m + 1);
    if effective < cfg.k {
        log::info!("mini-batch k-means: {} of {} clusters ended empty", cfg.k - effective, cfg.k);
    }
    Ok(KMeansResult {
        labels,
        centers,
        cost_trace: trace,
    })
}
