//! Seeded synthetic face-track datasets for desk-scale experiments.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::FeatureSet;
use crate::error::{CclError, Result};

/// Centers are at least this far apart in angle (cosine at most 0.5).
const MAX_CENTER_COS: f64 = 0.5;
const CENTER_ATTEMPTS: usize = 20_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub per_class: usize,
    pub dim: usize,
    /// Per-coordinate standard deviation of the Gaussian noise.
    pub noise: f64,
    pub frames_per_track: usize,
    /// Probability that a sample shares its frame with a face of another class.
    pub cooc_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_classes: 3,
            per_class: 200,
            dim: 16,
            noise: 0.05,
            frames_per_track: 10,
            cooc_rate: 0.1,
            seed: 0,
        }
    }
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Unit class centers, pairwise angle at least 60 degrees.
pub fn class_centers(num_classes: usize, dim: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(num_classes);
    let mut attempts = 0;
    while centers.len() < num_classes {
        if attempts == CENTER_ATTEMPTS {
            return Err(CclError::invalid(format!(
                "could not place {num_classes} centers 60 degrees apart in {dim} dimensions"
            )));
        }
        attempts += 1;
        let c = random_unit(rng, dim);
        let ok = centers
            .iter()
            .all(|o| o.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>() <= MAX_CENTER_COS);
        if ok {
            centers.push(c);
            attempts = 0;
        }
    }
    Ok(centers)
}

/// Generate normalized samples grouped by class, with tracks of
/// `frames_per_track` consecutive samples and cross-class co-occurrence
/// frames. Every field of the returned set is populated.
pub fn synth_generate(cfg: &SynthConfig) -> Result<FeatureSet> {
    if cfg.num_classes == 0 || cfg.per_class == 0 || cfg.dim == 0 || cfg.frames_per_track == 0 {
        return Err(CclError::invalid("class count, class size, dim and track length must be positive"));
    }
    if !(cfg.noise >= 0.0) || !cfg.noise.is_finite() {
        return Err(CclError::invalid(format!("noise must be a finite value >= 0, got {}", cfg.noise)));
    }
    if !(0.0..=1.0).contains(&cfg.cooc_rate) {
        return Err(CclError::invalid(format!("cooc_rate must lie in [0, 1], got {}", cfg.cooc_rate)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let centers = class_centers(cfg.num_classes, cfg.dim, &mut rng)?;
    let n = cfg.num_classes * cfg.per_class;
    let normal = Normal::new(0.0, cfg.noise).map_err(|e| CclError::invalid(e.to_string()))?;

    let mut feats = Array2::<f32>::zeros((n, cfg.dim));
    let mut labels = Vec::with_capacity(n);
    let mut tracks = Vec::with_capacity(n);
    let mut next_track = 0i64;
    for (c, center) in centers.iter().enumerate() {
        for s in 0..cfg.per_class {
            if s % cfg.frames_per_track == 0 && s > 0 {
                next_track += 1;
            }
            let i = c * cfg.per_class + s;
            let mut v: Vec<f64> = center.iter().map(|&m| m + normal.sample(&mut rng)).collect();
            let mut norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            while norm < 1e-9 {
                v = center.iter().map(|&m| m + normal.sample(&mut rng)).collect();
                norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            }
            for (d, x) in v.iter().enumerate() {
                feats[[i, d]] = (x / norm) as f32;
            }
            labels.push(c as i64);
            tracks.push(next_track);
        }
        next_track += 1;
    }

    // every sample starts in its own frame; co-occurring pairs then share one
    let mut frames: Vec<i64> = (0..n as i64).collect();
    if cfg.cooc_rate > 0.0 && cfg.num_classes > 1 {
        let mut free: Vec<Vec<usize>> = (0..cfg.num_classes)
            .map(|c| (c * cfg.per_class..(c + 1) * cfg.per_class).collect())
            .collect();
        let mut taken = vec![false; n];
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        for i in order {
            if taken[i] || !rng.random_bool(cfg.cooc_rate) {
                continue;
            }
            let ci = labels[i] as usize;
            let others: Vec<usize> = (0..cfg.num_classes)
                .filter(|&c| c != ci && free[c].iter().any(|&j| !taken[j]))
                .collect();
            if others.is_empty() {
                continue;
            }
            let c = others[rng.random_range(0..others.len())];
            free[c].retain(|&j| !taken[j]);
            let j = free[c][rng.random_range(0..free[c].len())];
            taken[i] = true;
            taken[j] = true;
            frames[j] = frames[i];
        }
    }

    FeatureSet::new(feats)?
        .with_frames(frames)?
        .with_tracks(tracks)?
        .with_labels(labels)
}
