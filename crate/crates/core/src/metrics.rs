//! Clustering evaluation: weighted clustering purity (ACC) and B-Cubed
//! precision/recall/F.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{CclError, Result};

/// Weighted clustering purity with its per-cluster breakdown.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Purity {
    pub acc: f64,
    /// Cluster sizes `n_c`, in order of first appearance in `pred`.
    pub sizes: Vec<usize>,
    /// Majority-label fraction `p_c` per cluster.
    pub purities: Vec<f64>,
    /// Samples carrying their cluster's majority label (L+).
    pub correct: usize,
    /// Everything else (L-).
    pub wrong: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BCubed {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

/// Combined report for one predicted labeling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusteringReport {
    pub num_samples: usize,
    pub num_clusters: usize,
    pub acc: f64,
    pub bcubed_p: f64,
    pub bcubed_r: f64,
    pub bcubed_f: f64,
    pub cluster_sizes: Vec<usize>,
    pub cluster_purities: Vec<f64>,
}

impl ClusteringReport {
    pub fn evaluate<P, G>(pred: &[P], gt: &[G]) -> Result<Self>
    where
        P: Hash + Eq + Copy,
        G: Hash + Eq + Copy,
    {
        let purity = wcp(pred, gt)?;
        let b = bcubed(pred, gt)?;
        Ok(ClusteringReport {
            num_samples: pred.len(),
            num_clusters: purity.sizes.len(),
            acc: purity.acc,
            bcubed_p: b.precision,
            bcubed_r: b.recall,
            bcubed_f: b.f,
            cluster_sizes: purity.sizes,
            cluster_purities: purity.purities,
        })
    }
}

fn check_lengths(pred: usize, gt: usize) -> Result<()> {
    if pred != gt {
        return Err(CclError::Dimension {
            expected: gt,
            got: pred,
        });
    }
    if pred == 0 {
        return Err(CclError::invalid("cannot score an empty labeling"));
    }
    Ok(())
}

/// Contingency counts: per cluster (first-appearance order) the count of each
/// ground-truth class, classes indexed by first appearance. Also returns the
/// class sizes. Ordered maps keep float sums over the table reproducible.
fn contingency<P, G>(pred: &[P], gt: &[G]) -> (Vec<BTreeMap<usize, usize>>, Vec<usize>)
where
    P: Hash + Eq + Copy,
    G: Hash + Eq + Copy,
{
    let mut index: HashMap<P, usize> = HashMap::new();
    let mut classes: HashMap<G, usize> = HashMap::new();
    let mut class_sizes = Vec::new();
    let mut table: Vec<BTreeMap<usize, usize>> = Vec::new();
    for (&p, &g) in pred.iter().zip(gt) {
        let next = index.len();
        let c = *index.entry(p).or_insert(next);
        if c == table.len() {
            table.push(BTreeMap::new());
        }
        let next = classes.len();
        let k = *classes.entry(g).or_insert(next);
        if k == class_sizes.len() {
            class_sizes.push(0);
        }
        class_sizes[k] += 1;
        *table[c].entry(k).or_insert(0) += 1;
    }
    (table, class_sizes)
}

/// `ACC = (1/N) * sum_c n_c * p_c`, with `p_c` the majority-label fraction.
pub fn wcp<P, G>(pred: &[P], gt: &[G]) -> Result<Purity>
where
    P: Hash + Eq + Copy,
    G: Hash + Eq + Copy,
{
    check_lengths(pred.len(), gt.len())?;
    let (table, _) = contingency(pred, gt);
    let mut sizes = Vec::with_capacity(table.len());
    let mut purities = Vec::with_capacity(table.len());
    let mut correct = 0;
    for row in &table {
        let n: usize = row.values().sum();
        let majority = row.values().copied().max().unwrap_or(0);
        sizes.push(n);
        purities.push(majority as f64 / n as f64);
        correct += majority;
    }
    let n = pred.len();
    Ok(Purity {
        acc: correct as f64 / n as f64,
        sizes,
        purities,
        correct,
        wrong: n - correct,
    })
}

/// Item-averaged B-Cubed precision and recall; F is the harmonic mean of the
/// averaged P and R (0 when both are 0).
pub fn bcubed<P, G>(pred: &[P], gt: &[G]) -> Result<BCubed>
where
    P: Hash + Eq + Copy,
    G: Hash + Eq + Copy,
{
    check_lengths(pred.len(), gt.len())?;
    let (table, class_sizes) = contingency(pred, gt);
    let (mut p, mut r) = (0.0f64, 0.0f64);
    for row in &table {
        let cluster_size: usize = row.values().sum();
        for (g, &overlap) in row {
            let o = overlap as f64;
            // each of the `overlap` items contributes overlap/|cluster| and overlap/|class|
            p += o * o / cluster_size as f64;
            r += o * o / class_sizes[*g] as f64;
        }
    }
    let n = pred.len() as f64;
    let (precision, recall) = (p / n, r / n);
    let f = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(BCubed { precision, recall, f })
}
