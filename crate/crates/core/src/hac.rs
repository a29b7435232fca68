//! Ward-linkage agglomerative clustering.
//!
//! Dissimilarities are kept as `2 * ΔSSE` (squared Euclidean distance between
//! singletons) and updated with the Lance-Williams recurrence; merges are found
//! with the nearest-neighbor chain, which yields the same dendrogram as greedy
//! global-minimum merging because Ward linkage is reducible.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CclError, Result};
use crate::union_find::UnionFind;

/// One merge step. Clusters are named by their smallest member index.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub cluster_a: usize,
    pub cluster_b: usize,
    /// Increase in within-cluster sum of squares caused by the merge.
    pub ward_cost: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HacResult {
    /// Contiguous labels in order of first appearance.
    pub labels: Vec<usize>,
    /// The `N - c` merges performed, by non-decreasing cost.
    pub merges: Vec<Merge>,
}

struct Condensed {
    n: usize,
    d: Vec<f64>,
}

impl Condensed {
    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        self.n * i - i * (i + 1) / 2 + (j - i - 1)
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.d[self.idx(i, j)]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.d[k] = v;
    }
}

fn squared_distances(points: &Array2<f32>) -> Condensed {
    let n = points.nrows();
    let rows: Vec<Vec<f64>> = points
        .outer_iter()
        .map(|r| r.iter().map(|&v| v as f64).collect())
        .collect();
    let d: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let rows = &rows;
            (i + 1..n).map(move |j| {
                rows[i]
                    .iter()
                    .zip(&rows[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            })
        })
        .collect();
    Condensed { n, d }
}

/// Cluster `points` into `c` groups with Ward's minimum-variance linkage.
pub fn ward_hac(points: &Array2<f32>, c: usize) -> Result<HacResult> {
    let n = points.nrows();
    if c == 0 || c > n {
        return Err(CclError::invalid(format!(
            "cannot form {c} clusters from {n} points"
        )));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(CclError::invalid("points contain non-finite values"));
    }
    let merges = if c == n { Vec::new() } else { nn_chain(points) };
    let mut uf = UnionFind::new(n);
    let kept: Vec<Merge> = merges.into_iter().take(n - c).collect();
    for m in &kept {
        uf.union(m.cluster_a, m.cluster_b);
    }
    Ok(HacResult {
        labels: uf.labels(),
        merges: kept,
    })
}

/// Full dendrogram (`n - 1` merges) sorted by cost.
fn nn_chain(points: &Array2<f32>) -> Vec<Merge> {
    let n = points.nrows();
    let mut dist = squared_distances(points);
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    // smallest original member of the cluster stored at each slot
    let mut rep: Vec<usize> = (0..n).collect();
    let mut chain: Vec<usize> = Vec::with_capacity(n);
    let mut raw: Vec<(f64, usize, usize)> = Vec::with_capacity(n - 1);

    let mut remaining = n;
    while remaining > 1 {
        if chain.is_empty() {
            chain.push(active.iter().position(|&a| a).unwrap());
        }
        loop {
            let tip = *chain.last().unwrap();
            let prev = if chain.len() >= 2 { Some(chain[chain.len() - 2]) } else { None };
            // prefer the previous chain element on ties so reciprocal pairs terminate
            let mut best = prev.map(|p| (dist.get(tip, p), p));
            for j in 0..n {
                if !active[j] || j == tip || Some(j) == prev {
                    continue;
                }
                let dj = dist.get(tip, j);
                match best {
                    Some((bd, bj)) if dj > bd || (dj == bd && (Some(bj) == prev || bj < j)) => {}
                    _ => best = Some((dj, j)),
                }
            }
            let (bd, nearest) = best.expect("at least two active clusters");
            if Some(nearest) == prev {
                chain.pop();
                chain.pop();
                let (a, b) = (tip.min(nearest), tip.max(nearest));
                raw.push((bd, a, b));
                merge_into(&mut dist, &mut size, &active, a, b, bd);
                active[b] = false;
                let (ra, rb) = (rep[a], rep[b]);
                raw.last_mut().unwrap().1 = ra;
                raw.last_mut().unwrap().2 = rb;
                rep[a] = ra.min(rb);
                remaining -= 1;
                break;
            }
            chain.push(nearest);
        }
    }
    // stable: equal costs keep discovery order
    raw.sort_by(|x, y| x.0.total_cmp(&y.0));
    raw.into_iter()
        .map(|(d, a, b)| Merge {
            cluster_a: a.min(b),
            cluster_b: a.max(b),
            ward_cost: d / 2.0,
        })
        .collect()
}

/// Lance-Williams update for Ward after merging slot `b` into slot `a`.
fn merge_into(dist: &mut Condensed, size: &mut [usize], active: &[bool], a: usize, b: usize, dab: f64) {
    let (na, nb) = (size[a] as f64, size[b] as f64);
    for k in 0..dist.n {
        if !active[k] || k == a || k == b {
            continue;
        }
        let nk = size[k] as f64;
        let v = ((na + nk) * dist.get(a, k) + (nb + nk) * dist.get(b, k) - nk * dab) / (na + nb + nk);
        dist.set(a, k, v);
    }
    size[a] += size[b];
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Recompute every pairwise Ward cost from centroids at each step and merge
    /// the global minimum.
    pub(crate) fn naive_ward(points: &Array2<f32>, c: usize) -> (Vec<usize>, Vec<f64>) {
        let n = points.nrows();
        let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        let mut costs = Vec::new();
        let centroid = |m: &[usize]| -> Vec<f64> {
            let mut c = vec![0.0; points.ncols()];
            for &i in m {
                for (k, v) in c.iter_mut().enumerate() {
                    *v += points[[i, k]] as f64;
                }
            }
            c.iter().map(|v| v / m.len() as f64).collect()
        };
        while clusters.len() > c {
            let cents: Vec<Vec<f64>> = clusters.iter().map(|m| centroid(m)).collect();
            let mut best = (f64::INFINITY, 0, 0);
            for a in 0..clusters.len() {
                for b in a + 1..clusters.len() {
                    let (na, nb) = (clusters[a].len() as f64, clusters[b].len() as f64);
                    let d2: f64 = cents[a].iter().zip(&cents[b]).map(|(x, y)| (x - y).powi(2)).sum();
                    let cost = na * nb / (na + nb) * d2;
                    if cost < best.0 {
                        best = (cost, a, b);
                    }
                }
            }
            let (cost, a, b) = best;
            let moved = clusters.remove(b);
            clusters[a].extend(moved);
            costs.push(cost);
        }
        let mut labels = vec![0; n];
        for (k, m) in clusters.iter().enumerate() {
            for &i in m {
                labels[i] = k;
            }
        }
        (crate::union_find::relabel_contiguous(&labels), costs)
    }

    #[test]
    fn c_equals_n_is_identity() {
        let pts = array![[0.0f32, 1.0], [2.0, 3.0], [5.0, 5.0]];
        let r = ward_hac(&pts, 3).unwrap();
        assert_eq!(r.labels, vec![0, 1, 2]);
        assert!(r.merges.is_empty());
    }

    #[test]
    fn close_pairs_merge_first() {
        let pts = array![[0.0f32, 0.0], [10.0, 0.0], [0.1, 0.0], [10.0, 0.2]];
        let r = ward_hac(&pts, 2).unwrap();
        assert_eq!(r.labels, vec![0, 1, 0, 1]);
        assert_eq!(r.merges.len(), 2);
        // costs are n_a n_b / (n_a + n_b) * |c_a - c_b|^2 = d^2 / 2 for singletons
        assert!((r.merges[0].ward_cost - 0.005).abs() < 1e-9);
        assert_eq!((r.merges[0].cluster_a, r.merges[0].cluster_b), (0, 2));
        assert!((r.merges[1].ward_cost - 0.02).abs() < 1e-9);
        let one = ward_hac(&pts, 1).unwrap();
        assert_eq!(one.labels, vec![0; 4]);
    }

    #[test]
    fn bad_cluster_count() {
        let pts = array![[0.0f32], [1.0]];
        assert!(ward_hac(&pts, 3).is_err());
        assert!(ward_hac(&pts, 0).is_err());
    }

    proptest! {
        #[test]
        fn matches_naive_ward(n in 2usize..40, d in 1usize..5, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0f32..1.0));
            let c = rng.random_range(1..=n);
            let fast = ward_hac(&pts, c).unwrap();
            let (labels, costs) = naive_ward(&pts, c);
            prop_assert_eq!(&fast.labels, &labels);
            prop_assert_eq!(fast.merges.len(), n - c);
            for (m, want) in fast.merges.iter().zip(&costs) {
                prop_assert!((m.ward_cost - want).abs() <= 1e-9 * want.max(1.0));
            }
            for w in fast.merges.windows(2) {
                prop_assert!(w[0].ward_cost <= w[1].ward_cost);
            }
        }

        #[test]
        fn permutation_only_renames(n in 2usize..30, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts = Array2::from_shape_fn((n, 3), |_| rng.random_range(-1.0f32..1.0));
            let c = rng.random_range(1..=n);
            let mut perm: Vec<usize> = (0..n).collect();
            rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
            let moved = Array2::from_shape_fn((n, 3), |(i, k)| pts[[perm[i], k]]);
            let a = ward_hac(&pts, c).unwrap().labels;
            let b = ward_hac(&moved, c).unwrap().labels;
            for i in 0..n {
                for j in 0..n {
                    prop_assert_eq!(a[perm[i]] == a[perm[j]], b[i] == b[j]);
                }
            }
        }
    }
}
