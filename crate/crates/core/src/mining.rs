//! Weak pair mining from a cluster partition and frame co-occurrence.
//!
//! Positives come from within a cluster (and, for small clusters, from its
//! nearest clusters); negatives come from the farthest clusters and from
//! faces that share a frame. Pairs are labeled `y = 0` for positives and
//! `y = 1` for negatives.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::CooccurrenceSet;
use crate::error::{CclError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiningConfig {
    pub z_near: usize,
    pub z_far: usize,
    pub small_cluster_threshold: usize,
    pub clusters_per_batch: usize,
    pub pos_per_cluster: usize,
    pub neg_per_cluster: usize,
    pub seed: u64,
    /// Within-cluster and near-cluster positives.
    pub use_pos_c: bool,
    /// Far-cluster negatives.
    pub use_neg_c: bool,
    /// Same-frame negatives.
    pub use_nvid: bool,
    /// Add near-cluster positives for every cluster, not just small ones.
    pub near_for_all_clusters: bool,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            z_near: 25,
            z_far: 25,
            small_cluster_threshold: 10,
            clusters_per_batch: 5,
            pos_per_cluster: 25,
            neg_per_cluster: 25,
            seed: 0,
            use_pos_c: true,
            use_neg_c: true,
            use_nvid: true,
            near_for_all_clusters: false,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("z_near", self.z_near),
            ("z_far", self.z_far),
            ("small_cluster_threshold", self.small_cluster_threshold),
            ("clusters_per_batch", self.clusters_per_batch),
            ("pos_per_cluster", self.pos_per_cluster),
            ("neg_per_cluster", self.neg_per_cluster),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(CclError::Config(format!("mining.{name} must be positive")));
        }
        if self.pos_per_cluster != self.neg_per_cluster {
            return Err(CclError::Config(format!(
                "mining.pos_per_cluster ({}) must equal mining.neg_per_cluster ({})",
                self.pos_per_cluster, self.neg_per_cluster
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PairSource {
    /// Both samples in the same cluster.
    PosC,
    /// Small-cluster sample paired with a member of a nearby cluster.
    PosCNear,
    /// Sample paired with a member of a far cluster.
    NegC,
    /// Samples sharing a frame.
    NVid,
}

impl PairSource {
    pub fn as_str(self) -> &'static str {
        match self {
            PairSource::PosC => "PosC",
            PairSource::PosCNear => "PosC-near",
            PairSource::NegC => "NegC",
            PairSource::NVid => "NVid",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "PosC" => PairSource::PosC,
            "PosC-near" => PairSource::PosCNear,
            "NegC" => PairSource::NegC,
            "NVid" => PairSource::NVid,
            _ => return None,
        })
    }

    pub fn is_positive(self) -> bool {
        matches!(self, PairSource::PosC | PairSource::PosCNear)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pair {
    pub a: usize,
    pub b: usize,
    /// 0 for a positive pair, 1 for a negative pair.
    pub y: u8,
    pub source: PairSource,
}

impl Pair {
    fn new(a: usize, b: usize, source: PairSource) -> Self {
        Pair {
            a,
            b,
            y: if source.is_positive() { 0 } else { 1 },
            source,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairBatch {
    pub pairs: Vec<Pair>,
    /// Clusters that contributed to this batch, in visiting order.
    pub clusters: Vec<usize>,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.pairs.iter().filter(|p| p.y == 0).count()
    }
}

/// Nearest and farthest other clusters for every cluster.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterRanks {
    pub nearest: Vec<Vec<usize>>,
    pub farthest: Vec<Vec<usize>>,
}

/// Rank clusters by Euclidean distance between their (normalized) means.
/// Ties go to the lower cluster index; lists truncate when fewer than `z`
/// other clusters exist.
pub fn rank_clusters(means: &Array2<f32>, z_near: usize, z_far: usize) -> Result<ClusterRanks> {
    let m = means.nrows();
    if m < 2 {
        return Err(CclError::invalid(format!("need at least 2 clusters to rank, got {m}")));
    }
    let rows: Vec<Vec<f64>> = means
        .outer_iter()
        .map(|r| r.iter().map(|&v| v as f64).collect())
        .collect();
    let dist = |a: usize, b: usize| -> f64 {
        rows[a]
            .iter()
            .zip(&rows[b])
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let mut nearest = Vec::with_capacity(m);
    let mut farthest = Vec::with_capacity(m);
    for c in 0..m {
        let mut others: Vec<(f64, usize)> = (0..m).filter(|&o| o != c).map(|o| (dist(c, o), o)).collect();
        others.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        nearest.push(others.iter().take(z_near).map(|p| p.1).collect());
        others.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
        farthest.push(others.iter().take(z_far).map(|p| p.1).collect());
    }
    Ok(ClusterRanks { nearest, farthest })
}

/// Split co-occurring samples out of shared clusters.
///
/// For each cluster (ascending) and each co-occurring pair inside it
/// (ascending), the endpoint closer to the cluster's current mean stays and
/// the other becomes a new singleton cluster. Ties keep the lower index.
pub fn apply_video_correction(partition: &[usize], cooc: &CooccurrenceSet, points: &Array2<f32>) -> Result<Vec<usize>> {
    if partition.len() != points.nrows() {
        return Err(CclError::Dimension {
            expected: points.nrows(),
            got: partition.len(),
        });
    }
    if let Some(max) = cooc.max_index() {
        if max >= partition.len() {
            return Err(CclError::invalid(format!("co-occurrence index {max} out of range")));
        }
    }
    let mut labels = partition.to_vec();
    let mut next = labels.iter().copied().max().map_or(0, |m| m + 1);

    let mut violations: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    for &(a, b) in cooc.pairs() {
        if labels[a] == labels[b] {
            violations.entry(labels[a]).or_default().push((a, b));
        }
    }

    let d = points.ncols();
    for (c, pairs) in violations {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        let mut sum = Array1::<f64>::zeros(d);
        for &i in &members {
            sum.zip_mut_with(&points.row(i), |s, &v| *s += v as f64);
        }
        let mut count = members.len() as f64;
        for (a, b) in pairs {
            if labels[a] != c || labels[b] != c {
                continue;
            }
            let mean = &sum / count;
            let dist = |i: usize| -> f64 {
                points
                    .row(i)
                    .iter()
                    .zip(mean.iter())
                    .map(|(&x, &m)| (x as f64 - m).powi(2))
                    .sum()
            };
            let moved = if dist(a) <= dist(b) { b } else { a };
            labels[moved] = next;
            next += 1;
            sum.zip_mut_with(&points.row(moved), |s, &v| *s -= v as f64);
            count -= 1.0;
        }
    }
    Ok(labels)
}

/// Deterministic per-epoch pair generator over a fixed partition.
#[derive(Clone, Debug)]
pub struct PairMiner {
    cfg: MiningConfig,
    labels: Vec<usize>,
    members: Vec<Vec<usize>>,
    ranks: ClusterRanks,
    cooc: CooccurrenceSet,
    /// Co-occurrence pairs touching each cluster, oriented member-first.
    nvid: Vec<Vec<(usize, usize)>>,
}

impl PairMiner {
    /// `partition` must already be corrected: no cluster may contain a
    /// co-occurring pair.
    pub fn new(partition: &[usize], ranks: ClusterRanks, cooc: &CooccurrenceSet, cfg: MiningConfig) -> Result<Self> {
        cfg.validate()?;
        let k = partition.iter().copied().max().map_or(0, |m| m + 1);
        if k < 2 {
            return Err(CclError::invalid(
                "partition has a single cluster; negatives cannot be mined",
            ));
        }
        if ranks.nearest.len() != k || ranks.farthest.len() != k {
            return Err(CclError::Dimension {
                expected: k,
                got: ranks.nearest.len(),
            });
        }
        let mut members = vec![Vec::new(); k];
        for (i, &l) in partition.iter().enumerate() {
            members[l].push(i);
        }
        if let Some(empty) = members.iter().position(Vec::is_empty) {
            return Err(CclError::invalid(format!("cluster {empty} has no members")));
        }
        let mut nvid = vec![Vec::new(); k];
        for &(a, b) in cooc.pairs() {
            if a >= partition.len() || b >= partition.len() {
                return Err(CclError::invalid(format!("co-occurrence pair ({a}, {b}) out of range")));
            }
            let (ca, cb) = (partition[a], partition[b]);
            if ca == cb {
                return Err(CclError::invalid(format!(
                    "cluster {ca} contains co-occurring samples {a} and {b}; apply video correction first"
                )));
            }
            nvid[ca].push((a, b));
            nvid[cb].push((b, a));
        }
        Ok(PairMiner {
            cfg,
            labels: partition.to_vec(),
            members,
            ranks,
            cooc: cooc.clone(),
            nvid,
        })
    }

    pub fn config(&self) -> &MiningConfig {
        &self.cfg
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_clusters(&self) -> usize {
        self.members.len()
    }

    pub fn ranks(&self) -> &ClusterRanks {
        &self.ranks
    }

    /// Batches per epoch: every cluster is visited; the last group is topped up
    /// from the start of the shuffled order so all batches have the same shape.
    pub fn batches_per_epoch(&self) -> usize {
        self.members.len().div_ceil(self.cfg.clusters_per_batch)
    }

    pub fn epoch(&self, epoch: usize) -> EpochBatches<'_> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(epoch as u64);
        let mut order: Vec<usize> = (0..self.members.len()).collect();
        order.shuffle(&mut rng);
        EpochBatches {
            miner: self,
            rng,
            order,
            next: 0,
            emitted: 0,
        }
    }

    fn cluster_pairs(&self, c: usize, rng: &mut ChaCha8Rng, out: &mut Vec<Pair>) {
        let cfg = &self.cfg;
        let members = &self.members[c];
        let s = members.len();

        if cfg.use_pos_c {
            let within = s * (s - 1) / 2;
            let mut near = Vec::new();
            if s < cfg.small_cluster_threshold || cfg.near_for_all_clusters {
                let per_member = cfg.pos_per_cluster.div_ceil(s);
                let candidates = &self.ranks.nearest[c];
                for &i in members {
                    for _ in 0..per_member {
                        let other = &self.members[candidates[rng.random_range(0..candidates.len())]];
                        let j = other[rng.random_range(0..other.len())];
                        if !self.cooc.contains(i, j) {
                            near.push(Pair::new(i, j, PairSource::PosCNear));
                        }
                    }
                }
            }
            let decode = |t: usize| -> Pair {
                if t < within {
                    let (a, b) = unrank_pair(t, s);
                    Pair::new(members[a], members[b], PairSource::PosC)
                } else {
                    near[t - within]
                }
            };
            for t in subsample(within + near.len(), cfg.pos_per_cluster, rng) {
                out.push(decode(t));
            }
        }

        let mut negatives = Vec::new();
        if cfg.use_neg_c {
            let candidates = &self.ranks.farthest[c];
            for &i in members {
                for _ in 0..2 {
                    let other = &self.members[candidates[rng.random_range(0..candidates.len())]];
                    let j = other[rng.random_range(0..other.len())];
                    negatives.push(Pair::new(i, j, PairSource::NegC));
                }
            }
        }
        if cfg.use_nvid {
            negatives.extend(self.nvid[c].iter().map(|&(a, b)| Pair::new(a, b, PairSource::NVid)));
        }
        for t in subsample(negatives.len(), cfg.neg_per_cluster, rng) {
            out.push(negatives[t]);
        }
    }
}

/// Map `t` in `0..s(s-1)/2` to the pair `(a, b)`, `a < b`, in row-major order.
fn unrank_pair(mut t: usize, s: usize) -> (usize, usize) {
    let mut a = 0;
    loop {
        let row = s - 1 - a;
        if t < row {
            return (a, a + 1 + t);
        }
        t -= row;
        a += 1;
    }
}

/// `k` indices from `0..pool`: distinct when the pool is large enough,
/// otherwise every index once plus uniform draws with replacement.
fn subsample(pool: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if pool == 0 {
        return Vec::new();
    }
    if pool >= k {
        return rand::seq::index::sample(rng, pool, k).into_vec();
    }
    let mut out: Vec<usize> = (0..pool).collect();
    out.extend((pool..k).map(|_| rng.random_range(0..pool)));
    out
}

/// Iterator over one epoch of batches.
pub struct EpochBatches<'a> {
    miner: &'a PairMiner,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    next: usize,
    emitted: usize,
}

impl Iterator for EpochBatches<'_> {
    type Item = PairBatch;

    fn next(&mut self) -> Option<PairBatch> {
        if self.emitted >= self.miner.batches_per_epoch() {
            return None;
        }
        let per = self.miner.cfg.clusters_per_batch;
        let mut batch = PairBatch::default();
        for _ in 0..per {
            let c = self.order[self.next % self.order.len()];
            self.next += 1;
            batch.clusters.push(c);
            self.miner.cluster_pairs(c, &mut self.rng, &mut batch.pairs);
        }
        self.emitted += 1;
        Some(batch)
    }
}

/// Build a miner over an already corrected partition.
pub fn mine_batches(
    partition: &[usize],
    ranks: ClusterRanks,
    cooc: &CooccurrenceSet,
    cfg: MiningConfig,
) -> Result<PairMiner> {
    PairMiner::new(partition, ranks, cooc, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::group_means;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn two_clusters_rank_each_other() {
        let r = rank_clusters(&array![[1.0f32, 0.0], [0.0, 1.0]], 25, 25).unwrap();
        assert_eq!(r.nearest, vec![vec![1], vec![0]]);
        assert_eq!(r.farthest, vec![vec![1], vec![0]]);
        assert!(rank_clusters(&array![[1.0f32, 0.0]], 1, 1).is_err());
    }

    #[test]
    fn collinear_middle_sees_endpoint_as_farthest() {
        let means = array![[0.0f32], [1.0], [3.0]];
        let r = rank_clusters(&means, 1, 1).unwrap();
        assert_eq!(r.farthest[1], vec![2]);
        assert_eq!(r.nearest[1], vec![0]);
        assert_eq!(r.farthest[0], vec![2]);
        assert_eq!(r.nearest[2], vec![1]);
    }

    #[test]
    fn ranks_match_full_sort() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let means = Array2::from_shape_fn((50, 4), |_| rng.random_range(-1.0f32..1.0));
        let r = rank_clusters(&means, 7, 9).unwrap();
        for c in 0..50 {
            let mut d: Vec<(f64, usize)> = (0..50)
                .filter(|&o| o != c)
                .map(|o| {
                    let s: f64 = (0..4).map(|k| (means[[c, k]] as f64 - means[[o, k]] as f64).powi(2)).sum();
                    (s, o)
                })
                .collect();
            d.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert_eq!(r.nearest[c], d.iter().take(7).map(|p| p.1).collect::<Vec<_>>());
            d.reverse();
            assert_eq!(r.farthest[c], d.iter().take(9).map(|p| p.1).collect::<Vec<_>>());
        }
    }

    #[test]
    fn correction_without_conflicts_is_identity() {
        let pts = array![[1.0f32, 0.0], [0.9, 0.1], [0.0, 1.0]];
        let cooc = CooccurrenceSet::from_pairs([(0, 2)]).unwrap();
        assert_eq!(apply_video_correction(&[0, 0, 1], &cooc, &pts).unwrap(), vec![0, 0, 1]);
    }

    #[test]
    fn correction_moves_farther_endpoint() {
        // cluster {0,1,2}; mean is near 0, so 1 is rejected
        let pts = array![[1.0f32, 0.0], [0.0, 1.0], [0.9, 0.1], [5.0, 5.0]];
        let cooc = CooccurrenceSet::from_pairs([(0, 1)]).unwrap();
        let out = apply_video_correction(&[0, 0, 0, 1], &cooc, &pts).unwrap();
        assert_eq!(out, vec![0, 2, 0, 1]);
    }

    #[test]
    fn correction_clears_every_violation() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 60;
        let pts = Array2::from_shape_fn((n, 3), |_| rng.random_range(-1.0f32..1.0));
        let part: Vec<usize> = (0..n).map(|i| i % 4).collect();
        let cooc = CooccurrenceSet::from_pairs((0..40).map(|_| {
            let a = rng.random_range(0..n);
            (a, (a + 4 * rng.random_range(1..5)) % n)
        }).filter(|(a, b)| a != b))
        .unwrap();
        let out = apply_video_correction(&part, &cooc, &pts).unwrap();
        for &(a, b) in cooc.pairs() {
            assert_ne!(out[a], out[b]);
        }
        let k = out.iter().max().unwrap() + 1;
        for c in 0..k {
            assert!(out.contains(&c), "labels not contiguous");
        }
    }

    fn toy_miner(cfg: MiningConfig) -> (PairMiner, Vec<usize>, CooccurrenceSet) {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 120;
        let pts = Array2::from_shape_fn((n, 4), |_| rng.random_range(-1.0f32..1.0));
        // 12 clusters of varying size including a singleton
        let mut part: Vec<usize> = (0..n).map(|i| (i * 7) % 11).collect();
        part[n - 1] = 11;
        let cooc = CooccurrenceSet::from_pairs([(0, 3), (5, 8), (13, 40)]).unwrap();
        let part = apply_video_correction(&part, &cooc, &pts).unwrap();
        let means = group_means(&pts, &part).unwrap();
        let ranks = rank_clusters(&means, cfg.z_near, cfg.z_far).unwrap();
        (PairMiner::new(&part, ranks, &cooc, cfg).unwrap(), part, cooc)
    }

    #[test]
    fn default_batches_have_fixed_shape() {
        let (miner, _, _) = toy_miner(MiningConfig::default());
        let batches: Vec<PairBatch> = miner.epoch(0).collect();
        assert_eq!(batches.len(), miner.batches_per_epoch());
        let mut seen = std::collections::HashSet::new();
        for b in &batches {
            assert_eq!(b.len(), 250);
            assert_eq!(b.positives(), 125);
            seen.extend(b.clusters.iter().copied());
        }
        assert_eq!(seen.len(), miner.num_clusters());
    }

    #[test]
    fn singleton_positives_come_from_near_clusters() {
        let (miner, part, _) = toy_miner(MiningConfig::default());
        let singleton = (0..miner.num_clusters())
            .find(|&c| part.iter().filter(|&&l| l == c).count() == 1)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut pairs = Vec::new();
        miner.cluster_pairs(singleton, &mut rng, &mut pairs);
        let pos: Vec<&Pair> = pairs.iter().filter(|p| p.y == 0).collect();
        assert_eq!(pos.len(), 25);
        assert!(pos.iter().all(|p| p.source == PairSource::PosCNear));
    }

    #[test]
    fn emitted_pairs_respect_sources() {
        let cfg = MiningConfig { z_near: 3, z_far: 4, ..MiningConfig::default() };
        let (miner, part, cooc) = toy_miner(cfg);
        for epoch in 0..3 {
            for b in miner.epoch(epoch) {
                for p in &b.pairs {
                    assert_ne!(p.a, p.b);
                    let (ca, cb) = (part[p.a], part[p.b]);
                    match p.source {
                        PairSource::PosC => assert_eq!(ca, cb),
                        PairSource::PosCNear => {
                            assert!(miner.ranks.nearest[ca].contains(&cb));
                            assert!(!cooc.contains(p.a, p.b));
                        }
                        PairSource::NegC => assert!(miner.ranks.farthest[ca].contains(&cb)),
                        PairSource::NVid => assert!(cooc.contains(p.a, p.b)),
                    }
                    assert_eq!(p.y == 0, p.source.is_positive());
                }
            }
        }
    }

    #[test]
    fn toggles_remove_sources() {
        let cfg = MiningConfig { use_neg_c: false, use_nvid: false, ..MiningConfig::default() };
        let (miner, _, _) = toy_miner(cfg);
        for b in miner.epoch(0) {
            assert!(b.pairs.iter().all(|p| p.y == 0));
        }
        let cfg = MiningConfig { use_pos_c: false, ..MiningConfig::default() };
        let (miner, _, _) = toy_miner(cfg);
        for b in miner.epoch(0) {
            assert!(b.pairs.iter().all(|p| p.y == 1));
            assert_eq!(b.len(), 125);
        }
    }

    #[test]
    fn single_cluster_rejected() {
        let ranks = ClusterRanks { nearest: vec![vec![]], farthest: vec![vec![]] };
        let err = PairMiner::new(&[0, 0, 0], ranks, &CooccurrenceSet::default(), MiningConfig::default());
        assert!(err.is_err());
    }

    #[test]
    fn uncorrected_partition_rejected() {
        let ranks = ClusterRanks { nearest: vec![vec![1], vec![0]], farthest: vec![vec![1], vec![0]] };
        let cooc = CooccurrenceSet::from_pairs([(0, 1)]).unwrap();
        assert!(PairMiner::new(&[0, 0, 1], ranks, &cooc, MiningConfig::default()).is_err());
    }

    #[test]
    fn unequal_pos_neg_rejected() {
        let cfg = MiningConfig { neg_per_cluster: 10, ..MiningConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unrank_enumerates_all_pairs() {
        let s = 6;
        let all: Vec<(usize, usize)> = (0..s * (s - 1) / 2).map(|t| unrank_pair(t, s)).collect();
        let mut expected = vec![];
        for a in 0..s {
            for b in a + 1..s {
                expected.push((a, b));
            }
        }
        assert_eq!(all, expected);
    }

    proptest! {
        #[test]
        fn same_seed_same_stream(seed in any::<u64>()) {
            let cfg = MiningConfig { seed, ..MiningConfig::default() };
            let (a, _, _) = toy_miner(cfg.clone());
            let (b, _, _) = toy_miner(cfg);
            let ea: Vec<PairBatch> = a.epoch(1).collect();
            let eb: Vec<PairBatch> = b.epoch(1).collect();
            prop_assert_eq!(
                crate::io::pairs_to_csv(ea.iter().flat_map(|b| &b.pairs)),
                crate::io::pairs_to_csv(eb.iter().flat_map(|b| &b.pairs))
            );
        }
    }
}
