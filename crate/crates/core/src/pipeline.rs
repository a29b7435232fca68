//! End-to-end orchestration: weak labels, pair mining, training, embedding,
//! final clustering and scoring.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use crate::config::{Backend, EvalLevel, KMeansParams, PipelineConfig};
use crate::data::{aggregate_tracks, build_cooccurrence, group_means, l2_normalize, CooccurrenceSet, FeatureSet};
use crate::error::{CclError, Result};
use crate::finch::{finch_hierarchy, PartitionHierarchy};
use crate::hac::ward_hac;
use crate::io::{self, LabelFile, LabelKey};
use crate::kmeans::{minibatch_kmeans, KMeansConfig};
use crate::metrics::{wcp, ClusteringReport};
use crate::mining::{apply_video_correction, rank_clusters, MiningConfig, PairMiner};
use crate::siamese::{save_model, train, SiameseModel, TrainConfig, TrainHistory};

/// Statistics of one weak-label partition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionStats {
    pub num_clusters: usize,
    pub largest: usize,
    pub smallest: usize,
    /// Purity and correctly/wrongly clustered sample counts, when labeled.
    pub acc: Option<f64>,
    pub correct: Option<usize>,
    pub wrong: Option<usize>,
}

impl PartitionStats {
    pub fn compute(labels: &[usize], gt: Option<&[i64]>) -> Result<Self> {
        let k = labels.iter().copied().max().map_or(0, |m| m + 1);
        let mut sizes = vec![0usize; k];
        for &l in labels {
            sizes[l] += 1;
        }
        let (mut acc, mut correct, mut wrong) = (None, None, None);
        if let Some(gt) = gt {
            let (p, g) = labeled_subset(labels, gt);
            if !p.is_empty() {
                let w = wcp(&p, &g)?;
                acc = Some(w.acc);
                correct = Some(w.correct);
                wrong = Some(w.wrong);
            }
        }
        Ok(PartitionStats {
            num_clusters: k,
            largest: sizes.iter().copied().max().unwrap_or(0),
            smallest: sizes.iter().copied().min().unwrap_or(0),
            acc,
            correct,
            wrong,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakLabelStats {
    /// Every FINCH level, finest first.
    pub finch: Vec<PartitionStats>,
    pub backend: Backend,
    pub partition_index: usize,
    /// The partition used for mining, before video correction.
    pub selected: PartitionStats,
    /// After video correction.
    pub corrected: PartitionStats,
    pub cooccurring_pairs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiningStats {
    pub batches_per_epoch: usize,
    /// Pair counts of epoch 0 by source.
    pub pairs_by_source: BTreeMap<String, usize>,
    pub positives: usize,
    pub negatives: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub config: PipelineConfig,
    pub eval_level: EvalLevel,
    /// Final cluster count `C`.
    pub num_clusters: usize,
    /// Faces or tracks clustered.
    pub num_items: usize,
    pub ccl: Option<ClusteringReport>,
    pub base: Option<ClusteringReport>,
    pub weak_labels: WeakLabelStats,
    pub mining: MiningStats,
    pub training: TrainHistory,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
    #[serde(skip)]
    pub labels: Option<LabelFile>,
}

impl PipelineReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// JSON without the timing block, stable across identical runs.
    pub fn deterministic_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        v.as_object_mut().unwrap().remove("timings");
        serde_json::to_string_pretty(&v).unwrap()
    }
}

struct Timer {
    times: BTreeMap<String, f64>,
}

impl Timer {
    fn stage<T>(&mut self, name: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f().map_err(|e| e.in_stage(name));
        let secs = start.elapsed().as_secs_f64();
        log::info!("stage {name}: {secs:.3}s");
        *self.times.entry(name.to_string()).or_insert(0.0) += secs;
        out
    }
}

fn labeled_subset(pred: &[usize], gt: &[i64]) -> (Vec<usize>, Vec<i64>) {
    pred.iter()
        .zip(gt)
        .filter(|(_, &g)| g >= 0)
        .map(|(&p, &g)| (p, g))
        .unzip()
}

/// Score a labeling against ground truth, ignoring items labeled `-1`.
/// `None` when nothing is labeled.
pub fn score(pred: &[usize], gt: Option<&[i64]>) -> Result<Option<ClusteringReport>> {
    let Some(gt) = gt else { return Ok(None) };
    let (p, g) = labeled_subset(pred, gt);
    if p.is_empty() {
        return Ok(None);
    }
    ClusteringReport::evaluate(&p, &g).map(Some)
}

/// Items clustered at a given level: faces as-is, or normalized track means.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelView {
    pub features: Array2<f32>,
    pub gt: Option<Vec<i64>>,
    pub ids: Vec<i64>,
    pub key: LabelKey,
}

pub fn level_view(fs: &FeatureSet, level: EvalLevel) -> Result<LevelView> {
    match level {
        EvalLevel::Frame => Ok(LevelView {
            features: fs.features.clone(),
            gt: fs.label.clone(),
            ids: (0..fs.len() as i64).collect(),
            key: LabelKey::Sample,
        }),
        EvalLevel::Track => {
            let t = aggregate_tracks(fs)?;
            Ok(LevelView {
                features: t.features,
                gt: fs.label.as_ref().map(|_| t.label),
                ids: t.track_id,
                key: LabelKey::Track,
            })
        }
    }
}

fn distinct_labels(gt: Option<&[i64]>) -> usize {
    gt.map_or(0, |g| g.iter().filter(|&&l| l >= 0).collect::<BTreeSet<_>>().len())
}

/// Ward HAC at `c` clusters (ground-truth class count when `None`) on an
/// already normalized feature set, with optional scoring.
pub fn cluster_and_score(
    fs: &FeatureSet,
    c: Option<usize>,
    level: EvalLevel,
) -> Result<(LabelFile, Option<ClusteringReport>)> {
    let view = level_view(fs, level)?;
    let c = match c {
        Some(c) => c,
        None => match distinct_labels(view.gt.as_deref()) {
            0 => return Err(CclError::Config("num_clusters is required for unlabeled data".into())),
            c => c,
        },
    };
    let hac = ward_hac(&view.features, c)?;
    let report = score(&hac.labels, view.gt.as_deref())?;
    let labels = LabelFile {
        key: view.key,
        ids: view.ids,
        labels: hac.labels,
    };
    Ok((labels, report))
}

/// HAC on the unrefined, normalized features.
pub fn run_baseline(fs: &FeatureSet, c: usize, level: EvalLevel) -> Result<ClusteringReport> {
    let fs = l2_normalize(fs)?;
    cluster_and_score(&fs, Some(c), level)?
        .1
        .ok_or_else(|| CclError::invalid("baseline scoring needs ground-truth labels"))
}

/// Correct `partition` against co-occurrence, rank clusters by their means
/// and build the pair miner. Returns the miner and the corrected labels.
pub fn prepare_miner(
    points: &Array2<f32>,
    partition: &[usize],
    cooc: &CooccurrenceSet,
    cfg: &MiningConfig,
) -> Result<(PairMiner, Vec<usize>)> {
    let corrected = apply_video_correction(partition, cooc, points)?;
    let means = group_means(points, &corrected)?;
    let ranks = rank_clusters(&means, cfg.z_near, cfg.z_far)?;
    let miner = PairMiner::new(&corrected, ranks, cooc, cfg.clone())?;
    Ok((miner, corrected))
}

/// Initialize a model for `points` and train it on `miner`'s batches.
pub fn fit_model(
    points: &Array2<f32>,
    miner: &PairMiner,
    model_cfg: &crate::siamese::ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<(SiameseModel<f32>, TrainHistory)> {
    let mcfg = crate::siamese::ModelConfig {
        input_dim: points.ncols(),
        ..model_cfg.clone()
    };
    let mut model = SiameseModel::<f32>::init(&mcfg, train_cfg.seed)?;
    let history = train(&mut model, points, miner, train_cfg)?;
    Ok((model, history))
}

fn weak_partition(
    cfg: &PipelineConfig,
    points: &Array2<f32>,
    hier: &PartitionHierarchy,
) -> Result<Vec<usize>> {
    let finch = hier.partition(cfg.partition_index)?;
    match cfg.backend {
        Backend::Finch => Ok(finch.to_vec()),
        Backend::Kmeans => {
            let k = hier.cluster_counts[cfg.partition_index - 1];
            let kc = KMeansConfig {
                k,
                batch_size: cfg.kmeans.batch_size,
                max_iters: cfg.kmeans.max_iters,
                seed: cfg.seed,
                init_oversample: cfg.kmeans.init_oversample,
            };
            Ok(minibatch_kmeans(points, &kc)?.labels)
        }
    }
}

/// Load `cfg.features` and run the full pipeline.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineReport> {
    let path = cfg
        .features
        .as_ref()
        .ok_or_else(|| CclError::Config("paths.features is not set".into()))?;
    let fs = io::load_any_features(path).map_err(|e| e.in_stage("load"))?;
    run_pipeline_on(&fs, cfg)
}

/// Full pipeline on an in-memory feature set. Artifacts are written when
/// `cfg.output_dir` is set.
pub fn run_pipeline_on(input: &FeatureSet, cfg: &PipelineConfig) -> Result<PipelineReport> {
    let mut cfg = cfg.clone();
    cfg.resolve()?;
    let mut timer = Timer { times: BTreeMap::new() };
    let out_dir = cfg.output_dir.clone();
    if let Some(dir) = &out_dir {
        std::fs::create_dir_all(dir).map_err(|e| CclError::from(e).in_stage("output"))?;
    }

    let fs = timer.stage("normalize", || l2_normalize(input))?;
    let cooc = timer.stage("cooccurrence", || match fs.frame_id {
        Some(_) => build_cooccurrence(&fs),
        None => CooccurrenceSet::from_pairs(std::iter::empty()),
    })?;
    let gt = fs.label.as_deref();

    let hier = timer.stage("finch", || finch_hierarchy(&fs.features))?;
    log::info!("finch cluster counts: {:?}", hier.cluster_counts);
    let selected = timer.stage("weak_labels", || weak_partition(&cfg, &fs.features, &hier))?;
    let (miner, corrected) = timer.stage("mining", || prepare_miner(&fs.features, &selected, &cooc, &cfg.mining))?;

    let weak_labels = timer.stage("partition_stats", || {
        Ok(WeakLabelStats {
            finch: hier
                .partitions
                .iter()
                .map(|p| PartitionStats::compute(p, gt))
                .collect::<Result<_>>()?,
            backend: cfg.backend,
            partition_index: cfg.partition_index,
            selected: PartitionStats::compute(&selected, gt)?,
            corrected: PartitionStats::compute(&corrected, gt)?,
            cooccurring_pairs: cooc.len(),
        })
    })?;

    let epoch0: Vec<_> = miner.epoch(0).collect();
    let mut pairs_by_source = BTreeMap::new();
    let mut positives = 0;
    let mut negatives = 0;
    for p in epoch0.iter().flat_map(|b| &b.pairs) {
        *pairs_by_source.entry(p.source.as_str().to_string()).or_insert(0) += 1;
        if p.y == 0 {
            positives += 1;
        } else {
            negatives += 1;
        }
    }
    let mining = MiningStats {
        batches_per_epoch: miner.batches_per_epoch(),
        pairs_by_source,
        positives,
        negatives,
    };

    let (model, training) = timer.stage("train", || fit_model(&fs.features, &miner, &cfg.model, &cfg.train))?;
    let embedded = timer.stage("embed", || model.embed(&fs))?;

    let c = match cfg.num_clusters {
        Some(c) => c,
        None => {
            let view_gt = match cfg.eval_level {
                EvalLevel::Frame => fs.label.clone(),
                EvalLevel::Track => level_view(&fs, EvalLevel::Track)
                    .map_err(|e| e.in_stage("cluster"))?
                    .gt,
            };
            match distinct_labels(view_gt.as_deref()) {
                0 => return Err(CclError::Config("pipeline.num_clusters is required for unlabeled data".into())),
                c => c,
            }
        }
    };
    let (labels, ccl) = timer.stage("cluster", || cluster_and_score(&embedded, Some(c), cfg.eval_level))?;
    let (_, base) = timer.stage("baseline", || cluster_and_score(&fs, Some(c), cfg.eval_level))?;

    let report = PipelineReport {
        eval_level: cfg.eval_level,
        num_clusters: c,
        num_items: labels.labels.len(),
        ccl,
        base,
        weak_labels,
        mining,
        training,
        timings: BTreeMap::new(),
        labels: Some(labels),
        config: cfg,
    };
    let mut report = report;
    if let Some(dir) = &out_dir {
        timer.stage("write", || write_artifacts(dir, &report, &hier, &corrected, &cooc, &epoch0, &model))?;
    }
    report.timings = timer.times;
    if let Some(dir) = &out_dir {
        std::fs::write(dir.join("report.json"), report.to_json()).map_err(|e| CclError::from(e).in_stage("write"))?;
    }
    Ok(report)
}

fn write_artifacts(
    dir: &Path,
    report: &PipelineReport,
    hier: &PartitionHierarchy,
    corrected: &[usize],
    cooc: &CooccurrenceSet,
    epoch0: &[crate::mining::PairBatch],
    model: &SiameseModel<f32>,
) -> Result<()> {
    io::write_partitions(dir.join("partitions.csv"), &hier.partitions, &hier.cluster_counts)?;
    LabelFile::samples(corrected.to_vec()).write(dir.join("weak_labels.csv"))?;
    std::fs::write(dir.join("cooccurrence.csv"), io::cooccurrence_to_csv(cooc))?;
    std::fs::write(dir.join("pairs_epoch0.csv"), io::pairs_to_csv(epoch0.iter().flat_map(|b| &b.pairs)))?;
    save_model(dir.join("model.ccl"), model)?;
    if let Some(labels) = &report.labels {
        labels.write(dir.join("labels.csv"))?;
    }
    std::fs::write(dir.join("config.txt"), report.config.to_text())?;
    Ok(())
}

/// One row of the pair-source ablation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub use_pos_c: bool,
    pub use_neg_c: bool,
    pub use_nvid: bool,
    pub report: ClusteringReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub base: ClusteringReport,
    pub rows: Vec<AblationRow>,
}

/// The six source combinations: PosC, NegC, PosC+NVid, PosC+NegC,
/// NegC+NVid, all three.
pub const ABLATION_ROWS: [(bool, bool, bool); 6] = [
    (true, false, false),
    (false, true, false),
    (true, false, true),
    (true, true, false),
    (false, true, true),
    (true, true, true),
];

/// Run the pipeline once per source combination, plus the baseline.
pub fn run_ablation(fs: &FeatureSet, cfg: &PipelineConfig) -> Result<AblationReport> {
    let mut rows = Vec::with_capacity(ABLATION_ROWS.len());
    let mut base = None;
    for (pos, neg, vid) in ABLATION_ROWS {
        let mut c = cfg.clone();
        c.output_dir = None;
        c.mining.use_pos_c = pos;
        c.mining.use_neg_c = neg;
        c.mining.use_nvid = vid;
        let r = run_pipeline_on(fs, &c)?;
        let report = r
            .ccl
            .ok_or_else(|| CclError::invalid("ablation needs ground-truth labels"))?;
        log::info!("ablation PosC={pos} NegC={neg} NVid={vid}: acc {:.4}", report.acc);
        base = r.base;
        rows.push(AblationRow {
            use_pos_c: pos,
            use_neg_c: neg,
            use_nvid: vid,
            report,
        });
    }
    Ok(AblationReport {
        base: base.expect("labels checked above"),
        rows,
    })
}
