use std::collections::HashMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use ccl::data::{build_cooccurrence, l2_normalize, CooccurrenceSet};
use ccl::io::{self, LabelFile, LabelKey};
use ccl::pipeline::{cluster_and_score, fit_model, level_view, prepare_miner, run_ablation, run_pipeline, EvalLevel};
use ccl::siamese::{load_model, save_model};
use ccl::synth::{synth_generate, SynthConfig};
use ccl::{bcubed, finch_hierarchy, minibatch_kmeans, wcp, FeatureSet, KMeansConfig, PipelineConfig};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

#[derive(Parser)]
#[command(name = "ccl", version, about = "Clustering-based contrastive refinement of face embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic dataset with tracks and co-occurring frames.
    Synth(SynthArgs),
    /// First-neighbor hierarchy; writes every partition.
    Finch {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mini-batch K-means labels.
    Kmeans {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1024)]
        batch_size: usize,
        #[arg(long, default_value_t = 100)]
        max_iters: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print one epoch of mined pairs as `a,b,y,source`.
    Mine {
        #[command(flatten)]
        weak: WeakArgs,
        #[arg(long, default_value_t = 0)]
        epoch: usize,
        /// Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the Siamese encoder on mined pairs.
    Train {
        #[command(flatten)]
        weak: WeakArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Embed features with a trained model.
    Embed {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ward clustering of features or embeddings.
    Cluster {
        #[arg(long, conflicts_with = "embeddings", required_unless_present = "embeddings")]
        features: Option<PathBuf>,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Defaults to the number of ground-truth classes.
        #[arg(long)]
        num_clusters: Option<usize>,
        #[arg(long, default_value = "frame")]
        level: EvalLevel,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a label file against the labels of a feature file.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "wcp,bcubed")]
        metrics: Vec<String>,
        /// Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full pipeline: weak labels, mining, training, clustering, scoring.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Pipeline once per pair-source combination.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 3)]
    num_classes: usize,
    #[arg(long, default_value_t = 200)]
    per_class: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 10)]
    frames_per_track: usize,
    #[arg(long, default_value_t = 0.1)]
    cooc_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// `.csv` writes the import format, anything else the binary format.
    #[arg(long)]
    out: PathBuf,
}

/// Config file plus overrides. Each flag overrides its config key.
#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key=value`, repeatable; applied after the config file and flags.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// paths.features
    #[arg(long)]
    features: Option<PathBuf>,
    /// paths.output_dir
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// pipeline.seed
    #[arg(long)]
    seed: Option<u64>,
    /// pipeline.partition_index
    #[arg(long)]
    partition_index: Option<usize>,
    /// pipeline.num_clusters
    #[arg(long)]
    num_clusters: Option<usize>,
    /// pipeline.eval_level
    #[arg(long)]
    level: Option<String>,
    /// pipeline.backend
    #[arg(long)]
    backend: Option<String>,
    /// train.epochs
    #[arg(long)]
    epochs: Option<usize>,
    /// train.lr
    #[arg(long)]
    lr: Option<f64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::from_file(p)?,
            None => PipelineConfig::default(),
        };
        let flags: [(&str, Option<String>); 9] = [
            ("paths.features", self.features.as_ref().map(|p| p.display().to_string())),
            ("paths.output_dir", self.out_dir.as_ref().map(|p| p.display().to_string())),
            ("pipeline.seed", self.seed.map(|v| v.to_string())),
            ("pipeline.partition_index", self.partition_index.map(|v| v.to_string())),
            ("pipeline.num_clusters", self.num_clusters.map(|v| v.to_string())),
            ("pipeline.eval_level", self.level.clone()),
            ("pipeline.backend", self.backend.clone()),
            ("train.epochs", self.epochs.map(|v| v.to_string())),
            ("train.lr", self.lr.map(|v| v.to_string())),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        for kv in &self.overrides {
            cfg.apply_override(kv)?;
        }
        Ok(cfg)
    }
}

/// Inputs shared by `mine` and `train`; the feature path comes from `--features`
/// or `paths.features`.
#[derive(Args)]
struct WeakArgs {
    /// Partition CSV written by `finch`.
    #[arg(long)]
    partition: PathBuf,
    /// Co-occurrence CSV; derived from the feature file's frame ids when absent.
    #[arg(long)]
    cooc: Option<PathBuf>,
    #[command(flatten)]
    cfg: ConfigArgs,
}

struct WeakInputs {
    fs: FeatureSet,
    partition: Vec<usize>,
    cooc: CooccurrenceSet,
    cfg: PipelineConfig,
}

impl WeakArgs {
    fn load(&self) -> Result<WeakInputs> {
        let mut cfg = self.cfg.load()?;
        cfg.resolve()?;
        let features = cfg
            .features
            .clone()
            .ok_or_else(|| anyhow!("--features (paths.features) is required"))?;
        let fs = l2_normalize(&read_features(&features)?)?;
        let partitions = io::read_partitions(&self.partition)
            .with_context(|| format!("reading {}", self.partition.display()))?;
        let level = cfg.partition_index;
        let partition = partitions
            .get(level - 1)
            .cloned()
            .ok_or_else(|| anyhow!("partition index {level} out of range: file has L = {} partitions", partitions.len()))?;
        if partition.len() != fs.len() {
            bail!("partition has {} rows, features have {}", partition.len(), fs.len());
        }
        let cooc = match &self.cooc {
            Some(p) => io::parse_cooccurrence_csv(&std::fs::read_to_string(p)?)?,
            None if fs.frame_id.is_some() => build_cooccurrence(&fs)?,
            None => CooccurrenceSet::from_pairs(std::iter::empty())?,
        };
        Ok(WeakInputs { fs, partition, cooc, cfg })
    }
}

fn read_features(path: &Path) -> Result<FeatureSet> {
    io::load_any_features(path).with_context(|| format!("reading {}", path.display()))
}

fn write_text(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn features_to_csv(fs: &FeatureSet) -> String {
    let mut s = String::from("frame_id,track_id,label");
    for j in 0..fs.dim() {
        s.push_str(&format!(",f{j}"));
    }
    s.push('\n');
    let get = |v: &Option<Vec<i64>>, i: usize| v.as_ref().map_or(-1, |v| v[i]);
    for (i, row) in fs.features.outer_iter().enumerate() {
        s.push_str(&format!("{},{},{}", get(&fs.frame_id, i), get(&fs.track_id, i), get(&fs.label, i)));
        for v in row {
            s.push_str(&format!(",{v}"));
        }
        s.push('\n');
    }
    s
}

fn evaluate(pred: &LabelFile, fs: &FeatureSet, metrics: &[String]) -> Result<serde_json::Value> {
    let level = match pred.key {
        LabelKey::Sample => EvalLevel::Frame,
        LabelKey::Track => EvalLevel::Track,
    };
    let view = level_view(&l2_normalize(fs)?, level)?;
    let gt = view.gt.ok_or_else(|| anyhow!("ground-truth file has no labels"))?;
    let by_id: HashMap<i64, i64> = view.ids.iter().copied().zip(gt).collect();
    let (mut p, mut g) = (Vec::new(), Vec::new());
    for (id, &l) in pred.ids.iter().zip(&pred.labels) {
        let truth = *by_id.get(id).ok_or_else(|| anyhow!("id {id} not found in ground truth"))?;
        if truth >= 0 {
            p.push(l);
            g.push(truth);
        }
    }
    let mut out = serde_json::Map::new();
    out.insert("num_items".into(), json!(p.len()));
    for m in metrics {
        match m.as_str() {
            "wcp" => {
                let w = wcp(&p, &g)?;
                out.insert(
                    "wcp".into(),
                    json!({"acc": w.acc, "correct": w.correct, "wrong": w.wrong,
                           "cluster_sizes": w.sizes, "cluster_purities": w.purities}),
                );
            }
            "bcubed" => {
                let b = bcubed(&p, &g)?;
                out.insert("bcubed".into(), json!({"precision": b.precision, "recall": b.recall, "f": b.f}));
            }
            other => bail!("unknown metric `{other}` (expected wcp or bcubed)"),
        }
    }
    Ok(serde_json::Value::Object(out))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Synth(a) => {
            let fs = synth_generate(&SynthConfig {
                num_classes: a.num_classes,
                per_class: a.per_class,
                dim: a.dim,
                noise: a.noise,
                frames_per_track: a.frames_per_track,
                cooc_rate: a.cooc_rate,
                seed: a.seed,
            })?;
            if a.out.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
                std::fs::write(&a.out, features_to_csv(&fs))?;
            } else {
                io::write_features(&a.out, &fs)?;
            }
            log::info!("wrote {} samples to {}", fs.len(), a.out.display());
        }
        Command::Finch { features, out } => {
            let fs = l2_normalize(&read_features(&features)?)?;
            let h = finch_hierarchy(&fs.features)?;
            io::write_partitions(&out, &h.partitions, &h.cluster_counts)?;
            log::info!("cluster counts {:?}", h.cluster_counts);
        }
        Command::Kmeans { features, k, seed, batch_size, max_iters, out } => {
            let fs = l2_normalize(&read_features(&features)?)?;
            let cfg = KMeansConfig { batch_size, max_iters, ..KMeansConfig::new(k, seed) };
            let r = minibatch_kmeans(&fs.features, &cfg)?;
            LabelFile::samples(r.labels).write(&out)?;
        }
        Command::Mine { weak, epoch, out } => {
            let w = weak.load()?;
            let (miner, _) = prepare_miner(&w.fs.features, &w.partition, &w.cooc, &w.cfg.mining)?;
            let batches: Vec<_> = miner.epoch(epoch).collect();
            write_text(out.as_deref(), &io::pairs_to_csv(batches.iter().flat_map(|b| &b.pairs)))?;
        }
        Command::Train { weak, out } => {
            let w = weak.load()?;
            let (miner, _) = prepare_miner(&w.fs.features, &w.partition, &w.cooc, &w.cfg.mining)?;
            let (model, history) = fit_model(&w.fs.features, &miner, &w.cfg.model, &w.cfg.train)?;
            save_model(&out, &model)?;
            log::info!("epoch losses {:?}", history.epoch_loss);
        }
        Command::Embed { model, features, out } => {
            let model = load_model(&model)?;
            let fs = l2_normalize(&read_features(&features)?)?;
            io::write_features(&out, &model.embed(&fs)?)?;
        }
        Command::Cluster { features, embeddings, num_clusters, level, out } => {
            let path = features.or(embeddings).expect("clap requires one input");
            let fs = l2_normalize(&read_features(&path)?)?;
            let (labels, report) = cluster_and_score(&fs, num_clusters, level)?;
            labels.write(&out)?;
            if let Some(r) = report {
                log::info!("acc {:.4}, b-cubed f {:.4}", r.acc, r.bcubed_f);
            }
        }
        Command::Evaluate { pred, gt, metrics, out } => {
            let labels = LabelFile::read(&pred).with_context(|| format!("reading {}", pred.display()))?;
            let report = evaluate(&labels, &read_features(&gt)?, &metrics)?;
            write_text(out.as_deref(), &(serde_json::to_string_pretty(&report)? + "\n"))?;
        }
        Command::Run { cfg } => {
            let cfg = cfg.load()?;
            let report = run_pipeline(&cfg)?;
            if let (Some(base), Some(ccl)) = (&report.base, &report.ccl) {
                println!("base acc {:.4}  ccl acc {:.4}", base.acc, ccl.acc);
            }
            if cfg.output_dir.is_none() {
                println!("{}", report.to_json());
            }
        }
        Command::Ablate { cfg, out } => {
            let cfg = cfg.load()?;
            let path = cfg
                .features
                .as_ref()
                .ok_or_else(|| anyhow!("paths.features is not set"))?;
            let report = run_ablation(&read_features(path)?, &cfg)?;
            write_text(out.as_deref(), &(serde_json::to_string_pretty(&report)? + "\n"))?;
        }
    }
    Ok(())
}
