//! Run configuration and the train / eval / ablate / pool-demo workflows behind the CLI.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape};
use crate::error::{GpnetError, Result};
use crate::gc::GcKind;
use crate::graph::io::load_manifest;
use crate::graph::{AdjacencyVariant, FeatureMapSequence};
use crate::model::{history_csv, train, Gpnet, GpnetConfig, PreparedSequence, TrainOutcome};
use crate::pooling::PoolMethod;
use crate::retrieval::{
    evaluate, evaluate_leave_one_out, report_csv, report_table, EvalOptions, GalleryItem,
    MetricReport, RetrievalIndex,
};
use crate::synthetic::{generate_synthetic, write_dataset, SyntheticDataset, SyntheticSpec};

pub const CHECKPOINT_FILE: &str = "checkpoint.gpn";
pub const HISTORY_FILE: &str = "history.csv";
pub const RESOLVED_CONFIG_FILE: &str = "config.json";

/// Everything one run needs, read from a strict JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: GpnetConfig,
    pub synthetic: SyntheticSpec,
    /// Directory holding `train.txt` / `query.txt` / `gallery.txt` manifests.
    /// When absent, data is generated from `synthetic`.
    pub data_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Seeds averaged over by `ablate`; each seeds both data and initialization.
    pub seeds: Vec<u64>,
    pub exclude_same_camera: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: GpnetConfig::default(),
            synthetic: SyntheticSpec::default(),
            data_dir: None,
            output_dir: PathBuf::from("runs"),
            seeds: vec![0],
            exclude_same_camera: false,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| GpnetError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(GpnetError::MissingFile(path.to_path_buf()));
        }
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.data_dir.is_none() {
            self.synthetic.validate()?;
            if self.synthetic.frames != self.model.frames {
                return Err(GpnetError::Config(format!(
                    "synthetic.frames = {} but model.frames = {}",
                    self.synthetic.frames, self.model.frames
                )));
            }
        }
        if self.seeds.is_empty() {
            return Err(GpnetError::Config("seeds must not be empty".into()));
        }
        Ok(())
    }

    /// Same run with both the data seed and the model seed replaced.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.model.seed = seed;
        c.synthetic.seed = seed;
        c
    }

    fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            exclude_same_camera: self.exclude_same_camera,
        }
    }
}

/// Loads the configured data split, or generates it.
pub fn load_data(cfg: &RunConfig) -> Result<SyntheticDataset> {
    match &cfg.data_dir {
        Some(dir) => {
            let optional = |name: &str| -> Result<Vec<FeatureMapSequence>> {
                let p = dir.join(name);
                if p.exists() {
                    load_manifest(&p)
                } else {
                    Ok(Vec::new())
                }
            };
            Ok(SyntheticDataset {
                train: load_manifest(&dir.join("train.txt"))?,
                query: optional("query.txt")?,
                gallery: optional("gallery.txt")?,
            })
        }
        None => generate_synthetic(&cfg.synthetic),
    }
}

pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<SyntheticDataset> {
    let data = generate_synthetic(&cfg.synthetic)?;
    write_dataset(out, &data)?;
    Ok(data)
}

/// Trains on the training split and writes the checkpoint, history, and resolved config.
pub fn run_train(cfg: &RunConfig, out: &Path) -> Result<TrainOutcome> {
    let data = load_data(cfg)?;
    let outcome = train(&data.train, cfg.model.clone())?;
    fs::create_dir_all(out)?;
    outcome.model.params().save(&out.join(CHECKPOINT_FILE))?;
    fs::write(out.join(HISTORY_FILE), history_csv(&outcome.history))?;
    let mut resolved = cfg.clone();
    resolved.model.num_identities = Some(outcome.model.num_identities());
    fs::write(
        out.join(RESOLVED_CONFIG_FILE),
        serde_json::to_string_pretty(&resolved).expect("config serializes"),
    )?;
    Ok(outcome)
}

fn gallery_items(model: &Gpnet, seqs: &[FeatureMapSequence]) -> Result<Vec<GalleryItem>> {
    let prepared: Vec<PreparedSequence> = seqs
        .iter()
        .map(|s| model.prepare(s))
        .collect::<Result<_>>()?;
    let refs: Vec<&PreparedSequence> = prepared.iter().collect();
    let feats = model.embed(&refs, model.config().batch_size())?;
    Ok(feats
        .into_iter()
        .zip(seqs)
        .map(|(feature, s)| GalleryItem {
            feature,
            identity: s.identity,
            camera: s.camera,
        })
        .collect())
}

/// Query/gallery evaluation when held-out splits exist, otherwise leave-one-out
/// over the training split.
pub fn evaluate_model(
    model: &Gpnet,
    data: &SyntheticDataset,
    opts: EvalOptions,
) -> Result<MetricReport> {
    if data.query.is_empty() || data.gallery.is_empty() {
        let index = RetrievalIndex::new(gallery_items(model, &data.train)?)?;
        evaluate_leave_one_out(&index, opts)
    } else {
        let queries = gallery_items(model, &data.query)?;
        let index = RetrievalIndex::new(gallery_items(model, &data.gallery)?)?;
        evaluate(&queries, &index, opts)
    }
}

/// Evaluation on the training split only (leave-one-out).
pub fn evaluate_training_split(
    model: &Gpnet,
    data: &SyntheticDataset,
    opts: EvalOptions,
) -> Result<MetricReport> {
    let train_only = SyntheticDataset {
        train: data.train.clone(),
        ..Default::default()
    };
    evaluate_model(model, &train_only, opts)
}

pub fn load_model(cfg: &RunConfig, checkpoint: &Path, channels: usize) -> Result<Gpnet> {
    let store = ParamStore::load(checkpoint)?;
    let classes = cfg
        .model
        .num_identities
        .or_else(|| store.id("classifier.b").map(|id| store.get(id).ncols()))
        .ok_or_else(|| GpnetError::Contract("checkpoint lacks classifier.b".into()))?;
    Gpnet::with_params(cfg.model.clone(), channels, classes, &store)
}

fn write_report(out: &Path, name: &str, rows: &[(String, MetricReport)]) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join(format!("{name}.csv")), report_csv(rows))?;
    fs::write(out.join(format!("{name}.txt")), report_table(rows))?;
    Ok(())
}

pub fn run_eval(cfg: &RunConfig, checkpoint: &Path, out: &Path) -> Result<MetricReport> {
    let data = load_data(cfg)?;
    let channels = data
        .train
        .first()
        .map(FeatureMapSequence::channels)
        .ok_or_else(|| GpnetError::Config("no training data to infer channels from".into()))?;
    let model = load_model(cfg, checkpoint, channels)?;
    let report = evaluate_model(&model, &data, cfg.eval_options())?;
    write_report(
        out,
        "metrics",
        &[(cfg.model.pool.method.name().into(), report.clone())],
    )?;
    Ok(report)
}

/// Writes per-node pooling scores (`node_index,frame,part,score`) of the first
/// training sequence, one file per branch. Returns the written paths.
pub fn pool_demo(cfg: &RunConfig, checkpoint: Option<&Path>, out: &Path) -> Result<Vec<PathBuf>> {
    let data = load_data(cfg)?;
    let seq = data
        .train
        .first()
        .ok_or_else(|| GpnetError::Config("pool-demo needs at least one sequence".into()))?;
    let model = match checkpoint {
        Some(p) => load_model(cfg, p, seq.channels())?,
        None => {
            let classes = cfg.model.num_identities.unwrap_or(1);
            Gpnet::new(cfg.model.clone(), seq.channels(), classes)?
        }
    };
    let prepared = model.prepare(seq)?;
    let mut tape = Tape::new();
    let bound = model.params().bind(&mut tape);
    let fw = model.forward(&mut tape, &bound, &[&prepared])?;
    fs::create_dir_all(out)?;
    let mut paths = Vec::new();
    for (trace, graph) in fw.branches.iter().zip(&prepared.branches) {
        let n = graph.graph.num_nodes();
        let scores = trace.pooled[0].node_scores(&tape, n);
        let mut csv = String::from("node_index,frame,part,score\n");
        for (i, score) in scores.iter().enumerate() {
            let _ = writeln!(
                csv,
                "{i},{},{},{score}",
                graph.graph.frame_index[i], graph.graph.part_index[i]
            );
        }
        let path = out.join(format!("pool_scores_p{}.csv", trace.p));
        fs::write(&path, csv)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Ablation axes, each a list of named configuration variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Pool,
    Gc,
    Granularity,
    KeepRatio,
    Adjacency,
}

impl Axis {
    pub const ALL: [Axis; 5] = [
        Axis::Pool,
        Axis::Gc,
        Axis::Granularity,
        Axis::KeepRatio,
        Axis::Adjacency,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Axis::Pool => "pool",
            Axis::Gc => "gc",
            Axis::Granularity => "granularity",
            Axis::KeepRatio => "keep_ratio",
            Axis::Adjacency => "adjacency",
        }
    }

    pub fn parse(s: &str) -> Option<Axis> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }

    /// `(row label, configuration)` for every cell on this axis.
    pub fn variants(self, base: &RunConfig) -> Vec<(String, RunConfig)> {
        let with = |f: &dyn Fn(&mut RunConfig)| {
            let mut c = base.clone();
            f(&mut c);
            c
        };
        match self {
            Axis::Pool => PoolMethod::ALL
                .iter()
                .map(|&m| (m.name().to_string(), with(&|c| c.model.pool.method = m)))
                .collect(),
            Axis::Gc => [GcKind::Spatial, GcKind::Spectral]
                .iter()
                .map(|&k| (k.name().to_string(), with(&|c| c.model.gc.kind = k)))
                .collect(),
            Axis::Granularity => [vec![1], vec![1, 2], vec![1, 2, 4], vec![1, 2, 4, 8]]
                .into_iter()
                .map(|g| {
                    let label = format!(
                        "p={{{}}}",
                        g.iter()
                            .map(|p| p.to_string())
                            .collect::<Vec<_>>()
                            .join(",")
                    );
                    (label, with(&|c| c.model.granularities = g.clone()))
                })
                .collect(),
            Axis::KeepRatio => [0.125, 0.25, 0.5, 1.0]
                .iter()
                .map(|&r| (format!("keep={r}"), with(&|c| c.model.pool.keep_ratio = r)))
                .collect(),
            Axis::Adjacency => [
                AdjacencyVariant::Dna,
                AdjacencyVariant::Tna,
                AdjacencyVariant::Ena,
                AdjacencyVariant::SelfAttention,
            ]
            .iter()
            .map(|&v| (v.name().to_string(), with(&|c| c.model.adjacency = v)))
            .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecutionOrder {
    #[default]
    Forward,
    Reverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationOptions {
    pub workers: usize,
    pub order: ExecutionOrder,
}

impl Default for AblationOptions {
    fn default() -> Self {
        Self {
            workers: 1,
            order: ExecutionOrder::Forward,
        }
    }
}

/// Seed-averaged metrics for one ablation row.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub label: String,
    pub mean: MetricReport,
    pub per_seed: Vec<MetricReport>,
}

/// Trains and evaluates one cell in its own directory. The resolved config
/// names the cell directory as "." so cell outputs do not depend on where the
/// ablation root lives.
pub fn run_cell(cfg: &RunConfig, dir: &Path) -> Result<MetricReport> {
    let data = load_data(cfg)?;
    let outcome = run_train(
        &RunConfig {
            output_dir: PathBuf::from("."),
            ..cfg.clone()
        },
        dir,
    )?;
    let report = evaluate_model(&outcome.model, &data, cfg.eval_options())?;
    write_report(
        dir,
        "metrics",
        &[(cfg.model.pool.method.name().into(), report.clone())],
    )?;
    Ok(report)
}

fn cell_dir_name(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Runs every cell of `axis` for every seed and writes `<axis>.csv` / `<axis>.txt`.
pub fn ablate(
    base: &RunConfig,
    axis: Axis,
    opts: AblationOptions,
    out: &Path,
) -> Result<Vec<AblationRow>> {
    base.validate()?;
    let variants = axis.variants(base);
    for (_, v) in &variants {
        v.validate()?;
    }
    let axis_dir = out.join(axis.name());
    let mut jobs: Vec<(usize, usize, RunConfig, PathBuf)> = Vec::new();
    for (vi, (label, cfg)) in variants.iter().enumerate() {
        for (si, &seed) in base.seeds.iter().enumerate() {
            let dir = axis_dir
                .join(cell_dir_name(label))
                .join(format!("seed_{seed}"));
            jobs.push((vi, si, cfg.with_seed(seed), dir));
        }
    }
    if opts.order == ExecutionOrder::Reverse {
        jobs.reverse();
    }

    let total = jobs.len();
    let queue = Mutex::new(jobs.into_iter().collect::<VecDeque<_>>());
    let results: Mutex<Vec<Option<Result<MetricReport>>>> = Mutex::new(
        (0..variants.len() * base.seeds.len())
            .map(|_| None)
            .collect(),
    );
    let seeds = base.seeds.len();
    std::thread::scope(|s| {
        for _ in 0..opts.workers.clamp(1, total.max(1)) {
            s.spawn(|| loop {
                let job = queue.lock().expect("queue lock").pop_front();
                let Some((vi, si, cfg, dir)) = job else { break };
                log::info!(
                    "ablation {}: cell {} seed {}",
                    axis.name(),
                    variants[vi].0,
                    cfg.model.seed
                );
                let r = run_cell(&cfg, &dir);
                results.lock().expect("results lock")[vi * seeds + si] = Some(r);
            });
        }
    });

    let mut results = results.into_inner().expect("results lock");
    let mut rows = Vec::with_capacity(variants.len());
    for (vi, (label, _)) in variants.iter().enumerate() {
        let per_seed = (0..seeds)
            .map(|si| results[vi * seeds + si].take().expect("every job ran"))
            .collect::<Result<Vec<_>>>()?;
        let mean = MetricReport::mean(&per_seed).expect("at least one seed");
        rows.push(AblationRow {
            label: label.clone(),
            mean,
            per_seed,
        });
    }
    let table: Vec<(String, MetricReport)> = rows
        .iter()
        .map(|r| (r.label.clone(), r.mean.clone()))
        .collect();
    write_report(out, axis.name(), &table)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_reject_unknown_keys() {
        let text = serde_json::to_string(&RunConfig::default()).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), RunConfig::default());
        let err = RunConfig::from_json(r#"{"model": {"lrr": 1}}"#).unwrap_err();
        assert!(err.to_string().contains("lrr"), "{err}");
    }

    #[test]
    fn defaults_match_reference_hyperparameters() {
        let c = RunConfig::from_json("{}").unwrap();
        assert_eq!(c.model.delta_t, 1);
        assert_eq!(c.model.k, 2);
        assert_eq!(c.model.pool.keep_ratio, 0.25);
        assert_eq!(c.model.frames, 8);
        assert_eq!(c.model.lr, 3e-4);
        assert_eq!(c.model.weight_decay, 5e-4);
    }

    #[test]
    fn granularity_axis_rows() {
        let labels: Vec<String> = Axis::Granularity
            .variants(&RunConfig::default())
            .into_iter()
            .map(|v| v.0)
            .collect();
        assert_eq!(labels, vec!["p={1}", "p={1,2}", "p={1,2,4}", "p={1,2,4,8}"]);
    }

    #[test]
    fn frame_mismatch_rejected() {
        let mut c = RunConfig::default();
        c.synthetic.frames = 4;
        assert!(c.validate().is_err());
    }
}
