//! Experiment orchestration: datasets, training runs, evaluation and reports.
//!
//! Every run writes one directory:
//!
//! ```text
//! <output>/seed-<seed>/metrics.json    pair metrics and modularity (no timings)
//! <output>/seed-<seed>/history.csv     per-epoch losses
//! <output>/seed-<seed>/embedding.csv   final embedding, one row per node
//! <output>/seed-<seed>/partition.txt   one community id per line
//! <output>/seed-<seed>/timing.json     wall-clock seconds per stage
//! <output>/seed-<seed>/checkpoint.json model parameters, when requested
//! <output>/aggregate.csv               median and spread across seeds
//! ```

pub mod baseline;
pub mod generate;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::cluster::{modularity, pair_counts, pair_metrics, Partition};
use crate::error::{Error, Result, StageContext};
use crate::graph::{load_attributes_csv, load_edge_list, load_labels, write_labels, Graph};
use crate::knn::TabularDataset;
use crate::model::{checkpoint, Activation};
use crate::training::{fit, write_history_csv, write_matrix_csv, LossWeights, Objective, SpectralSchedule, TrainConfig};

pub use baseline::spectral_clustering;
pub use generate::{generate_sbm, generate_tabular, SbmConfig, TabularKind};

/// Where the graph of an experiment comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetSpec {
    Sbm {
        sbm: SbmConfig,
        seed: u64,
    },
    Tabular {
        generator: TabularKind,
        n: usize,
        d: usize,
        seed: u64,
        knn_k: usize,
    },
    /// Whitespace-separated edge list with optional labels and attribute CSV.
    EdgeList {
        edges: PathBuf,
        labels: Option<PathBuf>,
        attributes: Option<PathBuf>,
        #[serde(default)]
        attributes_header: bool,
    },
    /// Feature CSV turned into a KNN graph.
    TabularCsv {
        features: PathBuf,
        labels: Option<PathBuf>,
        #[serde(default)]
        header: bool,
        knn_k: usize,
    },
}

impl DatasetSpec {
    pub fn load(&self) -> Result<Graph> {
        match self {
            DatasetSpec::Sbm { sbm, seed } => generate_sbm(sbm, *seed),
            DatasetSpec::Tabular {
                generator,
                n,
                d,
                seed,
                knn_k,
            } => generate_tabular(generator, *n, *d, *seed)?.to_graph(*knn_k),
            DatasetSpec::EdgeList {
                edges,
                labels,
                attributes,
                attributes_header,
            } => {
                let labels = labels.as_deref().map(load_labels).transpose()?;
                let x = attributes
                    .as_deref()
                    .map(|p| load_attributes_csv(p, *attributes_header))
                    .transpose()?;
                // trailing isolated nodes exist only in the side files
                let n_hint = labels.as_ref().map(Vec::len).or(x.as_ref().map(|x| x.nrows()));
                let mut g = load_edge_list(edges, n_hint)?;
                if let Some(x) = x {
                    g = g.with_attributes(x)?;
                }
                if let Some(l) = labels {
                    g = g.with_labels(l)?;
                }
                Ok(g)
            }
            DatasetSpec::TabularCsv {
                features,
                labels,
                header,
                knn_k,
            } => {
                let x = load_attributes_csv(features, *header)?;
                let labels = labels.as_deref().map(load_labels).transpose()?;
                TabularDataset::new(x, labels)?.to_graph(*knn_k)
            }
        }
    }
}

/// Switches that remove parts of the method.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    /// Plain ReLU instead of dynamic ReLU.
    pub relu: bool,
    /// No spectral propagation.
    pub no_spectral: bool,
    /// Single first-order GCN trained on the reconstruction loss only, with
    /// no fusion, head or propagation.
    pub gcn_ae: bool,
}

impl Ablation {
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        if self.relu {
            c.activation = Activation::Relu;
        }
        if self.no_spectral {
            c.spectral_schedule = SpectralSchedule::Off;
        }
        if self.gcn_ae {
            c.order = 1;
            c.use_head = false;
            c.end_to_end = false;
            c.include_attributes = false;
            c.objective = Objective::Reconstruction;
            c.activation = Activation::Relu;
            c.spectral_schedule = SpectralSchedule::Off;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: DatasetSpec,
    pub train: TrainConfig,
    pub weights: LossWeights,
    pub ablation: Ablation,
    /// Community count; read from the labels when absent.
    pub k: Option<usize>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Also write the trained parameters to `checkpoint.json` in each run.
    pub save_checkpoint: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "sdge".into(),
            dataset: DatasetSpec::Sbm {
                sbm: SbmConfig::default(),
                seed: 0,
            },
            train: TrainConfig::default(),
            weights: LossWeights::default(),
            ablation: Ablation::default(),
            k: None,
            seeds: vec![1, 2, 3],
            output_dir: PathBuf::from("runs"),
            save_checkpoint: false,
        }
    }
}

/// Contents of `metrics.json`. Pair metrics are absent without labels or
/// when undefined for the predicted partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub jaccard: Option<f64>,
    pub fm: Option<f64>,
    pub f1: Option<f64>,
    pub kulczynski: Option<f64>,
    pub modularity: Option<f64>,
    pub k_effective: usize,
    /// Every node landed in one community.
    pub degenerate_partition: bool,
}

/// Contents of `timing.json`, in seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTimings {
    pub dataset: f64,
    pub adjacency_powers: f64,
    pub training: f64,
    pub spectral: f64,
    pub clustering: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub seed: u64,
    pub dir: PathBuf,
    pub metrics: MetricsReport,
    pub timings: RunTimings,
    pub epochs_run: usize,
    pub initial_loss: Option<f64>,
    pub final_loss: Option<f64>,
}

/// Median and range (max - min) over runs where the value is defined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub median: Option<f64>,
    pub spread: Option<f64>,
}

impl Spread {
    pub fn of(values: impl IntoIterator<Item = Option<f64>>) -> Spread {
        let mut v: Vec<f64> = values.into_iter().flatten().collect();
        if v.is_empty() {
            return Spread::default();
        }
        v.sort_by(f64::total_cmp);
        let m = v.len();
        let median = if m % 2 == 1 { v[m / 2] } else { 0.5 * (v[m / 2 - 1] + v[m / 2]) };
        Spread {
            median: Some(median),
            spread: Some(v[m - 1] - v[0]),
        }
    }
}

/// One row of `aggregate.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub name: String,
    pub runs: usize,
    pub jaccard: Spread,
    pub fm: Spread,
    pub f1: Spread,
    pub kulczynski: Spread,
    pub modularity: Spread,
    pub seconds: Spread,
    pub degenerate_runs: usize,
}

impl AggregateRow {
    pub fn from_runs(name: &str, runs: &[RunReport]) -> AggregateRow {
        let col = |f: fn(&MetricsReport) -> Option<f64>| Spread::of(runs.iter().map(|r| f(&r.metrics)));
        AggregateRow {
            name: name.to_string(),
            runs: runs.len(),
            jaccard: col(|m| m.jaccard),
            fm: col(|m| m.fm),
            f1: col(|m| m.f1),
            kulczynski: col(|m| m.kulczynski),
            modularity: col(|m| m.modularity),
            seconds: Spread::of(runs.iter().map(|r| Some(r.timings.total))),
            degenerate_runs: runs.iter().filter(|r| r.metrics.degenerate_partition).count(),
        }
    }
}

pub const AGGREGATE_HEADER: &str = "name,runs,jaccard_median,jaccard_spread,fm_median,fm_spread,f1_median,f1_spread,\
kulczynski_median,kulczynski_spread,modularity_median,modularity_spread,seconds_median,seconds_spread,degenerate_runs";

pub fn write_aggregate_csv(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = format!("{AGGREGATE_HEADER}\n");
    for r in rows {
        let stats = [r.jaccard, r.fm, r.f1, r.kulczynski, r.modularity, r.seconds]
            .iter()
            .flat_map(|s| [cell(s.median), cell(s.spread)])
            .collect::<Vec<_>>()
            .join(",");
        out.push_str(&format!("{},{},{},{}\n", r.name, r.runs, stats, r.degenerate_runs));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Scores a partition against the graph and, when present, its labels.
pub fn evaluate(g: &Graph, partition: &Partition) -> Result<MetricsReport> {
    let q = match modularity(g, partition) {
        Ok(q) => Some(q),
        Err(Error::Edgeless) => None,
        Err(e) => return Err(e),
    };
    let pairs = match g.labels() {
        Some(labels) => {
            let counts = pair_counts(partition, &Partition::from_labels(labels)?)?;
            match pair_metrics(&counts) {
                Ok(m) => Some(m),
                Err(Error::UndefinedMetric(what)) => {
                    warn!("pair metrics undefined: {what}");
                    None
                }
                Err(e) => return Err(e),
            }
        }
        None => None,
    };
    let k_effective = partition.effective_k();
    if k_effective == 1 {
        warn!("degenerate partition: every node is in one community");
    }
    Ok(MetricsReport {
        jaccard: pairs.map(|m| m.jaccard),
        fm: pairs.map(|m| m.fm),
        f1: pairs.map(|m| m.f1),
        kulczynski: pairs.map(|m| m.kulczynski),
        modularity: q,
        k_effective,
        degenerate_partition: k_effective == 1,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    s.push('\n');
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Community count from the config or, failing that, the labels.
pub fn resolve_k(k: Option<usize>, g: &Graph) -> Result<usize> {
    if let Some(k) = k {
        return Ok(k);
    }
    let labels = g
        .labels()
        .ok_or_else(|| Error::InvalidArgument("k is required when the dataset has no labels".into()))?;
    Ok(Partition::from_labels(labels)?.effective_k())
}

/// Trains and evaluates one run on an already loaded graph.
pub fn run_once(g: &Graph, config: &ExperimentConfig, seed: u64, dataset_secs: f64) -> Result<RunReport> {
    let start = Instant::now();
    let mut train = config.ablation.apply(&config.train);
    train.seed = seed;
    train.k = resolve_k(config.k, g).stage("dataset")?;
    let dir = config.output_dir.join(format!("seed-{seed}"));
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e)).stage("report")?;

    info!("{}: training seed {seed}", config.name);
    let out = fit(g, &train, &config.weights).stage("train")?;
    let metrics = evaluate(g, &out.partition).stage("evaluate")?;

    let timings = RunTimings {
        dataset: dataset_secs,
        adjacency_powers: out.timings.adjacency_powers,
        training: out.timings.training,
        spectral: out.timings.spectral,
        clustering: out.timings.clustering,
        total: dataset_secs + start.elapsed().as_secs_f64(),
    };
    (|| {
        write_json(&dir.join("metrics.json"), &metrics)?;
        write_json(&dir.join("timing.json"), &timings)?;
        write_history_csv(&dir.join("history.csv"), &out.history)?;
        write_matrix_csv(&dir.join("embedding.csv"), &out.embedding)?;
        write_labels(&dir.join("partition.txt"), out.partition.assignment())?;
        if config.save_checkpoint {
            checkpoint::save(out.model.params(), &dir.join("checkpoint.json"))?;
        }
        Ok(())
    })()
    .stage("report")?;

    Ok(RunReport {
        seed,
        dir,
        metrics,
        timings,
        epochs_run: out.history.len(),
        initial_loss: out.history.first().map(|r| r.total),
        final_loss: out.history.last().map(|r| r.total),
    })
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub runs: Vec<RunReport>,
    pub aggregate: AggregateRow,
}

/// Runs every seed and writes the per-run directories plus `aggregate.csv`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    if config.seeds.is_empty() {
        return Err(Error::InvalidArgument("seed list is empty".into()));
    }
    let t = Instant::now();
    let g = config.dataset.load().stage("dataset")?;
    let dataset_secs = t.elapsed().as_secs_f64();
    let runs = config
        .seeds
        .iter()
        .map(|&seed| run_once(&g, config, seed, dataset_secs))
        .collect::<Result<Vec<_>>>()?;
    let aggregate = AggregateRow::from_runs(&config.name, &runs);
    write_aggregate_csv(&config.output_dir.join("aggregate.csv"), std::slice::from_ref(&aggregate)).stage("report")?;
    Ok(ExperimentOutcome { runs, aggregate })
}

/// The standard ablation set: both aggregations, plain ReLU, no spectral
/// propagation and the graph auto-encoder baseline.
pub fn standard_ablations(base: &ExperimentConfig) -> Vec<ExperimentConfig> {
    use crate::model::Aggregation;
    let variant = |name: &str, agg: Aggregation, ablation: Ablation| {
        let mut c = base.clone();
        c.name = name.to_string();
        c.train.aggregation = agg;
        c.ablation = ablation;
        c.output_dir = base.output_dir.join(name);
        c
    };
    vec![
        variant("sdge-cat", Aggregation::Concat, Ablation::default()),
        variant("sdge-sum", Aggregation::Sum, Ablation::default()),
        variant(
            "relu",
            base.train.aggregation,
            Ablation {
                relu: true,
                ..Ablation::default()
            },
        ),
        variant(
            "no-spectral",
            base.train.aggregation,
            Ablation {
                no_spectral: true,
                ..Ablation::default()
            },
        ),
        variant(
            "gcn-ae",
            base.train.aggregation,
            Ablation {
                gcn_ae: true,
                ..Ablation::default()
            },
        ),
    ]
}

/// Runs each variant into its own subdirectory and writes one combined
/// `aggregate.csv` under `output_dir`.
pub fn run_ablation(variants: &[ExperimentConfig], output_dir: &Path) -> Result<Vec<ExperimentOutcome>> {
    let outcomes = variants.iter().map(run_experiment).collect::<Result<Vec<_>>>()?;
    let rows: Vec<AggregateRow> = outcomes.iter().map(|o| o.aggregate.clone()).collect();
    fs::create_dir_all(output_dir).map_err(|e| Error::io(output_dir, e)).stage("report")?;
    write_aggregate_csv(&output_dir.join("aggregate.csv"), &rows).stage("report")?;
    Ok(outcomes)
}
