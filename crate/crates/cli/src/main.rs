use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use sdge::cluster::{pair_counts, pair_metrics, Partition};
use sdge::graph::{load_edge_list, load_labels, write_labels};
use sdge::harness::{
    evaluate, generate_sbm, generate_tabular, run_ablation, run_experiment, standard_ablations, Ablation,
    AggregateRow, DatasetSpec, ExperimentConfig, SbmConfig, TabularKind,
};
use sdge::model::Aggregation;
use sdge::spectral::{Modulator, SpectralConfig};
use sdge::training::{write_matrix_csv, LossWeights, SpectralSchedule, TrainConfig};

/// Self-supervised multi-order graph embedding and community discovery.
#[derive(Debug, Parser)]
#[command(name = "sdge", version)]
struct Cli {
    /// Log progress at info level (RUST_LOG overrides).
    #[arg(short, long, global = true, env = "SDGE_VERBOSE")]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train embeddings, cluster them and write per-seed reports.
    Embed {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        /// Plain ReLU instead of dynamic ReLU.
        #[arg(long, env = "SDGE_RELU")]
        relu: bool,
        /// Skip spectral propagation.
        #[arg(long, env = "SDGE_NO_SPECTRAL")]
        no_spectral: bool,
        /// Single first-order GCN auto-encoder baseline.
        #[arg(long, env = "SDGE_GCN_AE")]
        gcn_ae: bool,
        /// Save model parameters next to each run.
        #[arg(long, env = "SDGE_CHECKPOINT")]
        checkpoint: bool,
    },
    /// Score a partition file against labels and, optionally, a graph.
    Evaluate {
        #[arg(long, env = "SDGE_PARTITION")]
        partition: PathBuf,
        #[arg(long, env = "SDGE_LABELS")]
        labels: PathBuf,
        /// Edge list for modularity.
        #[arg(long, env = "SDGE_EDGES")]
        edges: Option<PathBuf>,
    },
    /// Write a synthetic dataset.
    Generate {
        #[command(subcommand)]
        kind: GenerateKind,
    },
    /// Run both aggregations, plain ReLU, no propagation and the GCN
    /// auto-encoder on one dataset.
    Ablate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
}

#[derive(Debug, Subcommand)]
enum GenerateKind {
    /// Planted-partition graph: `edges.txt` and `labels.txt`.
    Sbm {
        #[command(flatten)]
        sbm: SbmArgs,
        #[arg(long, env = "SDGE_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, env = "SDGE_OUT")]
        out: PathBuf,
    },
    /// Points labeled by a random hyperplane: `features.csv` and `labels.txt`.
    Hyperplane {
        #[arg(long, env = "SDGE_N", default_value_t = 1000)]
        n: usize,
        #[arg(long, env = "SDGE_D", default_value_t = 10)]
        d: usize,
        #[arg(long, env = "SDGE_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, env = "SDGE_OUT")]
        out: PathBuf,
    },
    /// Three-class noisy waveforms: `features.csv` and `labels.txt`.
    Waveform {
        #[arg(long, env = "SDGE_N", default_value_t = 1000)]
        n: usize,
        #[arg(long, env = "SDGE_D", default_value_t = 21)]
        d: usize,
        #[arg(long, env = "SDGE_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, env = "SDGE_OUT")]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct SbmArgs {
    #[arg(long, env = "SDGE_BLOCKS", default_value_t = 4)]
    blocks: usize,
    #[arg(long, env = "SDGE_BLOCK_SIZE", default_value_t = 50)]
    block_size: usize,
    #[arg(long, env = "SDGE_P_IN", default_value_t = 0.3)]
    p_in: f64,
    #[arg(long, env = "SDGE_P_OUT", default_value_t = 0.02)]
    p_out: f64,
}

impl SbmArgs {
    fn config(&self) -> SbmConfig {
        SbmConfig {
            blocks: self.blocks,
            block_size: self.block_size,
            p_in: self.p_in,
            p_out: self.p_out,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Generator {
    Hyperplane,
    Waveform,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Edge list (`u v [w]` per line).
    #[arg(long, env = "SDGE_EDGES", group = "source")]
    edges: Option<PathBuf>,
    /// Feature CSV, connected into a KNN graph.
    #[arg(long, env = "SDGE_FEATURES", group = "source")]
    features: Option<PathBuf>,
    /// Generate a planted-partition graph.
    #[arg(long, env = "SDGE_SBM", group = "source")]
    sbm: bool,
    /// Generate tabular data and connect it into a KNN graph.
    #[arg(long, env = "SDGE_GENERATOR", group = "source")]
    generator: Option<Generator>,

    /// One integer label per node.
    #[arg(long, env = "SDGE_LABELS")]
    labels: Option<PathBuf>,
    /// Node attribute CSV for an edge-list graph.
    #[arg(long, env = "SDGE_ATTRIBUTES", requires = "edges")]
    attributes: Option<PathBuf>,
    /// The attribute or feature CSV starts with a header row.
    #[arg(long, env = "SDGE_HEADER")]
    header: bool,
    /// Neighbors per point for tabular data.
    #[arg(long, env = "SDGE_KNN_K", default_value_t = 10)]
    knn_k: usize,

    #[command(flatten)]
    sbm_args: SbmArgs,
    /// Points generated for `--generator`.
    #[arg(long, env = "SDGE_N", default_value_t = 1000)]
    n: usize,
    /// Feature count generated for `--generator`.
    #[arg(long, env = "SDGE_D")]
    d: Option<usize>,
    /// Seed of the generated dataset.
    #[arg(long, env = "SDGE_DATASET_SEED", default_value_t = 0)]
    dataset_seed: u64,
}

impl DataArgs {
    fn spec(&self) -> Result<DatasetSpec> {
        if let Some(edges) = &self.edges {
            return Ok(DatasetSpec::EdgeList {
                edges: edges.clone(),
                labels: self.labels.clone(),
                attributes: self.attributes.clone(),
                attributes_header: self.header,
            });
        }
        if let Some(features) = &self.features {
            return Ok(DatasetSpec::TabularCsv {
                features: features.clone(),
                labels: self.labels.clone(),
                header: self.header,
                knn_k: self.knn_k,
            });
        }
        if self.labels.is_some() {
            bail!("--labels applies to --edges or --features input");
        }
        if self.sbm {
            return Ok(DatasetSpec::Sbm {
                sbm: self.sbm_args.config(),
                seed: self.dataset_seed,
            });
        }
        match self.generator {
            Some(Generator::Hyperplane) => Ok(DatasetSpec::Tabular {
                generator: TabularKind::Hyperplane {
                    coefficients: None,
                    threshold: None,
                },
                n: self.n,
                d: self.d.unwrap_or(10),
                seed: self.dataset_seed,
                knn_k: self.knn_k,
            }),
            Some(Generator::Waveform) => Ok(DatasetSpec::Tabular {
                generator: TabularKind::Waveform,
                n: self.n,
                d: self.d.unwrap_or(21),
                seed: self.dataset_seed,
                knn_k: self.knn_k,
            }),
            None => bail!("choose an input: --edges, --features, --sbm or --generator"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AggArg {
    Cat,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SpectralArg {
    Off,
    Post,
    EachEpoch,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Number of adjacency orders r.
    #[arg(long, env = "SDGE_ORDER", default_value_t = 4)]
    order: usize,
    /// Embedding width d.
    #[arg(long, env = "SDGE_DIMS", default_value_t = 64)]
    dims: usize,
    #[arg(long, env = "SDGE_EPOCHS", default_value_t = 100)]
    epochs: usize,
    /// Contrastive temperature.
    #[arg(long, env = "SDGE_TAU", default_value_t = LossWeights::default().tau)]
    tau: f64,
    /// Weight of the reconstruction loss.
    #[arg(long, env = "SDGE_BETA", default_value_t = LossWeights::default().beta)]
    beta: f64,
    /// Weight of the Laplacian regularizer.
    #[arg(long, env = "SDGE_GAMMA", default_value_t = LossWeights::default().gamma)]
    gamma: f64,
    #[arg(long, env = "SDGE_AGG", value_enum, default_value_t = AggArg::Cat)]
    agg: AggArg,
    /// Negative samples per node and epoch.
    #[arg(long, env = "SDGE_NEGATIVES", default_value_t = 5)]
    negatives: usize,
    #[arg(long, env = "SDGE_NOISE_SIGMA", default_value_t = 0.1)]
    noise_sigma: f64,
    #[arg(long, env = "SDGE_SPECTRAL", value_enum, default_value_t = SpectralArg::Post)]
    spectral: SpectralArg,
    #[arg(long, env = "SDGE_CHEB_ORDER", default_value_t = 10)]
    cheb_order: usize,
    /// Center of the band-pass spectral modulator.
    #[arg(long, env = "SDGE_MU", default_value_t = 0.2)]
    mu: f64,
    /// Sharpness of the band-pass spectral modulator.
    #[arg(long, env = "SDGE_THETA", default_value_t = 0.5)]
    theta: f64,
    /// Comma-separated training seeds; each gets its own run.
    #[arg(long, env = "SDGE_SEED", value_delimiter = ',', default_value = "0")]
    seed: Vec<u64>,
    /// Community count; defaults to the number of distinct labels.
    #[arg(long, env = "SDGE_K")]
    k: Option<usize>,
    /// Give isolated nodes a unit self-loop.
    #[arg(long, env = "SDGE_SELF_LOOP_ISOLATED")]
    self_loop_isolated: bool,
    /// Require bit-reproducible output. Training is always single-threaded
    /// and seeded, so this only records the request.
    #[arg(long, env = "SDGE_DETERMINISTIC")]
    deterministic: bool,
    #[arg(long, env = "SDGE_LR", default_value_t = 1e-3)]
    lr: f64,
    /// Relative loss change treated as converged.
    #[arg(long, env = "SDGE_TOL", default_value_t = 1e-4)]
    tol: f64,
    /// Communities are the argmax of a k-wide embedding.
    #[arg(long, env = "SDGE_END_TO_END")]
    end_to_end: bool,
    /// Best-of restarts for the final k-means.
    #[arg(long, env = "SDGE_RESTARTS", default_value_t = 10)]
    restarts: usize,
    /// Fail instead of using dense adjacency powers when sparse fill-in is too large.
    #[arg(long, env = "SDGE_NO_DENSE_FALLBACK")]
    no_dense_fallback: bool,
    /// Output directory.
    #[arg(long, env = "SDGE_OUT", default_value = "runs")]
    out: PathBuf,
}

impl TrainArgs {
    fn experiment(&self, name: &str, dataset: DatasetSpec) -> ExperimentConfig {
        let defaults = TrainConfig::default();
        let train = TrainConfig {
            epochs: self.epochs,
            order: self.order,
            embedding_dim: self.dims,
            aggregation: match self.agg {
                AggArg::Cat => Aggregation::Concat,
                AggArg::Sum => Aggregation::Sum,
            },
            learning_rate: self.lr,
            noise_sigma: self.noise_sigma,
            negatives: self.negatives,
            tolerance: self.tol,
            end_to_end: self.end_to_end,
            kmeans_restarts: self.restarts,
            spectral_schedule: match self.spectral {
                SpectralArg::Off => SpectralSchedule::Off,
                SpectralArg::Post => SpectralSchedule::Post,
                SpectralArg::EachEpoch => SpectralSchedule::EachEpoch,
            },
            spectral: SpectralConfig {
                modulator: Modulator::BandPass {
                    mu: self.mu,
                    theta: self.theta,
                },
                order: self.cheb_order,
                ..SpectralConfig::default()
            },
            power: sdge::graph::PowerOptions {
                dense_fallback: !self.no_dense_fallback,
                ..defaults.power
            },
            self_loop_isolated: self.self_loop_isolated,
            ..defaults
        };
        ExperimentConfig {
            name: name.to_string(),
            dataset,
            train,
            weights: LossWeights {
                beta: self.beta,
                gamma: self.gamma,
                tau: self.tau,
            },
            ablation: Ablation::default(),
            k: self.k,
            seeds: self.seed.clone(),
            output_dir: self.out.clone(),
            save_checkpoint: false,
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

fn print_aggregate(rows: &[AggregateRow]) {
    println!("{:<12} {:>4} {:>8} {:>8} {:>8} {:>8} {:>8} {:>9}", "name", "runs", "J", "FM", "F1", "K", "Q", "seconds");
    for r in rows {
        println!(
            "{:<12} {:>4} {:>8} {:>8} {:>8} {:>8} {:>8} {:>9}",
            r.name,
            r.runs,
            fmt_opt(r.jaccard.median),
            fmt_opt(r.fm.median),
            fmt_opt(r.f1.median),
            fmt_opt(r.kulczynski.median),
            fmt_opt(r.modularity.median),
            r.seconds.median.map_or_else(|| "-".into(), |s| format!("{s:.2}")),
        );
    }
}

fn write_config(config: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(&config.output_dir).with_context(|| format!("creating {}", config.output_dir.display()))?;
    let path = config.output_dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(config)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn cmd_embed(config: ExperimentConfig) -> Result<()> {
    write_config(&config)?;
    let outcome = run_experiment(&config)?;
    for run in &outcome.runs {
        let m = &run.metrics;
        println!(
            "seed {}: f1={} jaccard={} modularity={} k_effective={}{} -> {}",
            run.seed,
            fmt_opt(m.f1),
            fmt_opt(m.jaccard),
            fmt_opt(m.modularity),
            m.k_effective,
            if m.degenerate_partition { " (degenerate)" } else { "" },
            run.dir.display()
        );
    }
    print_aggregate(&[outcome.aggregate]);
    Ok(())
}

fn cmd_evaluate(partition: &Path, labels: &Path, edges: Option<&Path>) -> Result<()> {
    let pred = load_labels(partition).context("load stage failed")?;
    let truth = load_labels(labels).context("load stage failed")?;
    if pred.len() != truth.len() {
        bail!("evaluate stage failed: {} predictions for {} labels", pred.len(), truth.len());
    }
    let report = match edges {
        Some(path) => {
            let g = load_edge_list(path, Some(truth.len()))
                .and_then(|g| g.with_labels(truth))
                .context("load stage failed")?;
            let p = Partition::from_labels(&pred)?;
            serde_json::to_value(evaluate(&g, &p).context("evaluate stage failed")?)?
        }
        None => {
            let counts = pair_counts(&Partition::from_labels(&pred)?, &Partition::from_labels(&truth)?)
                .context("evaluate stage failed")?;
            let m = pair_metrics(&counts).context("evaluate stage failed")?;
            serde_json::json!({
                "jaccard": m.jaccard,
                "fm": m.fm,
                "f1": m.f1,
                "kulczynski": m.kulczynski,
                "modularity": null,
            })
        }
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn cmd_generate(kind: &GenerateKind) -> Result<()> {
    let (out, data) = match kind {
        GenerateKind::Sbm { sbm, seed, out } => {
            let g = generate_sbm(&sbm.config(), *seed).context("generate stage failed")?;
            fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
            g.write_edge_list(&out.join("edges.txt"))?;
            write_labels(&out.join("labels.txt"), g.labels().expect("generated with labels"))?;
            println!("{} nodes, {} edges -> {}", g.n(), g.num_edges(), out.display());
            return Ok(());
        }
        GenerateKind::Hyperplane { n, d, seed, out } => (
            out,
            generate_tabular(
                &TabularKind::Hyperplane {
                    coefficients: None,
                    threshold: None,
                },
                *n,
                *d,
                *seed,
            ),
        ),
        GenerateKind::Waveform { n, d, seed, out } => (out, generate_tabular(&TabularKind::Waveform, *n, *d, *seed)),
    };
    let data = data.context("generate stage failed")?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_matrix_csv(&out.join("features.csv"), &data.x)?;
    let labels = data.labels.ok_or_else(|| anyhow!("generator produced no labels"))?;
    write_labels(&out.join("labels.txt"), &labels)?;
    println!("{} rows, {} features -> {}", data.x.nrows(), data.x.ncols(), out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Embed {
            data,
            train,
            relu,
            no_spectral,
            gcn_ae,
            checkpoint,
        } => {
            if train.deterministic {
                info!("deterministic mode requested");
            }
            let mut config = train.experiment("sdge", data.spec()?);
            config.ablation = Ablation {
                relu,
                no_spectral,
                gcn_ae,
            };
            config.save_checkpoint = checkpoint;
            cmd_embed(config)
        }
        Command::Evaluate { partition, labels, edges } => cmd_evaluate(&partition, &labels, edges.as_deref()),
        Command::Generate { kind } => cmd_generate(&kind),
        Command::Ablate { data, train } => {
            let base = train.experiment("sdge", data.spec()?);
            write_config(&base)?;
            let variants = standard_ablations(&base);
            let outcomes = run_ablation(&variants, &base.output_dir)?;
            let rows: Vec<AggregateRow> = outcomes.into_iter().map(|o| o.aggregate).collect();
            print_aggregate(&rows);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // library errors already embed their causes in the message
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
