//! Self-supervised training of the embedding network.
//!
//! One epoch draws fresh noise and negatives, evaluates
//! `beta * L_sa + gamma * L_r - L_s` on the model output, and takes one Adam
//! step. Fusion weights are refreshed from the modularity of a k-means
//! clustering of each stack output every `alpha_interval` epochs.

pub mod losses;
pub mod sampler;

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use log::{debug, info};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, Mat, ParamStore, Tape, Var};
use crate::cluster::{kmeans, kmeans_restarts, modularity, Partition};
use crate::error::{Error, Result};
use crate::graph::{laplacian, matrix_power, sym_normalize, Graph, PowerOptions};
use crate::model::{fusion_weights, Activation, Aggregation, DyReluConfig, ModelConfig, SdgeModel, DEFAULT_WIDTHS};
use crate::rng::{stream, Stream};
use crate::sparse::CsrMatrix;
use crate::spectral::{propagate, SpectralConfig};

pub use losses::{contrastive_loss, reconstruction_loss, regularization_loss, total_loss, LossWeights, ReconstructionTarget};
pub use sampler::{augment, gaussian_noise, sample_all, sample_negatives, NegativeDistribution};

/// When spectral propagation is applied to the embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpectralSchedule {
    Off,
    /// Once, after the last epoch.
    #[default]
    Post,
    /// After every epoch; the propagated embedding becomes the positive view
    /// of the next epoch, and is also applied once after training.
    EachEpoch,
}

impl SpectralSchedule {
    pub fn as_str(self) -> &'static str {
        match self {
            SpectralSchedule::Off => "off",
            SpectralSchedule::Post => "post",
            SpectralSchedule::EachEpoch => "each-epoch",
        }
    }
}

/// Which terms are minimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// `beta * L_sa + gamma * L_r - L_s`
    #[default]
    Full,
    /// `L_sa` alone, the graph auto-encoder baseline.
    Reconstruction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Number of adjacency orders `r`.
    pub order: usize,
    pub widths: Vec<usize>,
    pub embedding_dim: usize,
    pub mlp_hidden: usize,
    /// When false the fused stack output is the embedding.
    pub use_head: bool,
    pub activation: Activation,
    pub dyrelu: DyReluConfig,
    pub aggregation: Aggregation,
    /// Append node attributes to the fused matrix when the graph has them.
    pub include_attributes: bool,
    pub objective: Objective,
    pub learning_rate: f64,
    pub seed: u64,
    pub noise_sigma: f64,
    pub negatives: usize,
    pub negative_distribution: NegativeDistribution,
    /// Relative loss change regarded as converged.
    pub tolerance: f64,
    /// Consecutive converged epochs before stopping.
    pub patience: usize,
    pub alpha_interval: usize,
    /// Number of communities.
    pub k: usize,
    /// Embedding width is `k` and communities are the row-wise argmax.
    pub end_to_end: bool,
    pub kmeans_restarts: usize,
    pub spectral_schedule: SpectralSchedule,
    pub spectral: SpectralConfig,
    pub power: PowerOptions,
    /// Give isolated nodes a unit self-loop instead of rejecting them.
    pub self_loop_isolated: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            order: 4,
            widths: DEFAULT_WIDTHS.to_vec(),
            embedding_dim: 64,
            mlp_hidden: 128,
            use_head: true,
            activation: Activation::DynamicRelu,
            dyrelu: DyReluConfig::default(),
            aggregation: Aggregation::Concat,
            include_attributes: true,
            objective: Objective::Full,
            learning_rate: AdamConfig::default().lr,
            seed: 0,
            noise_sigma: 0.1,
            negatives: 5,
            negative_distribution: NegativeDistribution::Uniform,
            tolerance: 1e-4,
            patience: 5,
            alpha_interval: 5,
            k: 2,
            end_to_end: false,
            kmeans_restarts: 10,
            spectral_schedule: SpectralSchedule::Post,
            spectral: SpectralConfig::default(),
            power: PowerOptions {
                dense_fallback: true,
                ..PowerOptions::default()
            },
            self_loop_isolated: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.order == 0 {
            return Err(Error::InvalidArgument("order r must be at least 1".into()));
        }
        if self.k == 0 {
            return Err(Error::InvalidArgument("community count k must be at least 1".into()));
        }
        if self.end_to_end && !self.use_head {
            return Err(Error::InvalidArgument("end-to-end mode needs the MLP head".into()));
        }
        if self.objective == Objective::Full && self.negatives == 0 {
            return Err(Error::InvalidArgument("at least one negative per node is required".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise sigma must be >= 0, got {}", self.noise_sigma)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if self.alpha_interval == 0 || self.patience == 0 {
            return Err(Error::InvalidArgument("alpha interval and patience must be at least 1".into()));
        }
        Ok(())
    }

    fn output_width(&self) -> usize {
        if self.end_to_end {
            self.k
        } else {
            self.embedding_dim
        }
    }
}

/// Loss components of one epoch, evaluated before that epoch's update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub contrastive: f64,
    pub reconstruction: f64,
    pub regularization: f64,
    pub total: f64,
}

/// Wall-clock seconds spent in each stage of [`fit`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub adjacency_powers: f64,
    pub training: f64,
    pub spectral: f64,
    pub clustering: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Final embedding, after spectral propagation when enabled.
    pub embedding: Mat,
    pub history: Vec<EpochRecord>,
    pub partition: Partition,
    /// Fusion weights used in the last forward pass.
    pub alpha: Vec<f64>,
    pub timings: StageTimings,
    pub model: SdgeModel,
}

/// Everything one loss evaluation depends on besides the parameters.
#[derive(Debug, Clone, Copy)]
pub struct LossInputs<'a> {
    pub x: &'a Mat,
    pub attributes: Option<&'a Mat>,
    pub alpha: &'a [f64],
    /// Added to the embedding to form the positive view.
    pub noise: &'a Mat,
    /// Replaces the embedding as the base of the positive view.
    pub anchor: Option<&'a Mat>,
    pub negatives: &'a [Vec<usize>],
    pub target: &'a ReconstructionTarget,
    pub laplacian: &'a Arc<CsrMatrix>,
    pub objective: Objective,
}

/// Tape handles of one loss evaluation. `contrastive` is absent for the
/// reconstruction-only objective.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub embedding: Var,
    pub contrastive: Option<Var>,
    pub reconstruction: Var,
    pub regularization: Var,
    pub total: Var,
}

/// Records the forward pass and the training objective on `tape`, reading
/// parameters from `store`.
pub fn loss_graph(
    model: &SdgeModel,
    store: &ParamStore,
    tape: &mut Tape,
    inputs: &LossInputs<'_>,
    weights: &LossWeights,
) -> Result<LossVars> {
    let fwd = model.forward_with(tape, store, inputs.x, inputs.alpha, inputs.attributes)?;
    let z = fwd.embedding;
    let reconstruction = reconstruction_loss(tape, z, inputs.target)?;
    let regularization = regularization_loss(tape, z, inputs.laplacian.clone())?;
    let (contrastive, total) = match inputs.objective {
        Objective::Reconstruction => (None, reconstruction),
        Objective::Full => {
            let positive = match inputs.anchor {
                Some(a) => tape.constant(a + inputs.noise),
                None => tape.add_const(z, inputs.noise.clone())?,
            };
            let s = contrastive_loss(tape, z, positive, inputs.negatives, weights.tau)?;
            let total = total_loss(tape, s, reconstruction, regularization, weights)?;
            (Some(s), total)
        }
    };
    Ok(LossVars {
        embedding: z,
        contrastive,
        reconstruction,
        regularization,
        total,
    })
}

/// Node features fed to the GCN stacks: the attributes when present, else
/// the rows of `sym_normalize(A)`.
pub fn input_features(g: &Graph, first_propagator: &CsrMatrix) -> Mat {
    match g.attributes() {
        Some(x) => x.clone(),
        None => first_propagator.to_dense(),
    }
}

/// Fusion weights from the modularity of a k-means clustering of each
/// stack output.
pub fn modularity_alpha(g: &Graph, outputs: &[Mat], k: usize, seed: u64) -> Result<Vec<f64>> {
    let q = outputs
        .iter()
        .enumerate()
        .map(|(i, h)| {
            let km = kmeans(h.view(), k, seed.wrapping_add(i as u64))?;
            modularity(g, &km.partition)
        })
        .collect::<Result<Vec<_>>>()?;
    debug!("stack modularities {q:?}");
    Ok(fusion_weights(&q))
}

fn argmax_partition(z: &Mat) -> Result<Partition> {
    let labels = z
        .rows()
        .into_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (j, &v)| if v > best.1 { (j, v) } else { best })
                .0
        })
        .collect();
    Partition::new(labels, z.ncols())
}

fn converged(history: &[EpochRecord], tolerance: f64, patience: usize) -> bool {
    if history.len() <= patience {
        return false;
    }
    history[history.len() - patience - 1..].windows(2).all(|w| {
        let prev = w[0].total;
        (w[1].total - prev).abs() / prev.abs().max(f64::MIN_POSITIVE) < tolerance
    })
}

/// Trains a model on `g`, then propagates and clusters the embedding.
pub fn fit(g: &Graph, config: &TrainConfig, weights: &LossWeights) -> Result<FitResult> {
    config.validate()?;
    weights.validate()?;
    let g = if config.self_loop_isolated {
        g.with_isolated_self_loops()
    } else {
        g.clone()
    };
    let n = g.n();
    if config.k > n {
        return Err(Error::InvalidArgument(format!("k={} exceeds the node count {n}", config.k)));
    }
    if config.spectral_schedule != SpectralSchedule::Off {
        if let Some(&i) = g.isolated_nodes().first() {
            return Err(Error::IsolatedNode(i));
        }
    }
    let mut timings = StageTimings::default();

    let start = Instant::now();
    let propagators = matrix_power(g.adjacency(), config.order, config.power)?
        .iter()
        .map(|m| sym_normalize(m).map(Arc::new))
        .collect::<Result<Vec<_>>>()?;
    timings.adjacency_powers = start.elapsed().as_secs_f64();

    let x = input_features(&g, &propagators[0]);
    let attributes = g.attributes().filter(|_| config.include_attributes).cloned();
    let model_config = ModelConfig {
        order: config.order,
        widths: config.widths.clone(),
        input_width: x.ncols(),
        activation: config.activation,
        dyrelu: config.dyrelu,
        aggregation: config.aggregation,
        attribute_width: attributes.as_ref().map_or(0, Mat::ncols),
        mlp_hidden: config.mlp_hidden,
        out_dim: config.output_width(),
        use_head: config.use_head,
    };
    let mut model = SdgeModel::new(model_config, propagators, &mut stream(config.seed, Stream::Init))?;
    let target = ReconstructionTarget::new(Arc::new(g.adjacency().clone()), &x)?;
    let lap = Arc::new(laplacian(&g));

    let mut noise_rng = stream(config.seed, Stream::Noise);
    let mut negative_rng = stream(config.seed, Stream::Negatives);
    let mut adam = Adam::new(
        AdamConfig {
            lr: config.learning_rate,
            ..AdamConfig::default()
        },
        model.params(),
    );
    let mut alpha = vec![1.0 / config.order as f64; config.order];
    let mut anchor: Option<Mat> = None;
    let mut history = Vec::with_capacity(config.epochs);
    let propagate_in_loop = SpectralSchedule::EachEpoch == config.spectral_schedule;
    let loop_spectral = SpectralConfig {
        standardize: false,
        ..config.spectral
    };

    let start = Instant::now();
    let mut spectral_secs = 0.0;
    for epoch in 0..config.epochs {
        if config.order > 1 && epoch % config.alpha_interval == 0 {
            alpha = refresh_alpha(&model, &g, &x, config, epoch)?;
        }
        let noise = gaussian_noise(n, config.output_width(), config.noise_sigma, &mut noise_rng);
        let negatives = match config.objective {
            Objective::Full => sample_all(&g, config.negatives, config.negative_distribution, &mut negative_rng)?,
            Objective::Reconstruction => Vec::new(),
        };
        let inputs = LossInputs {
            x: &x,
            attributes: attributes.as_ref(),
            alpha: &alpha,
            noise: &noise,
            anchor: anchor.as_ref(),
            negatives: &negatives,
            target: &target,
            laplacian: &lap,
            objective: config.objective,
        };
        let mut tape = Tape::new();
        let vars = loss_graph(&model, model.params(), &mut tape, &inputs, weights)?;
        let record = EpochRecord {
            epoch,
            contrastive: vars.contrastive.map_or(0.0, |v| tape.scalar(v)),
            reconstruction: tape.scalar(vars.reconstruction),
            regularization: tape.scalar(vars.regularization),
            total: tape.scalar(vars.total),
        };
        if !record.total.is_finite() {
            return Err(Error::NonFinite(format!("total loss at epoch {epoch}")));
        }
        debug!("epoch {epoch}: {record:?}");
        history.push(record);

        tape.backward_into(vars.total, model.params_mut())?;
        adam.step(model.params_mut());

        if propagate_in_loop {
            let t = Instant::now();
            anchor = Some(propagate(tape.value(vars.embedding).view(), &g, &loop_spectral)?);
            spectral_secs += t.elapsed().as_secs_f64();
        }
        if converged(&history, config.tolerance, config.patience) {
            info!("converged after {} epochs", epoch + 1);
            break;
        }
    }

    let mut tape = Tape::new();
    let fwd = model.forward(&mut tape, &x, &alpha, attributes.as_ref())?;
    let raw = tape.value(fwd.embedding).clone();
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("final embedding".into()));
    }
    timings.training = start.elapsed().as_secs_f64() - spectral_secs;

    let embedding = match config.spectral_schedule {
        SpectralSchedule::Off => raw.clone(),
        _ => {
            let t = Instant::now();
            let z = propagate(raw.view(), &g, &config.spectral)?;
            timings.spectral = spectral_secs + t.elapsed().as_secs_f64();
            z
        }
    };

    let t = Instant::now();
    let partition = if config.end_to_end {
        argmax_partition(&raw)?
    } else {
        kmeans_restarts(embedding.view(), config.k, config.seed, config.kmeans_restarts)?.partition
    };
    timings.clustering = t.elapsed().as_secs_f64();

    Ok(FitResult {
        embedding,
        history,
        partition,
        alpha,
        timings,
        model,
    })
}

fn refresh_alpha(model: &SdgeModel, g: &Graph, x: &Mat, config: &TrainConfig, epoch: usize) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let outputs: Vec<Mat> = model
        .gcn_forward(&mut tape, x)?
        .into_iter()
        .map(|v| tape.value(v).clone())
        .collect();
    let seed = config.seed.wrapping_add((epoch as u64) << 16);
    let alpha = modularity_alpha(g, &outputs, config.k, seed)?;
    debug!("epoch {epoch}: alpha {alpha:?}");
    Ok(alpha)
}

/// Writes `epoch,l_s,l_sa,l_r,total` rows.
pub fn write_history_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut out = String::from("epoch,l_s,l_sa,l_r,total\n");
    for r in history {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch, r.contrastive, r.reconstruction, r.regularization, r.total
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes one comma-separated row per node.
pub fn write_matrix_csv(path: &Path, z: &Array2<f64>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for row in z.rows() {
        let line: Vec<String> = row.iter().map(f64::to_string).collect();
        writeln!(w, "{}", line.join(",")).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_triangles() -> Graph {
        Graph::from_edges(6, [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0), (3, 4, 1.0), (4, 5, 1.0), (3, 5, 1.0), (2, 3, 1.0)]).unwrap()
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            order: 2,
            widths: vec![8, 6, 4],
            embedding_dim: 3,
            mlp_hidden: 5,
            negatives: 2,
            k: 2,
            kmeans_restarts: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initial_forward() {
        let g = two_triangles();
        let cfg = TrainConfig {
            epochs: 0,
            spectral_schedule: SpectralSchedule::Off,
            ..small_config()
        };
        let out = fit(&g, &cfg, &LossWeights::default()).unwrap();
        assert!(out.history.is_empty());
        assert_eq!(out.embedding.dim(), (6, 3));
        assert!(out.embedding.iter().all(|v| *v > 0.0 && *v < 1.0));
    }

    #[test]
    fn runs_are_bit_identical() {
        let g = two_triangles();
        let cfg = TrainConfig {
            spectral_schedule: SpectralSchedule::EachEpoch,
            ..small_config()
        };
        let a = fit(&g, &cfg, &LossWeights::default()).unwrap();
        let b = fit(&g, &cfg, &LossWeights::default()).unwrap();
        assert_eq!(a.embedding, b.embedding);
        assert_eq!(a.history, b.history);
        assert_eq!(a.history.len(), 3);
        assert!(a.history.iter().enumerate().all(|(i, r)| r.epoch == i));
    }

    #[test]
    fn early_stop_needs_patience() {
        let flat: Vec<EpochRecord> = (0..6)
            .map(|epoch| EpochRecord {
                epoch,
                contrastive: 0.0,
                reconstruction: 0.0,
                regularization: 0.0,
                total: 1.0,
            })
            .collect();
        assert!(!converged(&flat[..5], 1e-4, 5));
        assert!(converged(&flat, 1e-4, 5));
        let mut bumped = flat.clone();
        bumped[3].total = 2.0;
        assert!(!converged(&bumped, 1e-4, 5));
    }

    #[test]
    fn isolated_nodes_need_the_flag_for_propagation() {
        let g = Graph::from_edges(5, [(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0)]).unwrap();
        let cfg = small_config();
        assert!(matches!(fit(&g, &cfg, &LossWeights::default()), Err(Error::IsolatedNode(4))));
        let cfg = TrainConfig {
            self_loop_isolated: true,
            ..cfg
        };
        assert!(fit(&g, &cfg, &LossWeights::default()).is_ok());
    }

    #[test]
    fn end_to_end_uses_argmax() {
        let g = two_triangles();
        let cfg = TrainConfig {
            end_to_end: true,
            ..small_config()
        };
        let out = fit(&g, &cfg, &LossWeights::default()).unwrap();
        assert_eq!(out.model.config().out_dim, 2);
        assert_eq!(out.partition.k(), 2);
    }

    #[test]
    fn reconstruction_objective_skips_contrast() {
        let g = two_triangles();
        let cfg = TrainConfig {
            order: 1,
            use_head: false,
            objective: Objective::Reconstruction,
            activation: Activation::Relu,
            spectral_schedule: SpectralSchedule::Off,
            ..small_config()
        };
        let out = fit(&g, &cfg, &LossWeights::default()).unwrap();
        assert!(out.history.iter().all(|r| r.contrastive == 0.0 && r.total == r.reconstruction));
        assert_eq!(out.embedding.ncols(), 4);
    }

    #[test]
    fn history_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        let rec = EpochRecord {
            epoch: 0,
            contrastive: 0.5,
            reconstruction: 1.0,
            regularization: 2.0,
            total: 2.5,
        };
        write_history_csv(&path, &[rec]).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "epoch,l_s,l_sa,l_r,total\n0,0.5,1,2,2.5\n");
    }
}
