//! Multi-order GCN stacks, Dynamic ReLU, modularity-weighted fusion and the
//! MLP embedding head.
//!
//! Stack `i` convolves with `S_i = sym_normalize(A^i)`. Every layer computes
//! `S_i H W`, batch-normalizes the result and applies the activation. The
//! stack outputs are fused with weights `alpha` and mapped to the embedding
//! `Z` by a two-layer sigmoid MLP.

pub mod checkpoint;
mod fusion;

use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mat, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

pub use fusion::{fuse, fusion_weights, Aggregation};

/// Hidden widths of each GCN stack, input layer first.
pub const DEFAULT_WIDTHS: [usize; 4] = [200, 170, 140, 100];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    DynamicRelu,
    Relu,
}

/// Spatially shared Dynamic ReLU: one set of piecewise-linear coefficients
/// per feature, produced from the column means of the layer input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DyReluConfig {
    /// Number of affine pieces.
    pub pieces: usize,
    /// Hidden width of the hyper-network is `features / reduction`.
    pub reduction: usize,
    /// Range of the residual added to the slopes.
    pub slope_range: f64,
    /// Range of the residual added to the intercepts.
    pub intercept_range: f64,
}

impl Default for DyReluConfig {
    fn default() -> Self {
        DyReluConfig {
            pieces: 2,
            reduction: 8,
            slope_range: 1.0,
            intercept_range: 0.5,
        }
    }
}

impl DyReluConfig {
    /// Slope and intercept centers for `c` features, in the coefficient
    /// layout of [`Tape::max_affine`]. Piece 0 has slope 1, the others 0.
    fn centers(&self, c: usize) -> Array1<f64> {
        let mut v = Array1::zeros(2 * self.pieces * c);
        v.slice_mut(ndarray::s![..c]).fill(1.0);
        v
    }

    fn ranges(&self, c: usize) -> Array1<f64> {
        let half = self.pieces * c;
        Array1::from_iter((0..2 * half).map(|k| {
            if k < half {
                self.slope_range
            } else {
                self.intercept_range
            }
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of adjacency orders, one GCN stack each.
    pub order: usize,
    /// Input width of the first GCN layer followed by each layer's output width.
    pub widths: Vec<usize>,
    /// Width of the node feature matrix fed to the stacks.
    pub input_width: usize,
    pub activation: Activation,
    pub dyrelu: DyReluConfig,
    pub aggregation: Aggregation,
    /// Width of attribute columns appended after fusion (0 for none).
    pub attribute_width: usize,
    pub mlp_hidden: usize,
    /// Embedding width `d`, or the community count in end-to-end mode.
    pub out_dim: usize,
    /// When false, the fused matrix itself is the embedding.
    pub use_head: bool,
}

impl ModelConfig {
    pub fn new(order: usize, input_width: usize, out_dim: usize) -> Self {
        ModelConfig {
            order,
            widths: DEFAULT_WIDTHS.to_vec(),
            input_width,
            activation: Activation::DynamicRelu,
            dyrelu: DyReluConfig::default(),
            aggregation: Aggregation::Concat,
            attribute_width: 0,
            mlp_hidden: 128,
            out_dim,
            use_head: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.order == 0 {
            return Err(Error::InvalidArgument("order r must be at least 1".into()));
        }
        if self.widths.len() < 2 || self.widths.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "layer widths {:?} need an input width and at least one layer",
                self.widths
            )));
        }
        if self.input_width == 0 || self.out_dim == 0 || self.mlp_hidden == 0 {
            return Err(Error::InvalidArgument("model widths must be positive".into()));
        }
        if self.dyrelu.pieces == 0 || self.dyrelu.reduction == 0 {
            return Err(Error::InvalidArgument("dynamic ReLU needs pieces and reduction >= 1".into()));
        }
        Ok(())
    }

    pub fn stack_output_width(&self) -> usize {
        *self.widths.last().expect("validated")
    }

    pub fn fused_width(&self) -> usize {
        self.aggregation
            .fused_width(self.order, self.stack_output_width(), self.attribute_width)
    }
}

#[derive(Debug, Clone)]
struct Affine {
    weight: ParamId,
    bias: ParamId,
}

impl Affine {
    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let y = tape.matmul(x, w)?;
        tape.add_row(y, b)
    }
}

#[derive(Debug, Clone)]
struct DyReluNet {
    fc1: Affine,
    fc2: Affine,
    centers: Array1<f64>,
    ranges: Array1<f64>,
    pieces: usize,
}

impl DyReluNet {
    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let ctx = tape.row_mean(x)?;
        let h = self.fc1.forward(tape, store, ctx)?;
        let h = tape.relu(h)?;
        let raw = self.fc2.forward(tape, store, h)?;
        // coefficient = center + range * (2 sigmoid(raw) - 1)
        let s = tape.sigmoid(raw)?;
        let s = tape.scale_cols(s, &self.ranges * 2.0)?;
        let offset = (&self.centers - &self.ranges).insert_axis(ndarray::Axis(0));
        let coeffs = tape.add_const(s, offset)?;
        tape.max_affine(x, coeffs, self.pieces)
    }
}

#[derive(Debug, Clone)]
struct GcnLayer {
    weight: ParamId,
    bn_scale: ParamId,
    bn_shift: ParamId,
    dyrelu: Option<DyReluNet>,
}

/// One GCN stack bound to its normalized propagation matrix.
#[derive(Debug, Clone)]
pub struct GcnStack {
    propagator: Arc<CsrMatrix>,
    projection: Option<Affine>,
    layers: Vec<GcnLayer>,
}

impl GcnStack {
    pub fn propagator(&self) -> &CsrMatrix {
        &self.propagator
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }
}

#[derive(Debug, Clone)]
struct MlpHead {
    hidden: Affine,
    output: Affine,
}

/// Tape handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub stack_outputs: Vec<Var>,
    pub fused: Var,
    pub embedding: Var,
}

/// Parameters and structure of the full embedding network.
#[derive(Debug, Clone)]
pub struct SdgeModel {
    config: ModelConfig,
    store: ParamStore,
    stacks: Vec<GcnStack>,
    head: Option<MlpHead>,
}

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Mat {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-limit..limit))
}

fn affine(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, fan_in: usize, fan_out: usize, zero: bool) -> Affine {
    let w = if zero {
        Mat::zeros((fan_in, fan_out))
    } else {
        glorot(rng, fan_in, fan_out)
    };
    Affine {
        weight: store.add(format!("{name}.weight"), w),
        bias: store.add(format!("{name}.bias"), Mat::zeros((1, fan_out))),
    }
}

impl SdgeModel {
    /// Initializes a model with one stack per propagation matrix.
    pub fn new(config: ModelConfig, propagators: Vec<Arc<CsrMatrix>>, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        if propagators.len() != config.order {
            return Err(Error::InvalidArgument(format!(
                "{} propagation matrices for order {}",
                propagators.len(),
                config.order
            )));
        }
        let mut store = ParamStore::new();
        let mut stacks = Vec::with_capacity(config.order);
        for (si, prop) in propagators.into_iter().enumerate() {
            let projection = (config.input_width != config.widths[0]).then(|| {
                affine(&mut store, rng, &format!("gcn{si}.input"), config.input_width, config.widths[0], false)
            });
            let mut layers = Vec::new();
            for (li, pair) in config.widths.windows(2).enumerate() {
                let (w_in, w_out) = (pair[0], pair[1]);
                let prefix = format!("gcn{si}.layer{li}");
                let weight = store.add(format!("{prefix}.weight"), glorot(rng, w_in, w_out));
                let bn_scale = store.add(format!("{prefix}.bn.scale"), Mat::ones((1, w_out)));
                let bn_shift = store.add(format!("{prefix}.bn.shift"), Mat::zeros((1, w_out)));
                let dyrelu = (config.activation == Activation::DynamicRelu).then(|| {
                    let d = config.dyrelu;
                    let hidden = (w_out / d.reduction).max(1);
                    DyReluNet {
                        fc1: affine(&mut store, rng, &format!("{prefix}.dyrelu.fc1"), w_out, hidden, false),
                        fc2: affine(&mut store, rng, &format!("{prefix}.dyrelu.fc2"), hidden, 2 * d.pieces * w_out, true),
                        centers: d.centers(w_out),
                        ranges: d.ranges(w_out),
                        pieces: d.pieces,
                    }
                });
                layers.push(GcnLayer {
                    weight,
                    bn_scale,
                    bn_shift,
                    dyrelu,
                });
            }
            stacks.push(GcnStack {
                propagator: prop,
                projection,
                layers,
            });
        }
        let head = config.use_head.then(|| {
            let fused = config.fused_width();
            MlpHead {
                hidden: affine(&mut store, rng, "mlp.hidden", fused, config.mlp_hidden, false),
                output: affine(&mut store, rng, "mlp.output", config.mlp_hidden, config.out_dim, false),
            }
        });
        Ok(SdgeModel {
            config,
            store,
            stacks,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn stacks(&self) -> &[GcnStack] {
        &self.stacks
    }

    /// Number of weights in the first affine map of the MLP head.
    pub fn head_input_param_count(&self) -> usize {
        self.head
            .as_ref()
            .map(|h| self.store.get(h.hidden.weight).value.len())
            .unwrap_or(0)
    }

    /// Runs every stack on the shared input `x`, returning one output per order.
    pub fn gcn_forward(&self, tape: &mut Tape, x: &Mat) -> Result<Vec<Var>> {
        self.gcn_forward_with(tape, &self.store, x)
    }

    fn gcn_forward_with(&self, tape: &mut Tape, store: &ParamStore, x: &Mat) -> Result<Vec<Var>> {
        if x.ncols() != self.config.input_width {
            return Err(Error::shape(
                "gcn_forward",
                format!("input has {} columns, model expects {}", x.ncols(), self.config.input_width),
            ));
        }
        let input = tape.constant(x.clone());
        let mut outputs = Vec::with_capacity(self.stacks.len());
        for (si, stack) in self.stacks.iter().enumerate() {
            if stack.propagator.n_rows() != x.nrows() {
                return Err(Error::shape(
                    "gcn_forward",
                    format!("{} nodes in input, propagator is {}x{}", x.nrows(), stack.propagator.n_rows(), stack.propagator.n_cols()),
                ));
            }
            let mut h = input;
            if let Some(p) = &stack.projection {
                h = p.forward(tape, store, h)?;
            }
            for (li, layer) in stack.layers.iter().enumerate() {
                let w = tape.param(store, layer.weight);
                let hw = tape.matmul(h, w)?;
                let pre = tape.spmm(stack.propagator.clone(), hw)?;
                let scale = tape.param(store, layer.bn_scale);
                let shift = tape.param(store, layer.bn_shift);
                let normed = tape.batch_norm(pre, scale, shift)?;
                h = match &layer.dyrelu {
                    Some(net) => net.forward(tape, store, normed)?,
                    None => tape.relu(normed)?,
                };
                if tape.value(h).iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("activation of stack {si}, layer {li}")));
                }
            }
            outputs.push(h);
        }
        Ok(outputs)
    }

    /// Maps a fused matrix through the MLP head; identity when the model has no head.
    pub fn mlp_forward(&self, tape: &mut Tape, fused: Var) -> Result<Var> {
        self.mlp_forward_with(tape, &self.store, fused)
    }

    fn mlp_forward_with(&self, tape: &mut Tape, store: &ParamStore, fused: Var) -> Result<Var> {
        let Some(head) = &self.head else {
            return Ok(fused);
        };
        let h = head.hidden.forward(tape, store, fused)?;
        let h = tape.sigmoid(h)?;
        let z = head.output.forward(tape, store, h)?;
        tape.sigmoid(z)
    }

    /// Full forward pass: stacks, fusion with `alpha`, head.
    pub fn forward(&self, tape: &mut Tape, x: &Mat, alpha: &[f64], attributes: Option<&Mat>) -> Result<Forward> {
        self.forward_with(tape, &self.store, x, alpha, attributes)
    }

    /// Forward pass reading parameter values from `store`, which must share
    /// this model's layout. Used for finite-difference checks.
    pub fn forward_with(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: &Mat,
        alpha: &[f64],
        attributes: Option<&Mat>,
    ) -> Result<Forward> {
        if let Some(a) = attributes {
            if a.ncols() != self.config.attribute_width {
                return Err(Error::shape(
                    "fuse",
                    format!("{} attribute columns, model expects {}", a.ncols(), self.config.attribute_width),
                ));
            }
        } else if self.config.attribute_width != 0 {
            return Err(Error::shape("fuse", "model expects attribute columns but none were given"));
        }
        let stack_outputs = self.gcn_forward_with(tape, store, x)?;
        let fused = fuse(tape, &stack_outputs, alpha, self.config.aggregation, attributes)?;
        let embedding = self.mlp_forward_with(tape, store, fused)?;
        Ok(Forward {
            stack_outputs,
            fused,
            embedding,
        })
    }
}
