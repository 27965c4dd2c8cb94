//! GCN and MLP motion generators.
//!
//! A GCN chains graph-convolution layers `H ← ReLU(S·H·W)` over the tactile
//! node features, flattens the last layer node-major, appends the joint
//! angles and property labels, and runs a fully connected stack whose
//! final 16-wide layer is linear. The MLP skips the convolutions and feeds
//! the raw tactile readings to the same kind of stack.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Parameter, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::topology::{normalize_adjacency, HandTopology, PropagationMatrix};

pub const JOINTS: usize = 16;
pub const LABELS: usize = 6;
pub const AUX_INPUT: usize = JOINTS + LABELS;
pub const TACTILE_AXES: usize = 3;
pub const DEFAULT_HORIZON: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelName {
    I,
    II,
    III,
    IV,
}

impl ModelName {
    pub const ALL: [ModelName; 4] = [ModelName::I, ModelName::II, ModelName::III, ModelName::IV];
}

impl FromStr for ModelName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "I" | "1" => Ok(ModelName::I),
            "II" | "2" => Ok(ModelName::II),
            "III" | "3" => Ok(ModelName::III),
            "IV" | "4" => Ok(ModelName::IV),
            other => Err(Error::InvalidArgument(format!("unknown model name {other:?}"))),
        }
    }
}

impl fmt::Display for ModelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ModelName::I => "I",
            ModelName::II => "II",
            ModelName::III => "III",
            ModelName::IV => "IV",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gcn,
    Mlp,
}

/// Width scaling applied to the fully connected stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    /// Reference widths.
    Full,
    /// Fully connected widths divided by 10 (at least 16); conv channels kept.
    #[default]
    Desk,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub conv_channels: Vec<usize>,
    pub fc_sizes: Vec<usize>,
    pub input_channels: usize,
    pub aux_input: usize,
    pub output_dim: usize,
    pub horizon: usize,
    pub node_count: usize,
}

const GCN_FC: [usize; 4] = [8000, 1000, 120, 50];
const MLP_FC: [usize; 7] = [1500, 3000, 1500, 700, 350, 100, 50];

impl ModelSpec {
    pub fn gcn(conv_channels: Vec<usize>, fc_sizes: Vec<usize>, node_count: usize) -> Self {
        Self {
            kind: ModelKind::Gcn,
            conv_channels,
            fc_sizes,
            input_channels: TACTILE_AXES,
            aux_input: AUX_INPUT,
            output_dim: JOINTS,
            horizon: DEFAULT_HORIZON,
            node_count,
        }
    }

    pub fn mlp(fc_sizes: Vec<usize>, node_count: usize) -> Self {
        Self {
            kind: ModelKind::Mlp,
            conv_channels: Vec::new(),
            ..Self::gcn(Vec::new(), fc_sizes, node_count)
        }
    }

    /// Architecture of one of the four reference models.
    pub fn for_model(name: ModelName, scale: Scale, node_count: usize) -> Self {
        let fc = |sizes: &[usize]| -> Vec<usize> {
            match scale {
                Scale::Full => sizes.to_vec(),
                Scale::Desk => sizes.iter().map(|&s| s.div_ceil(10).max(16)).collect(),
            }
        };
        match name {
            ModelName::I => Self::gcn(vec![14, 28, 56, 112, 112, 112], fc(&GCN_FC), node_count),
            ModelName::II => Self::gcn(vec![14, 28, 56, 112], fc(&GCN_FC), node_count),
            ModelName::III => Self::gcn(vec![14, 28, 56], fc(&GCN_FC), node_count),
            ModelName::IV => Self::mlp(fc(&MLP_FC), node_count),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(format!("model spec: {msg}")));
        match self.kind {
            ModelKind::Gcn if self.conv_channels.is_empty() => return bad("GCN needs conv layers"),
            ModelKind::Mlp if !self.conv_channels.is_empty() => return bad("MLP has no conv layers"),
            _ => {}
        }
        if self.output_dim != JOINTS {
            return bad("output must be 16 joints");
        }
        if self.input_channels != TACTILE_AXES || self.aux_input != AUX_INPUT {
            return bad("inputs are 3 tactile axes plus 16 joints and 6 labels");
        }
        if self.node_count == 0 || self.conv_channels.iter().chain(&self.fc_sizes).any(|&c| c == 0) {
            return bad("zero-sized layer");
        }
        Ok(())
    }

    /// Length of the flattened tactile block entering the first fc layer.
    pub fn tactile_feature_len(&self) -> usize {
        let per_node = self.conv_channels.last().copied().unwrap_or(self.input_channels);
        self.node_count * per_node
    }

    /// Raw sensor input: tactile readings plus joints and labels.
    pub fn raw_input_len(&self) -> usize {
        self.node_count * self.input_channels + self.aux_input
    }

    pub fn fc_input_len(&self) -> usize {
        self.tactile_feature_len() + self.aux_input
    }

    /// `(name, shape)` of every parameter in canonical order: conv weights,
    /// then weight/bias pairs of the fc stack including the output layer.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut c_in = self.input_channels;
        for (i, &c) in self.conv_channels.iter().enumerate() {
            out.push((format!("conv.{i}.weight"), vec![c_in, c]));
            c_in = c;
        }
        let mut width = self.fc_input_len();
        let widths = self.fc_sizes.iter().copied().chain(std::iter::once(self.output_dim));
        for (i, w) in widths.enumerate() {
            out.push((format!("fc.{i}.weight"), vec![width, w]));
            out.push((format!("fc.{i}.bias"), vec![w]));
            width = w;
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameter_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

/// Learned weights of a [`ModelSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub spec: ModelSpec,
    pub conv_weights: Vec<Parameter>,
    pub fc_weights: Vec<Parameter>,
    pub fc_biases: Vec<Parameter>,
}

impl ModelParams {
    /// Glorot-uniform weights drawn in canonical order from `seed`; zero biases.
    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut conv_weights = Vec::new();
        let mut fc_weights = Vec::new();
        let mut fc_biases = Vec::new();
        for (name, shape) in spec.parameter_shapes() {
            if name.ends_with("bias") {
                fc_biases.push(Parameter::new(Tensor::zeros(&shape)));
                continue;
            }
            let bound = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
            let data = (0..shape[0] * shape[1])
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            let p = Parameter::new(Tensor::from_raw(shape, data));
            if name.starts_with("conv") {
                conv_weights.push(p);
            } else {
                fc_weights.push(p);
            }
        }
        Ok(Self {
            spec: spec.clone(),
            conv_weights,
            fc_weights,
            fc_biases,
        })
    }

    /// Parameters in canonical order (the order of `parameter_shapes`).
    pub fn parameters(&self) -> Vec<&Parameter> {
        let mut out: Vec<&Parameter> = self.conv_weights.iter().collect();
        for (w, b) in self.fc_weights.iter().zip(&self.fc_biases) {
            out.push(w);
            out.push(b);
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out: Vec<&mut Parameter> = self.conv_weights.iter_mut().collect();
        for (w, b) in self.fc_weights.iter_mut().zip(self.fc_biases.iter_mut()) {
            out.push(w);
            out.push(b);
        }
        out
    }

    pub fn zero_grad(&mut self) {
        self.parameters_mut().into_iter().for_each(Parameter::zero_grad);
    }
}

/// One batch of model inputs.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `(B·nodes)×3`, sample-major then node-major.
    pub tactile: Tensor,
    /// `B×22`: joints followed by labels.
    pub aux: Tensor,
    /// `B×16` joint targets, when training or evaluating.
    pub target: Option<Tensor>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.aux.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Output of a recorded forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub output: Var,
    /// Last graph-conv layer, `(B·nodes)×channels`; `None` for the MLP.
    pub last_conv: Option<Var>,
}

/// A parameterized model bound to the propagation operator of its graph.
#[derive(Debug, Clone)]
pub struct Network {
    pub params: ModelParams,
    pub graph: Arc<PropagationMatrix>,
}

/// Builds one of the four reference architectures at full width.
pub fn build_model(name: ModelName, topology: &HandTopology, seed: u64) -> Result<Network> {
    build_model_scaled(name, Scale::Full, topology, seed)
}

pub fn build_model_scaled(
    name: ModelName,
    scale: Scale,
    topology: &HandTopology,
    seed: u64,
) -> Result<Network> {
    Network::new(ModelSpec::for_model(name, scale, topology.node_count()), topology, seed)
}

/// `σ(S·H·W)` with `σ` = ReLU when `activate`, recorded on `tape`.
pub fn graph_conv(tape: &mut Tape, s: Var, h: Var, w: Var, activate: bool) -> Result<Var> {
    let c_in = tape.value(w).rows();
    let c_out = tape.value(w).cols();
    if tape.value(h).cols() != c_in {
        return Err(Error::ShapeMismatch {
            op: "graph_conv",
            left: tape.value(h).shape().to_vec(),
            right: tape.value(w).shape().to_vec(),
        });
    }
    // Same product either way; multiply the narrower side first.
    let z = if c_out < c_in {
        let hw = tape.matmul(h, w)?;
        tape.propagate(s, hw)?
    } else {
        let sh = tape.propagate(s, h)?;
        tape.matmul(sh, w)?
    };
    Ok(if activate { tape.relu(z) } else { z })
}

/// Untaped single-layer evaluation of `σ(S·H·W)` for `H` with `S.n` rows.
pub fn graph_conv_forward(
    s: &PropagationMatrix,
    h: &Tensor,
    w: &Parameter,
    activate: bool,
) -> Result<Tensor> {
    h.expect_matrix("graph_conv")?;
    if h.rows() != s.n {
        return Err(Error::ShapeMismatch {
            op: "graph_conv",
            left: s.s.shape().to_vec(),
            right: h.shape().to_vec(),
        });
    }
    let mut tape = Tape::new();
    let sv = tape.leaf(s.s.clone());
    let hv = tape.leaf(h.clone());
    let wv = tape.leaf(w.value.clone().with_requires_grad(false));
    let out = graph_conv(&mut tape, sv, hv, wv, activate)?;
    Ok(tape.value(out).clone())
}

fn check_layer(tape: &Tape, v: Var, layer: impl FnOnce() -> String) -> Result<()> {
    if tape.value(v).all_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteActivation { layer: layer() })
    }
}

impl Network {
    pub fn new(spec: ModelSpec, topology: &HandTopology, seed: u64) -> Result<Self> {
        if spec.node_count != topology.node_count() {
            return Err(Error::ShapeMismatch {
                op: "build_model",
                left: vec![spec.node_count],
                right: vec![topology.node_count()],
            });
        }
        Ok(Self {
            params: ModelParams::init(&spec, seed)?,
            graph: Arc::new(normalize_adjacency(topology)),
        })
    }

    pub fn from_params(params: ModelParams, topology: &HandTopology) -> Result<Self> {
        params.spec.validate()?;
        if params.spec.node_count != topology.node_count() {
            return Err(Error::ShapeMismatch {
                op: "bind topology",
                left: vec![params.spec.node_count],
                right: vec![topology.node_count()],
            });
        }
        Ok(Self {
            params,
            graph: Arc::new(normalize_adjacency(topology)),
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.params.spec
    }

    /// Records the forward pass of `batch`. Parameters are recorded as
    /// trainable leaves when `trainable`, as constants otherwise.
    pub fn forward_tape(&self, tape: &mut Tape, batch: &Batch, trainable: bool) -> Result<ForwardVars> {
        let spec = &self.params.spec;
        let n = spec.node_count;
        let b = batch.len();
        if batch.tactile.shape() != [b * n, TACTILE_AXES] || batch.aux.shape() != [b, AUX_INPUT] {
            return Err(Error::ShapeMismatch {
                op: "forward",
                left: batch.tactile.shape().to_vec(),
                right: vec![b * n, TACTILE_AXES],
            });
        }
        let params = self.params.parameters();
        let record = |tape: &mut Tape, idx: usize| -> Var {
            if trainable {
                tape.param(params[idx], idx)
            } else {
                tape.leaf(params[idx].value.clone().with_requires_grad(false))
            }
        };

        let mut h = tape.leaf(batch.tactile.clone());
        let mut idx = 0;
        let mut last_conv = None;
        if spec.kind == ModelKind::Gcn {
            let s = tape.leaf(self.graph.s.clone());
            for layer in 0..spec.conv_channels.len() {
                let w = record(tape, idx);
                idx += 1;
                h = graph_conv(tape, s, h, w, true)?;
                check_layer(tape, h, || format!("conv{layer}"))?;
            }
            last_conv = Some(h);
        }
        let flat = tape.reshape(h, &[b, spec.tactile_feature_len()])?;
        let aux = tape.leaf(batch.aux.clone());
        let mut x = tape.concat_cols(flat, aux)?;
        let layers = spec.fc_sizes.len() + 1;
        for layer in 0..layers {
            let w = record(tape, idx);
            let bias = record(tape, idx + 1);
            idx += 2;
            let z = tape.matmul(x, w)?;
            x = tape.add_bias(z, bias)?;
            let last = layer + 1 == layers;
            if !last {
                x = tape.relu(x);
            }
            check_layer(tape, x, || if last { "output".into() } else { format!("fc{layer}") })?;
        }
        Ok(ForwardVars {
            output: x,
            last_conv,
        })
    }

    /// Predicts `B×16` joint targets without touching parameter state.
    pub fn predict_batch(&self, batch: &Batch) -> Result<Tensor> {
        let mut tape = Tape::new();
        let out = self.forward_tape(&mut tape, batch, false)?;
        Ok(tape.value(out.output).clone())
    }

    /// Next joint command from one observation.
    pub fn forward(&self, tactile: &Tensor, joints: &[f64], labels: &[f64]) -> Result<Vec<f64>> {
        let batch = single_batch(tactile, joints, labels)?;
        Ok(self.predict_batch(&batch)?.into_data())
    }

    /// Last graph-conv layer output (`nodes×channels`) for one observation.
    pub fn conv_features(&self, tactile: &Tensor, joints: &[f64], labels: &[f64]) -> Result<Tensor> {
        if self.params.spec.kind != ModelKind::Gcn {
            return Err(Error::InvalidArgument("no conv features: model is an MLP".into()));
        }
        let batch = single_batch(tactile, joints, labels)?;
        let mut tape = Tape::new();
        let out = self.forward_tape(&mut tape, &batch, false)?;
        Ok(tape.value(out.last_conv.expect("GCN has conv layers")).clone())
    }

    /// Mean squared error over `batch`, recorded with trainable parameters.
    pub fn loss_tape(&self, tape: &mut Tape, batch: &Batch) -> Result<Var> {
        let target = batch
            .target
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("batch has no targets".into()))?;
        let out = self.forward_tape(tape, batch, true)?;
        let t = tape.leaf(target.clone());
        tape.mse_loss(out.output, t)
    }
}

fn single_batch(tactile: &Tensor, joints: &[f64], labels: &[f64]) -> Result<Batch> {
    if joints.len() != JOINTS || labels.len() != LABELS {
        return Err(Error::ShapeMismatch {
            op: "forward",
            left: vec![joints.len(), labels.len()],
            right: vec![JOINTS, LABELS],
        });
    }
    let aux = Tensor::new(vec![1, AUX_INPUT], [joints, labels].concat())?;
    tactile.check_finite()?;
    Ok(Batch {
        tactile: tactile.clone(),
        aux,
        target: None,
    })
}
