//! LogicTreeNet architectures and their runtime instantiation.
//!
//! A [`ModelSpec`] is the declarative layer list plus the per-model training
//! defaults; a [`Network`] is a spec with sampled wiring and gate logits.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gates::{self, argmax_lowest, Gate};
use crate::layers::{
    sample_connections, Coeffs, ConvPool, GroupSum, LayerError, OrPool, RandomLayer, Shape, TreeConv,
};
use crate::Real;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown model size {size:?} for {dataset}")]
    UnknownSize { dataset: Dataset, size: String },
    #[error("no model size given and no width override")]
    MissingSize,
    #[error("unknown dataset {0:?}")]
    UnknownDataset(String),
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error(transparent)]
    Layer(#[from] LayerError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dataset {
    Mnist,
    Cifar10,
    /// Anything else (synthetic tasks, user data).
    Custom,
}

impl FromStr for Dataset {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mnist" => Ok(Dataset::Mnist),
            "cifar10" | "cifar-10" | "cifar" => Ok(Dataset::Cifar10),
            "custom" => Ok(Dataset::Custom),
            _ => Err(ModelError::UnknownDataset(s.to_string())),
        }
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dataset::Mnist => "mnist",
            Dataset::Cifar10 => "cifar10",
            Dataset::Custom => "custom",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    TreeConv {
        kernels: usize,
        receptive: [usize; 2],
        depth: usize,
        padding: usize,
        channel_restriction: Option<usize>,
        groups: usize,
    },
    OrPool,
    Random {
        out: usize,
    },
}

/// Training defaults carried by a spec.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub tau: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub eval_interval: usize,
    pub validation_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub dataset: Dataset,
    pub size: Option<String>,
    /// Width parameter.
    pub k: usize,
    /// Output gate factor of the final random layers.
    pub ox: usize,
    pub input_bits: u32,
    /// Shape of the binary-encoded input.
    pub input: Shape,
    pub classes: usize,
    pub layers: Vec<LayerSpec>,
    pub hyper: Hyperparameters,
}

/// Optional replacements for the table defaults.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub k: Option<usize>,
    pub ox: Option<usize>,
    pub input_bits: Option<u32>,
    pub tau: Option<f64>,
    pub learning_rate: Option<f64>,
    pub weight_decay: Option<f64>,
    pub batch_size: Option<usize>,
    pub eval_interval: Option<usize>,
    pub groups: Option<usize>,
}

struct TableColumn {
    size: &'static str,
    k: usize,
    tau: f64,
    lr: f64,
    wd: f64,
    bs: usize,
    ox: usize,
    bits: u32,
}

const CIFAR_TABLE: [TableColumn; 5] = [
    TableColumn { size: "S", k: 32, tau: 20.0, lr: 0.02, wd: 0.002, bs: 128, ox: 1, bits: 2 },
    TableColumn { size: "M", k: 256, tau: 40.0, lr: 0.02, wd: 0.002, bs: 128, ox: 1, bits: 2 },
    TableColumn { size: "B", k: 512, tau: 280.0, lr: 0.02, wd: 0.002, bs: 128, ox: 2, bits: 5 },
    TableColumn { size: "L", k: 1024, tau: 340.0, lr: 0.02, wd: 0.002, bs: 128, ox: 2, bits: 5 },
    TableColumn { size: "G", k: 2048, tau: 450.0, lr: 0.02, wd: 0.001, bs: 128, ox: 1, bits: 5 },
];

const MNIST_TABLE: [TableColumn; 3] = [
    TableColumn { size: "S", k: 16, tau: 6.5, lr: 0.01, wd: 0.0, bs: 512, ox: 2, bits: 1 },
    TableColumn { size: "M", k: 64, tau: 28.0, lr: 0.01, wd: 0.0, bs: 256, ox: 2, bits: 1 },
    TableColumn { size: "L", k: 1024, tau: 35.0, lr: 0.01, wd: 0.0, bs: 128, ox: 1, bits: 1 },
];

fn conv(kernels: usize, receptive: usize, padding: usize, groups: usize) -> LayerSpec {
    LayerSpec::TreeConv {
        kernels,
        receptive: [receptive, receptive],
        depth: 3,
        padding,
        channel_restriction: Some(2),
        groups,
    }
}

/// Builds the CIFAR-10 or MNIST LogicTreeNet for a size tag (`S`, `M`, ...),
/// with table defaults that `overrides` may replace.
///
/// Without a size tag, `overrides.k` is required and the smallest model's
/// hyperparameters are used.
pub fn build_logictreenet(
    dataset: Dataset,
    size: Option<&str>,
    overrides: &Overrides,
) -> Result<ModelSpec, ModelError> {
    let table: &[TableColumn] = match dataset {
        Dataset::Mnist => &MNIST_TABLE,
        Dataset::Cifar10 => &CIFAR_TABLE,
        Dataset::Custom => {
            return Err(ModelError::Invalid("LogicTreeNet presets exist for mnist and cifar10".into()))
        }
    };
    let column = match size {
        Some(s) => table
            .iter()
            .find(|c| c.size.eq_ignore_ascii_case(s))
            .ok_or_else(|| ModelError::UnknownSize { dataset, size: s.to_string() })?,
        None if overrides.k.is_some() => &table[0],
        None => return Err(ModelError::MissingSize),
    };
    let k = overrides.k.unwrap_or(column.k);
    let ox = overrides.ox.unwrap_or(column.ox);
    let bits = overrides.input_bits.unwrap_or(column.bits);
    if k == 0 || ox == 0 || !(1..=8).contains(&bits) {
        return Err(ModelError::Invalid(format!("k={k}, ox={ox}, input bits={bits}")));
    }
    let groups = overrides.groups.unwrap_or((k / 8).max(1));
    let thresholds = (1usize << bits) - 1;

    let (input, mut layers, eval_interval, validation_size) = match dataset {
        Dataset::Cifar10 => {
            let input = Shape::new(3 * thresholds, 32, 32);
            let layers = vec![
                conv(k, 3, 1, 1),
                LayerSpec::OrPool,
                conv(4 * k, 3, 1, groups),
                LayerSpec::OrPool,
                conv(16 * k, 3, 1, groups),
                LayerSpec::OrPool,
                conv(32 * k, 3, 1, groups),
                LayerSpec::OrPool,
            ];
            (input, layers, 2000, 5000)
        }
        _ => {
            let input = Shape::new(thresholds, 28, 28);
            let layers = vec![
                conv(k, 5, 0, 1),
                LayerSpec::OrPool,
                conv(3 * k, 3, 1, groups),
                LayerSpec::OrPool,
                conv(9 * k, 3, 1, groups),
                LayerSpec::OrPool,
            ];
            (input, layers, 5000, 10_000)
        }
    };
    layers.extend([
        LayerSpec::Random { out: 1280 * k * ox },
        LayerSpec::Random { out: 640 * k * ox },
        LayerSpec::Random { out: 320 * k * ox },
    ]);

    let spec = ModelSpec {
        dataset,
        size: size.map(|s| s.to_ascii_uppercase()),
        k,
        ox,
        input_bits: bits,
        input,
        classes: 10,
        layers,
        hyper: Hyperparameters {
            tau: overrides.tau.unwrap_or(column.tau),
            learning_rate: overrides.learning_rate.unwrap_or(column.lr),
            weight_decay: overrides.weight_decay.unwrap_or(column.wd),
            batch_size: overrides.batch_size.unwrap_or(column.bs),
            eval_interval: overrides.eval_interval.unwrap_or(eval_interval),
            validation_size,
        },
    };
    spec.shapes()?;
    Ok(spec)
}

impl ModelSpec {
    /// Output shape after every layer; fails on inconsistent geometry.
    pub fn shapes(&self) -> Result<Vec<Shape>, ModelError> {
        let mut shape = self.input;
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            shape = match *layer {
                LayerSpec::TreeConv { kernels, receptive, padding, groups, depth, .. } => {
                    if depth == 0 {
                        return Err(ModelError::Invalid("tree depth 0".into()));
                    }
                    if groups == 0 || shape.channels % groups != 0 || kernels % groups != 0 {
                        return Err(LayerError::Groups { groups, what: "channel", count: shape.channels }.into());
                    }
                    let (h, w) = (shape.height + 2 * padding, shape.width + 2 * padding);
                    if h < receptive[0] || w < receptive[1] {
                        return Err(ModelError::Invalid(format!("receptive field too large for {shape:?}")));
                    }
                    Shape::new(kernels, h - receptive[0] + 1, w - receptive[1] + 1)
                }
                LayerSpec::OrPool => OrPool::new(shape)?.output_shape(),
                LayerSpec::Random { out } => {
                    if out == 0 {
                        return Err(ModelError::Invalid("empty random layer".into()));
                    }
                    Shape::flat(out)
                }
            };
            out.push(shape);
        }
        let last = out.last().copied().unwrap_or(self.input);
        if self.classes == 0 || last.len() % self.classes != 0 {
            return Err(ModelError::Invalid(format!(
                "final width {} not divisible by {} classes",
                last.len(),
                self.classes
            )));
        }
        Ok(out)
    }

    /// Width of the last layer.
    pub fn output_width(&self) -> usize {
        self.shapes().ok().and_then(|s| s.last().map(Shape::len)).unwrap_or(self.input.len())
    }

    pub fn outputs_per_class(&self) -> usize {
        self.output_width() / self.classes
    }

    /// Upper end of the attainable class score range.
    pub fn max_score(&self) -> f64 {
        self.outputs_per_class() as f64 / self.hyper.tau
    }

    /// Number of gate layers a signal passes through that carry parameters.
    pub fn trainable_depth(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                LayerSpec::TreeConv { depth, .. } => *depth,
                LayerSpec::Random { .. } => 1,
                LayerSpec::OrPool => 0,
            })
            .sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let spec: ModelSpec =
            serde_json::from_str(text).map_err(|e| ModelError::Invalid(e.to_string()))?;
        spec.shapes()?;
        Ok(spec)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CountMode {
    /// Learnable gate distributions.
    Trainable,
    /// Gates of the fully unrolled circuit, before any simplification.
    Hardware,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerCount {
    pub name: String,
    pub trainable: u64,
    pub hardware: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GateCountReport {
    pub trainable: u64,
    pub hardware: u64,
    pub layers: Vec<LayerCount>,
}

impl GateCountReport {
    pub fn total(&self, mode: CountMode) -> u64 {
        match mode {
            CountMode::Trainable => self.trainable,
            CountMode::Hardware => self.hardware,
        }
    }
}

/// Hardware gates spent per group-sum input by the popcount adder trees.
pub const ADDER_GATES_PER_OUTPUT: u64 = 7;

/// Counts gates layer by layer.
///
/// Hardware counts unroll every convolution placement (padded placements
/// included), charge three two-input ORs per pooled output and seven gates
/// per group-sum input for the adder trees.
pub fn count_gates(spec: &ModelSpec) -> Result<GateCountReport, ModelError> {
    let shapes = spec.shapes()?;
    let mut layers = Vec::new();
    let mut prev = spec.input;
    for (i, (layer, &shape)) in spec.layers.iter().zip(&shapes).enumerate() {
        let (name, trainable, hardware) = match *layer {
            LayerSpec::TreeConv { kernels, depth, .. } => {
                let per_tree = (1u64 << depth) - 1;
                let placements = (shape.height * shape.width) as u64;
                (format!("conv{i}"), kernels as u64 * per_tree, kernels as u64 * placements * per_tree)
            }
            LayerSpec::OrPool => (format!("pool{i}"), 0, 3 * shape.len() as u64),
            LayerSpec::Random { out } => (format!("random{i}"), out as u64, out as u64),
        };
        layers.push(LayerCount { name, trainable, hardware });
        prev = shape;
    }
    layers.push(LayerCount {
        name: "group_sum".into(),
        trainable: 0,
        hardware: ADDER_GATES_PER_OUTPUT * prev.len() as u64,
    });
    Ok(GateCountReport {
        trainable: layers.iter().map(|l| l.trainable).sum(),
        hardware: layers.iter().map(|l| l.hardware).sum(),
        layers,
    })
}

/// Gate logit initialization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum Init {
    /// Logit `strength` on the pass-through gate, zero elsewhere.
    Residual { strength: f64 },
    /// Independent standard normal logits.
    Gaussian,
}

impl Default for Init {
    fn default() -> Self {
        Init::Residual { strength: gates::RESIDUAL_STRENGTH }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Block {
    Conv(TreeConv),
    Pool(OrPool),
    ConvPool(ConvPool),
    Random(RandomLayer),
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkBlock {
    pub block: Block,
    pub input: Shape,
    pub output: Shape,
    /// First node of this block in the network's node list.
    pub node_offset: usize,
    pub nodes: usize,
}

impl NetworkBlock {
    pub fn name(&self, index: usize) -> String {
        match self.block {
            Block::Conv(_) => format!("conv{index}"),
            Block::Pool(_) => format!("pool{index}"),
            Block::ConvPool(_) => format!("convpool{index}"),
            Block::Random(_) => format!("random{index}"),
        }
    }

    fn is_pooling(&self) -> bool {
        matches!(self.block, Block::Pool(_) | Block::ConvPool(_))
    }
}

/// splitmix64 finalizer, used to derive per-layer seeds.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A spec with sampled connections and trainable logits (16 per node).
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    pub spec: ModelSpec,
    pub seed: u64,
    pub blocks: Vec<NetworkBlock>,
    pub head: GroupSum,
    pub logits: Vec<T>,
}

/// Per-sample activations kept between forward and backward.
#[derive(Clone, Debug)]
pub struct SampleBuffers<T> {
    acts: Vec<Vec<T>>,
    grads: Vec<Vec<T>>,
    indices: Vec<Vec<u8>>,
    scores: Vec<T>,
}

impl<T: Real> Network<T> {
    /// Builds a network with tree convolutions and their pooling fused.
    pub fn new(spec: ModelSpec, init: Init, seed: u64) -> Result<Self, ModelError> {
        Self::build(spec, init, seed, true)
    }

    /// `fuse = false` keeps every convolution and pooling layer separate.
    pub fn build(spec: ModelSpec, init: Init, seed: u64, fuse: bool) -> Result<Self, ModelError> {
        let shapes = spec.shapes()?;
        let mut blocks = Vec::new();
        let mut input = spec.input;
        let mut nodes = 0;
        let mut i = 0;
        while i < spec.layers.len() {
            let stream = i as u64;
            let (block, output, consumed) = match spec.layers[i] {
                LayerSpec::TreeConv { kernels, receptive, depth, padding, channel_restriction, groups } => {
                    let table = sample_connections(
                        mix_seed(seed, stream),
                        input.channels,
                        (receptive[0], receptive[1]),
                        kernels,
                        depth,
                        channel_restriction,
                        groups,
                    )?;
                    let conv = TreeConv::new(table, input, padding)?;
                    if fuse && matches!(spec.layers.get(i + 1), Some(LayerSpec::OrPool)) {
                        (Block::ConvPool(ConvPool::new(conv)?), shapes[i + 1], 2)
                    } else {
                        (Block::Conv(conv), shapes[i], 1)
                    }
                }
                LayerSpec::OrPool => (Block::Pool(OrPool::new(input)?), shapes[i], 1),
                LayerSpec::Random { out } => {
                    (Block::Random(RandomLayer::sample(mix_seed(seed, stream), input.len(), out)?), shapes[i], 1)
                }
            };
            let block_nodes = match &block {
                Block::Conv(c) => c.nodes(),
                Block::ConvPool(c) => c.nodes(),
                Block::Pool(_) => 0,
                Block::Random(r) => r.out_size(),
            };
            blocks.push(NetworkBlock { block, input, output, node_offset: nodes, nodes: block_nodes });
            nodes += block_nodes;
            input = output;
            i += consumed;
        }
        let head = GroupSum::new(spec.classes, spec.hyper.tau, input.len())?;
        let logits = init_logits(nodes, init, mix_seed(seed, u64::MAX));
        Ok(Network { spec, seed, blocks, head, logits })
    }

    pub fn nodes(&self) -> usize {
        self.logits.len() / 16
    }

    pub fn set_temperature(&mut self, tau: f64) -> Result<(), ModelError> {
        self.head = GroupSum::new(self.head.classes, tau, self.head.in_size)?;
        Ok(())
    }

    pub fn probabilities(&self) -> Vec<[T; 16]> {
        self.logits.chunks_exact(16).map(gates::softmax16).collect()
    }

    /// Relaxed mixture coefficients of every node.
    pub fn coefficients(&self) -> Vec<Coeffs<T>> {
        self.logits
            .chunks_exact(16)
            .map(|z| gates::mixture_coefficients(&gates::softmax16(z)))
            .collect()
    }

    /// Most probable gate per node (lowest index on ties).
    pub fn hard_gates(&self) -> Vec<Gate> {
        self.logits
            .chunks_exact(16)
            .map(|z| Gate::new(argmax_lowest(z) as u8).unwrap())
            .collect()
    }

    /// One-hot coefficients of [`Self::hard_gates`].
    pub fn hard_coefficients(&self) -> Vec<Coeffs<T>> {
        self.hard_gates()
            .into_iter()
            .map(|g| g.coefficients().map(|c| T::from_i8(c).unwrap()))
            .collect()
    }

    pub fn input_len(&self) -> usize {
        self.spec.input.len()
    }

    pub fn buffers(&self) -> SampleBuffers<T> {
        let mut acts = vec![vec![T::zero(); self.spec.input.len()]];
        let mut indices = Vec::new();
        for b in &self.blocks {
            acts.push(vec![T::zero(); b.output.len()]);
            indices.push(if b.is_pooling() { vec![0u8; b.output.len()] } else { Vec::new() });
        }
        SampleBuffers {
            grads: acts.clone(),
            acts,
            indices,
            scores: vec![T::zero(); self.head.classes],
        }
    }

    /// Forward pass for one sample. `densities`, if given, receives per block
    /// the summed pre-pool and post-pool activations (2 entries per block).
    pub fn forward_sample<'a>(
        &self,
        coeffs: &[Coeffs<T>],
        input: &[T],
        buf: &'a mut SampleBuffers<T>,
        mut densities: Option<&mut [f64]>,
    ) -> &'a [T] {
        buf.acts[0].copy_from_slice(input);
        for (bi, b) in self.blocks.iter().enumerate() {
            let (before, after) = buf.acts.split_at_mut(bi + 1);
            let x = &before[bi];
            let y = &mut after[0];
            let c = &coeffs[b.node_offset..b.node_offset + b.nodes];
            let mut pre = 0.0;
            match &b.block {
                Block::Conv(conv) => conv.forward(c, x, y),
                Block::Pool(pool) => {
                    pre = sum_f64(x);
                    pool.forward(x, y, &mut buf.indices[bi]);
                }
                Block::ConvPool(cp) => cp.forward(c, x, y, &mut buf.indices[bi], Some(&mut pre)),
                Block::Random(r) => r.forward(c, x, y),
            }
            if let Some(d) = densities.as_deref_mut() {
                if b.is_pooling() {
                    d[2 * bi] += pre;
                } else {
                    d[2 * bi] += sum_f64(y);
                }
                d[2 * bi + 1] += sum_f64(y);
            }
        }
        self.head.forward(buf.acts.last().unwrap(), &mut buf.scores);
        &buf.scores
    }

    /// Backward pass after [`Self::forward_sample`] on the same buffers.
    /// Coefficient gradients are added into `dcoeffs`.
    pub fn backward_sample(
        &self,
        coeffs: &[Coeffs<T>],
        buf: &mut SampleBuffers<T>,
        dscores: &[T],
        dcoeffs: &mut [Coeffs<T>],
    ) {
        let last = self.blocks.len();
        self.head.backward(dscores, &mut buf.grads[last]);
        for (bi, b) in self.blocks.iter().enumerate().rev() {
            let (gin, gout) = buf.grads.split_at_mut(bi + 1);
            let dx = &mut gin[bi];
            dx.iter_mut().for_each(|v| *v = T::zero());
            let up = &gout[0];
            let x = &buf.acts[bi];
            let range = b.node_offset..b.node_offset + b.nodes;
            let c = &coeffs[range.clone()];
            let dc = &mut dcoeffs[range];
            match &b.block {
                Block::Conv(conv) => conv.backward(c, x, up, dc, dx),
                Block::Pool(pool) => pool.backward(&buf.indices[bi], up, dx),
                Block::ConvPool(cp) => cp.backward(c, x, &buf.indices[bi], up, dc, dx),
                Block::Random(r) => r.backward(c, x, up, dc, dx),
            }
        }
    }

    /// Gradient with respect to the network input after a backward pass.
    pub fn input_gradient<'a>(&self, buf: &'a SampleBuffers<T>) -> &'a [T] {
        &buf.grads[0]
    }

    /// Class scores for one sample.
    pub fn forward(&self, coeffs: &[Coeffs<T>], input: &[T]) -> Vec<T> {
        let mut buf = self.buffers();
        self.forward_sample(coeffs, input, &mut buf, None).to_vec()
    }

    /// Trainable node ranges grouped by gate level, for per-layer statistics.
    ///
    /// Tree convolutions contribute one level per tree depth.
    pub fn node_layers(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (bi, b) in self.blocks.iter().enumerate() {
            let table = match &b.block {
                Block::Conv(c) => Some(&c.table),
                Block::ConvPool(c) => Some(&c.conv.table),
                Block::Random(_) => {
                    out.push((b.name(bi), (b.node_offset..b.node_offset + b.nodes).collect()));
                    None
                }
                Block::Pool(_) => None,
            };
            if let Some(t) = table {
                let per = t.nodes_per_kernel();
                let mut start = 0;
                for level in 0..t.depth {
                    let width = t.leaves() >> (level + 1);
                    let ids = (0..t.kernels)
                        .flat_map(|k| (start..start + width).map(move |j| b.node_offset + k * per + j))
                        .collect();
                    out.push((format!("{}.level{level}", b.name(bi)), ids));
                    start += width;
                }
            }
        }
        out
    }
}

fn sum_f64<T: Real>(v: &[T]) -> f64 {
    v.iter().map(|x| x.to_f64().unwrap()).sum()
}

pub fn init_logits<T: Real>(nodes: usize, init: Init, seed: u64) -> Vec<T> {
    match init {
        Init::Residual { strength } => {
            let mut z = vec![T::zero(); nodes * 16];
            for n in 0..nodes {
                z[n * 16 + Gate::A.index() as usize] = T::lit(strength);
            }
            z
        }
        Init::Gaussian => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..nodes * 16)
                .map(|_| {
                    let v: f64 = StandardNormal.sample(&mut rng);
                    T::lit(v)
                })
                .collect()
        }
    }
}
