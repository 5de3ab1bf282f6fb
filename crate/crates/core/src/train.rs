//! Loss, optimizer, the training loop and training-time diagnostics.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bitsim::{self, CompiledNet, PackedBatch};
use crate::data::BinaryEncodedSet;
use crate::discrete::discretize;
use crate::gates::{self, argmax_lowest};
use crate::layers::{Coeffs, RandomLayer};
use crate::model::{Block, Init, ModelError, ModelSpec, Network};
use crate::parallel::map_chunks;
use crate::Real;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("dataset shape {data} does not match model input {model}")]
    InputShape { data: usize, model: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("checkpoint {path}: {detail}")]
    Checkpoint { path: PathBuf, detail: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Cross entropy of `softmax(scores)` against `label`, with its
/// gradient `softmax(scores) - onehot(label)`.
pub fn softmax_cross_entropy<T: Real>(scores: &[T], label: usize) -> (T, Vec<T>) {
    let max = scores.iter().fold(T::neg_infinity(), |m, &s| m.max(s));
    let exps: Vec<T> = scores.iter().map(|&s| (s - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    let loss = sum.ln() - (scores[label] - max);
    let mut grad: Vec<T> = exps.iter().map(|&e| e / sum).collect();
    grad[label] = grad[label] - T::one();
    (loss, grad)
}

/// AdamW with decoupled weight decay and bias-corrected moments.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub t: u64,
}

impl AdamW {
    pub fn new(params: usize) -> Self {
        AdamW { beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; params], v: vec![0.0; params], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f32], grads: &[f32], lr: f64, weight_decay: f64) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let step = (lr / c1) as f32;
        let c2s = c2.sqrt() as f32;
        let decay = (1.0 - lr * weight_decay) as f32;
        let eps = self.eps as f32;
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *p *= decay;
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= step * *m / (v.sqrt() / c2s + eps);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub tau: f64,
    pub steps: usize,
    pub eval_interval: usize,
    pub seed: u64,
    /// Samples per work unit; results do not depend on the thread count.
    pub chunk: usize,
    /// Validation samples used for the activation-density columns.
    pub density_samples: usize,
}

impl TrainConfig {
    /// Defaults carried by the `ModelSpec`.
    pub fn from_spec(spec: &ModelSpec, steps: usize, seed: u64) -> Self {
        TrainConfig {
            learning_rate: spec.hyper.learning_rate,
            weight_decay: spec.hyper.weight_decay,
            batch_size: spec.hyper.batch_size,
            tau: spec.hyper.tau,
            steps,
            eval_interval: spec.hyper.eval_interval,
            seed,
            chunk: 32,
            density_samples: 256,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(self.tau > 0.0) {
            return bad("temperature must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight decay must be nonnegative");
        }
        if self.batch_size == 0 || self.eval_interval == 0 || self.chunk == 0 {
            return bad("batch size, eval interval and chunk must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc_soft: f64,
    pub val_acc_hard: f64,
    /// Mean activation per block, pre and post pooling.
    pub densities: Vec<(String, f64, f64)>,
}

impl MetricsRow {
    pub fn csv_header(&self) -> String {
        let mut h = String::from("step,train_loss,train_acc,val_acc_soft,val_acc_hard");
        for (name, _, _) in &self.densities {
            h.push_str(&format!(",{name}_pre,{name}_post"));
        }
        h
    }

    pub fn csv_line(&self) -> String {
        let mut s = format!(
            "{},{:.6},{:.6},{:.6},{:.6}",
            self.step, self.train_loss, self.train_acc, self.val_acc_soft, self.val_acc_hard
        );
        for (_, pre, post) in &self.densities {
            s.push_str(&format!(",{pre:.6},{post:.6}"));
        }
        s
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::new();
    if let Some(first) = rows.first() {
        s.push_str(&first.csv_header());
        s.push('\n');
    }
    for r in rows {
        s.push_str(&r.csv_line());
        s.push('\n');
    }
    s
}

/// Outcome of [`fit`]; `net` holds the best-validation parameters.
#[derive(Clone, Debug)]
pub struct FitReport {
    pub net: Network<f32>,
    pub best_step: usize,
    pub best_val_acc: f64,
    /// Best validation accuracy retained after each evaluation.
    pub best_trace: Vec<f64>,
    pub rows: Vec<MetricsRow>,
    pub last_logits: Vec<f32>,
}

fn sample_input(set: &BinaryEncodedSet, n: usize, out: &mut [f32]) {
    for (o, &b) in out.iter_mut().zip(set.sample(n)) {
        *o = b as f32;
    }
}

struct ChunkGrad {
    dcoeffs: Vec<Coeffs<f32>>,
    loss: f64,
    correct: usize,
}

fn batch_gradient(net: &Network<f32>, coeffs: &[Coeffs<f32>], set: &BinaryEncodedSet, batch: &[usize], chunk: usize) -> ChunkGrad {
    let parts = map_chunks(batch, chunk, |_, ids| {
        let mut buf = net.buffers();
        let mut input = vec![0.0f32; net.input_len()];
        let mut g = ChunkGrad { dcoeffs: vec![[0.0; 4]; coeffs.len()], loss: 0.0, correct: 0 };
        for &n in ids {
            sample_input(set, n, &mut input);
            let scores = net.forward_sample(coeffs, &input, &mut buf, None).to_vec();
            let label = set.labels[n] as usize;
            let (loss, dscores) = softmax_cross_entropy(&scores, label);
            g.loss += loss as f64;
            g.correct += (argmax_lowest(&scores) == label) as usize;
            net.backward_sample(coeffs, &mut buf, &dscores, &mut g.dcoeffs);
        }
        g
    });
    let mut total = ChunkGrad { dcoeffs: vec![[0.0; 4]; coeffs.len()], loss: 0.0, correct: 0 };
    for p in parts {
        for (t, d) in total.dcoeffs.iter_mut().zip(&p.dcoeffs) {
            for k in 0..4 {
                t[k] += d[k];
            }
        }
        total.loss += p.loss;
        total.correct += p.correct;
    }
    total
}

/// Relaxed-forward accuracy (argmax of class scores, lowest on ties).
pub fn soft_accuracy<T: Real>(net: &Network<T>, set: &BinaryEncodedSet) -> f64 {
    if set.is_empty() {
        return 0.0;
    }
    let coeffs = net.coefficients();
    let ids: Vec<usize> = (0..set.len()).collect();
    let correct: usize = map_chunks(&ids, 64, |_, ids| {
        let mut buf = net.buffers();
        let mut input = vec![T::zero(); net.input_len()];
        ids.iter()
            .filter(|&&n| {
                for (o, &b) in input.iter_mut().zip(set.sample(n)) {
                    *o = T::lit(b as f64);
                }
                argmax_lowest(net.forward_sample(&coeffs, &input, &mut buf, None)) == set.labels[n] as usize
            })
            .count()
    })
    .into_iter()
    .sum();
    correct as f64 / set.len() as f64
}

/// Accuracy of the discretized network, evaluated bit-parallel.
pub fn hard_accuracy<T: Real>(net: &Network<T>, set: &BinaryEncodedSet) -> f64 {
    if set.is_empty() {
        return 0.0;
    }
    let compiled = CompiledNet::new(&discretize(net)).expect("discretized nets are valid");
    let batch = PackedBatch::from_bits(&set.bits, set.shape.len());
    bitsim::accuracy(&compiled, &batch, &set.labels).expect("widths checked by caller")
}

/// Mean activation per block over `inputs`, before and after pooling; blocks
/// without pooling report the same value twice.
pub fn activation_stats<T: Real>(net: &Network<T>, inputs: &[Vec<T>]) -> Vec<(String, f64, f64)> {
    let coeffs = net.coefficients();
    let mut sums = vec![0.0f64; 2 * net.blocks.len()];
    let mut buf = net.buffers();
    for x in inputs {
        net.forward_sample(&coeffs, x, &mut buf, Some(&mut sums));
    }
    let n = inputs.len().max(1) as f64;
    net.blocks
        .iter()
        .enumerate()
        .map(|(bi, b)| {
            let pre_len = match &b.block {
                Block::ConvPool(cp) => cp.conv.output_shape().len(),
                Block::Pool(_) => b.input.len(),
                _ => b.output.len(),
            };
            (b.name(bi), sums[2 * bi] / (n * pre_len as f64), sums[2 * bi + 1] / (n * b.output.len() as f64))
        })
        .collect()
}

/// `block,pre_pool,post_pool,no_pool_reference` CSV.
pub fn activation_csv(stats: &[(String, f64, f64)]) -> String {
    let mut s = String::from("block,pre_pool,post_pool,no_pool_reference\n");
    for (name, pre, post) in stats {
        s.push_str(&format!("{name},{pre:.6},{post:.6},0.5\n"));
    }
    s
}

fn densities(net: &Network<f32>, set: &BinaryEncodedSet, limit: usize) -> Vec<(String, f64, f64)> {
    let inputs: Vec<Vec<f32>> = (0..set.len().min(limit))
        .map(|n| set.sample(n).iter().map(|&b| b as f32).collect())
        .collect();
    activation_stats(net, &inputs)
}

/// Loss and hits of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    /// Mean loss over the batch, before the update.
    pub loss: f64,
    pub correct: usize,
}

/// One AdamW step on the samples `batch` of `set`.
pub fn train_step(
    net: &mut Network<f32>,
    opt: &mut AdamW,
    set: &BinaryEncodedSet,
    batch: &[usize],
    cfg: &TrainConfig,
) -> Result<StepStats, TrainError> {
    let probs = net.probabilities();
    let coeffs: Vec<Coeffs<f32>> = probs.iter().map(gates::mixture_coefficients).collect();
    let g = batch_gradient(net, &coeffs, set, batch, cfg.chunk);
    if !g.loss.is_finite() {
        return Err(TrainError::Diverged {
            step: opt.t as usize + 1,
            detail: format!("batch loss {} (max |logit| {:.3e})", g.loss, max_abs(&net.logits)),
        });
    }
    let scale = 1.0 / batch.len() as f32;
    let mut grads = vec![0.0f32; net.logits.len()];
    for ((gz, p), dc) in grads.chunks_exact_mut(16).zip(&probs).zip(&g.dcoeffs) {
        gz.copy_from_slice(&gates::logit_gradient(p, &dc.map(|v| v * scale)));
    }
    opt.step(&mut net.logits, &grads, cfg.learning_rate, cfg.weight_decay);
    Ok(StepStats { loss: g.loss / batch.len() as f64, correct: g.correct })
}

/// Trains with shuffled mini-batches; every `eval_interval` steps (and at the
/// end) scores the discretized model on `val` and keeps the best parameters.
pub fn fit(net: Network<f32>, train: &BinaryEncodedSet, val: &BinaryEncodedSet, cfg: &TrainConfig) -> Result<FitReport, TrainError> {
    fit_with(net, train, val, cfg, &mut |_| {})
}

/// [`fit`] with a callback receiving each metrics row as it is produced.
pub fn fit_with(
    mut net: Network<f32>,
    train: &BinaryEncodedSet,
    val: &BinaryEncodedSet,
    cfg: &TrainConfig,
    observe: &mut dyn FnMut(&MetricsRow),
) -> Result<FitReport, TrainError> {
    cfg.validate()?;
    for set in [train, val] {
        if set.shape.len() != net.input_len() {
            return Err(TrainError::InputShape { data: set.shape.len(), model: net.input_len() });
        }
    }
    if train.is_empty() {
        return Err(TrainError::Config("empty training set".into()));
    }
    net.set_temperature(cfg.tau)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut opt = AdamW::new(net.logits.len());
    let mut report = FitReport {
        net: net.clone(),
        best_step: 0,
        best_val_acc: f64::NEG_INFINITY,
        best_trace: Vec::new(),
        rows: Vec::new(),
        last_logits: Vec::new(),
    };
    let (mut loss_sum, mut correct, mut seen) = (0.0f64, 0usize, 0usize);
    for step in 1..=cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let take = (cfg.batch_size - batch.len()).min(order.len() - cursor);
            batch.extend_from_slice(&order[cursor..cursor + take]);
            cursor += take;
        }
        let g = train_step(&mut net, &mut opt, train, &batch, cfg)?;
        loss_sum += g.loss * batch.len() as f64;
        correct += g.correct;
        seen += batch.len();
        if step % cfg.eval_interval == 0 || step == cfg.steps {
            let val_acc_hard = hard_accuracy(&net, val);
            let row = MetricsRow {
                step,
                train_loss: loss_sum / seen as f64,
                train_acc: correct as f64 / seen as f64,
                val_acc_soft: soft_accuracy(&net, val),
                val_acc_hard,
                densities: densities(&net, val, cfg.density_samples),
            };
            if val_acc_hard > report.best_val_acc {
                report.best_val_acc = val_acc_hard;
                report.best_step = step;
                report.net.logits.copy_from_slice(&net.logits);
            }
            report.best_trace.push(report.best_val_acc);
            observe(&row);
            report.rows.push(row);
            (loss_sum, correct, seen) = (0.0, 0, 0);
        }
    }
    report.last_logits = net.logits;
    Ok(report)
}

fn max_abs(v: &[f32]) -> f32 {
    v.iter().fold(0.0f32, |m, x| m.max(x.abs()))
}

/// Streams metrics rows to a CSV file, writing the header with the first row.
pub struct MetricsWriter {
    path: PathBuf,
    file: std::io::BufWriter<std::fs::File>,
    wrote_header: bool,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self, TrainError> {
        let file = std::fs::File::create(path).map_err(|source| TrainError::Io { path: path.to_path_buf(), source })?;
        Ok(MetricsWriter { path: path.to_path_buf(), file: std::io::BufWriter::new(file), wrote_header: false })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<(), TrainError> {
        let io = |source| TrainError::Io { path: self.path.clone(), source };
        if !self.wrote_header {
            writeln!(self.file, "{}", row.csv_header()).map_err(io)?;
            self.wrote_header = true;
        }
        writeln!(self.file, "{}", row.csv_line()).map_err(io)?;
        self.file.flush().map_err(io)
    }
}

/// Per-layer gradient attenuation through a stack of random gate layers.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientDecay {
    /// Mean `|d out / d in|` over nodes, both inputs and samples, per layer.
    pub local: Vec<f64>,
    /// `||grad in|| / ||grad out||` per layer under a random upstream.
    pub norm_ratio: Vec<f64>,
}

impl GradientDecay {
    pub fn mean_local(&self) -> f64 {
        self.local.iter().sum::<f64>() / self.local.len().max(1) as f64
    }

    pub fn mean_norm_ratio(&self) -> f64 {
        self.norm_ratio.iter().sum::<f64>() / self.norm_ratio.len().max(1) as f64
    }
}

/// Measures gradient attenuation on `layers` random layers of `width` nodes
/// with inputs drawn uniformly from `[0, 1]`.
pub fn gradient_decay(layers: usize, width: usize, samples: usize, init: Init, seed: u64) -> GradientDecay {
    let stack: Vec<RandomLayer> = (0..layers)
        .map(|l| RandomLayer::sample(crate::model::mix_seed(seed, l as u64), width, width).expect("width >= 2"))
        .collect();
    let logits: Vec<f64> = crate::model::init_logits(layers * width, init, crate::model::mix_seed(seed, u64::MAX));
    let coeffs: Vec<Coeffs<f64>> = logits
        .chunks_exact(16)
        .map(|z| gates::mixture_coefficients(&gates::softmax16(z)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(crate::model::mix_seed(seed, 1 << 40));
    let mut local = vec![0.0; layers];
    let mut sq_in = vec![0.0; layers];
    let mut sq_out = vec![0.0; layers];
    for _ in 0..samples {
        let mut acts = vec![(0..width).map(|_| rng.random::<f64>()).collect::<Vec<f64>>()];
        for (l, layer) in stack.iter().enumerate() {
            let c = &coeffs[l * width..(l + 1) * width];
            let mut y = vec![0.0; width];
            layer.forward(c, acts.last().unwrap(), &mut y);
            let x = acts.last().unwrap();
            for (node, p) in layer.pairs.iter().enumerate() {
                let [c0, c1, c2, c3] = c[node];
                let _ = c0;
                let (a, b) = (x[p[0] as usize], x[p[1] as usize]);
                local[l] += (c1 + c3 * b).abs() + (c2 + c3 * a).abs();
            }
            acts.push(y);
        }
        let mut up: Vec<f64> = (0..width).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        for l in (0..layers).rev() {
            let c = &coeffs[l * width..(l + 1) * width];
            let mut dc = vec![[0.0; 4]; width];
            let mut dx = vec![0.0; width];
            stack[l].backward(c, &acts[l], &up, &mut dc, &mut dx);
            sq_out[l] += up.iter().map(|v| v * v).sum::<f64>();
            sq_in[l] += dx.iter().map(|v| v * v).sum::<f64>();
            up = dx;
            // Renormalize so deep stacks do not underflow; ratios are unaffected.
            let norm = up.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
            let target = (width as f64 / 3.0).sqrt();
            up.iter_mut().for_each(|v| *v *= target / norm);
        }
    }
    let denom = (2 * width * samples) as f64;
    GradientDecay {
        local: local.iter().map(|s| s / denom).collect(),
        norm_ratio: sq_in.iter().zip(&sq_out).map(|(i, o)| (i / o).sqrt()).collect(),
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// JSON half of a checkpoint. Connection tables are not stored: they are
/// regenerated from `spec` and `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub spec: ModelSpec,
    pub config: Option<TrainConfig>,
    pub seed: u64,
    pub step: usize,
    pub params: String,
    pub param_count: usize,
}

/// Writes `<path>` (manifest) and `<path>.bin` (little-endian f32 logits).
pub fn save_checkpoint(path: &Path, net: &Network<f32>, config: Option<&TrainConfig>, step: usize) -> Result<(), TrainError> {
    let bin = bin_path(path);
    let manifest = CheckpointManifest {
        version: CHECKPOINT_VERSION,
        spec: net.spec.clone(),
        config: config.cloned(),
        seed: net.seed,
        step,
        params: bin.file_name().unwrap().to_string_lossy().into_owned(),
        param_count: net.logits.len(),
    };
    let bytes: Vec<u8> = net.logits.iter().flat_map(|v| v.to_le_bytes()).collect();
    let write = |p: &Path, data: &[u8]| {
        std::fs::write(p, data).map_err(|source| TrainError::Io { path: p.to_path_buf(), source })
    };
    write(&bin, &bytes)?;
    write(path, serde_json::to_string_pretty(&manifest).unwrap().as_bytes())?;
    Ok(())
}

fn bin_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".bin");
    path.with_file_name(name)
}

pub fn load_checkpoint(path: &Path) -> Result<(Network<f32>, CheckpointManifest), TrainError> {
    let fail = |detail: String| TrainError::Checkpoint { path: path.to_path_buf(), detail };
    let text = std::fs::read_to_string(path).map_err(|source| TrainError::Io { path: path.to_path_buf(), source })?;
    let m: CheckpointManifest = serde_json::from_str(&text).map_err(|e| fail(e.to_string()))?;
    if m.version != CHECKPOINT_VERSION {
        return Err(fail(format!("unsupported version {}", m.version)));
    }
    let bin = path.with_file_name(&m.params);
    let bytes = std::fs::read(&bin).map_err(|source| TrainError::Io { path: bin.clone(), source })?;
    if bytes.len() != 4 * m.param_count {
        return Err(fail(format!("parameter blob has {} bytes, expected {}", bytes.len(), 4 * m.param_count)));
    }
    let mut net = Network::new(m.spec.clone(), Init::default(), m.seed)?;
    if net.logits.len() != m.param_count {
        return Err(fail(format!("spec has {} parameters, blob {}", net.logits.len(), m.param_count)));
    }
    for (p, b) in net.logits.iter_mut().zip(bytes.chunks_exact(4)) {
        *p = f32::from_le_bytes(b.try_into().unwrap());
    }
    Ok((net, m))
}
