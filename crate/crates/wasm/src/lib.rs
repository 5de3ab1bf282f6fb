//! wasm-bindgen exports for the static demo page in `www/`.

use logictree::data::{motif_dataset, BinaryEncodedSet};
use logictree::discrete::{discretize, simplify};
use logictree::gates::{mixture_coefficients, softmax16};
use logictree::layers::Shape;
use logictree::model::{Hyperparameters, Init, LayerSpec, ModelSpec};
use logictree::train::{self, AdamW, TrainConfig};
use logictree::{Dataset, Network};
use serde_json::json;
use wasm_bindgen::prelude::*;

/// Relaxed value of the gate mixture given by 16 logits on a
/// `resolution x resolution` grid over `[0, 1]^2`, row-major with `a` along
/// rows. Returns the grid followed by the 16 gate probabilities.
#[wasm_bindgen]
pub fn mixture_heatmap(logits: &[f64], resolution: usize) -> Result<Vec<f64>, JsError> {
    if logits.len() != 16 {
        return Err(JsError::new("expected 16 logits"));
    }
    if !(2..=512).contains(&resolution) {
        return Err(JsError::new("resolution must be in 2..=512"));
    }
    let p = softmax16(logits);
    let [c0, c1, c2, c3] = mixture_coefficients(&p);
    let step = 1.0 / (resolution - 1) as f64;
    let mut out = Vec::with_capacity(resolution * resolution + 16);
    for i in 0..resolution {
        let a = i as f64 * step;
        for j in 0..resolution {
            let b = j as f64 * step;
            out.push(c0 + c1 * a + c2 * b + c3 * a * b);
        }
    }
    out.extend_from_slice(&p);
    Ok(out)
}

/// Gradient norm reaching each layer of a random gate stack, relative to
/// the output layer (index 0 = output, 1.0).
#[wasm_bindgen]
pub fn gradient_decay_curve(init: &str, layers: usize, width: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    let init = match init {
        "gaussian" => Init::Gaussian,
        "residual" => Init::default(),
        other => return Err(JsError::new(&format!("unknown init {other:?}"))),
    };
    if !(1..=64).contains(&layers) || !(2..=4096).contains(&width) {
        return Err(JsError::new("layers must be in 1..=64 and width in 2..=4096"));
    }
    let d = train::gradient_decay(layers, width, 16, init, seed);
    let mut curve = vec![1.0];
    for r in d.norm_ratio.iter().rev() {
        curve.push(curve.last().unwrap() * r);
    }
    Ok(curve)
}

/// One-block tree-convolution network trained step by step on the generated
/// 8x8 three-motif task.
#[wasm_bindgen]
pub struct MotifDemo {
    net: Network<f32>,
    opt: AdamW,
    train: BinaryEncodedSet,
    test: BinaryEncodedSet,
    cfg: TrainConfig,
    step: usize,
}

fn motif_spec() -> ModelSpec {
    ModelSpec {
        dataset: Dataset::Custom,
        size: None,
        k: 16,
        ox: 1,
        input_bits: 1,
        input: Shape::new(1, 8, 8),
        classes: 3,
        layers: vec![
            LayerSpec::TreeConv { kernels: 16, receptive: [3, 3], depth: 2, padding: 1, channel_restriction: None, groups: 1 },
            LayerSpec::OrPool,
            LayerSpec::Random { out: 600 },
            LayerSpec::Random { out: 300 },
        ],
        hyper: Hyperparameters {
            tau: 10.0,
            learning_rate: 0.05,
            weight_decay: 0.0,
            batch_size: 32,
            eval_interval: 100,
            validation_size: 0,
        },
    }
}

#[wasm_bindgen]
impl MotifDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64) -> Result<MotifDemo, JsError> {
        let spec = motif_spec();
        let net = Network::new(spec.clone(), Init::default(), seed).map_err(|e| JsError::new(&e.to_string()))?;
        let cfg = TrainConfig { chunk: 32, ..TrainConfig::from_spec(&spec, 0, seed) };
        Ok(MotifDemo {
            opt: AdamW::new(net.logits.len()),
            net,
            train: motif_dataset(1500, 1, seed),
            test: motif_dataset(300, 1, seed ^ 0x5eed),
            cfg,
            step: 0,
        })
    }

    /// Runs `steps` optimizer steps; returns the mean training loss.
    pub fn train(&mut self, steps: usize) -> f64 {
        let mut total = 0.0;
        for _ in 0..steps {
            let start = (self.step * self.cfg.batch_size) % self.train.len();
            let batch: Vec<usize> = (0..self.cfg.batch_size).map(|i| (start + i) % self.train.len()).collect();
            if let Ok(s) = train::train_step(&mut self.net, &mut self.opt, &self.train, &batch, &self.cfg) {
                total += s.loss;
            }
            self.step += 1;
        }
        total / steps.max(1) as f64
    }

    pub fn step(&self) -> usize {
        self.step
    }

    /// JSON: relaxed and discretized test accuracy, gate counts before and
    /// after simplification, logic depth and the gate histogram.
    pub fn stats(&self) -> String {
        let hard = discretize(&self.net);
        let simple = simplify(&hard);
        json!({
            "step": self.step,
            "soft_acc": train::soft_accuracy(&self.net, &self.test),
            "hard_acc": train::hard_accuracy(&self.net, &self.test),
            "gates_before": hard.gate_count(),
            "gates_after": simple.stats.gates,
            "depth": simple.stats.depth,
            "histogram": simple.stats.histogram,
        })
        .to_string()
    }

    /// A random 8x8 test image (64 bytes) followed by its label.
    pub fn sample(&self, index: usize) -> Vec<u8> {
        let n = index % self.test.len();
        let mut v = self.test.sample(n).to_vec();
        v.push(self.test.labels[n]);
        v
    }

    /// Discretized class scores for a 64-byte image.
    pub fn classify(&self, image: &[u8]) -> Result<Vec<u32>, JsError> {
        let bits: Vec<bool> = image.iter().map(|&b| b != 0).collect();
        logictree::discrete::eval_discrete(&discretize(&self.net), &bits).map_err(|e| JsError::new(&e.to_string()))
    }
}
