//! Bit-parallel evaluation of hard nets: lane `s` of every `u64` word carries
//! sample `s` of a 64-sample block.

use std::time::Instant;

use thiserror::Error;

use crate::discrete::{HardNet, NetError, Ref};
use crate::gates::Gate;

#[derive(Debug, Error, PartialEq)]
pub enum BitsimError {
    #[error("sample {sample} has {got} inputs, expected {expected}")]
    Width { sample: usize, expected: usize, got: usize },
    #[error("net has {net} inputs but the batch has {batch}")]
    BatchWidth { net: usize, batch: usize },
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Inputs packed 64 samples per word. Block `b` occupies
/// `words[b * num_inputs..(b + 1) * num_inputs]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackedBatch {
    pub num_inputs: usize,
    pub samples: usize,
    pub words: Vec<u64>,
}

impl PackedBatch {
    pub fn blocks(&self) -> usize {
        self.samples.div_ceil(64)
    }

    /// Valid lanes of block `b`.
    pub fn lane_mask(&self, b: usize) -> u64 {
        let n = (self.samples - 64 * b).min(64);
        if n == 64 {
            u64::MAX
        } else {
            (1u64 << n) - 1
        }
    }

    pub fn block(&self, b: usize) -> &[u64] {
        &self.words[b * self.num_inputs..(b + 1) * self.num_inputs]
    }

    /// Packs row-major `0/1` bytes, `width` per sample.
    pub fn from_bits(bits: &[u8], width: usize) -> Self {
        assert!(width > 0 && bits.len() % width == 0, "bits must hold whole samples");
        let samples = bits.len() / width;
        let mut words = vec![0u64; samples.div_ceil(64) * width];
        for (s, row) in bits.chunks_exact(width).enumerate() {
            let base = (s / 64) * width;
            let lane = 1u64 << (s % 64);
            for (i, &v) in row.iter().enumerate() {
                if v != 0 {
                    words[base + i] |= lane;
                }
            }
        }
        PackedBatch { num_inputs: width, samples, words }
    }

    /// Sample `s` as booleans.
    pub fn unpack(&self, s: usize) -> Vec<bool> {
        let block = self.block(s / 64);
        block.iter().map(|w| (w >> (s % 64)) & 1 == 1).collect()
    }
}

pub fn pack_inputs<S: AsRef<[bool]>>(rows: &[S]) -> Result<PackedBatch, BitsimError> {
    let width = rows.first().map_or(0, |r| r.as_ref().len());
    if width == 0 {
        return Err(NetError::EmptyInput.into());
    }
    let mut words = vec![0u64; rows.len().div_ceil(64) * width];
    for (s, row) in rows.iter().enumerate() {
        let row = row.as_ref();
        if row.len() != width {
            return Err(BitsimError::Width { sample: s, expected: width, got: row.len() });
        }
        let base = (s / 64) * width;
        for (i, &v) in row.iter().enumerate() {
            words[base + i] |= (v as u64) << (s % 64);
        }
    }
    Ok(PackedBatch { num_inputs: width, samples: rows.len(), words })
}

#[derive(Clone, Copy, Debug)]
struct Op {
    gate: Gate,
    a: u32,
    b: u32,
}

/// A hard net flattened onto a word arena laid out as
/// `[const 0, const 1, inputs.., nodes..]`.
#[derive(Clone, Debug)]
pub struct CompiledNet {
    num_inputs: usize,
    ops: Vec<Op>,
    outputs: Vec<Vec<u32>>,
}

impl CompiledNet {
    pub fn new(net: &HardNet) -> Result<Self, BitsimError> {
        net.validate()?;
        let slot = |r: Ref| match r {
            Ref::Const(v) => v as u32,
            Ref::Input(i) => 2 + i,
            Ref::Node(n) => 2 + net.num_inputs as u32 + n,
        };
        Ok(CompiledNet {
            num_inputs: net.num_inputs,
            ops: net
                .nodes
                .iter()
                .map(|n| Op { gate: n.gate, a: slot(n.inputs[0]), b: slot(n.inputs[1]) })
                .collect(),
            outputs: net.outputs.iter().map(|g| g.iter().map(|&r| slot(r)).collect()).collect(),
        })
    }

    pub fn gates(&self) -> usize {
        self.ops.len()
    }

    pub fn classes(&self) -> usize {
        self.outputs.len()
    }

    fn arena_len(&self) -> usize {
        2 + self.num_inputs + self.ops.len()
    }

    /// Evaluates one 64-sample block; `arena` is scratch of any length.
    fn eval_block(&self, inputs: &[u64], arena: &mut Vec<u64>) {
        arena.clear();
        arena.reserve(self.arena_len());
        arena.push(0);
        arena.push(u64::MAX);
        arena.extend_from_slice(inputs);
        for op in &self.ops {
            let v = op.gate.eval_word(arena[op.a as usize], arena[op.b as usize]);
            arena.push(v);
        }
    }

    /// Per-sample class scores of one evaluated block, `classes` per lane.
    fn block_scores(&self, arena: &[u64], lanes: usize, scores: &mut Vec<u32>) {
        let classes = self.classes();
        let base = scores.len();
        scores.resize(base + lanes * classes, 0);
        let mut tile = [0u64; 64];
        for (c, group) in self.outputs.iter().enumerate() {
            for chunk in group.chunks(64) {
                tile.fill(0);
                for (t, &slot) in tile.iter_mut().zip(chunk) {
                    *t = arena[slot as usize];
                }
                transpose64(&mut tile);
                for (lane, row) in tile.iter().take(lanes).enumerate() {
                    scores[base + lane * classes + c] += row.count_ones();
                }
            }
        }
    }
}

/// In-place transpose of a 64x64 bit matrix: afterwards bit `j` of word `i`
/// is what bit `i` of word `j` was.
pub fn transpose64(m: &mut [u64; 64]) {
    let mut width = 32;
    let mut mask: u64 = 0x0000_0000_FFFF_FFFF;
    while width != 0 {
        let mut k = 0;
        while k < 64 {
            for i in k..k + width {
                let t = ((m[i] >> width) ^ m[i + width]) & mask;
                m[i] ^= t << width;
                m[i + width] ^= t;
            }
            k += 2 * width;
        }
        width >>= 1;
        mask ^= mask << width;
    }
}

/// Class scores for every sample, row-major `samples x classes`.
pub fn eval_packed(net: &CompiledNet, batch: &PackedBatch) -> Result<Vec<u32>, BitsimError> {
    if batch.num_inputs != net.num_inputs {
        return Err(BitsimError::BatchWidth { net: net.num_inputs, batch: batch.num_inputs });
    }
    let blocks: Vec<usize> = (0..batch.blocks()).collect();
    // A few blocks per task keeps the arena warm without starving threads.
    let parts = crate::parallel::map_chunks(&blocks, 4, |_, ids| {
        let mut arena = Vec::new();
        let mut scores = Vec::new();
        for &b in ids {
            net.eval_block(batch.block(b), &mut arena);
            let lanes = (batch.samples - 64 * b).min(64);
            net.block_scores(&arena, lanes, &mut scores);
        }
        scores
    });
    Ok(parts.concat())
}

/// Index of the largest score, lowest class on ties.
pub fn predict(scores: &[u32]) -> usize {
    crate::gates::argmax_lowest(scores)
}

/// Fraction of samples whose predicted class equals the label.
pub fn accuracy(net: &CompiledNet, batch: &PackedBatch, labels: &[u8]) -> Result<f64, BitsimError> {
    let scores = eval_packed(net, batch)?;
    let classes = net.classes().max(1);
    let correct = scores
        .chunks_exact(classes)
        .zip(labels)
        .filter(|(s, &y)| predict(s) == y as usize)
        .count();
    Ok(correct as f64 / batch.samples.max(1) as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchResult {
    pub net: String,
    pub gates: usize,
    pub samples: usize,
    pub threads: usize,
    pub seconds: f64,
    pub samples_per_s: f64,
}

pub const BENCH_CSV_HEADER: &str = "net,gates,samples,threads,seconds,samples_per_s";

impl BenchResult {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.6},{:.1}",
            self.net, self.gates, self.samples, self.threads, self.seconds, self.samples_per_s
        )
    }
}

/// Times `repeats` full passes over `batch`; reports the fastest.
pub fn bench(
    name: &str,
    net: &CompiledNet,
    batch: &PackedBatch,
    threads: usize,
    repeats: usize,
) -> Result<BenchResult, BitsimError> {
    let mut best = f64::INFINITY;
    for _ in 0..repeats.max(1) {
        let t = Instant::now();
        let scores = crate::parallel::with_threads(threads, || eval_packed(net, batch))?;
        std::hint::black_box(&scores);
        best = best.min(t.elapsed().as_secs_f64());
    }
    Ok(BenchResult {
        net: name.to_string(),
        gates: net.gates(),
        samples: batch.samples,
        threads,
        seconds: best,
        samples_per_s: batch.samples as f64 / best.max(1e-12),
    })
}
