//! Relaxed layers: logic-tree convolution, `or` pooling, randomly connected
//! gate layers and the GroupSum head.
//!
//! Layers hold structure only (wiring and geometry). Gate parameters are
//! passed in as per-node mixture coefficients `[c0, c1, c2, c3]`, and
//! parameter gradients come back as per-node coefficient gradients; the
//! conversion to and from softmax logits happens once per step in the model.
//!
//! All activations are channel-major `(m, h, w)` slices for a single sample.

use std::borrow::Cow;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Real;

pub type Coeffs<T> = [T; 4];

#[derive(Debug, Error, PartialEq)]
pub enum LayerError {
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Shape, got: Shape },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("spatial size {height}x{width} is not divisible by the 2x2 pooling window")]
    NotPoolable { height: usize, width: usize },
    #[error("input index {index} out of range for input size {size}")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("{groups} groups do not divide {what} count {count}")]
    Groups { groups: usize, what: &'static str, count: usize },
    #[error("receptive field {rh}x{rw} does not fit a {height}x{width} input with padding {padding}")]
    Receptive { rh: usize, rw: usize, height: usize, width: usize, padding: usize },
    #[error("invalid layer configuration: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Shape { channels, height, width }
    }

    pub const fn flat(len: usize) -> Self {
        Shape::new(len, 1, 1)
    }

    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub const fn index(&self, c: usize, i: usize, j: usize) -> usize {
        (c * self.height + i) * self.width + j
    }
}

/// An `m × h × w` activation tensor for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationMap<T> {
    pub shape: Shape,
    pub values: Vec<T>,
}

impl<T: Real> ActivationMap<T> {
    pub fn new(shape: Shape, values: Vec<T>) -> Result<Self, LayerError> {
        if values.len() != shape.len() {
            return Err(LayerError::LengthMismatch { expected: shape.len(), got: values.len() });
        }
        Ok(ActivationMap { shape, values })
    }

    pub fn zeros(shape: Shape) -> Self {
        ActivationMap { shape, values: vec![T::zero(); shape.len()] }
    }

    pub fn get(&self, c: usize, i: usize, j: usize) -> T {
        self.values[self.shape.index(c, i, j)]
    }

    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().map(|v| v.to_f64().unwrap()).sum::<f64>() / self.values.len() as f64
    }
}

#[inline(always)]
fn gate<T: Real>(c: &Coeffs<T>, a: T, b: T) -> T {
    c[0] + a * (c[1] + c[3] * b) + c[2] * b
}

/// Evaluates a complete binary gate tree in place.
///
/// `vals` holds `2·L − 1` slots for `L` leaves; the leaves occupy the first
/// `L`, node `j` reads slots `2j, 2j+1` and writes slot `L + j`, so the root
/// ends up last. Nodes are numbered level by level starting at the leaves.
#[inline]
pub fn tree_forward<T: Real>(coeffs: &[Coeffs<T>], vals: &mut [T]) -> T {
    let leaves = coeffs.len() + 1;
    for (j, c) in coeffs.iter().enumerate() {
        vals[leaves + j] = gate(c, vals[2 * j], vals[2 * j + 1]);
    }
    vals[2 * leaves - 2]
}

/// Backward pass through a tree evaluated by [`tree_forward`].
///
/// Leaves the leaf gradients in `grads[..L]` and adds node coefficient
/// gradients into `dcoeffs`.
#[inline]
pub fn tree_backward<T: Real>(
    coeffs: &[Coeffs<T>],
    vals: &[T],
    grads: &mut [T],
    dcoeffs: &mut [Coeffs<T>],
    upstream: T,
) {
    let leaves = coeffs.len() + 1;
    grads[2 * leaves - 2] = upstream;
    for j in (0..coeffs.len()).rev() {
        let g = grads[leaves + j];
        let (a, b) = (vals[2 * j], vals[2 * j + 1]);
        let c = &coeffs[j];
        let d = &mut dcoeffs[j];
        d[0] += g;
        d[1] += g * a;
        d[2] += g * b;
        d[3] += g * a * b;
        grads[2 * j] = g * (c[1] + c[3] * b);
        grads[2 * j + 1] = g * (c[2] + c[3] * a);
    }
}

/// Fixed random wiring of tree leaves into the receptive field.
///
/// Entries are 0-based: channel in `0..in_channels`, row offset in
/// `0..receptive.0`, column offset in `0..receptive.1`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectionTable {
    pub in_channels: usize,
    pub kernels: usize,
    pub depth: usize,
    pub receptive: (usize, usize),
    pub channel: Vec<u32>,
    pub row: Vec<u8>,
    pub col: Vec<u8>,
}

impl ConnectionTable {
    pub fn leaves(&self) -> usize {
        1 << self.depth
    }

    pub fn nodes_per_kernel(&self) -> usize {
        self.leaves() - 1
    }

    /// `(channel, row, col)` of leaf `l` of kernel `k`.
    pub fn leaf(&self, k: usize, l: usize) -> (usize, usize, usize) {
        let i = k * self.leaves() + l;
        (self.channel[i] as usize, self.row[i] as usize, self.col[i] as usize)
    }

    pub fn validate(&self) -> Result<(), LayerError> {
        let n = self.kernels * self.leaves();
        for len in [self.channel.len(), self.row.len(), self.col.len()] {
            if len != n {
                return Err(LayerError::LengthMismatch { expected: n, got: len });
            }
        }
        if self.depth == 0 {
            return Err(LayerError::Invalid("tree depth must be at least 1".into()));
        }
        for i in 0..n {
            if self.channel[i] as usize >= self.in_channels {
                return Err(LayerError::IndexOutOfRange {
                    index: self.channel[i] as usize,
                    size: self.in_channels,
                });
            }
            if self.row[i] as usize >= self.receptive.0 || self.col[i] as usize >= self.receptive.1 {
                return Err(LayerError::Invalid(format!("leaf offset {i} outside receptive field")));
            }
        }
        Ok(())
    }

    /// Distinct channels referenced by kernel `k`.
    pub fn kernel_channels(&self, k: usize) -> Vec<usize> {
        let mut ch: Vec<usize> = (0..self.leaves()).map(|l| self.leaf(k, l).0).collect();
        ch.sort_unstable();
        ch.dedup();
        ch
    }
}

/// Samples a connection table.
///
/// Kernels are split into `groups` contiguous groups, each wired only to the
/// matching contiguous slice of input channels. With a channel restriction
/// `r`, every kernel first draws `min(r, group width)` distinct channels and
/// its leaves choose among those. Leaves are drawn with replacement.
pub fn sample_connections(
    seed: u64,
    in_channels: usize,
    receptive: (usize, usize),
    kernels: usize,
    depth: usize,
    channel_restriction: Option<usize>,
    groups: usize,
) -> Result<ConnectionTable, LayerError> {
    if in_channels == 0 || kernels == 0 {
        return Err(LayerError::Invalid("channel and kernel counts must be positive".into()));
    }
    if depth == 0 || depth > 8 {
        return Err(LayerError::Invalid(format!("tree depth {depth} outside 1..=8")));
    }
    if receptive.0 == 0 || receptive.1 == 0 || receptive.0 > 255 || receptive.1 > 255 {
        return Err(LayerError::Invalid(format!("receptive field {receptive:?}")));
    }
    if groups == 0 || in_channels % groups != 0 {
        return Err(LayerError::Groups { groups, what: "input channel", count: in_channels });
    }
    if kernels % groups != 0 {
        return Err(LayerError::Groups { groups, what: "kernel", count: kernels });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let leaves = 1usize << depth;
    let group_in = in_channels / groups;
    let group_out = kernels / groups;
    let mut table = ConnectionTable {
        in_channels,
        kernels,
        depth,
        receptive,
        channel: Vec::with_capacity(kernels * leaves),
        row: Vec::with_capacity(kernels * leaves),
        col: Vec::with_capacity(kernels * leaves),
    };
    for k in 0..kernels {
        let base = (k / group_out) * group_in;
        let allowed: Vec<usize> = match channel_restriction {
            Some(r) => sample(&mut rng, group_in, r.clamp(1, group_in))
                .into_iter()
                .map(|c| base + c)
                .collect(),
            None => (base..base + group_in).collect(),
        };
        for _ in 0..leaves {
            table.channel.push(allowed[rng.random_range(0..allowed.len())] as u32);
            table.row.push(rng.random_range(0..receptive.0) as u8);
            table.col.push(rng.random_range(0..receptive.1) as u8);
        }
    }
    Ok(table)
}

/// Convolution whose kernels are complete binary trees of learnable gates.
///
/// Output `[k, i, j]` is the root of kernel `k`'s tree over the leaves
/// `input[C_M[k,l], i + C_H[k,l] − p, j + C_W[k,l] − p]`, with zero outside the
/// input. All placements of a kernel share its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeConv {
    pub table: ConnectionTable,
    pub input: Shape,
    pub padding: usize,
    /// Offset of every leaf in the zero-padded input, relative to the
    /// placement origin.
    base: Vec<u32>,
}

impl TreeConv {
    pub fn new(table: ConnectionTable, input: Shape, padding: usize) -> Result<Self, LayerError> {
        table.validate()?;
        if table.in_channels != input.channels {
            return Err(LayerError::ShapeMismatch {
                expected: Shape::new(table.in_channels, input.height, input.width),
                got: input,
            });
        }
        let (rh, rw) = table.receptive;
        if input.height + 2 * padding < rh || input.width + 2 * padding < rw {
            return Err(LayerError::Receptive {
                rh,
                rw,
                height: input.height,
                width: input.width,
                padding,
            });
        }
        let padded = Shape::new(input.channels, input.height + 2 * padding, input.width + 2 * padding);
        let base = (0..table.kernels * table.leaves())
            .map(|i| padded.index(table.channel[i] as usize, table.row[i] as usize, table.col[i] as usize) as u32)
            .collect();
        Ok(TreeConv { table, input, padding, base })
    }

    pub fn output_shape(&self) -> Shape {
        let (rh, rw) = self.table.receptive;
        Shape::new(
            self.table.kernels,
            self.input.height + 2 * self.padding - rh + 1,
            self.input.width + 2 * self.padding - rw + 1,
        )
    }

    /// Learnable gates (one per tree node per kernel).
    pub fn nodes(&self) -> usize {
        self.table.kernels * self.table.nodes_per_kernel()
    }

    /// Input offset of leaf `l` of kernel `k` at output position `(i, j)`,
    /// or `None` if it falls into the padding.
    #[inline]
    pub fn leaf_offset(&self, k: usize, l: usize, i: usize, j: usize) -> Option<usize> {
        let (c, dr, dc) = self.table.leaf(k, l);
        let r = (i + dr).checked_sub(self.padding)?;
        let s = (j + dc).checked_sub(self.padding)?;
        (r < self.input.height && s < self.input.width).then(|| self.input.index(c, r, s))
    }

    fn padded_shape(&self) -> Shape {
        let p = 2 * self.padding;
        Shape::new(self.input.channels, self.input.height + p, self.input.width + p)
    }

    /// The input surrounded by `padding` zeros on every side.
    fn pad<'a, T: Real>(&self, input: &'a [T]) -> Cow<'a, [T]> {
        if self.padding == 0 {
            return Cow::Borrowed(input);
        }
        let ps = self.padded_shape();
        let mut out = vec![T::zero(); ps.len()];
        let w = self.input.width;
        for c in 0..self.input.channels {
            for r in 0..self.input.height {
                let src = self.input.index(c, r, 0);
                let dst = ps.index(c, r + self.padding, self.padding);
                out[dst..dst + w].copy_from_slice(&input[src..src + w]);
            }
        }
        Cow::Owned(out)
    }

    /// Runs `f` with the padded input and a padded gradient buffer, then adds
    /// the unpadded part of that buffer into `dinput`.
    fn with_padded<T: Real>(&self, input: &[T], dinput: &mut [T], f: impl FnOnce(&[T], &mut [T])) {
        if self.padding == 0 {
            return f(input, dinput);
        }
        let x = self.pad(input);
        let ps = self.padded_shape();
        let mut dx = vec![T::zero(); ps.len()];
        f(&x, &mut dx);
        let w = self.input.width;
        for c in 0..self.input.channels {
            for r in 0..self.input.height {
                let dst = self.input.index(c, r, 0);
                let src = ps.index(c, r + self.padding, self.padding);
                for (d, &g) in dinput[dst..dst + w].iter_mut().zip(&dx[src..src + w]) {
                    *d += g;
                }
            }
        }
    }

    #[inline]
    fn kernel_base(&self, k: usize) -> &[u32] {
        let l = self.table.leaves();
        &self.base[k * l..(k + 1) * l]
    }

    /// Leaf values of placement `(i, j)` read from the padded input.
    #[inline]
    fn gather<T: Real>(&self, padded: &[T], k: usize, i: usize, j: usize, vals: &mut [T]) {
        let o = i * (self.input.width + 2 * self.padding) + j;
        for (v, &b) in vals.iter_mut().zip(self.kernel_base(k)) {
            *v = padded[b as usize + o];
        }
    }

    #[inline]
    fn scatter<T: Real>(&self, grads: &[T], k: usize, i: usize, j: usize, dpadded: &mut [T]) {
        let o = i * (self.input.width + 2 * self.padding) + j;
        for (&g, &b) in grads.iter().zip(self.kernel_base(k)) {
            dpadded[b as usize + o] += g;
        }
    }

    fn kernel_coeffs<'a, T>(&self, coeffs: &'a [Coeffs<T>], k: usize) -> &'a [Coeffs<T>] {
        let n = self.table.nodes_per_kernel();
        &coeffs[k * n..(k + 1) * n]
    }

    /// Value of one placement.
    pub fn placement<T: Real>(&self, coeffs: &[Coeffs<T>], input: &[T], k: usize, i: usize, j: usize) -> T {
        let mut vals = vec![T::zero(); 2 * self.table.leaves() - 1];
        self.gather(&self.pad(input), k, i, j, &mut vals);
        tree_forward(self.kernel_coeffs(coeffs, k), &mut vals)
    }

    pub fn forward<T: Real>(&self, coeffs: &[Coeffs<T>], input: &[T], out: &mut [T]) {
        debug_assert_eq!(coeffs.len(), self.nodes());
        debug_assert_eq!(input.len(), self.input.len());
        let os = self.output_shape();
        let input = self.pad(input);
        let mut vals = vec![T::zero(); 2 * self.table.leaves() - 1];
        for k in 0..os.channels {
            let kc = self.kernel_coeffs(coeffs, k);
            for i in 0..os.height {
                for j in 0..os.width {
                    self.gather(&input, k, i, j, &mut vals);
                    out[os.index(k, i, j)] = tree_forward(kc, &mut vals);
                }
            }
        }
    }

    /// Backward pass; tree intermediates are recomputed per placement, and
    /// placements with zero upstream gradient are skipped.
    pub fn backward<T: Real>(
        &self,
        coeffs: &[Coeffs<T>],
        input: &[T],
        upstream: &[T],
        dcoeffs: &mut [Coeffs<T>],
        dinput: &mut [T],
    ) {
        let os = self.output_shape();
        let n = self.table.nodes_per_kernel();
        let mut vals = vec![T::zero(); 2 * self.table.leaves() - 1];
        let mut grads = vals.clone();
        self.with_padded(input, dinput, |input, dinput| {
            for k in 0..os.channels {
                let kc = self.kernel_coeffs(coeffs, k);
                let kd = &mut dcoeffs[k * n..(k + 1) * n];
                for i in 0..os.height {
                    for j in 0..os.width {
                        let up = upstream[os.index(k, i, j)];
                        if up == T::zero() {
                            continue;
                        }
                        self.placement_backward(kc, kd, input, k, i, j, up, &mut vals, &mut grads, dinput);
                    }
                }
            }
        });
    }

    #[allow(clippy::too_many_arguments)]
    #[inline]
    fn placement_backward<T: Real>(
        &self,
        kc: &[Coeffs<T>],
        kd: &mut [Coeffs<T>],
        input: &[T],
        k: usize,
        i: usize,
        j: usize,
        up: T,
        vals: &mut [T],
        grads: &mut [T],
        dinput: &mut [T],
    ) {
        self.gather(input, k, i, j, vals);
        tree_forward(kc, vals);
        tree_backward(kc, vals, grads, kd, up);
        self.scatter(grads, k, i, j, dinput);
    }
}

/// 2×2 `or` pooling with stride 2, relaxed by the maximum t-conorm.
///
/// Window positions are numbered row-major; ties go to the first maximum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrPool {
    pub input: Shape,
}

impl OrPool {
    pub fn new(input: Shape) -> Result<Self, LayerError> {
        if input.height % 2 != 0 || input.width % 2 != 0 {
            return Err(LayerError::NotPoolable { height: input.height, width: input.width });
        }
        Ok(OrPool { input })
    }

    pub fn output_shape(&self) -> Shape {
        Shape::new(self.input.channels, self.input.height / 2, self.input.width / 2)
    }

    /// Input offset of window position `w` for output `(c, i, j)`.
    #[inline]
    pub fn window_offset(&self, c: usize, i: usize, j: usize, w: u8) -> usize {
        self.input.index(c, 2 * i + (w as usize >> 1), 2 * j + (w as usize & 1))
    }

    pub fn forward<T: Real>(&self, input: &[T], out: &mut [T], indices: &mut [u8]) {
        let os = self.output_shape();
        for c in 0..os.channels {
            for i in 0..os.height {
                for j in 0..os.width {
                    let mut best = 0u8;
                    let mut max = input[self.window_offset(c, i, j, 0)];
                    for w in 1..4u8 {
                        let v = input[self.window_offset(c, i, j, w)];
                        if v > max {
                            max = v;
                            best = w;
                        }
                    }
                    let o = os.index(c, i, j);
                    out[o] = max;
                    indices[o] = best;
                }
            }
        }
    }

    pub fn backward<T: Real>(&self, indices: &[u8], upstream: &[T], dinput: &mut [T]) {
        let os = self.output_shape();
        for c in 0..os.channels {
            for i in 0..os.height {
                for j in 0..os.width {
                    let o = os.index(c, i, j);
                    dinput[self.window_offset(c, i, j, indices[o])] += upstream[o];
                }
            }
        }
    }
}

/// A tree convolution immediately followed by `or` pooling, evaluated without
/// materializing the un-pooled map.
///
/// Only the pooled value and its window index are kept; the backward pass
/// recomputes the single winning tree per pooled output.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvPool {
    pub conv: TreeConv,
    pub pool: OrPool,
}

impl ConvPool {
    pub fn new(conv: TreeConv) -> Result<Self, LayerError> {
        let pool = OrPool::new(conv.output_shape())?;
        Ok(ConvPool { conv, pool })
    }

    pub fn output_shape(&self) -> Shape {
        self.pool.output_shape()
    }

    pub fn nodes(&self) -> usize {
        self.conv.nodes()
    }

    /// Forward pass. If `pre_pool_sum` is given, the sum of all un-pooled
    /// activations is added to it.
    pub fn forward<T: Real>(
        &self,
        coeffs: &[Coeffs<T>],
        input: &[T],
        out: &mut [T],
        indices: &mut [u8],
        mut pre_pool_sum: Option<&mut f64>,
    ) {
        let os = self.output_shape();
        let leaves = self.conv.table.leaves();
        let input = self.conv.pad(input);
        let mut vals = vec![T::zero(); 2 * leaves - 1];
        for k in 0..os.channels {
            let kc = self.conv.kernel_coeffs(coeffs, k);
            for i in 0..os.height {
                for j in 0..os.width {
                    let mut best = 0u8;
                    let mut max = T::neg_infinity();
                    for w in 0..4u8 {
                        let (pi, pj) = (2 * i + (w as usize >> 1), 2 * j + (w as usize & 1));
                        self.conv.gather(&input, k, pi, pj, &mut vals);
                        let v = tree_forward(kc, &mut vals);
                        if let Some(s) = pre_pool_sum.as_deref_mut() {
                            *s += v.to_f64().unwrap();
                        }
                        if v > max {
                            max = v;
                            best = w;
                        }
                    }
                    let o = os.index(k, i, j);
                    out[o] = max;
                    indices[o] = best;
                }
            }
        }
    }

    pub fn backward<T: Real>(
        &self,
        coeffs: &[Coeffs<T>],
        input: &[T],
        indices: &[u8],
        upstream: &[T],
        dcoeffs: &mut [Coeffs<T>],
        dinput: &mut [T],
    ) {
        let os = self.output_shape();
        let n = self.conv.table.nodes_per_kernel();
        let leaves = self.conv.table.leaves();
        let mut vals = vec![T::zero(); 2 * leaves - 1];
        let mut grads = vals.clone();
        self.conv.with_padded(input, dinput, |input, dinput| {
            for k in 0..os.channels {
                let kc = self.conv.kernel_coeffs(coeffs, k);
                let kd = &mut dcoeffs[k * n..(k + 1) * n];
                for i in 0..os.height {
                    for j in 0..os.width {
                        let o = os.index(k, i, j);
                        let up = upstream[o];
                        if up == T::zero() {
                            continue;
                        }
                        let w = indices[o] as usize;
                        let (pi, pj) = (2 * i + (w >> 1), 2 * j + (w & 1));
                        self.conv
                            .placement_backward(kc, kd, input, k, pi, pj, up, &mut vals, &mut grads, dinput);
                    }
                }
            }
        });
    }
}

/// A layer of gates, each reading a fixed random pair of inputs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RandomLayer {
    pub in_size: usize,
    pub pairs: Vec<[u32; 2]>,
}

impl RandomLayer {
    pub fn from_pairs(in_size: usize, pairs: Vec<[u32; 2]>) -> Result<Self, LayerError> {
        for p in &pairs {
            for &i in p {
                if i as usize >= in_size {
                    return Err(LayerError::IndexOutOfRange { index: i as usize, size: in_size });
                }
            }
        }
        Ok(RandomLayer { in_size, pairs })
    }

    /// Draws `out_size` input pairs. The two inputs of a gate differ whenever
    /// `in_size > 1`.
    pub fn sample(seed: u64, in_size: usize, out_size: usize) -> Result<Self, LayerError> {
        if in_size == 0 || out_size == 0 {
            return Err(LayerError::Invalid("random layer sizes must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs = (0..out_size)
            .map(|_| {
                let a = rng.random_range(0..in_size);
                let mut b = rng.random_range(0..in_size);
                if in_size > 1 {
                    while b == a {
                        b = rng.random_range(0..in_size);
                    }
                }
                [a as u32, b as u32]
            })
            .collect();
        Ok(RandomLayer { in_size, pairs })
    }

    pub fn out_size(&self) -> usize {
        self.pairs.len()
    }

    pub fn forward<T: Real>(&self, coeffs: &[Coeffs<T>], input: &[T], out: &mut [T]) {
        for ((o, p), c) in out.iter_mut().zip(&self.pairs).zip(coeffs) {
            *o = gate(c, input[p[0] as usize], input[p[1] as usize]);
        }
    }

    pub fn backward<T: Real>(
        &self,
        coeffs: &[Coeffs<T>],
        input: &[T],
        upstream: &[T],
        dcoeffs: &mut [Coeffs<T>],
        dinput: &mut [T],
    ) {
        for (((p, c), d), &g) in self.pairs.iter().zip(coeffs).zip(dcoeffs).zip(upstream) {
            if g == T::zero() {
                continue;
            }
            let (ia, ib) = (p[0] as usize, p[1] as usize);
            let (a, b) = (input[ia], input[ib]);
            d[0] += g;
            d[1] += g * a;
            d[2] += g * b;
            d[3] += g * a * b;
            dinput[ia] += g * (c[1] + c[3] * b);
            dinput[ib] += g * (c[2] + c[3] * a);
        }
    }
}

/// Class scores from contiguous equal-size groups: `score_c = Σ group_c / τ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupSum {
    pub classes: usize,
    pub tau: f64,
    pub in_size: usize,
}

impl GroupSum {
    pub fn new(classes: usize, tau: f64, in_size: usize) -> Result<Self, LayerError> {
        if classes == 0 || in_size % classes != 0 || in_size == 0 {
            return Err(LayerError::Groups { groups: classes, what: "group-sum input", count: in_size });
        }
        if !(tau > 0.0) {
            return Err(LayerError::Invalid(format!("temperature must be positive, got {tau}")));
        }
        Ok(GroupSum { classes, tau, in_size })
    }

    pub fn group_size(&self) -> usize {
        self.in_size / self.classes
    }

    pub fn forward<T: Real>(&self, input: &[T], scores: &mut [T]) {
        let inv = T::lit(1.0 / self.tau);
        for (s, group) in scores.iter_mut().zip(input.chunks(self.group_size())) {
            *s = group.iter().copied().sum::<T>() * inv;
        }
    }

    pub fn backward<T: Real>(&self, dscores: &[T], dinput: &mut [T]) {
        let inv = T::lit(1.0 / self.tau);
        for (g, group) in dscores.iter().zip(dinput.chunks_mut(self.group_size())) {
            for d in group {
                *d = *g * inv;
            }
        }
    }
}

fn check_len(expected: usize, got: usize) -> Result<(), LayerError> {
    if expected == got {
        Ok(())
    } else {
        Err(LayerError::LengthMismatch { expected, got })
    }
}

fn check_shape(expected: Shape, got: Shape) -> Result<(), LayerError> {
    if expected == got {
        Ok(())
    } else {
        Err(LayerError::ShapeMismatch { expected, got })
    }
}

pub fn tree_conv_forward<T: Real>(
    layer: &TreeConv,
    coeffs: &[Coeffs<T>],
    input: &ActivationMap<T>,
) -> Result<ActivationMap<T>, LayerError> {
    check_shape(layer.input, input.shape)?;
    check_len(layer.nodes(), coeffs.len())?;
    let mut out = ActivationMap::zeros(layer.output_shape());
    layer.forward(coeffs, &input.values, &mut out.values);
    Ok(out)
}

/// Returns `(coefficient gradients, input gradients)`.
pub fn tree_conv_backward<T: Real>(
    layer: &TreeConv,
    coeffs: &[Coeffs<T>],
    input: &ActivationMap<T>,
    upstream: &ActivationMap<T>,
) -> Result<(Vec<Coeffs<T>>, ActivationMap<T>), LayerError> {
    check_shape(layer.input, input.shape)?;
    check_shape(layer.output_shape(), upstream.shape)?;
    check_len(layer.nodes(), coeffs.len())?;
    let mut dc = vec![[T::zero(); 4]; coeffs.len()];
    let mut dx = ActivationMap::zeros(input.shape);
    layer.backward(coeffs, &input.values, &upstream.values, &mut dc, &mut dx.values);
    Ok((dc, dx))
}

pub fn or_pool_forward<T: Real>(
    layer: &OrPool,
    input: &ActivationMap<T>,
) -> Result<(ActivationMap<T>, Vec<u8>), LayerError> {
    check_shape(layer.input, input.shape)?;
    let os = layer.output_shape();
    let mut out = ActivationMap::zeros(os);
    let mut idx = vec![0u8; os.len()];
    layer.forward(&input.values, &mut out.values, &mut idx);
    Ok((out, idx))
}

pub fn or_pool_backward<T: Real>(
    layer: &OrPool,
    indices: &[u8],
    upstream: &ActivationMap<T>,
) -> Result<ActivationMap<T>, LayerError> {
    check_shape(layer.output_shape(), upstream.shape)?;
    check_len(layer.output_shape().len(), indices.len())?;
    if let Some(&bad) = indices.iter().find(|&&w| w > 3) {
        return Err(LayerError::IndexOutOfRange { index: bad as usize, size: 4 });
    }
    let mut dx = ActivationMap::zeros(layer.input);
    layer.backward(indices, &upstream.values, &mut dx.values);
    Ok(dx)
}

pub fn random_layer_forward<T: Real>(
    layer: &RandomLayer,
    coeffs: &[Coeffs<T>],
    input: &[T],
) -> Result<Vec<T>, LayerError> {
    check_len(layer.in_size, input.len())?;
    check_len(layer.out_size(), coeffs.len())?;
    let mut out = vec![T::zero(); layer.out_size()];
    layer.forward(coeffs, input, &mut out);
    Ok(out)
}

pub fn random_layer_backward<T: Real>(
    layer: &RandomLayer,
    coeffs: &[Coeffs<T>],
    input: &[T],
    upstream: &[T],
) -> Result<(Vec<Coeffs<T>>, Vec<T>), LayerError> {
    check_len(layer.in_size, input.len())?;
    check_len(layer.out_size(), coeffs.len())?;
    check_len(layer.out_size(), upstream.len())?;
    let mut dc = vec![[T::zero(); 4]; coeffs.len()];
    let mut dx = vec![T::zero(); input.len()];
    layer.backward(coeffs, input, upstream, &mut dc, &mut dx);
    Ok((dc, dx))
}

pub fn group_sum<T: Real>(input: &[T], head: &GroupSum) -> Result<Vec<T>, LayerError> {
    check_len(head.in_size, input.len())?;
    let mut scores = vec![T::zero(); head.classes];
    head.forward(input, &mut scores);
    Ok(scores)
}
