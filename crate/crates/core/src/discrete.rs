//! Hard gate networks: discretization of a trained [`Network`], logic
//! simplification and the scalar reference evaluator.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::gates::Gate;
use crate::model::{Block, Network};
use crate::Real;

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("input width mismatch: net has {expected} inputs, got {got}")]
    Width { expected: usize, got: usize },
    #[error("empty input vector")]
    EmptyInput,
    #[error("node {node} references {reference}, which is not defined before it")]
    Forward { node: usize, reference: Ref },
    #[error("bad reference {0:?}")]
    BadRef(String),
}

/// A wire: constant, primary input or gate output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Ref {
    Const(bool),
    Input(u32),
    Node(u32),
}

impl fmt::Display for Ref {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ref::Const(v) => write!(f, "c{}", *v as u8),
            Ref::Input(i) => write!(f, "i{i}"),
            Ref::Node(n) => write!(f, "n{n}"),
        }
    }
}

impl FromStr for Ref {
    type Err = NetError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || NetError::BadRef(s.to_string());
        match s {
            "c0" => return Ok(Ref::Const(false)),
            "c1" => return Ok(Ref::Const(true)),
            _ => {}
        }
        let (kind, num) = s.split_at(s.char_indices().nth(1).map_or(s.len(), |(i, _)| i));
        let n: u32 = num.parse().map_err(|_| bad())?;
        match kind {
            "i" => Ok(Ref::Input(n)),
            "n" => Ok(Ref::Node(n)),
            _ => Err(bad()),
        }
    }
}

impl Serialize for Ref {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Ref {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Node {
    pub gate: Gate,
    pub inputs: [Ref; 2],
    /// Index into [`HardNet::layer_names`].
    pub layer: u16,
}

/// A gate DAG in topological order with per-class output groups.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct HardNet {
    pub num_inputs: usize,
    pub nodes: Vec<Node>,
    pub outputs: Vec<Vec<Ref>>,
    pub layer_names: Vec<String>,
}

impl HardNet {
    pub fn new(num_inputs: usize) -> Self {
        HardNet { num_inputs, ..Default::default() }
    }

    /// Appends a gate; returns its output wire.
    pub fn push(&mut self, gate: Gate, a: Ref, b: Ref, layer: u16) -> Ref {
        debug_assert!(self.defined(a) && self.defined(b));
        self.nodes.push(Node { gate, inputs: [a, b], layer });
        Ref::Node(self.nodes.len() as u32 - 1)
    }

    pub fn add_layer(&mut self, name: impl Into<String>) -> u16 {
        self.layer_names.push(name.into());
        (self.layer_names.len() - 1) as u16
    }

    fn defined(&self, r: Ref) -> bool {
        match r {
            Ref::Const(_) => true,
            Ref::Input(i) => (i as usize) < self.num_inputs,
            Ref::Node(n) => (n as usize) < self.nodes.len(),
        }
    }

    pub fn gate_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn classes(&self) -> usize {
        self.outputs.len()
    }

    /// Checks that every reference points strictly backward.
    pub fn validate(&self) -> Result<(), NetError> {
        for (i, n) in self.nodes.iter().enumerate() {
            for &r in &n.inputs {
                let ok = match r {
                    Ref::Const(_) => true,
                    Ref::Input(x) => (x as usize) < self.num_inputs,
                    Ref::Node(x) => (x as usize) < i,
                };
                if !ok {
                    return Err(NetError::Forward { node: i, reference: r });
                }
            }
        }
        for &r in self.outputs.iter().flatten() {
            if !self.defined(r) {
                return Err(NetError::Forward { node: self.nodes.len(), reference: r });
            }
        }
        Ok(())
    }

    /// Values of all nodes for one input vector.
    pub fn eval_nodes(&self, input: &[bool]) -> Result<Vec<bool>, NetError> {
        if input.is_empty() {
            return Err(NetError::EmptyInput);
        }
        if input.len() != self.num_inputs {
            return Err(NetError::Width { expected: self.num_inputs, got: input.len() });
        }
        let mut vals = Vec::with_capacity(self.nodes.len());
        for n in &self.nodes {
            let a = read(n.inputs[0], input, &vals);
            let b = read(n.inputs[1], input, &vals);
            vals.push(n.gate.eval(a, b));
        }
        Ok(vals)
    }

    /// Logic depth (longest gate path from an input to an output).
    pub fn depth(&self) -> usize {
        let mut depth = vec![0usize; self.nodes.len()];
        let d = |r: Ref, depth: &[usize]| match r {
            Ref::Node(n) => depth[n as usize],
            _ => 0,
        };
        for (i, n) in self.nodes.iter().enumerate() {
            depth[i] = 1 + d(n.inputs[0], &depth).max(d(n.inputs[1], &depth));
        }
        self.outputs.iter().flatten().map(|&r| d(r, &depth)).max().unwrap_or(0)
    }

    pub fn histogram(&self) -> [u64; 16] {
        let mut h = [0u64; 16];
        for n in &self.nodes {
            h[n.gate.index() as usize] += 1;
        }
        h
    }
}

#[inline]
pub(crate) fn read(r: Ref, input: &[bool], vals: &[bool]) -> bool {
    match r {
        Ref::Const(v) => v,
        Ref::Input(i) => input[i as usize],
        Ref::Node(n) => vals[n as usize],
    }
}

/// Integer class scores: the number of active outputs in each class group.
pub fn eval_discrete(net: &HardNet, input: &[bool]) -> Result<Vec<u32>, NetError> {
    let vals = net.eval_nodes(input)?;
    Ok(net
        .outputs
        .iter()
        .map(|group| group.iter().filter(|&&r| read(r, input, &vals)).count() as u32)
        .collect())
}

/// Discretizes with each node's most probable gate.
pub fn discretize<T: Real>(net: &Network<T>) -> HardNet {
    discretize_with(net, &net.hard_gates())
}

/// Unrolls `net` into a gate DAG using the given gate per trainable node.
///
/// Every convolution placement becomes its own tree of gates, padding becomes
/// the constant 0, and each pooled output becomes three two-input ORs.
pub fn discretize_with<T: Real>(net: &Network<T>, gates: &[Gate]) -> HardNet {
    assert_eq!(gates.len(), net.nodes(), "one gate per trainable node");
    let mut hn = HardNet::new(net.input_len());
    let mut wires: Vec<Ref> = (0..net.input_len() as u32).map(Ref::Input).collect();
    for (bi, b) in net.blocks.iter().enumerate() {
        let g = &gates[b.node_offset..b.node_offset + b.nodes];
        wires = match &b.block {
            Block::Conv(conv) => {
                let levels = level_tags(&mut hn, &b.name(bi), conv.table.depth);
                unroll_conv(&mut hn, conv, g, &wires, &levels)
            }
            Block::Pool(pool) => {
                let tag = hn.add_layer(b.name(bi));
                unroll_pool(&mut hn, pool, &wires, tag)
            }
            Block::ConvPool(cp) => {
                let levels = level_tags(&mut hn, &b.name(bi), cp.conv.table.depth);
                let mid = unroll_conv(&mut hn, &cp.conv, g, &wires, &levels);
                let tag = hn.add_layer(format!("{}.or", b.name(bi)));
                unroll_pool(&mut hn, &cp.pool, &mid, tag)
            }
            Block::Random(r) => {
                let tag = hn.add_layer(b.name(bi));
                r.pairs
                    .iter()
                    .zip(g)
                    .map(|(p, &gate)| hn.push(gate, wires[p[0] as usize], wires[p[1] as usize], tag))
                    .collect()
            }
        };
    }
    let group = net.head.group_size();
    hn.outputs = wires.chunks(group).map(<[Ref]>::to_vec).collect();
    hn
}

fn level_tags(hn: &mut HardNet, name: &str, depth: usize) -> Vec<u16> {
    (0..depth).map(|l| hn.add_layer(format!("{name}.level{l}"))).collect()
}

fn unroll_conv(
    hn: &mut HardNet,
    conv: &crate::layers::TreeConv,
    gates: &[Gate],
    wires: &[Ref],
    levels: &[u16],
) -> Vec<Ref> {
    let os = conv.output_shape();
    let leaves = conv.table.leaves();
    let per = conv.table.nodes_per_kernel();
    // Level of node j in the heap layout used by the relaxed trees.
    let level_of: Vec<u16> = (0..per)
        .map(|j| {
            let (mut width, mut start, mut level) = (leaves / 2, 0, 0);
            while j >= start + width {
                start += width;
                width /= 2;
                level += 1;
            }
            levels[level]
        })
        .collect();
    let mut out = vec![Ref::Const(false); os.len()];
    let mut vals = vec![Ref::Const(false); 2 * leaves - 1];
    for k in 0..os.channels {
        for i in 0..os.height {
            for j in 0..os.width {
                for (l, v) in vals[..leaves].iter_mut().enumerate() {
                    *v = conv.leaf_offset(k, l, i, j).map_or(Ref::Const(false), |o| wires[o]);
                }
                for n in 0..per {
                    vals[leaves + n] = hn.push(gates[k * per + n], vals[2 * n], vals[2 * n + 1], level_of[n]);
                }
                out[os.index(k, i, j)] = vals[2 * leaves - 2];
            }
        }
    }
    out
}

fn unroll_pool(hn: &mut HardNet, pool: &crate::layers::OrPool, wires: &[Ref], tag: u16) -> Vec<Ref> {
    let os = pool.output_shape();
    let mut out = Vec::with_capacity(os.len());
    for c in 0..os.channels {
        for i in 0..os.height {
            for j in 0..os.width {
                let w = |k| wires[pool.window_offset(c, i, j, k)];
                let top = hn.push(Gate::OR, w(0), w(1), tag);
                let bottom = hn.push(Gate::OR, w(2), w(3), tag);
                out.push(hn.push(Gate::OR, top, bottom, tag));
            }
        }
    }
    out
}

/// Summary numbers of a netlist.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetStats {
    pub gates: usize,
    pub depth: usize,
    pub histogram: [u64; 16],
}

impl NetStats {
    pub fn of(net: &HardNet) -> Self {
        NetStats { gates: net.gate_count(), depth: net.depth(), histogram: net.histogram() }
    }
}

/// A simplified net with input names and statistics.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Netlist {
    pub net: HardNet,
    pub input_names: Vec<String>,
    pub stats: NetStats,
}

impl Netlist {
    pub fn new(net: HardNet) -> Self {
        let input_names = (0..net.num_inputs).map(|i| format!("x{i}")).collect();
        let stats = NetStats::of(&net);
        Netlist { net, input_names, stats }
    }
}

/// Single-input function left after fixing or merging one gate input.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Unary {
    Const(bool),
    Identity,
    Not,
}

impl Unary {
    fn from_values(at0: bool, at1: bool) -> Unary {
        match (at0, at1) {
            (false, false) => Unary::Const(false),
            (true, true) => Unary::Const(true),
            (false, true) => Unary::Identity,
            (true, false) => Unary::Not,
        }
    }
}

struct Rewriter {
    net: HardNet,
    memo: HashMap<(Gate, Ref, Ref), Ref>,
}

impl Rewriter {
    fn not_operand(&self, r: Ref) -> Option<Ref> {
        match r {
            Ref::Node(n) => {
                let node = &self.net.nodes[n as usize];
                (node.gate == Gate::NOT_A).then_some(node.inputs[0])
            }
            _ => None,
        }
    }

    fn unary(&mut self, u: Unary, x: Ref, layer: u16) -> Ref {
        match u {
            Unary::Const(v) => Ref::Const(v),
            Unary::Identity => x,
            Unary::Not => self.not(x, layer),
        }
    }

    fn not(&mut self, x: Ref, layer: u16) -> Ref {
        if let Ref::Const(v) = x {
            return Ref::Const(!v);
        }
        if let Some(y) = self.not_operand(x) {
            return y;
        }
        self.intern(Gate::NOT_A, x, Ref::Const(false), layer)
    }

    fn intern(&mut self, gate: Gate, a: Ref, b: Ref, layer: u16) -> Ref {
        if let Some(&r) = self.memo.get(&(gate, a, b)) {
            return r;
        }
        let r = self.net.push(gate, a, b, layer);
        self.memo.insert((gate, a, b), r);
        r
    }

    fn gate(&mut self, mut g: Gate, mut a: Ref, mut b: Ref, layer: u16) -> Ref {
        if let Some(y) = self.not_operand(a) {
            g = g.invert_a();
            a = y;
        }
        if let Some(y) = self.not_operand(b) {
            g = g.invert_b();
            b = y;
        }
        if let Ref::Const(va) = a {
            return self.unary(Unary::from_values(g.eval(va, false), g.eval(va, true)), b, layer);
        }
        if let Ref::Const(vb) = b {
            return self.unary(Unary::from_values(g.eval(false, vb), g.eval(true, vb)), a, layer);
        }
        if a == b {
            return self.unary(Unary::from_values(g.eval(false, false), g.eval(true, true)), a, layer);
        }
        if !g.depends_on_b() {
            return self.unary(Unary::from_values(g.eval(false, false), g.eval(true, false)), a, layer);
        }
        if !g.depends_on_a() {
            return self.unary(Unary::from_values(g.eval(false, false), g.eval(false, true)), b, layer);
        }
        if b < a {
            std::mem::swap(&mut a, &mut b);
            g = g.mirrored();
        }
        self.intern(g, a, b, layer)
    }
}

/// Constant folding, pass-through elision, inversion absorption and
/// structural hashing in one topological sweep.
fn rewrite(net: &HardNet) -> HardNet {
    let mut rw = Rewriter {
        net: HardNet {
            num_inputs: net.num_inputs,
            layer_names: net.layer_names.clone(),
            ..Default::default()
        },
        memo: HashMap::new(),
    };
    let mut map: Vec<Ref> = Vec::with_capacity(net.nodes.len());
    let remap = |r: Ref, map: &[Ref]| match r {
        Ref::Node(n) => map[n as usize],
        other => other,
    };
    for n in &net.nodes {
        let a = remap(n.inputs[0], &map);
        let b = remap(n.inputs[1], &map);
        let r = rw.gate(n.gate, a, b, n.layer);
        map.push(r);
    }
    rw.net.outputs = net
        .outputs
        .iter()
        .map(|g| g.iter().map(|&r| remap(r, &map)).collect())
        .collect();
    rw.net
}

/// Drops nodes not reachable from the outputs and renumbers the rest.
fn remove_dead(net: &HardNet) -> HardNet {
    let mut live = vec![false; net.nodes.len()];
    for &r in net.outputs.iter().flatten() {
        if let Ref::Node(n) = r {
            live[n as usize] = true;
        }
    }
    for i in (0..net.nodes.len()).rev() {
        if live[i] {
            for r in net.nodes[i].inputs {
                if let Ref::Node(n) = r {
                    live[n as usize] = true;
                }
            }
        }
    }
    let mut index = vec![u32::MAX; net.nodes.len()];
    let mut out = HardNet {
        num_inputs: net.num_inputs,
        layer_names: net.layer_names.clone(),
        ..Default::default()
    };
    let remap = |r: Ref, index: &[u32]| match r {
        Ref::Node(n) => Ref::Node(index[n as usize]),
        other => other,
    };
    for (i, n) in net.nodes.iter().enumerate() {
        if live[i] {
            index[i] = out.nodes.len() as u32;
            out.nodes.push(Node { inputs: n.inputs.map(|r| remap(r, &index)), ..*n });
        }
    }
    out.outputs = net
        .outputs
        .iter()
        .map(|g| g.iter().map(|&r| remap(r, &index)).collect())
        .collect();
    out
}

/// Folds an inverter into its driver when the inverter is the driver's only
/// consumer.
fn absorb_inverters(net: &mut HardNet) {
    let mut fanout = vec![0u32; net.nodes.len()];
    for n in &net.nodes {
        for r in n.inputs {
            if let Ref::Node(x) = r {
                fanout[x as usize] += 1;
            }
        }
    }
    for &r in net.outputs.iter().flatten() {
        if let Ref::Node(x) = r {
            fanout[x as usize] += 1;
        }
    }
    let mut redirect: HashMap<u32, u32> = HashMap::new();
    for i in 0..net.nodes.len() {
        let n = net.nodes[i];
        if n.gate != Gate::NOT_A {
            continue;
        }
        if let Ref::Node(x) = n.inputs[0] {
            let driver = net.nodes[x as usize];
            if fanout[x as usize] == 1 && driver.gate != Gate::NOT_A {
                net.nodes[x as usize].gate = driver.gate.complement();
                redirect.insert(i as u32, x);
            }
        }
    }
    if redirect.is_empty() {
        return;
    }
    let fix = |r: &mut Ref| {
        if let Ref::Node(n) = r {
            if let Some(&x) = redirect.get(n) {
                *r = Ref::Node(x);
            }
        }
    };
    for n in &mut net.nodes {
        n.inputs.iter_mut().for_each(fix);
    }
    net.outputs.iter_mut().flatten().for_each(fix);
}

/// Simplifies to a fixpoint. The result computes the same outputs, has no
/// more gates than `net`, and is returned unchanged by a second call.
pub fn simplify(net: &HardNet) -> Netlist {
    let mut cur = remove_dead(&rewrite(net));
    for _ in 0..1000 {
        let mut next = remove_dead(&rewrite(&cur));
        absorb_inverters(&mut next);
        let next = remove_dead(&next);
        if next == cur {
            break;
        }
        cur = next;
    }
    Netlist::new(cur)
}

/// Gate counts per layer tag.
pub fn gate_histogram(net: &HardNet) -> Vec<(String, [u64; 16])> {
    let mut rows: Vec<(String, [u64; 16])> = net.layer_names.iter().map(|n| (n.clone(), [0; 16])).collect();
    for n in &net.nodes {
        if let Some(row) = rows.get_mut(n.layer as usize) {
            row.1[n.gate.index() as usize] += 1;
        }
    }
    rows
}

/// Most-probable-gate counts per trainable level of a relaxed network.
pub fn model_gate_histogram<T: Real>(net: &Network<T>) -> Vec<(String, [u64; 16])> {
    let gates = net.hard_gates();
    net.node_layers()
        .into_iter()
        .map(|(name, ids)| {
            let mut h = [0u64; 16];
            for id in ids {
                h[gates[id].index() as usize] += 1;
            }
            (name, h)
        })
        .collect()
}

/// `layer,g0,...,g15` CSV.
pub fn histogram_csv(rows: &[(String, [u64; 16])]) -> String {
    let mut s = String::from("layer");
    for g in Gate::all() {
        s.push_str(&format!(",{}", g.name()));
    }
    s.push('\n');
    for (name, h) in rows {
        s.push_str(name);
        for c in h {
            s.push_str(&format!(",{c}"));
        }
        s.push('\n');
    }
    s
}
