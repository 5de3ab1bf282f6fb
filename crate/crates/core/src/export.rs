//! Hardware export: popcount adder trees, structural Verilog and the netlist
//! JSON format.

use std::collections::VecDeque;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discrete::{HardNet, NetError, NetStats, Netlist, Ref};
use crate::gates::Gate;

pub const NETLIST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("unsupported netlist version {found} (expected {NETLIST_VERSION})")]
    Version { found: u32 },
    #[error("node ids must be 0..n in order; found {found} at position {position}")]
    NodeId { position: usize, found: usize },
    #[error("invalid netlist JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("invalid gate index {0}")]
    Gate(u8),
}

/// Appends a popcount circuit over `bits` built from full adders
/// (2 XOR, 2 AND, 1 OR) and half adders (XOR, AND). Returns the count bits,
/// least significant first.
pub fn popcount(net: &mut HardNet, bits: &[Ref], layer: u16) -> Vec<Ref> {
    let mut columns: Vec<VecDeque<Ref>> = vec![bits.iter().copied().collect()];
    let mut w = 0;
    while w < columns.len() {
        while columns[w].len() >= 2 {
            let a = columns[w].pop_front().unwrap();
            let b = columns[w].pop_front().unwrap();
            let (sum, carry) = if let Some(c) = columns[w].pop_front() {
                let ab = net.push(Gate::XOR, a, b, layer);
                let sum = net.push(Gate::XOR, ab, c, layer);
                let g = net.push(Gate::AND, a, b, layer);
                let p = net.push(Gate::AND, ab, c, layer);
                (sum, net.push(Gate::OR, g, p, layer))
            } else {
                (net.push(Gate::XOR, a, b, layer), net.push(Gate::AND, a, b, layer))
            };
            columns[w].push_back(sum);
            if columns.len() == w + 1 {
                columns.push(VecDeque::new());
            }
            columns[w + 1].push_back(carry);
        }
        w += 1;
    }
    columns
        .into_iter()
        .map(|c| c.front().copied().unwrap_or(Ref::Const(false)))
        .collect()
}

/// Copy of `net` whose output groups are replaced by binary class scores.
pub fn with_adders(net: &HardNet) -> HardNet {
    let mut out = net.clone();
    let tag = out.add_layer("popcount");
    let groups = std::mem::take(&mut out.outputs);
    out.outputs = groups.iter().map(|g| popcount(&mut out, g, tag)).collect();
    out
}

fn vname(r: Ref) -> String {
    match r {
        Ref::Const(v) => format!("1'b{}", v as u8),
        Ref::Input(i) => format!("i{i}"),
        Ref::Node(n) => format!("n{n}"),
    }
}

/// Verilog expression for a gate over two operand names.
pub fn verilog_expr(gate: Gate, a: &str, b: &str) -> String {
    match gate.index() {
        0 => "1'b0".into(),
        1 => format!("{a} & {b}"),
        2 => format!("{a} & ~{b}"),
        3 => a.into(),
        4 => format!("~{a} & {b}"),
        5 => b.into(),
        6 => format!("{a} ^ {b}"),
        7 => format!("{a} | {b}"),
        8 => format!("~({a} | {b})"),
        9 => format!("~({a} ^ {b})"),
        10 => format!("~{b}"),
        11 => format!("{a} | ~{b}"),
        12 => format!("~{a}"),
        13 => format!("~{a} | {b}"),
        14 => format!("~({a} & {b})"),
        _ => "1'b1".into(),
    }
}

/// Structural Verilog: input bus `x` (bit `k` aliased as `i<k>`), one
/// `score<c>` bus per class holding that class's popcount.
pub fn emit_verilog(net: &HardNet, module: &str) -> String {
    let full = with_adders(net);
    let mut v = String::new();
    let _ = writeln!(v, "module {module} (");
    let _ = write!(v, "  input wire [{}:0] x", net.num_inputs.max(1) - 1);
    for (c, bits) in full.outputs.iter().enumerate() {
        let _ = write!(v, ",\n  output wire [{}:0] score{c}", bits.len() - 1);
    }
    let _ = writeln!(v, "\n);");
    for i in 0..net.num_inputs {
        let _ = writeln!(v, "  wire i{i} = x[{i}];");
    }
    for (i, n) in full.nodes.iter().enumerate() {
        let expr = verilog_expr(n.gate, &vname(n.inputs[0]), &vname(n.inputs[1]));
        let _ = writeln!(v, "  wire n{i};\n  assign n{i} = {expr};");
    }
    for (c, bits) in full.outputs.iter().enumerate() {
        let parts: Vec<String> = bits.iter().rev().map(|&r| vname(r)).collect();
        let _ = writeln!(v, "  assign score{c} = {{{}}};", parts.join(", "));
    }
    let _ = writeln!(v, "endmodule");
    v
}

#[derive(Serialize, Deserialize)]
struct NodeJson {
    id: usize,
    gate: u8,
    #[serde(rename = "in")]
    inputs: [Ref; 2],
    layer: u16,
}

#[derive(Serialize, Deserialize)]
struct NetlistJson {
    version: u32,
    inputs: Vec<String>,
    nodes: Vec<NodeJson>,
    outputs: Vec<Vec<Ref>>,
    #[serde(default)]
    layers: Vec<String>,
    stats: NetStats,
}

pub fn emit_netlist_json(netlist: &Netlist) -> String {
    let doc = NetlistJson {
        version: NETLIST_VERSION,
        inputs: netlist.input_names.clone(),
        nodes: netlist
            .net
            .nodes
            .iter()
            .enumerate()
            .map(|(id, n)| NodeJson { id, gate: n.gate.index(), inputs: n.inputs, layer: n.layer })
            .collect(),
        outputs: netlist.net.outputs.clone(),
        layers: netlist.net.layer_names.clone(),
        stats: netlist.stats.clone(),
    };
    serde_json::to_string(&doc).expect("netlist serializes")
}

/// Parses netlist JSON. Stored statistics are recomputed, not trusted.
pub fn load_netlist_json(text: &str) -> Result<Netlist, ExportError> {
    let doc: NetlistJson = serde_json::from_str(text)?;
    if doc.version != NETLIST_VERSION {
        return Err(ExportError::Version { found: doc.version });
    }
    let mut net = HardNet::new(doc.inputs.len());
    net.layer_names = doc.layers;
    for (position, n) in doc.nodes.iter().enumerate() {
        if n.id != position {
            return Err(ExportError::NodeId { position, found: n.id });
        }
        let gate = Gate::new(n.gate).map_err(|_| ExportError::Gate(n.gate))?;
        net.nodes.push(crate::discrete::Node { gate, inputs: n.inputs, layer: n.layer });
    }
    net.outputs = doc.outputs;
    net.validate()?;
    let mut out = Netlist::new(net);
    out.input_names = doc.inputs;
    Ok(out)
}
