#![allow(dead_code)]

pub mod checks;

use std::collections::HashMap;

use logictree::discrete::{HardNet, Ref};
use logictree::layers::Shape;
use logictree::model::{Hyperparameters, LayerSpec, ModelSpec};
use logictree::{Dataset, Gate};
use rand::Rng;

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Central difference of `f` at `x`.
pub fn central<F: FnMut(f64) -> f64>(mut f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Five-point central difference, `O(h^4)` truncation error.
pub fn central5<F: FnMut(f64) -> f64>(mut f: F, x: f64, h: f64) -> f64 {
    (f(x - 2.0 * h) - 8.0 * f(x - h) + 8.0 * f(x + h) - f(x + 2.0 * h)) / (12.0 * h)
}

pub fn custom_spec(input: Shape, classes: usize, layers: Vec<LayerSpec>, tau: f64) -> ModelSpec {
    ModelSpec {
        dataset: Dataset::Custom,
        size: None,
        k: 1,
        ox: 1,
        input_bits: 1,
        input,
        classes,
        layers,
        hyper: Hyperparameters {
            tau,
            learning_rate: 0.05,
            weight_decay: 0.0,
            batch_size: 32,
            eval_interval: 100,
            validation_size: 0,
        },
    }
}

pub fn conv(kernels: usize, receptive: usize, depth: usize, padding: usize) -> LayerSpec {
    LayerSpec::TreeConv {
        kernels,
        receptive: [receptive, receptive],
        depth,
        padding,
        channel_restriction: Some(2),
        groups: 1,
    }
}

/// Small conv/pool/random net over a 2x8x8 input with 2 classes.
pub fn tiny_conv_spec(tau: f64) -> ModelSpec {
    custom_spec(
        Shape::new(2, 8, 8),
        2,
        vec![
            conv(3, 3, 2, 1),
            LayerSpec::OrPool,
            conv(4, 3, 2, 1),
            LayerSpec::OrPool,
            LayerSpec::Random { out: 24 },
            LayerSpec::Random { out: 12 },
        ],
        tau,
    )
}

/// Random DAG rich in simplifiable structure: constants, pass-throughs,
/// inverters, duplicated nodes and unused nodes.
pub fn random_net<R: Rng>(rng: &mut R, inputs: usize, nodes: usize, classes: usize, group: usize) -> HardNet {
    let mut net = HardNet::new(inputs);
    let tag = net.add_layer("random");
    let special = [Gate::A, Gate::B, Gate::NOT_A, Gate::NOT_B, Gate::FALSE, Gate::TRUE];
    for i in 0..nodes {
        let pick = |rng: &mut R| -> Ref {
            let r: f64 = rng.random();
            if r < 0.05 {
                Ref::Const(rng.random())
            } else if i == 0 || r < 0.35 {
                Ref::Input(rng.random_range(0..inputs as u32))
            } else {
                Ref::Node(rng.random_range(i.saturating_sub(24)..i) as u32)
            }
        };
        let gate = if rng.random::<f64>() < 0.3 {
            special[rng.random_range(0..special.len())]
        } else {
            Gate::new(rng.random_range(0..16)).unwrap()
        };
        let a = pick(rng);
        let b = if rng.random::<f64>() < 0.05 { a } else { pick(rng) };
        if rng.random::<f64>() < 0.1 && i > 0 {
            // Exact duplicate of an earlier node.
            let j = rng.random_range(0..i);
            let n = net.nodes[j];
            net.push(n.gate, n.inputs[0], n.inputs[1], tag);
        } else {
            net.push(gate, a, b, tag);
        }
    }
    net.outputs = (0..classes)
        .map(|_| {
            (0..group)
                .map(|_| {
                    if nodes > 0 && rng.random::<f64>() < 0.9 {
                        Ref::Node(rng.random_range(nodes.saturating_sub(nodes / 2 + 1)..nodes) as u32)
                    } else {
                        Ref::Input(rng.random_range(0..inputs as u32))
                    }
                })
                .collect()
        })
        .collect();
    net
}

/// Minimal evaluator for the structural Verilog this crate emits: `wire`
/// aliases of input bits, single-expression `assign`s over `~ & | ^`,
/// parentheses and `1'b0` / `1'b1`, and concatenated score buses.
pub struct VerilogModule {
    pub inputs: usize,
    wires: Vec<(String, Expr)>,
    pub scores: Vec<Vec<String>>,
}

#[derive(Clone, Debug)]
enum Expr {
    Const(bool),
    Bit(usize),
    Name(String),
    Not(Box<Expr>),
    Bin(char, Box<Expr>, Box<Expr>),
}

struct Parser<'a> {
    toks: Vec<&'a str>,
    pos: usize,
}

fn tokenize(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let bytes = s.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_whitespace() {
            i += 1;
        } else if "~&|^()".contains(c) {
            out.push(&s[i..i + 1]);
            i += 1;
        } else {
            let start = i;
            while i < bytes.len() && !(bytes[i] as char).is_whitespace() && !"~&|^()".contains(bytes[i] as char) {
                i += 1;
            }
            out.push(&s[start..i]);
        }
    }
    out
}

impl Parser<'_> {
    fn peek(&self) -> Option<&str> {
        self.toks.get(self.pos).copied()
    }

    fn next(&mut self) -> &str {
        self.pos += 1;
        self.toks[self.pos - 1]
    }

    // Precedence: ~ > & > ^ > |
    fn expr(&mut self) -> Expr {
        self.binary(0)
    }

    fn binary(&mut self, level: usize) -> Expr {
        const OPS: [char; 3] = ['|', '^', '&'];
        if level == OPS.len() {
            return self.unary();
        }
        let mut lhs = self.binary(level + 1);
        while self.peek() == Some(&OPS[level].to_string()) {
            self.next();
            let rhs = self.binary(level + 1);
            lhs = Expr::Bin(OPS[level], Box::new(lhs), Box::new(rhs));
        }
        lhs
    }

    fn unary(&mut self) -> Expr {
        match self.next() {
            "~" => Expr::Not(Box::new(self.unary())),
            "(" => {
                let e = self.expr();
                assert_eq!(self.next(), ")");
                e
            }
            "1'b0" => Expr::Const(false),
            "1'b1" => Expr::Const(true),
            t if t.starts_with("x[") => Expr::Bit(t[2..t.len() - 1].parse().unwrap()),
            t => Expr::Name(t.to_string()),
        }
    }
}

fn parse_expr(s: &str) -> Expr {
    let mut p = Parser { toks: tokenize(s), pos: 0 };
    let e = p.expr();
    assert!(p.peek().is_none(), "trailing tokens in {s:?}");
    e
}

impl VerilogModule {
    pub fn parse(text: &str) -> Self {
        let mut inputs = 0;
        let mut wires = Vec::new();
        let mut scores = Vec::new();
        for line in text.lines().map(str::trim) {
            if let Some(rest) = line.strip_prefix("input wire [") {
                inputs = rest.split(':').next().unwrap().parse::<usize>().unwrap() + 1;
            } else if let Some(rest) = line.strip_prefix("wire ") {
                if let Some((name, expr)) = rest.trim_end_matches(';').split_once(" = ") {
                    wires.push((name.to_string(), parse_expr(expr)));
                }
            } else if let Some(rest) = line.strip_prefix("assign ") {
                let (name, expr) = rest.trim_end_matches(';').split_once(" = ").unwrap();
                if name.starts_with("score") {
                    let inner = expr.trim_start_matches('{').trim_end_matches('}');
                    let mut bits: Vec<String> = inner.split(", ").map(str::to_string).collect();
                    bits.reverse();
                    scores.push(bits);
                } else {
                    wires.push((name.to_string(), parse_expr(expr)));
                }
            }
        }
        VerilogModule { inputs, wires, scores }
    }

    /// Class scores as integers.
    pub fn eval(&self, x: &[bool]) -> Vec<u32> {
        let mut env: HashMap<&str, bool> = HashMap::new();
        fn ev(e: &Expr, x: &[bool], env: &HashMap<&str, bool>) -> bool {
            match e {
                Expr::Const(v) => *v,
                Expr::Bit(i) => x[*i],
                Expr::Name(n) => *env.get(n.as_str()).unwrap_or_else(|| panic!("undefined {n}")),
                Expr::Not(a) => !ev(a, x, env),
                Expr::Bin(op, a, b) => {
                    let (a, b) = (ev(a, x, env), ev(b, x, env));
                    match op {
                        '&' => a & b,
                        '|' => a | b,
                        _ => a ^ b,
                    }
                }
            }
        }
        for (name, e) in &self.wires {
            let v = ev(e, x, &env);
            env.insert(name, v);
        }
        self.scores
            .iter()
            .map(|bits| {
                bits.iter()
                    .enumerate()
                    .map(|(k, b)| {
                        let v = match b.as_str() {
                            "1'b0" => false,
                            "1'b1" => true,
                            n => env[n],
                        };
                        (v as u32) << k
                    })
                    .sum()
            })
            .collect()
    }
}
