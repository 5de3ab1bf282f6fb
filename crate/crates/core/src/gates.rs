//! The sixteen two-input logic gates, their real-valued relaxations and the
//! learnable softmax mixture over them.
//!
//! A gate index packs its truth table as
//! `i = g(1,1)·1 + g(1,0)·2 + g(0,1)·4 + g(0,0)·8`, which puts FALSE at 0,
//! AND at 1, the pass-through `A` at 3, `B` at 5, XOR at 6, OR at 7 and TRUE
//! at 15.
//!
//! Every relaxation is the multilinear extension of the truth table, i.e. the
//! expected output when the inputs are independent Bernoulli variables. It is
//! stored as four coefficients `g(a,b) = c0 + c1·a + c2·b + c3·a·b`; a softmax
//! mixture of gates is again such a polynomial, which is what the layers
//! evaluate.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Real;

/// Tolerance on the `[0,1]` input domain of relaxed gates.
pub const DOMAIN_TOLERANCE: f64 = 1e-9;

/// Default logit placed on gate `A` by [`residual_init`].
pub const RESIDUAL_STRENGTH: f64 = 5.0;

#[derive(Debug, Error, PartialEq)]
pub enum GateError {
    #[error("gate index {0} is outside 0..=15")]
    InvalidIndex(u8),
    #[error("relaxed gate input {0} is outside [0, 1]")]
    Domain(f64),
    #[error("residual init strength must be non-negative, got {0}")]
    NegativeStrength(f64),
}

/// One of the sixteen binary boolean functions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Gate(u8);

const GATE_NAMES: [&str; 16] = [
    "FALSE", "AND", "A_AND_NOT_B", "A", "NOT_A_AND_B", "B", "XOR", "OR", "NOR", "XNOR", "NOT_B",
    "A_OR_NOT_B", "NOT_A", "NOT_A_OR_B", "NAND", "TRUE",
];

impl Gate {
    pub const FALSE: Gate = Gate(0);
    pub const AND: Gate = Gate(1);
    pub const A: Gate = Gate(3);
    pub const B: Gate = Gate(5);
    pub const XOR: Gate = Gate(6);
    pub const OR: Gate = Gate(7);
    pub const NOR: Gate = Gate(8);
    pub const XNOR: Gate = Gate(9);
    pub const NOT_B: Gate = Gate(10);
    pub const NOT_A: Gate = Gate(12);
    pub const NAND: Gate = Gate(14);
    pub const TRUE: Gate = Gate(15);

    pub fn new(index: u8) -> Result<Gate, GateError> {
        if index < 16 {
            Ok(Gate(index))
        } else {
            Err(GateError::InvalidIndex(index))
        }
    }

    #[inline]
    pub const fn index(self) -> u8 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = Gate> {
        (0..16).map(Gate)
    }

    pub fn name(self) -> &'static str {
        GATE_NAMES[self.0 as usize]
    }

    #[inline]
    pub fn eval(self, a: bool, b: bool) -> bool {
        let bit = 3 - (2 * a as u8 + b as u8);
        (self.0 >> bit) & 1 == 1
    }

    /// The gate applied lane-wise to two 64-bit words.
    #[inline(always)]
    pub fn eval_word(self, a: u64, b: u64) -> u64 {
        match self.0 {
            0 => 0,
            1 => a & b,
            2 => a & !b,
            3 => a,
            4 => !a & b,
            5 => b,
            6 => a ^ b,
            7 => a | b,
            8 => !(a | b),
            9 => !(a ^ b),
            10 => !b,
            11 => a | !b,
            12 => !a,
            13 => !a | b,
            14 => !(a & b),
            _ => !0,
        }
    }

    /// Multilinear coefficients `[c0, c1, c2, c3]` of
    /// `c0 + c1·a + c2·b + c3·a·b`, derived from the truth table.
    pub fn coefficients(self) -> [i8; 4] {
        let t = |a, b| self.eval(a, b) as i8;
        let (t00, t01, t10, t11) = (t(false, false), t(false, true), t(true, false), t(true, true));
        [t00, t10 - t00, t01 - t00, t11 - t10 - t01 + t00]
    }

    /// Multilinear relaxation without domain checks.
    #[inline]
    pub fn relaxed<T: Real>(self, a: T, b: T) -> T {
        let c = self.coefficients();
        let f = |x: i8| T::from_i8(x).unwrap();
        f(c[0]) + f(c[1]) * a + f(c[2]) * b + f(c[3]) * a * b
    }

    /// `g'(a, b) = g(b, a)`.
    pub fn mirrored(self) -> Gate {
        let g = self.0;
        Gate((g & 0b1001) | ((g & 0b0010) << 1) | ((g & 0b0100) >> 1))
    }

    /// `g'(a, b) = !g(a, b)`.
    pub fn complement(self) -> Gate {
        Gate(15 - self.0)
    }

    /// `g'(a, b) = g(!a, b)`.
    pub fn invert_a(self) -> Gate {
        Self::from_fn(|a, b| self.eval(!a, b))
    }

    /// `g'(a, b) = g(a, !b)`.
    pub fn invert_b(self) -> Gate {
        Self::from_fn(|a, b| self.eval(a, !b))
    }

    pub fn depends_on_a(self) -> bool {
        self.eval(false, false) != self.eval(true, false)
            || self.eval(false, true) != self.eval(true, true)
    }

    pub fn depends_on_b(self) -> bool {
        self.eval(false, false) != self.eval(false, true)
            || self.eval(true, false) != self.eval(true, true)
    }

    /// Symmetric in its inputs.
    pub fn is_commutative(self) -> bool {
        self.mirrored() == self
    }

    pub fn from_fn(f: impl Fn(bool, bool) -> bool) -> Gate {
        let mut index = 0u8;
        for a in [false, true] {
            for b in [false, true] {
                if f(a, b) {
                    index |= 1 << (3 - (2 * a as u8 + b as u8));
                }
            }
        }
        Gate(index)
    }
}

impl TryFrom<u8> for Gate {
    type Error = GateError;
    fn try_from(value: u8) -> Result<Self, Self::Error> {
        Gate::new(value)
    }
}

impl From<Gate> for u8 {
    fn from(g: Gate) -> u8 {
        g.0
    }
}

impl std::fmt::Display for Gate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

pub fn truth_table(gate: Gate, a: bool, b: bool) -> bool {
    gate.eval(a, b)
}

fn check_domain(x: f64) -> Result<(), GateError> {
    if (-DOMAIN_TOLERANCE..=1.0 + DOMAIN_TOLERANCE).contains(&x) {
        Ok(())
    } else {
        Err(GateError::Domain(x))
    }
}

/// Relaxed gate on `[0,1]²`, rejecting inputs outside the domain.
pub fn relaxed_gate(gate: Gate, a: f64, b: f64) -> Result<f64, GateError> {
    check_domain(a)?;
    check_domain(b)?;
    Ok(gate.relaxed(a, b))
}

/// Numerically stable softmax over the 16 gate logits.
pub fn softmax16<T: Real>(z: &[T]) -> [T; 16] {
    debug_assert_eq!(z.len(), 16);
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let mut p = [T::zero(); 16];
    let mut sum = T::zero();
    for (p, &z) in p.iter_mut().zip(z) {
        *p = (z - max).exp();
        sum += *p;
    }
    for p in &mut p {
        *p = *p / sum;
    }
    p
}

/// Coefficients of the mixture `Σ p_i g_i` for gate probabilities `p`.
#[inline]
pub fn mixture_coefficients<T: Real>(p: &[T; 16]) -> [T; 4] {
    let mut c = [T::zero(); 4];
    for (i, &p) in p.iter().enumerate() {
        let g = GATE_COEFFS[i];
        for k in 0..4 {
            if g[k] != 0 {
                c[k] += p * T::from_i8(g[k]).unwrap();
            }
        }
    }
    c
}

/// Chain rule from coefficient gradients back to the 16 logits.
///
/// `dz_i = p_i · (dp_i − Σ_j p_j dp_j)` with `dp_i = dc · coeffs(g_i)`.
#[inline]
pub fn logit_gradient<T: Real>(p: &[T; 16], dc: &[T; 4]) -> [T; 16] {
    let mut dp = [T::zero(); 16];
    let mut mean = T::zero();
    for i in 0..16 {
        let g = GATE_COEFFS[i];
        let mut v = T::zero();
        for k in 0..4 {
            v += dc[k] * T::from_i8(g[k]).unwrap();
        }
        dp[i] = v;
        mean += p[i] * v;
    }
    let mut dz = [T::zero(); 16];
    for i in 0..16 {
        dz[i] = p[i] * (dp[i] - mean);
    }
    dz
}

/// Coefficient table indexed by gate.
pub static GATE_COEFFS: [[i8; 4]; 16] = {
    let mut table = [[0i8; 4]; 16];
    let mut i = 0;
    while i < 16 {
        let t11 = (i & 1) as i8;
        let t10 = ((i >> 1) & 1) as i8;
        let t01 = ((i >> 2) & 1) as i8;
        let t00 = ((i >> 3) & 1) as i8;
        table[i] = [t00, t10 - t00, t01 - t00, t11 - t10 - t01 + t00];
        i += 1;
    }
    table
};

/// A distribution over the sixteen gates.
///
/// `Logits` is the trainable softmax parameterization; `OneHot` is a hard
/// choice that bypasses the softmax entirely.
#[derive(Clone, Debug, PartialEq)]
pub enum GateDistribution {
    Logits([f64; 16]),
    OneHot(Gate),
}

impl GateDistribution {
    pub fn uniform() -> Self {
        GateDistribution::Logits([0.0; 16])
    }

    pub fn probabilities(&self) -> [f64; 16] {
        match self {
            GateDistribution::Logits(z) => softmax16(z),
            GateDistribution::OneHot(g) => {
                let mut p = [0.0; 16];
                p[g.index() as usize] = 1.0;
                p
            }
        }
    }

    /// Most probable gate; ties resolve to the lowest index.
    pub fn argmax(&self) -> Gate {
        match self {
            GateDistribution::OneHot(g) => *g,
            GateDistribution::Logits(z) => Gate(argmax_lowest(z) as u8),
        }
    }
}

/// Index of the largest value; the first one on ties.
pub fn argmax_lowest<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// `Σ_i p_i · g_i(a, b)`, summed gate by gate.
pub fn mixed_gate_forward(dist: &GateDistribution, a: f64, b: f64) -> Result<f64, GateError> {
    check_domain(a)?;
    check_domain(b)?;
    let p = dist.probabilities();
    Ok(Gate::all()
        .zip(p)
        .map(|(g, p)| p * g.relaxed(a, b))
        .sum())
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixedGateGrad {
    pub dz: [f64; 16],
    pub da: f64,
    pub db: f64,
}

pub fn mixed_gate_backward(
    dist: &GateDistribution,
    a: f64,
    b: f64,
    upstream: f64,
) -> Result<MixedGateGrad, GateError> {
    let f = mixed_gate_forward(dist, a, b)?;
    let p = dist.probabilities();
    let mut dz = [0.0; 16];
    let (mut da, mut db) = (0.0, 0.0);
    for (i, g) in Gate::all().enumerate() {
        let [_, c1, c2, c3] = g.coefficients().map(f64::from);
        if matches!(dist, GateDistribution::Logits(_)) {
            dz[i] = upstream * p[i] * (g.relaxed(a, b) - f);
        }
        da += p[i] * (c1 + c3 * b);
        db += p[i] * (c2 + c3 * a);
    }
    Ok(MixedGateGrad {
        dz,
        da: upstream * da,
        db: upstream * db,
    })
}

/// Puts `strength` on the pass-through gate `A` and zero on the others.
pub fn residual_init(strength: f64) -> Result<GateDistribution, GateError> {
    if !(strength >= 0.0) {
        return Err(GateError::NegativeStrength(strength));
    }
    let mut z = [0.0; 16];
    z[Gate::A.index() as usize] = strength;
    Ok(GateDistribution::Logits(z))
}

/// Independent standard normal logits.
pub fn gaussian_init<R: Rng + ?Sized>(rng: &mut R) -> GateDistribution {
    let mut z = [0.0; 16];
    for z in &mut z {
        *z = StandardNormal.sample(rng);
    }
    GateDistribution::Logits(z)
}
