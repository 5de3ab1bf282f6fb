//! Convolutional differentiable logic gate networks.
//!
//! Networks of two-input logic gates are trained through a softmax relaxation
//! over the sixteen possible gates, arranged as convolutional gate trees with
//! `or` pooling. After training they are discretized into a plain gate DAG
//! ([`discrete::HardNet`]), simplified, evaluated 64 samples at a time
//! ([`bitsim`]) and emitted as structural Verilog or netlist JSON
//! ([`export`]).

pub mod bitsim;
pub mod data;
pub mod discrete;
pub mod export;
pub mod gates;
pub mod layers;
pub mod model;
pub mod train;

mod parallel;

pub use discrete::{HardNet, Netlist, Ref};
pub use gates::{Gate, GateDistribution};
pub use model::{Dataset, ModelSpec, Network};
pub use parallel::with_threads;
pub use train::{fit, TrainConfig};

/// Floating point type the relaxed network is evaluated in.
///
/// Training runs in `f32`; gradient checks run the same code in `f64`.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + std::ops::AddAssign
    + std::iter::Sum
    + Default
    + Send
    + Sync
    + std::fmt::Debug
    + std::fmt::Display
    + 'static
{
    fn lit(x: f64) -> Self {
        Self::from_f64(x).unwrap()
    }
}

impl Real for f32 {}
impl Real for f64 {}
