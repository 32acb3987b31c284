//! Layer-input sensitivity analysis and mixed-precision layout planning.
//!
//! The crate simulates reduced precision by perturbing an `f64` network:
//! each layer's incoming activation and parameters receive bounded errors
//! according to a [`layout::LayoutPlan`]. Plans are derived from
//! per-layer sensitivity statistics gathered with reverse-mode
//! differentiation ([`graph`]).
//!
//! The crate is `no_std` and only needs `alloc`. File formats, threading and
//! the command-line harness live in the `qlayout` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod dataset;
pub mod error;
pub mod exec;
pub mod fd;
pub mod graph;
pub mod layout;
pub mod network;
pub mod noise;
pub mod rng;
pub mod sensitivity;
pub mod tensor;
pub mod train;

pub use dataset::{Dataset, GeneratorKind};
pub use error::{Error, Result};
pub use exec::{Executor, Serial};
pub use graph::{Gradients, NodeId, Op, TapeGraph};
pub use layout::{LayoutPlan, PlanMode, QuantLevel, QuantLevelSet};
pub use network::{LayerParams, LayerSpec, LossKind, Network, NetworkSpec};
pub use noise::{NoiseKind, NoiseModel, NoiseReport, SimConfig};
pub use sensitivity::{Aggregate, SensitivityProfile};
pub use tensor::Tensor;
pub use train::{Checkpoint, TrainConfig};
