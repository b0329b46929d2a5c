//! Equilibrium Propagation for convolutional Hopfield networks.
//!
//! The crate trains energy-based convergent recurrent networks (VGG-style chains and
//! Hopfield-Resnets with 1×1 skip interactions) without backpropagation: the network
//! relaxes to a fixed point of its energy, is weakly nudged toward the target, and the
//! parameter gradient is read off the difference of energy gradients at the two
//! equilibria.
//!
//! ## Layout
//!
//! - [`numerics`]: tensors, convolution / pooling / dense primitives and their adjoints, ReLUα
//! - [`topology`]: declarative interaction graphs (VGG5, Hopfield-Resnet13, dense chains, custom)
//! - [`energy`]: the bilinear energy, its state gradient and the sync/async update schedules
//! - [`relaxation`]: free and nudged phases with convergence traces
//! - [`gradients`]: one-sided and centered estimators plus a finite-difference oracle
//! - [`training`]: Nesterov optimizer, augmentation, epoch loop, checkpoints, histograms
//! - [`data`]: IDX / CIFAR binary loaders and a synthetic prototype task
//! - [`config`] and [`cli`]: the run configuration and the `eqprop` commands

pub mod cli;
pub mod config;
pub mod data;
pub mod energy;
mod error;
pub mod gradients;
pub mod numerics;
pub mod relaxation;
pub mod topology;
pub mod training;

pub use energy::{NeuronStates, Nudge, Parameters};
pub use error::{Error, Result};
pub use gradients::{Estimator, GradientEstimate};
pub use numerics::{Scalar, Tensor};
pub use relaxation::{EquilibriumResult, RelaxationConfig, RelaxationTrace, Scheduler};
pub use topology::{EdgeOp, EdgeSpec, NetworkTopology, StateSpec};
