//! jetnet — a training engine for fully connected feedforward networks whose
//! cost depends on the network output *and* its derivatives with respect to
//! the inputs, up to fifth order.
//!
//! The forward pass propagates a *jet* (the value matrix plus one matrix per
//! derivative multi-index) through every layer; the backward pass propagates
//! cost partials with respect to every jet entry and assembles exact weight
//! and threshold gradients. Weights are updated with RProp. On top of the
//! engine sit three reference experiments: fitting a random 2D Fourier
//! target, a 3D curve autoencoder, and a collocation solver for a nonlinear
//! Poisson boundary value problem on the unit disk.
//!
//! Module map:
//!
//! - [`multiindex`] — multi-index arithmetic, derivative bases, and the
//!   set-partition expansion behind the multivariate chain rule
//! - [`linalg`] — dense column-major matrices and the three kernels the
//!   engine reduces to (product, transposed products, fused element-wise)
//! - [`activation`] — sigmoid derivatives through order six as polynomials
//!   of the sigmoid itself
//! - [`network`] — topology, seeded initialization, and the jet forward pass
//! - [`backprop`] — the extended backward pass and gradient checking
//! - [`rprop`] — sign-based adaptive step updates with clamping and step
//!   resurrection
//! - [`cost`] — extended fit cost, PDE residual cost, boundary substitution,
//!   and the exclusion schedule
//! - [`targets`] — analytic data generators and collocation grids
//! - [`opcount`] — the arithmetic-operation model used to equalize budgets
//!   across derivative orders
//! - [`trainer`] — the epoch loop, metrics, and checkpointing
//! - [`config`] — run configuration files and overrides

pub mod activation;
pub mod backprop;
pub mod checkpoint;
pub mod config;
pub mod cost;
pub mod error;
pub mod linalg;
pub mod multiindex;
pub mod network;
pub mod opcount;
pub mod rprop;
pub mod scalar;
pub mod targets;
pub mod trainer;

pub use activation::ActivationKind;
pub use error::{EngineError, Result};
pub use linalg::Matrix;
pub use multiindex::{BrunoTable, BrunoTerm, DerivativeBasis, MultiIndex};
pub use network::{ForwardTape, Jet, LayerSpec, NetworkParams};
pub use scalar::Scalar;
