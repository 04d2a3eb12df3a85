//! Rate-distortion estimation with an energy-based model.
//!
//! The reproduction marginal is modelled as a Boltzmann density
//! `q_θ(y) ∝ exp(−E_θ(y))` with an MLP energy; the optimal conditional is
//! then `p_θ(y|x) ∝ exp(−E_θ(y) − βρ(x, y))`. Training minimises the RD dual
//! `−E_X log E_{q_θ} exp(−βρ(X, Y))` with a gradient that needs only samples
//! from the two Boltzmann densities, drawn by Langevin chains.
//!
//! Modules, bottom-up:
//!
//! - [`energy_net`]: the energy and its input/parameter gradients
//! - [`sources`], [`distortion`]: `P_X` and `ρ`
//! - [`langevin`]: marginal and conditional samplers
//! - [`trainer`]: the training loop
//! - [`rd_estimator`]: `(R, D)` estimates, β sweeps, convergence probe
//! - [`oracles`]: closed-form curves and Blahut–Arimoto

pub mod distortion;
pub mod energy_net;
pub mod error;
pub mod io;
pub mod langevin;
pub mod oracles;
pub mod rd_estimator;
pub mod rng;
pub mod sources;
pub mod trainer;

pub use distortion::DistortionKind;
pub use energy_net::{Activation, Energy, EnergyNet, MlpConfig, ParamVector};
pub use error::{Error, Result};
pub use langevin::{sample_conditional, sample_marginal, LangevinConfig};
pub use rd_estimator::{RdPoint, Sweep, SweepPlan};
pub use sources::{SampleBatch, SourceSpec};
pub use trainer::{train, train_net, Optimizer, TrainConfig, TrainRun};
