//! Gibbs-posterior training of sparse clipped ReLU networks.
//!
//! The posterior `exp(-lambda R_n(theta)) Pi(dtheta)` is sampled either by a
//! Metropolis-adjusted Langevin chain under the uniform prior on the
//! parameter box ([`mala`]) or by reversible-jump Metropolis-Hastings under
//! the geometric sparsity mixture ([`rjmcmc`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datagen;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod mala;
pub mod net;
pub mod numeric;
pub mod objective;
pub mod prior;
pub mod risk;
pub mod rjmcmc;

pub use error::{Error, Result};
pub use harness::{ExperimentConfig, SamplerKind};
pub use net::{ActiveSet, NetworkArch, ParamVector};
pub use objective::{NetworkRisk, RiskModel};
pub use prior::MixturePrior;
pub use risk::{Dataset, RiskReport};
