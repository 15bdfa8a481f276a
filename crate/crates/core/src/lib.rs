//! Simulator core for personalized federated learning with class-aware
//! prototypes and activation-derived subnetworks.
//!
//! The numeric modules ([`nn`], [`prototypes`], [`subnetworks`],
//! [`clustering`], [`fusion`]) are generic over a [`Scalar`] (`f32` or `f64`).
//! The data pipeline and the round orchestration in [`federation`] run on
//! `f64`; the aliases below name the concrete instantiations they use.

pub mod clustering;
pub mod data;
pub mod error;
pub mod federation;
pub mod fusion;
pub mod nn;
pub mod prototypes;
pub mod scalar;
pub mod seed;
pub mod subnetworks;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Working precision of the simulator.
pub type Real = f64;

pub type Matrix = nn::Matrix<Real>;
pub type DenseLayer = nn::DenseLayer<Real>;
pub type Model = nn::Mlp<Real>;
pub type Sample = nn::Sample<Real>;
pub type Prototype = prototypes::Prototype<Real>;
pub type PrototypeSet = prototypes::PrototypeSet<Real>;
pub type Subnetwork = subnetworks::Subnetwork<Real>;
pub type ClusterAssignment = clustering::ClusterAssignment<Real>;
pub type ClientUpdate = fusion::ClientUpdate<Real>;

/// Single-precision instantiations, for memory-bound experiments.
pub type Model32 = nn::Mlp<f32>;
pub type Sample32 = nn::Sample<f32>;
pub type Subnetwork32 = subnetworks::Subnetwork<f32>;
