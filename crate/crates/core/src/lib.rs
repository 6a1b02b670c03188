//! Action steganography in a grid labyrinth: maze generation, reinforcement
//! learning agents, a trajectory observer and the covert channel built on them.
//!
//! Numeric code is generic over [`num::Scalar`] (`f32` or `f64`); the aliases
//! below fix the common `f64` instantiation.

pub mod adversary;
pub mod agent;
pub mod environment;
pub mod labyrinth;
pub mod num;
pub mod observer;
pub mod planning;
pub mod rng;
pub mod stego;
pub mod valuefn;

pub type Agent64 = agent::Agent<f64>;
pub type QTable64 = valuefn::QTable<f64>;
pub type DenseQNet64 = valuefn::DenseQNet<f64>;
pub type ObserverModel64 = observer::ObserverModel<f64>;
pub type ValueTable64 = planning::ValueTable<f64>;
