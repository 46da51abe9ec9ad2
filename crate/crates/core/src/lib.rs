//! Desk-scale laboratory for studying what small autoregressive transformers
//! learn from sine-wave and Kepler-orbit trajectories.
//!
//! The pipeline is: generate trajectories ([`datagen`]), optionally tokenize
//! them ([`codec`]), train a decoder-only transformer ([`model`],
//! [`training`]) under a classification or regression formulation, roll it
//! out ([`eval`]), and read its internals with linear probes ([`probing`]).
//! [`experiments`] wires these into sweeps.

pub mod codec;
pub mod datagen;
pub mod eval;
pub mod experiments;
pub mod model;
pub mod numerics;
pub mod probing;
pub mod rng;
pub mod training;
