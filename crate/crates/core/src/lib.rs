//! Differentiable architecture search in two phases: learn which edges of a
//! cell matter with a parameter-free super-net, then choose operators for the
//! surviving edges.
//!
//! Modules, bottom-up:
//!
//! * [`ops`]: candidate operators with parameter and FLOP accounting.
//! * [`supernet`]: mixed-operator cells, α/β architecture parameters,
//!   partial-channel masks, and genotype derivation.
//! * [`genotype`], [`network`]: discrete architectures and their networks.
//! * [`engine`]: topology search, operator search, direct replacement,
//!   the joint-search baseline, and evaluation.
//! * [`cost`]: closed-form FLOP/parameter counts and an enumeration oracle.
//! * [`diag`]: Hessian eigenvalue and correlation diagnostics.
//! * [`bench`]: search policies over a tabular benchmark.
//! * [`data`], [`config`], [`runner`]: datasets, experiment files, and
//!   persisted runs.

pub mod bench;
pub mod config;
pub mod cost;
pub mod data;
pub mod diag;
pub mod engine;
pub mod error;
pub mod genotype;
pub mod network;
pub mod nn;
pub mod ops;
pub mod runner;
pub mod supernet;

pub use error::{CoreError, ErrorClass, Result};
pub use genotype::{CellType, GenoEdge, Genotype};
pub use ops::{OpSpec, OperatorKind};
pub use supernet::{ArchParams, SpaceConfig, SuperNet};
