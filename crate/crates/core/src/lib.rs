//! Probe-then-commit (PtC) multi-objective bandits.
//!
//! Each round the learner probes `q` of `K` arms, observes their
//! `d`-dimensional outcome vectors, and commits to exactly one of them.
//! This crate provides the Pareto primitives, dominated-hypervolume
//! computation, preference scalarizers, a synthetic environment with
//! multi-modal observations, the optimistic PtC learner, evaluation
//! metrics, and an experiment harness that writes deterministic CSV/JSON.

pub mod environment;
pub mod error;
pub mod harness;
pub mod hypervolume;
pub mod learner;
pub mod lp;
pub mod metrics;
pub mod pareto;
pub mod rng;
pub mod scalarize;

pub use error::{Error, Result};
pub use pareto::{ObjectiveVector, PointSet};
