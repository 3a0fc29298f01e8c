//! Compositional zero-shot recognition on precomputed image features.
//!
//! The label space is a Cartesian product of states and objects ("wet" x
//! "dog"). This crate trains two independent primitive classifiers over
//! shared features, scores the feasibility of every composition from external
//! word embeddings, masks infeasible compositions out of the open-world
//! argmax, pseudo-labels the missing half of partially labeled training sets,
//! and runs the generalized seen/unseen evaluation protocol (bias sweep,
//! best seen/unseen/harmonic mean, AUC).
//!
//! Entry points:
//! - [`model::KgSpModel`] — the pair of multi-layer primitive heads.
//! - [`train::train`] — supervised and partially supervised training loops.
//! - [`feasibility`] — composition feasibility scores, masks, and weight slices.
//! - [`eval`] — joint prediction, marginalization, and metric reports.
//! - [`commands`] — the operations behind the `kgsp` command-line tool.
//!
//! The `examples/` directory contains one runnable walkthrough per
//! capability; `kgsp --help` lists the file-level pipeline.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod feasibility;
pub mod model;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
