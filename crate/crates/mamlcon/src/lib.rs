//! Few-shot continual word classification.
//!
//! This crate implements MAMLCon — a model-agnostic meta-learning variant
//! that rehearses one stored template per class after each adaptation phase —
//! alongside the OML and no-pretraining baselines, the episode machinery to
//! train and evaluate them, an MFCC front end for isolated-word audio, and an
//! experiment harness with a CLI.
//!
//! Module map:
//! - [`nn`] — tensors, layer forward/backward rules, Adam, gradient checking
//! - [`model`] — the conv/MLP classifier, class masking, the FE/head split
//! - [`episodes`] — scenario notation, schedules, episode sampling
//! - [`metalearn`] — inner loops, template rehearsal, meta-training, deployment
//! - [`data`] — MFCC extraction, feature archives, synthetic tasks
//! - [`harness`] — retention reports, experiment runner, CSV and table output

pub mod episodes;
pub mod error;
pub mod metalearn;
pub mod model;
pub mod nn;
pub mod seeding;

pub use error::{Error, Result};
