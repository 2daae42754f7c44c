//! Model-based cross-task transfer.
//!
//! Offline multi-task pretraining of a latent world model through
//! teacher-student distillation, followed by online finetuning on an unseen
//! target task while auxiliary pretraining tasks are reweighted by the
//! cosine similarity of their loss gradients to the target's.

mod codec;
pub mod cli;
pub mod config;
pub mod envs;
pub mod error;
pub mod experiments;
pub mod finetune;
pub mod kv;
pub mod mcts;
pub mod model;
pub mod metrics;
pub mod replay;
pub mod seeding;
pub mod selfplay;
pub mod targets;
pub mod trainer;
pub mod nn;
pub mod pretrain;

pub use error::{Error, FormatError, Result};
