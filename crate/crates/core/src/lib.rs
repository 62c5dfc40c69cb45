//! Minimax risk classification for sequences of evolving tasks.
//!
//! The crate tracks per-task feature expectations with Kalman-style
//! forward recursions and RTS-style backward smoothing, solves the
//! minimax dual with an accelerated subgradient method, and exposes
//! effective-sample-size analysis plus scenario drivers for domain
//! adaptation, multi-task, concept-drift and continual learning.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod datagen;
pub mod error;
pub mod ess;
pub mod exec;
pub mod features;
pub mod mrc;
pub mod scenarios;
pub mod snapshot;
pub mod task_stats;
pub mod tracker;

pub use error::{Error, Result};
pub use exec::ExecMode;
