//! Dot-to-Dot: hierarchical goal-conditioned reinforcement learning.
//!
//! A high-level agent proposes sub-goals in goal space, a low-level agent
//! learns to reach them, and both are trained off-policy with deterministic
//! policy gradients on hindsight-relabeled experience.
//!
//! Module map:
//! - [`nn`]: dense networks, backprop, Adam, Polyak averaging
//! - [`envs`]: goal-conditioned environments with sparse rewards
//! - [`replay`]: episodic buffer with hindsight relabeling at both levels
//! - [`agent`]: the actor-critic used at each level
//! - [`controller`]: hierarchical rollouts, epoch training, evaluation
//! - [`config`], [`checkpoint`], [`harness`]: run configuration, persistence,
//!   multi-seed runs, evaluation reports and value-landscape export

pub mod agent;
pub mod checkpoint;
pub mod config;
pub mod controller;
pub mod envs;
pub mod error;
pub mod harness;
pub mod nn;
pub mod replay;

pub use error::{Error, Result};
