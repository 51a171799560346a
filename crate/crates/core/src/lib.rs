//! Stroke-based painting agent trained with PPO.
//!
//! The crate covers the painting environment ([`env`]), image losses
//! ([`losses`]), the actor-critic network ([`nn`]), the trainer
//! ([`trainer`]), inference rollout ([`rollout`]), finite-difference
//! gradient checks ([`gradcheck`]) and the command line ([`cli`]).

// `!(x > 0.0)` style checks are how NaN gets rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod canvas;
pub mod cli;
pub mod env;
mod error;
pub mod gradcheck;
pub mod losses;
pub mod nn;
pub mod rollout;
mod seeding;
pub mod trainer;

pub use canvas::{Canvas, Rgb};
pub use env::{Action, Env, EnvConfig, EnvState, Observation};
pub use error::{Error, Result};
pub use losses::{Loss, LossKind, Metric};
pub use nn::{NetSpec, PolicyNet};
