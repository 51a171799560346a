//! Difficulty-based reference selection.

use rayon::prelude::*;

use crate::canvas::Canvas;
use crate::env::{Env, Observation};
use crate::error::{Error, Result};
use crate::nn::{PolicyNet, Scalar};

/// Anything that scores an observation; lower means harder.
pub trait ValueFunction: Sync {
    fn value(&self, obs: &Observation) -> Result<f64>;
}

impl<T: Scalar> ValueFunction for PolicyNet<T> {
    fn value(&self, obs: &Observation) -> Result<f64> {
        Ok(self.forward(obs)?.value)
    }
}

/// Index of the smallest value; ties go to the lowest index and NaN never wins
/// over a number.
pub fn argmin_first(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            None => best = Some(i),
            Some(b) if v < values[b] || (values[b].is_nan() && !v.is_nan()) => best = Some(i),
            _ => {}
        }
    }
    best
}

/// Value estimate of each reference at its reset state (white canvas, pen at
/// the center).
pub fn difficulty_estimates<V: ValueFunction>(references: &[&Canvas], env: &Env, vf: &V) -> Result<Vec<f64>> {
    references
        .par_iter()
        .map(|r| {
            let state = env.reset(r, None, None)?;
            vf.value(&env.observe(&state))
        })
        .collect()
}

/// The reference the value function considers hardest.
pub fn select_reference<V: ValueFunction>(references: &[&Canvas], env: &Env, vf: &V) -> Result<usize> {
    if references.is_empty() {
        return Err(Error::invalid("cannot select from an empty dataset"));
    }
    let estimates = difficulty_estimates(references, env, vf)?;
    Ok(argmin_first(&estimates).expect("non-empty"))
}
