//! Goal-conditioned environments with sparse rewards.
//!
//! Three desk-scale tasks are provided, selected by name:
//! `planar-push`, `pick-place` and `block-rotate`. Positions live on a unit
//! table; the rotation task works on a single wrapped angle.

mod pick_place;
mod push;
mod rotate;

use std::f64::consts::PI;
use std::ops::Deref;

pub use pick_place::PickPlace;
pub use push::PlanarPush;
pub use rotate::BlockRotate;

use crate::error::{Error, Result};

pub const PLANAR_PUSH: &str = "planar-push";
pub const PICK_PLACE: &str = "pick-place";
pub const BLOCK_ROTATE: &str = "block-rotate";

pub const ENV_NAMES: [&str; 3] = [PLANAR_PUSH, PICK_PLACE, BLOCK_ROTATE];

/// A point in goal space: serves as desired goal, achieved goal and sub-goal.
#[derive(Debug, Clone, PartialEq)]
pub struct GoalPoint {
    pub coords: Vec<f64>,
}

impl GoalPoint {
    pub fn new(coords: Vec<f64>) -> Self {
        Self { coords }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

impl Deref for GoalPoint {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.coords
    }
}

impl From<Vec<f64>> for GoalPoint {
    fn from(coords: Vec<f64>) -> Self {
        Self { coords }
    }
}

pub type Observation = Vec<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GoalMetric {
    Euclidean,
    /// Shorter arc between two wrapped angles.
    Angular,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub name: &'static str,
    pub observation_dim: usize,
    pub action_dim: usize,
    pub goal_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub goal_low: Vec<f64>,
    pub goal_high: Vec<f64>,
    pub goal_metric: GoalMetric,
    pub success_tolerance: f64,
    pub horizon: usize,
}

impl EnvSpec {
    pub fn clip_goal(&self, coords: &mut [f64]) {
        for ((c, &lo), &hi) in coords.iter_mut().zip(&self.goal_low).zip(&self.goal_high) {
            *c = c.clamp(lo, hi);
        }
        if self.goal_metric == GoalMetric::Angular {
            for c in coords.iter_mut() {
                *c = wrap_angle(*c);
            }
        }
    }

    pub fn goal_in_bounds(&self, goal: &[f64]) -> bool {
        goal.len() == self.goal_dim
            && goal
                .iter()
                .zip(&self.goal_low)
                .zip(&self.goal_high)
                .all(|((&c, &lo), &hi)| c >= lo && c <= hi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResetOutput {
    pub observation: Observation,
    pub achieved: GoalPoint,
    pub goal: GoalPoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvStepResult {
    pub observation: Observation,
    pub achieved_goal: GoalPoint,
    pub reward: f64,
    pub is_success: bool,
}

/// Contract shared by every goal-conditioned environment.
pub trait GoalEnv {
    fn spec(&self) -> &EnvSpec;

    /// Places block, gripper and goal from `seed`; identical seeds give identical states.
    fn reset(&mut self, seed: u64) -> ResetOutput;

    fn step(&mut self, action: &[f64]) -> Result<EnvStepResult>;

    fn goal(&self) -> &GoalPoint;

    /// Resets to a fixed, named configuration (used by the value-landscape export).
    fn reset_scenario(&mut self, name: &str) -> Result<ResetOutput> {
        Err(Error::UnknownScenario {
            scenario: name.to_string(),
            env: self.spec().name.to_string(),
        })
    }
}

pub fn make_env(name: &str) -> Result<Box<dyn GoalEnv + Send>> {
    match name {
        PLANAR_PUSH => Ok(Box::new(PlanarPush::new())),
        PICK_PLACE => Ok(Box::new(PickPlace::new())),
        BLOCK_ROTATE => Ok(Box::new(BlockRotate::new())),
        other => Err(Error::UnknownEnv(other.to_string())),
    }
}

pub fn env_spec(name: &str) -> Result<EnvSpec> {
    Ok(make_env(name)?.spec().clone())
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut x = theta.rem_euclid(2.0 * PI);
    if x > PI {
        x -= 2.0 * PI;
    }
    x
}

pub fn goal_distance(spec: &EnvSpec, a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != spec.goal_dim || b.len() != spec.goal_dim {
        return Err(Error::DimensionMismatch {
            context: "goal distance",
            expected: spec.goal_dim,
            got: if a.len() != spec.goal_dim { a.len() } else { b.len() },
        });
    }
    Ok(match spec.goal_metric {
        GoalMetric::Euclidean => a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt(),
        GoalMetric::Angular => a
            .iter()
            .zip(b)
            .map(|(x, y)| {
                let d = (x - y).abs().rem_euclid(2.0 * PI);
                d.min(2.0 * PI - d)
            })
            .sum::<f64>(),
    })
}

/// Sparse reward: 0 when strictly within tolerance, −1 otherwise.
pub fn compute_reward(spec: &EnvSpec, achieved: &[f64], goal: &[f64]) -> Result<f64> {
    let d = goal_distance(spec, achieved, goal)?;
    Ok(if d < spec.success_tolerance { 0.0 } else { -1.0 })
}

pub(crate) fn clip_action(spec: &EnvSpec, action: &[f64]) -> Result<Vec<f64>> {
    if action.len() != spec.action_dim {
        return Err(Error::DimensionMismatch {
            context: "action",
            expected: spec.action_dim,
            got: action.len(),
        });
    }
    Ok(action
        .iter()
        .zip(&spec.action_low)
        .zip(&spec.action_high)
        .map(|((&a, &lo), &hi)| if a.is_nan() { 0.0 } else { a.clamp(lo, hi) })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn planar() -> EnvSpec {
        env_spec(PLANAR_PUSH).unwrap()
    }

    #[test]
    fn distance_examples() {
        let s = planar();
        assert_eq!(goal_distance(&s, &[0.3, 0.3], &[0.3, 0.3]).unwrap(), 0.0);
        assert_eq!(goal_distance(&s, &[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        let r = env_spec(BLOCK_ROTATE).unwrap();
        let d = goal_distance(&r, &[3.0], &[-3.0]).unwrap();
        assert!((d - (2.0 * PI - 6.0)).abs() < 1e-12);
        assert!((d - 0.28319).abs() < 1e-5);
    }

    #[test]
    fn distance_dimension_mismatch() {
        assert!(goal_distance(&planar(), &[0.0], &[0.0, 1.0]).is_err());
        assert!(compute_reward(&planar(), &[0.0, 0.0, 0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn reward_threshold_is_strict() {
        let s = planar();
        assert_eq!(compute_reward(&s, &[0.2, 0.2], &[0.2, 0.2]).unwrap(), 0.0);
        assert_eq!(compute_reward(&s, &[0.0, 0.0], &[0.049, 0.0]).unwrap(), 0.0);
        assert_eq!(compute_reward(&s, &[0.0, 0.0], &[0.05, 0.0]).unwrap(), -1.0);
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert_eq!(wrap_angle(3.1), 3.1);
        assert!((wrap_angle(3.2) - (3.2 - 2.0 * PI)).abs() < 1e-12);
        assert!((wrap_angle(7.0) - (7.0 - 2.0 * PI)).abs() < 1e-12);
    }

    #[test]
    fn unknown_env_name() {
        assert!(matches!(make_env("fetch-slide"), Err(Error::UnknownEnv(_))));
    }
}
