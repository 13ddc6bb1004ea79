use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{clip_action, compute_reward, wrap_angle, EnvSpec, EnvStepResult, GoalEnv, GoalMetric, GoalPoint, ResetOutput, BLOCK_ROTATE};
use crate::error::Result;

pub const ANGLE_STEP: f64 = 0.1;

/// Rotate a block about one axis to a target orientation.
///
/// Observation: `(cos θ, sin θ)`. Goal and achieved goal: `θ` in `(-π, π]`.
#[derive(Debug, Clone)]
pub struct BlockRotate {
    spec: EnvSpec,
    theta: f64,
    goal: GoalPoint,
}

impl Default for BlockRotate {
    fn default() -> Self {
        Self::new()
    }
}

impl BlockRotate {
    pub fn new() -> Self {
        Self {
            spec: EnvSpec {
                name: BLOCK_ROTATE,
                observation_dim: 2,
                action_dim: 1,
                goal_dim: 1,
                action_low: vec![-1.0],
                action_high: vec![1.0],
                goal_low: vec![-PI],
                goal_high: vec![PI],
                goal_metric: GoalMetric::Angular,
                success_tolerance: 0.10,
                horizon: 48,
            },
            theta: 0.0,
            goal: GoalPoint::new(vec![0.0]),
        }
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn set_state(&mut self, theta: f64, goal: f64) -> ResetOutput {
        self.theta = wrap_angle(theta);
        self.goal = GoalPoint::new(vec![wrap_angle(goal)]);
        self.snapshot()
    }

    fn observation(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin()]
    }

    fn snapshot(&self) -> ResetOutput {
        ResetOutput {
            observation: self.observation(),
            achieved: GoalPoint::new(vec![self.theta]),
            goal: self.goal.clone(),
        }
    }
}

impl GoalEnv for BlockRotate {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> ResetOutput {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = wrap_angle(rng.random_range(-PI..PI));
        let goal = wrap_angle(rng.random_range(-PI..PI));
        self.set_state(theta, goal)
    }

    fn step(&mut self, action: &[f64]) -> Result<EnvStepResult> {
        let a = clip_action(&self.spec, action)?;
        self.theta = wrap_angle(self.theta + ANGLE_STEP * a[0]);
        let achieved = GoalPoint::new(vec![self.theta]);
        let reward = compute_reward(&self.spec, &achieved, &self.goal)?;
        Ok(EnvStepResult {
            observation: self.observation(),
            achieved_goal: achieved,
            reward,
            is_success: reward == 0.0,
        })
    }

    fn goal(&self) -> &GoalPoint {
        &self.goal
    }
}
