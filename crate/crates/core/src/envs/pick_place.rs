use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::push::{penetrates, planar_contact, spawn_on_table, BLOCK_HALF_SIDE, STEP_SIZE};
use super::{clip_action, compute_reward, EnvSpec, EnvStepResult, GoalEnv, GoalMetric, GoalPoint, ResetOutput, PICK_PLACE};
use crate::error::{Error, Result};

pub const MAX_HEIGHT: f64 = 0.5;
pub const GRASP_RADIUS: f64 = 0.05;
/// Gripper heights below this interact with a resting block in the plane.
const CONTACT_HEIGHT: f64 = 2.0 * BLOCK_HALF_SIDE;
const MAX_GOAL_HEIGHT: f64 = 0.3;

/// Pick up a block and place it at a 3-D goal (on the table or in the air).
///
/// Observation: gripper xyz, grip aperture, block xyz, block − gripper xyz.
/// Action: gripper xyz displacement plus a grip channel (< 0 closes).
///
/// Below the block height the gripper pushes the block as in the planar task;
/// purely vertical motion onto the block is allowed so it can be grasped.
#[derive(Debug, Clone)]
pub struct PickPlace {
    spec: EnvSpec,
    gripper: [f64; 3],
    aperture: f64,
    block: [f64; 3],
    attached: bool,
    goal: GoalPoint,
}

impl Default for PickPlace {
    fn default() -> Self {
        Self::new()
    }
}

impl PickPlace {
    pub fn new() -> Self {
        let lo = BLOCK_HALF_SIDE;
        let hi = 1.0 - BLOCK_HALF_SIDE;
        Self {
            spec: EnvSpec {
                name: PICK_PLACE,
                observation_dim: 10,
                action_dim: 4,
                goal_dim: 3,
                action_low: vec![-1.0; 4],
                action_high: vec![1.0; 4],
                goal_low: vec![lo, lo, 0.0],
                goal_high: vec![hi, hi, MAX_HEIGHT],
                goal_metric: GoalMetric::Euclidean,
                success_tolerance: 0.05,
                horizon: 50,
            },
            gripper: [0.5, 0.3, 0.0],
            aperture: 1.0,
            block: [0.5, 0.5, 0.0],
            attached: false,
            goal: GoalPoint::new(vec![0.5, 0.5, 0.0]),
        }
    }

    pub fn gripper(&self) -> [f64; 3] {
        self.gripper
    }

    pub fn block(&self) -> [f64; 3] {
        self.block
    }

    pub fn attached(&self) -> bool {
        self.attached
    }

    fn observation(&self) -> Vec<f64> {
        let (g, b) = (self.gripper, self.block);
        vec![
            g[0],
            g[1],
            g[2],
            self.aperture,
            b[0],
            b[1],
            b[2],
            b[0] - g[0],
            b[1] - g[1],
            b[2] - g[2],
        ]
    }

    fn snapshot(&self) -> ResetOutput {
        ResetOutput {
            observation: self.observation(),
            achieved: GoalPoint::new(self.block.to_vec()),
            goal: self.goal.clone(),
        }
    }

    fn set_state(&mut self, gripper: [f64; 3], block: [f64; 2], goal: [f64; 3]) -> Result<ResetOutput> {
        if penetrates([gripper[0], gripper[1]], block) && gripper[2] < CONTACT_HEIGHT {
            return Err(Error::InvalidArgument("gripper overlaps block".into()));
        }
        self.gripper = gripper;
        self.block = [block[0], block[1], 0.0];
        self.aperture = 1.0;
        self.attached = false;
        self.goal = GoalPoint::new(goal.to_vec());
        Ok(self.snapshot())
    }
}

fn distance3(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

impl GoalEnv for PickPlace {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> ResetOutput {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (gripper, block, goal_xy) = spawn_on_table(&mut rng);
        let gz = rng.random_range(0.0..=0.1);
        let goal_z = if rng.random_bool(0.5) {
            0.0
        } else {
            rng.random_range(0.0..=MAX_GOAL_HEIGHT)
        };
        self.gripper = [gripper[0], gripper[1], gz];
        self.block = [block[0], block[1], 0.0];
        self.aperture = 1.0;
        self.attached = false;
        self.goal = GoalPoint::new(vec![goal_xy[0], goal_xy[1], goal_z]);
        self.snapshot()
    }

    fn step(&mut self, action: &[f64]) -> Result<EnvStepResult> {
        let a = clip_action(&self.spec, action)?;
        let old = self.gripper;
        let target = [
            (old[0] + STEP_SIZE * a[0]).clamp(0.0, 1.0),
            (old[1] + STEP_SIZE * a[1]).clamp(0.0, 1.0),
            (old[2] + STEP_SIZE * a[2]).clamp(0.0, MAX_HEIGHT),
        ];
        self.aperture = a[3];
        let closing = a[3] < 0.0;

        if self.attached && !closing {
            self.attached = false;
        } else if !self.attached && closing && distance3(old, self.block) <= GRASP_RADIUS {
            self.attached = true;
        }

        if self.attached {
            self.gripper = target;
            let lo = BLOCK_HALF_SIDE;
            let hi = 1.0 - BLOCK_HALF_SIDE;
            self.block = [target[0].clamp(lo, hi), target[1].clamp(lo, hi), target[2]];
        } else {
            // released blocks drop straight down
            self.block[2] = 0.0;
            let block_xy = [self.block[0], self.block[1]];
            if target[2] < CONTACT_HEIGHT {
                let (g, b) = planar_contact([old[0], old[1]], [target[0], target[1]], block_xy);
                self.gripper = [g[0], g[1], target[2]];
                self.block = [b[0], b[1], 0.0];
            } else {
                self.gripper = target;
            }
        }

        let achieved = GoalPoint::new(self.block.to_vec());
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

    fn reset_scenario(&mut self, name: &str) -> Result<ResetOutput> {
        match name {
            "diag" => self.set_state([0.12, 0.12, 0.0], [0.2, 0.2], [0.8, 0.8, 0.0]),
            _ => Err(Error::UnknownScenario {
                scenario: name.to_string(),
                env: PICK_PLACE.to_string(),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grasp_lift_release() {
        let mut env = PickPlace::new();
        env.set_state([0.5, 0.5, 0.1], [0.5, 0.5], [0.5, 0.5, 0.2]).unwrap();
        // descend onto the block with the gripper open
        env.step(&[0.0, 0.0, -1.0, 1.0]).unwrap();
        assert!((env.gripper()[2] - 0.05).abs() < 1e-12);
        assert!(!env.attached());
        let r = env.step(&[0.0, 0.0, 1.0, -1.0]).unwrap();
        assert!(env.attached());
        assert!((env.block()[2] - 0.1).abs() < 1e-12);
        assert_eq!(r.achieved_goal.coords, env.block().to_vec());
        env.step(&[0.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(!env.attached());
        assert_eq!(env.block()[2], 0.0);
    }

    #[test]
    fn raised_gripper_passes_over_block() {
        let mut env = PickPlace::new();
        env.set_state([0.4, 0.5, 0.2], [0.5, 0.5], [0.8, 0.8, 0.0]).unwrap();
        for _ in 0..4 {
            env.step(&[1.0, 0.0, 0.0, 1.0]).unwrap();
        }
        assert_eq!(env.block(), [0.5, 0.5, 0.0]);
        assert!((env.gripper()[0] - 0.6).abs() < 1e-12);
    }
}
