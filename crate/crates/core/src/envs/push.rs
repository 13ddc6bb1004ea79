use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{clip_action, compute_reward, EnvSpec, EnvStepResult, GoalEnv, GoalMetric, GoalPoint, ResetOutput, PLANAR_PUSH};
use crate::error::{Error, Result};

pub const STEP_SIZE: f64 = 0.05;
pub const GRIPPER_RADIUS: f64 = 0.03;
pub const BLOCK_HALF_SIDE: f64 = 0.04;
/// Goals are drawn within this box around the initial block position.
pub const GOAL_RANGE: f64 = 0.3;
/// Initial gripper distance band from the block centre.
const GRIPPER_SPAWN: (f64, f64) = (0.1, 0.2);
const SPAWN_MARGIN: f64 = 0.1;

/// Distance from point `p` to the axis-aligned square centred at `c`.
pub(crate) fn point_square_distance(p: [f64; 2], c: [f64; 2], half: f64) -> f64 {
    let dx = ((p[0] - c[0]).abs() - half).max(0.0);
    let dy = ((p[1] - c[1]).abs() - half).max(0.0);
    dx.hypot(dy)
}

pub(crate) fn penetrates(gripper: [f64; 2], block: [f64; 2]) -> bool {
    point_square_distance(gripper, block, BLOCK_HALF_SIDE) < GRIPPER_RADIUS
}

/// Smallest `s >= 0` such that `penetrates(gripper, block + s * dir)` is false,
/// given that it is true at `s = 0`. `dir` must be a unit vector.
///
/// Penetration along the ray is a convex interval starting at 0, so bisection on
/// its right end is exact up to float resolution; the returned value is always
/// on the non-penetrating side.
fn exit_distance(gripper: [f64; 2], block: [f64; 2], dir: [f64; 2], upper: f64) -> f64 {
    let at = |s: f64| [block[0] + s * dir[0], block[1] + s * dir[1]];
    let (mut lo, mut hi) = (0.0, upper);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if penetrates(gripper, at(mid)) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

fn clamp2(p: [f64; 2], lo: f64, hi: f64) -> [f64; 2] {
    [p[0].clamp(lo, hi), p[1].clamp(lo, hi)]
}

/// Kinematic planar contact: the gripper moves from `old` to `target`
/// (already clipped to the table). If it would overlap the block, the block
/// slides along the gripper displacement by the minimal amount, then is
/// clipped to the table; a gripper still overlapping a wall-pinned block is
/// backed off along its path. Returns `(gripper, block)`.
pub(crate) fn planar_contact(old: [f64; 2], target: [f64; 2], block: [f64; 2]) -> ([f64; 2], [f64; 2]) {
    if !penetrates(target, block) {
        return (target, block);
    }
    let u = [target[0] - old[0], target[1] - old[1]];
    let len = u[0].hypot(u[1]);
    if len == 0.0 {
        return (old, block);
    }
    let dir = [u[0] / len, u[1] / len];
    let reach = 2.0 * std::f64::consts::SQRT_2 * BLOCK_HALF_SIDE + 2.0 * GRIPPER_RADIUS + 1e-9;
    let s = exit_distance(target, block, dir, reach);
    let moved = clamp2(
        [block[0] + s * dir[0], block[1] + s * dir[1]],
        BLOCK_HALF_SIDE,
        1.0 - BLOCK_HALF_SIDE,
    );
    if !penetrates(target, moved) {
        return (target, moved);
    }
    // Block pinned by the table edge: retreat the gripper along -dir.
    let at = |s: f64| [target[0] - s * dir[0], target[1] - s * dir[1]];
    let (mut lo, mut hi) = (0.0, len);
    if penetrates(at(hi), moved) {
        return (old, if penetrates(old, moved) { block } else { moved });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if penetrates(at(mid), moved) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (clamp2(at(hi), 0.0, 1.0), moved)
}

/// Push a square block across a unit table with a round gripper.
///
/// Observation: gripper xy, block xy, block − gripper (6 values).
/// Action: planar gripper displacement in `[-1, 1]^2`, scaled by [`STEP_SIZE`].
#[derive(Debug, Clone)]
pub struct PlanarPush {
    spec: EnvSpec,
    gripper: [f64; 2],
    block: [f64; 2],
    goal: GoalPoint,
}

impl Default for PlanarPush {
    fn default() -> Self {
        Self::new()
    }
}

impl PlanarPush {
    pub fn new() -> Self {
        let lo = BLOCK_HALF_SIDE;
        let hi = 1.0 - BLOCK_HALF_SIDE;
        Self {
            spec: EnvSpec {
                name: PLANAR_PUSH,
                observation_dim: 6,
                action_dim: 2,
                goal_dim: 2,
                action_low: vec![-1.0; 2],
                action_high: vec![1.0; 2],
                goal_low: vec![lo; 2],
                goal_high: vec![hi; 2],
                goal_metric: GoalMetric::Euclidean,
                success_tolerance: 0.05,
                horizon: 50,
            },
            gripper: [0.5, 0.3],
            block: [0.5, 0.5],
            goal: GoalPoint::new(vec![0.5, 0.5]),
        }
    }

    pub fn gripper(&self) -> [f64; 2] {
        self.gripper
    }

    pub fn block(&self) -> [f64; 2] {
        self.block
    }

    /// Places the state directly; fails if the configuration overlaps or leaves the table.
    pub fn set_state(&mut self, gripper: [f64; 2], block: [f64; 2], goal: [f64; 2]) -> Result<ResetOutput> {
        let inside = |p: [f64; 2], lo: f64, hi: f64| p.iter().all(|&v| (lo..=hi).contains(&v));
        if !inside(gripper, 0.0, 1.0)
            || !inside(block, BLOCK_HALF_SIDE, 1.0 - BLOCK_HALF_SIDE)
            || !inside(goal, BLOCK_HALF_SIDE, 1.0 - BLOCK_HALF_SIDE)
            || penetrates(gripper, block)
        {
            return Err(Error::InvalidArgument("invalid planar-push state".into()));
        }
        self.gripper = gripper;
        self.block = block;
        self.goal = GoalPoint::new(goal.to_vec());
        Ok(self.snapshot())
    }

    fn observation(&self) -> Vec<f64> {
        let (g, b) = (self.gripper, self.block);
        vec![g[0], g[1], b[0], b[1], b[0] - g[0], b[1] - g[1]]
    }

    fn achieved(&self) -> GoalPoint {
        GoalPoint::new(self.block.to_vec())
    }

    fn snapshot(&self) -> ResetOutput {
        ResetOutput {
            observation: self.observation(),
            achieved: self.achieved(),
            goal: self.goal.clone(),
        }
    }
}

/// Shared spawn logic for the two table tasks: block, then gripper in a band
/// around it, then a goal near the block.
pub(crate) fn spawn_on_table(rng: &mut ChaCha8Rng) -> ([f64; 2], [f64; 2], [f64; 2]) {
    let block = [
        rng.random_range(SPAWN_MARGIN..=1.0 - SPAWN_MARGIN),
        rng.random_range(SPAWN_MARGIN..=1.0 - SPAWN_MARGIN),
    ];
    let gripper = loop {
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let radius = rng.random_range(GRIPPER_SPAWN.0..=GRIPPER_SPAWN.1);
        let g = clamp2(
            [block[0] + radius * angle.cos(), block[1] + radius * angle.sin()],
            0.0,
            1.0,
        );
        if point_square_distance(g, block, BLOCK_HALF_SIDE) > GRIPPER_RADIUS + 0.01 {
            break g;
        }
    };
    let lo = BLOCK_HALF_SIDE;
    let hi = 1.0 - BLOCK_HALF_SIDE;
    let goal = [
        (block[0] + rng.random_range(-GOAL_RANGE..=GOAL_RANGE)).clamp(lo, hi),
        (block[1] + rng.random_range(-GOAL_RANGE..=GOAL_RANGE)).clamp(lo, hi),
    ];
    (gripper, block, goal)
}

impl GoalEnv for PlanarPush {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> ResetOutput {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (gripper, block, goal) = spawn_on_table(&mut rng);
        self.gripper = gripper;
        self.block = block;
        self.goal = GoalPoint::new(goal.to_vec());
        self.snapshot()
    }

    fn step(&mut self, action: &[f64]) -> Result<EnvStepResult> {
        let a = clip_action(&self.spec, action)?;
        let target = clamp2(
            [
                self.gripper[0] + STEP_SIZE * a[0],
                self.gripper[1] + STEP_SIZE * a[1],
            ],
            0.0,
            1.0,
        );
        let (gripper, block) = planar_contact(self.gripper, target, self.block);
        self.gripper = gripper;
        self.block = block;
        let achieved = self.achieved();
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

    /// `diag`: block near one table corner, goal at the opposite corner.
    fn reset_scenario(&mut self, name: &str) -> Result<ResetOutput> {
        match name {
            "diag" => self.set_state([0.12, 0.12], [0.2, 0.2], [0.8, 0.8]),
            _ => Err(Error::UnknownScenario {
                scenario: name.to_string(),
                env: PLANAR_PUSH.to_string(),
            }),
        }
    }
}
