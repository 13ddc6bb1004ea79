//! Episodic replay with hindsight relabeling at both hierarchy levels.
//!
//! Low-level items are single environment steps conditioned on the active
//! sub-goal; high-level items are whole sub-episodes whose "action" is the
//! sub-goal. Relabeling always follows the future strategy: the replacement
//! goal is an achieved goal from a strictly later index of the same episode.

use std::collections::VecDeque;

use rand::Rng;

use crate::envs::{compute_reward, EnvSpec, GoalPoint, Observation};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Observation,
    pub next_obs: Observation,
    pub achieved: GoalPoint,
    pub next_achieved: GoalPoint,
    pub subgoal: GoalPoint,
    pub action: Vec<f64>,
    pub reward: f64,
    pub episode_goal: GoalPoint,
    pub step_index: usize,
    pub sub_episode_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HighTransition {
    pub obs: Observation,
    pub achieved: GoalPoint,
    pub subgoal_action: GoalPoint,
    pub next_obs: Observation,
    pub next_achieved: GoalPoint,
    pub episode_goal: GoalPoint,
    pub reward: f64,
    pub sub_episode_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub transitions: Vec<Transition>,
    pub high_transitions: Vec<HighTransition>,
    pub episode_goal: GoalPoint,
    pub success: bool,
}

impl EpisodeTrace {
    pub fn horizon(&self) -> usize {
        self.transitions.len()
    }

    pub fn sub_episodes(&self) -> usize {
        self.high_transitions.len()
    }

    /// Achieved goal after `t` steps, `t` in `0..=T`.
    pub fn achieved_at_step(&self, t: usize) -> &GoalPoint {
        if t == 0 {
            &self.transitions[0].achieved
        } else {
            &self.transitions[t - 1].next_achieved
        }
    }

    /// Achieved goal at sub-episode boundary `k`, `k` in `0..=N`.
    pub fn achieved_at_boundary(&self, k: usize) -> &GoalPoint {
        if k == 0 {
            &self.high_transitions[0].achieved
        } else {
            &self.high_transitions[k - 1].next_achieved
        }
    }

    /// Checks the structural invariants a stored trace must satisfy.
    pub fn validate(&self, spec: &EnvSpec) -> Result<()> {
        let horizon = self.transitions.len();
        let subs = self.high_transitions.len();
        if horizon == 0 || subs == 0 {
            return Err(Error::MalformedTrace("empty trace".into()));
        }
        if horizon % subs != 0 {
            return Err(Error::MalformedTrace(format!(
                "{horizon} steps do not split into {subs} sub-episodes"
            )));
        }
        let last = &self.high_transitions[subs - 1];
        if last.subgoal_action != self.episode_goal {
            return Err(Error::MalformedTrace(
                "final sub-goal differs from the episode goal".into(),
            ));
        }
        let len = horizon / subs;
        for (t, tr) in self.transitions.iter().enumerate() {
            if tr.step_index != t || tr.sub_episode_index != t / len {
                return Err(Error::MalformedTrace(format!("bad indices at step {t}")));
            }
            if tr.subgoal != self.high_transitions[t / len].subgoal_action {
                return Err(Error::MalformedTrace(format!(
                    "step {t} sub-goal differs from its sub-episode's"
                )));
            }
            if tr.episode_goal != self.episode_goal {
                return Err(Error::MalformedTrace(format!("step {t} episode goal differs")));
            }
            let expected = compute_reward(spec, &tr.next_achieved, &tr.subgoal)?;
            if tr.reward != expected {
                return Err(Error::MalformedTrace(format!(
                    "step {t} reward {} does not match recomputation {expected}",
                    tr.reward
                )));
            }
        }
        for (n, h) in self.high_transitions.iter().enumerate() {
            if h.sub_episode_index != n || h.episode_goal != self.episode_goal {
                return Err(Error::MalformedTrace(format!("bad high-level item {n}")));
            }
            if h.next_achieved != self.transitions[(n + 1) * len - 1].next_achieved {
                return Err(Error::MalformedTrace(format!(
                    "high-level item {n} does not end where its sub-episode ends"
                )));
            }
        }
        Ok(())
    }
}

/// Where a sampled item came from, for auditing relabels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleMeta {
    /// Insertion id of the source episode.
    pub episode_id: u64,
    /// Step index (low level) or sub-episode index (high level).
    pub index: usize,
    /// Step or boundary whose achieved goal replaced the goal, if relabeled.
    pub relabel_source: Option<usize>,
}

/// A training batch. Row-major buffers, one row per item.
#[derive(Debug, Clone, Default)]
pub struct Batch {
    pub len: usize,
    pub obs_dim: usize,
    pub goal_dim: usize,
    pub action_dim: usize,
    pub obs: Vec<f64>,
    pub goals: Vec<f64>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub next_obs: Vec<f64>,
    pub next_achieved: Vec<f64>,
    pub dones: Vec<bool>,
    pub meta: Vec<SampleMeta>,
}

fn concat_rows(a: &[f64], a_dim: usize, b: &[f64], b_dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    for (ra, rb) in a.chunks_exact(a_dim).zip(b.chunks_exact(b_dim)) {
        out.extend_from_slice(ra);
        out.extend_from_slice(rb);
    }
    out
}

impl Batch {
    fn with_dims(obs_dim: usize, goal_dim: usize, action_dim: usize, capacity: usize) -> Self {
        Self {
            obs_dim,
            goal_dim,
            action_dim,
            obs: Vec::with_capacity(capacity * obs_dim),
            goals: Vec::with_capacity(capacity * goal_dim),
            actions: Vec::with_capacity(capacity * action_dim),
            next_obs: Vec::with_capacity(capacity * obs_dim),
            next_achieved: Vec::with_capacity(capacity * goal_dim),
            ..Default::default()
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn push(
        &mut self,
        obs: &[f64],
        goal: &[f64],
        action: &[f64],
        reward: f64,
        next_obs: &[f64],
        next_achieved: &[f64],
        meta: SampleMeta,
    ) {
        self.obs.extend_from_slice(obs);
        self.goals.extend_from_slice(goal);
        self.actions.extend_from_slice(action);
        self.rewards.push(reward);
        self.next_obs.extend_from_slice(next_obs);
        self.next_achieved.extend_from_slice(next_achieved);
        self.dones.push(false);
        self.meta.push(meta);
        self.len += 1;
    }

    pub fn input_dim(&self) -> usize {
        self.obs_dim + self.goal_dim
    }

    /// `obs ‖ goal` rows.
    pub fn inputs(&self) -> Vec<f64> {
        concat_rows(&self.obs, self.obs_dim, &self.goals, self.goal_dim)
    }

    /// `next_obs ‖ goal` rows.
    pub fn next_inputs(&self) -> Vec<f64> {
        concat_rows(&self.next_obs, self.obs_dim, &self.goals, self.goal_dim)
    }

    pub fn goal(&self, i: usize) -> &[f64] {
        &self.goals[i * self.goal_dim..(i + 1) * self.goal_dim]
    }

    pub fn next_achieved_row(&self, i: usize) -> &[f64] {
        &self.next_achieved[i * self.goal_dim..(i + 1) * self.goal_dim]
    }

    pub fn relabeled_count(&self) -> usize {
        self.meta.iter().filter(|m| m.relabel_source.is_some()).count()
    }
}

/// Draws one low-level item from step `t`, relabeling with probability `k`.
fn draw_low<R: Rng + ?Sized>(
    spec: &EnvSpec,
    trace: &EpisodeTrace,
    episode_id: u64,
    t: usize,
    k: f64,
    rng: &mut R,
    out: &mut Batch,
) -> Result<()> {
    let tr = &trace.transitions[t];
    let horizon = trace.horizon();
    let source = if k > 0.0 && rng.random::<f64>() < k {
        Some(rng.random_range(t + 1..=horizon))
    } else {
        None
    };
    let (goal, reward) = match source {
        Some(s) => {
            let g = trace.achieved_at_step(s);
            (g, compute_reward(spec, &tr.next_achieved, g)?)
        }
        None => (&tr.subgoal, tr.reward),
    };
    out.push(
        &tr.obs,
        goal,
        &tr.action,
        reward,
        &tr.next_obs,
        &tr.next_achieved,
        SampleMeta {
            episode_id,
            index: t,
            relabel_source: source,
        },
    );
    Ok(())
}

/// Draws one high-level item from sub-episode `n`. The final (forced) item has
/// no later boundary to draw from and is never relabeled.
fn draw_high<R: Rng + ?Sized>(
    spec: &EnvSpec,
    trace: &EpisodeTrace,
    episode_id: u64,
    n: usize,
    k: f64,
    rng: &mut R,
    out: &mut Batch,
) -> Result<()> {
    let h = &trace.high_transitions[n];
    let subs = trace.sub_episodes();
    let source = if n + 1 < subs && k > 0.0 && rng.random::<f64>() < k {
        Some(rng.random_range(n + 1..=subs))
    } else {
        None
    };
    let goal = match source {
        Some(b) => trace.achieved_at_boundary(b),
        None => &h.episode_goal,
    };
    let reward = compute_reward(spec, &h.next_achieved, goal)?;
    out.push(
        &h.obs,
        goal,
        &h.subgoal_action,
        reward,
        &h.next_obs,
        &h.next_achieved,
        SampleMeta {
            episode_id,
            index: n,
            relabel_source: source,
        },
    );
    Ok(())
}

/// Relabeled low-level draws from one trace (used to feed input normalizers).
pub fn sample_low_from_trace<R: Rng + ?Sized>(
    spec: &EnvSpec,
    trace: &EpisodeTrace,
    count: usize,
    relabel_prob: f64,
    rng: &mut R,
) -> Result<Batch> {
    let first = &trace.transitions[0];
    let mut batch = Batch::with_dims(first.obs.len(), first.subgoal.dim(), first.action.len(), count);
    for _ in 0..count {
        let t = rng.random_range(0..trace.horizon());
        draw_low(spec, trace, 0, t, relabel_prob, rng, &mut batch)?;
    }
    Ok(batch)
}

/// Relabeled high-level draws from one trace.
pub fn sample_high_from_trace<R: Rng + ?Sized>(
    spec: &EnvSpec,
    trace: &EpisodeTrace,
    count: usize,
    relabel_prob: f64,
    rng: &mut R,
) -> Result<Batch> {
    let first = &trace.high_transitions[0];
    let mut batch = Batch::with_dims(first.obs.len(), first.episode_goal.dim(), first.subgoal_action.dim(), count);
    for _ in 0..count {
        let n = rng.random_range(0..trace.sub_episodes());
        draw_high(spec, trace, 0, n, relabel_prob, rng, &mut batch)?;
    }
    Ok(batch)
}

/// Bounded FIFO of episode traces.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    spec: EnvSpec,
    capacity: usize,
    episodes: VecDeque<EpisodeTrace>,
    /// Insertion id of `episodes[0]`.
    first_id: u64,
    inserted: u64,
    relabel_count: u64,
}

impl ReplayBuffer {
    pub fn new(spec: EnvSpec, capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("buffer capacity must be positive".into()));
        }
        Ok(Self {
            spec,
            capacity,
            episodes: VecDeque::with_capacity(capacity.min(4096)),
            first_id: 0,
            inserted: 0,
            relabel_count: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total number of episodes ever stored.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    /// Total number of relabeled items handed out by the samplers.
    pub fn relabel_count(&self) -> u64 {
        self.relabel_count
    }

    pub fn episode(&self, id: u64) -> Option<&EpisodeTrace> {
        id.checked_sub(self.first_id)
            .and_then(|i| self.episodes.get(i as usize))
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &EpisodeTrace)> {
        (self.first_id..).zip(self.episodes.iter())
    }

    pub fn store_episode(&mut self, trace: EpisodeTrace) -> Result<()> {
        trace.validate(&self.spec)?;
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
            self.first_id += 1;
        }
        // Keep a fresh copy: the rollout's own small vectors are interleaved
        // with network temporaries on the heap and would pin megabytes of it.
        self.episodes.push_back(trace.clone());
        self.inserted += 1;
        Ok(())
    }

    fn pick_episode<R: Rng + ?Sized>(&self, rng: &mut R) -> (u64, &EpisodeTrace) {
        let i = rng.random_range(0..self.episodes.len());
        (self.first_id + i as u64, &self.episodes[i])
    }

    pub fn sample_low<R: Rng + ?Sized>(
        &mut self,
        batch_size: usize,
        relabel_prob: f64,
        rng: &mut R,
    ) -> Result<Batch> {
        let first = self.episodes.front().ok_or(Error::EmptyBuffer)?.transitions[0].clone();
        let mut batch = Batch::with_dims(first.obs.len(), first.subgoal.dim(), first.action.len(), batch_size);
        for _ in 0..batch_size {
            let (id, trace) = self.pick_episode(rng);
            let t = rng.random_range(0..trace.horizon());
            draw_low(&self.spec, trace, id, t, relabel_prob, rng, &mut batch)?;
        }
        self.relabel_count += batch.relabeled_count() as u64;
        Ok(batch)
    }

    pub fn sample_high<R: Rng + ?Sized>(
        &mut self,
        batch_size: usize,
        relabel_prob: f64,
        rng: &mut R,
    ) -> Result<Batch> {
        let first = self.episodes.front().ok_or(Error::EmptyBuffer)?.high_transitions[0].clone();
        let mut batch = Batch::with_dims(
            first.obs.len(),
            first.episode_goal.dim(),
            first.subgoal_action.dim(),
            batch_size,
        );
        for _ in 0..batch_size {
            let (id, trace) = self.pick_episode(rng);
            let n = rng.random_range(0..trace.sub_episodes());
            draw_high(&self.spec, trace, id, n, relabel_prob, rng, &mut batch)?;
        }
        self.relabel_count += batch.relabeled_count() as u64;
        Ok(batch)
    }
}
