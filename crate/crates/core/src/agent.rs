//! Goal-conditioned deterministic-policy-gradient actor-critic.
//!
//! The same agent serves both hierarchy levels: the low level acts in the
//! environment's action space, the high level acts in goal space (its
//! "actions" are sub-goals). Network inputs are `normalize(obs ‖ goal)`; the
//! critic additionally receives the action mapped into the actor's tanh range.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::{adam_step, polyak_update_in_place, Activation, AdamState, MlpParams};
use crate::replay::Batch;

pub const VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub hidden_layers: Vec<usize>,
    pub gamma: f64,
    /// Polyak weight kept on the target: `target ← tau·target + (1−tau)·online`.
    pub tau: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub explore_eps: f64,
    pub explore_noise_std: f64,
    pub action_l2: f64,
    pub norm_clip: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            hidden_layers: vec![64, 64, 64],
            gamma: 0.98,
            tau: 0.95,
            lr_actor: 1e-3,
            lr_critic: 1e-3,
            explore_eps: 0.2,
            explore_noise_std: 0.1,
            action_l2: 0.05,
            norm_clip: 5.0,
        }
    }
}

/// Running mean/variance of network inputs (parallel-merge streaming moments).
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub count: f64,
    pub mean: Vec<f64>,
    /// Sum of squared deviations from the mean.
    pub m2: Vec<f64>,
    pub clip: f64,
}

impl Normalizer {
    pub fn new(dim: usize, clip: f64) -> Self {
        Self {
            count: 0.0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
            clip,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn variance(&self) -> Vec<f64> {
        if self.count == 0.0 {
            return vec![1.0; self.dim()];
        }
        self.m2
            .iter()
            .map(|m| (m / self.count).max(VARIANCE_FLOOR))
            .collect()
    }

    /// Folds a batch of row-major inputs into the running moments.
    pub fn update(&mut self, rows: &[f64]) -> Result<()> {
        let dim = self.dim();
        if rows.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                context: "normalizer rows",
                expected: dim,
                got: rows.len() % dim,
            });
        }
        let n = (rows.len() / dim) as f64;
        if n == 0.0 {
            return Ok(());
        }
        let mut batch_mean = vec![0.0; dim];
        for row in rows.chunks_exact(dim) {
            for (m, &v) in batch_mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        batch_mean.iter_mut().for_each(|m| *m /= n);
        let mut batch_m2 = vec![0.0; dim];
        for row in rows.chunks_exact(dim) {
            for ((s, &v), &m) in batch_m2.iter_mut().zip(row).zip(&batch_mean) {
                *s += (v - m) * (v - m);
            }
        }
        let total = self.count + n;
        for i in 0..dim {
            let delta = batch_mean[i] - self.mean[i];
            self.mean[i] += delta * n / total;
            self.m2[i] += batch_m2[i] + delta * delta * self.count * n / total;
        }
        self.count = total;
        Ok(())
    }

    pub fn normalize_into(&self, rows: &[f64], out: &mut Vec<f64>) {
        let dim = self.dim();
        let std: Vec<f64> = self.variance().iter().map(|v| v.sqrt()).collect();
        out.clear();
        out.reserve(rows.len());
        for row in rows.chunks_exact(dim) {
            for ((&v, &m), &s) in row.iter().zip(&self.mean).zip(&std) {
                out.push(((v - m) / s).clamp(-self.clip, self.clip));
            }
        }
    }

    pub fn normalize(&self, rows: &[f64]) -> Vec<f64> {
        let mut out = Vec::new();
        self.normalize_into(rows, &mut out);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrainStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub mean_q: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DdpgAgent {
    pub actor: MlpParams,
    pub critic: MlpParams,
    pub actor_target: MlpParams,
    pub critic_target: MlpParams,
    pub actor_opt: AdamState,
    pub critic_opt: AdamState,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub normalizer: Normalizer,
    pub obs_dim: usize,
    pub goal_dim: usize,
    pub config: AgentConfig,
}

fn interleave(a: &[f64], a_dim: usize, b: &[f64], b_dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    for (ra, rb) in a.chunks_exact(a_dim).zip(b.chunks_exact(b_dim)) {
        out.extend_from_slice(ra);
        out.extend_from_slice(rb);
    }
    out
}

impl DdpgAgent {
    pub fn new(
        obs_dim: usize,
        goal_dim: usize,
        action_low: Vec<f64>,
        action_high: Vec<f64>,
        config: AgentConfig,
        seed: u64,
    ) -> Result<Self> {
        if action_low.len() != action_high.len() || action_low.is_empty() {
            return Err(Error::InvalidArgument("action bounds must be non-empty and paired".into()));
        }
        if action_low.iter().zip(&action_high).any(|(l, h)| l >= h) {
            return Err(Error::InvalidArgument("action_low must be below action_high".into()));
        }
        if !(0.0..1.0).contains(&config.gamma) {
            return Err(Error::InvalidArgument(format!("gamma {} not in [0, 1)", config.gamma)));
        }
        let action_dim = action_low.len();
        let input_dim = obs_dim + goal_dim;
        let mut actor_sizes = vec![input_dim];
        actor_sizes.extend(&config.hidden_layers);
        actor_sizes.push(action_dim);
        let mut critic_sizes = vec![input_dim + action_dim];
        critic_sizes.extend(&config.hidden_layers);
        critic_sizes.push(1);

        let actor = MlpParams::init(&actor_sizes, Activation::Relu, Activation::Tanh, seed)?;
        let critic = MlpParams::init(
            &critic_sizes,
            Activation::Relu,
            Activation::Linear,
            seed.wrapping_add(0x9e37_79b9),
        )?;
        Ok(Self {
            actor_opt: AdamState::new(&actor, config.lr_actor),
            critic_opt: AdamState::new(&critic, config.lr_critic),
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
            action_low,
            action_high,
            normalizer: Normalizer::new(input_dim, config.norm_clip),
            obs_dim,
            goal_dim,
            config,
        })
    }

    pub fn action_dim(&self) -> usize {
        self.action_low.len()
    }

    pub fn input_dim(&self) -> usize {
        self.obs_dim + self.goal_dim
    }

    /// Maps tanh-range values onto `[action_low, action_high]`.
    pub fn scale_action(&self, unit: &[f64]) -> Vec<f64> {
        unit.iter()
            .zip(&self.action_low)
            .zip(&self.action_high)
            .map(|((&u, &lo), &hi)| (lo + 0.5 * (u + 1.0) * (hi - lo)).clamp(lo, hi))
            .collect()
    }

    /// Inverse of [`scale_action`](Self::scale_action), clamped to `[-1, 1]`.
    pub fn unscale_action(&self, action: &[f64]) -> Vec<f64> {
        let dim = self.action_dim();
        action
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                let (lo, hi) = (self.action_low[i % dim], self.action_high[i % dim]);
                (2.0 * (a - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0)
            })
            .collect()
    }

    fn input_row(&self, obs: &[f64], goal: &[f64]) -> Result<Vec<f64>> {
        if obs.len() != self.obs_dim {
            return Err(Error::DimensionMismatch {
                context: "agent observation",
                expected: self.obs_dim,
                got: obs.len(),
            });
        }
        if goal.len() != self.goal_dim {
            return Err(Error::DimensionMismatch {
                context: "agent goal",
                expected: self.goal_dim,
                got: goal.len(),
            });
        }
        let mut row = Vec::with_capacity(self.input_dim());
        row.extend_from_slice(obs);
        row.extend_from_slice(goal);
        Ok(row)
    }

    pub fn act<R: Rng + ?Sized>(
        &self,
        obs: &[f64],
        goal: &[f64],
        explore: bool,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let row = self.input_row(obs, goal)?;
        if explore && rng.random::<f64>() < self.config.explore_eps {
            return Ok(self
                .action_low
                .iter()
                .zip(&self.action_high)
                .map(|(&lo, &hi)| rng.random_range(lo..=hi))
                .collect());
        }
        let x = self.normalizer.normalize(&row);
        let unit = self.actor.predict_batch(&x, 1)?;
        let mut action = self.scale_action(&unit);
        if explore {
            for ((a, &lo), &hi) in action.iter_mut().zip(&self.action_low).zip(&self.action_high) {
                let z: f64 = StandardNormal.sample(rng);
                let std = self.config.explore_noise_std * 0.5 * (hi - lo);
                *a = (*a + std * z).clamp(lo, hi);
            }
        }
        Ok(action)
    }

    /// Critic values for one `(obs, goal)` pair and many candidate actions.
    pub fn q_values(&self, obs: &[f64], goal: &[f64], actions: &[f64]) -> Result<Vec<f64>> {
        let dim = self.action_dim();
        if actions.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                context: "candidate actions",
                expected: dim,
                got: actions.len() % dim,
            });
        }
        let n = actions.len() / dim;
        let x = self.normalizer.normalize(&self.input_row(obs, goal)?);
        let mut rows = Vec::with_capacity(n * (x.len() + dim));
        for a in actions.chunks_exact(dim) {
            rows.extend_from_slice(&x);
            rows.extend(self.unscale_action(a));
        }
        self.critic.predict_batch(&rows, n)
    }

    pub fn target_bounds(&self) -> (f64, f64) {
        (-1.0 / (1.0 - self.config.gamma), 0.0)
    }

    /// Clipped bootstrapped critic targets for `batch`.
    pub fn critic_targets(&self, batch: &Batch) -> Result<Vec<f64>> {
        self.check_batch(batch)?;
        let next = self.normalizer.normalize(&batch.next_inputs());
        self.targets_from_normalized(batch, &next)
    }

    fn targets_from_normalized(&self, batch: &Batch, next: &[f64]) -> Result<Vec<f64>> {
        let n = batch.len;
        let next_actions = self.actor_target.predict_batch(next, n)?;
        let critic_in = interleave(next, self.input_dim(), &next_actions, self.action_dim());
        let q_next = self.critic_target.predict_batch(&critic_in, n)?;
        let (lo, hi) = self.target_bounds();
        Ok(batch
            .rewards
            .iter()
            .zip(&q_next)
            .zip(&batch.dones)
            .map(|((&r, &q), &done)| {
                let bootstrap = if done { 0.0 } else { self.config.gamma * q };
                (r + bootstrap).clamp(lo, hi)
            })
            .collect())
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.len == 0 {
            return Err(Error::InvalidArgument("empty training batch".into()));
        }
        if batch.obs_dim != self.obs_dim || batch.goal_dim != self.goal_dim {
            return Err(Error::DimensionMismatch {
                context: "batch inputs",
                expected: self.input_dim(),
                got: batch.input_dim(),
            });
        }
        if batch.action_dim != self.action_dim() {
            return Err(Error::DimensionMismatch {
                context: "batch actions",
                expected: self.action_dim(),
                got: batch.action_dim,
            });
        }
        Ok(())
    }

    /// One critic and one actor Adam step on `batch`.
    pub fn train_batch(&mut self, batch: &Batch) -> Result<TrainStats> {
        self.check_batch(batch)?;
        let n = batch.len;
        let bn = n as f64;
        let in_dim = self.input_dim();
        let act_dim = self.action_dim();

        let x = self.normalizer.normalize(&batch.inputs());
        let next = self.normalizer.normalize(&batch.next_inputs());
        let targets = self.targets_from_normalized(batch, &next)?;

        // critic: mean squared TD error against the stored actions
        let stored = self.unscale_action(&batch.actions);
        let critic_in = interleave(&x, in_dim, &stored, act_dim);
        let critic_cache = self.critic.forward_batch(&critic_in, n)?;
        let q = critic_cache.output();
        let critic_loss = q
            .iter()
            .zip(&targets)
            .map(|(q, y)| (q - y) * (q - y))
            .sum::<f64>()
            / bn;
        let upstream: Vec<f64> = q
            .iter()
            .zip(&targets)
            .map(|(q, y)| 2.0 * (q - y) / bn)
            .collect();
        let (critic_grads, _) = self.critic.backward(&critic_cache, &upstream)?;

        // actor: maximise Q(s, μ(s)) with an L2 penalty on the tanh-range action
        let actor_cache = self.actor.forward_batch(&x, n)?;
        let pi = actor_cache.output();
        let pi_in = interleave(&x, in_dim, pi, act_dim);
        let pi_cache = self.critic.forward_batch(&pi_in, n)?;
        let q_pi = pi_cache.output();
        let mean_q = q_pi.iter().sum::<f64>() / bn;
        let l2 = self.config.action_l2;
        let actor_loss = -mean_q + l2 * pi.iter().map(|a| a * a).sum::<f64>() / bn;
        let (_, d_in) = self.critic.backward(&pi_cache, &vec![-1.0 / bn; n])?;
        let mut d_pi = Vec::with_capacity(n * act_dim);
        for (row, a_row) in d_in.chunks_exact(in_dim + act_dim).zip(pi.chunks_exact(act_dim)) {
            for (&g, &a) in row[in_dim..].iter().zip(a_row) {
                d_pi.push(g + 2.0 * l2 * a / bn);
            }
        }
        let (actor_grads, _) = self.actor.backward(&actor_cache, &d_pi)?;

        if !critic_loss.is_finite() || !actor_loss.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss (critic {critic_loss}, actor {actor_loss})"
            )));
        }
        if !critic_grads.is_finite() || !actor_grads.is_finite() {
            return Err(Error::Numeric("non-finite gradient".into()));
        }
        adam_step(&mut self.critic, &critic_grads, &mut self.critic_opt)?;
        adam_step(&mut self.actor, &actor_grads, &mut self.actor_opt)?;

        Ok(TrainStats {
            critic_loss,
            actor_loss,
            mean_q,
        })
    }

    pub fn update_targets(&mut self) -> Result<()> {
        polyak_update_in_place(&mut self.actor_target, &self.actor, self.config.tau)?;
        polyak_update_in_place(&mut self.critic_target, &self.critic, self.config.tau)
    }

    /// Folds `obs ‖ goal` rows into the input normalizer.
    pub fn normalizer_update(&mut self, inputs: &[f64]) -> Result<()> {
        self.normalizer.update(inputs)
    }

    /// Actor loss on `batch` without updating anything (used by gradient probes).
    pub fn actor_loss(&self, batch: &Batch) -> Result<f64> {
        self.check_batch(batch)?;
        let n = batch.len;
        let x = self.normalizer.normalize(&batch.inputs());
        let pi = self.actor.predict_batch(&x, n)?;
        let q = self
            .critic
            .predict_batch(&interleave(&x, self.input_dim(), &pi, self.action_dim()), n)?;
        let bn = n as f64;
        Ok(-q.iter().sum::<f64>() / bn
            + self.config.action_l2 * pi.iter().map(|a| a * a).sum::<f64>() / bn)
    }

    /// Analytic actor-loss gradient (same path as `train_batch`), without stepping.
    pub fn actor_loss_gradient(&self, batch: &Batch) -> Result<crate::nn::MlpGrads> {
        self.check_batch(batch)?;
        let n = batch.len;
        let bn = n as f64;
        let (in_dim, act_dim) = (self.input_dim(), self.action_dim());
        let x = self.normalizer.normalize(&batch.inputs());
        let actor_cache = self.actor.forward_batch(&x, n)?;
        let pi = actor_cache.output();
        let pi_cache = self.critic.forward_batch(&interleave(&x, in_dim, pi, act_dim), n)?;
        let (_, d_in) = self.critic.backward(&pi_cache, &vec![-1.0 / bn; n])?;
        let mut d_pi = Vec::with_capacity(n * act_dim);
        for (row, a_row) in d_in.chunks_exact(in_dim + act_dim).zip(pi.chunks_exact(act_dim)) {
            for (&g, &a) in row[in_dim..].iter().zip(a_row) {
                d_pi.push(g + 2.0 * self.config.action_l2 * a / bn);
            }
        }
        Ok(self.actor.backward(&actor_cache, &d_pi)?.0)
    }
}
