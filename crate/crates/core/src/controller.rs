//! Hierarchical rollout and training loop.
//!
//! Each episode is cut into `N` sub-episodes. Before each one the high-level
//! agent proposes a sub-goal; early in training this is mostly a Gaussian
//! perturbation of the current achieved goal, later mostly the high-level
//! actor. The last sub-goal is always the episode goal. Both levels learn from
//! the shared episodic buffer with hindsight relabeling.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::agent::{DdpgAgent, TrainStats};
use crate::config::{DtDConfig, SubgoalSchedule};
use crate::envs::{EnvSpec, GoalEnv, GoalPoint};
use crate::error::Result;
use crate::replay::{sample_high_from_trace, sample_low_from_trace, EpisodeTrace, HighTransition, ReplayBuffer, Transition};

/// Offset separating evaluation episode seeds from training seeds.
pub const EVAL_SEED_OFFSET: u64 = 1_000_003;

/// Low-level goal reacher and high-level sub-goal generator.
#[derive(Debug, Clone, PartialEq)]
pub struct Agents {
    pub low: DdpgAgent,
    pub high: DdpgAgent,
}

impl Agents {
    /// Low level: env actions from `obs ‖ sub-goal`. High level: sub-goals
    /// (bounded by the goal space) from `obs ‖ goal`.
    pub fn new(spec: &EnvSpec, config: &DtDConfig, seed: u64) -> Result<Self> {
        let low = DdpgAgent::new(
            spec.observation_dim,
            spec.goal_dim,
            spec.action_low.clone(),
            spec.action_high.clone(),
            config.low.clone(),
            seed,
        )?;
        let high = DdpgAgent::new(
            spec.observation_dim,
            spec.goal_dim,
            spec.goal_low.clone(),
            spec.goal_high.clone(),
            config.high.clone(),
            seed.wrapping_add(0x5151_5151),
        )?;
        Ok(Self { low, high })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub episodes: usize,
    pub env_steps: usize,
    pub success_rate: f64,
    pub mean_return: f64,
    pub low: TrainStats,
    pub high: TrainStats,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalEpisode {
    pub seed: u64,
    pub success: bool,
    pub episode_return: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub success_rate: f64,
    pub mean_return: f64,
    pub episodes: Vec<EvalEpisode>,
}

/// Chooses the sub-goal for sub-episode `n` of `n_total`.
///
/// The last sub-goal is the episode goal itself. Otherwise, when exploring,
/// with probability ε(epoch) the achieved goal is perturbed by `N(0, σ²I)`;
/// in the remaining cases the high-level actor proposes (with its own
/// exploration noise only when `explore` is set).
#[allow(clippy::too_many_arguments)]
pub fn select_subgoal<R: Rng + ?Sized>(
    high: &DdpgAgent,
    spec: &EnvSpec,
    schedule: &SubgoalSchedule,
    epoch: usize,
    n: usize,
    n_total: usize,
    obs: &[f64],
    achieved: &GoalPoint,
    goal: &GoalPoint,
    explore: bool,
    rng: &mut R,
) -> Result<GoalPoint> {
    if n + 1 >= n_total {
        return Ok(goal.clone());
    }
    let mut coords = if explore && rng.random::<f64>() < schedule.epsilon(epoch) {
        achieved
            .iter()
            .map(|&a| {
                let z: f64 = StandardNormal.sample(rng);
                a + schedule.sigma * z
            })
            .collect()
    } else {
        high.act(obs, goal, explore, rng)?
    };
    spec.clip_goal(&mut coords);
    Ok(GoalPoint::new(coords))
}

/// Runs one full-horizon episode from `env_seed`.
#[allow(clippy::too_many_arguments)]
pub fn run_episode<E: GoalEnv + ?Sized, R: Rng + ?Sized>(
    env: &mut E,
    agents: &Agents,
    config: &DtDConfig,
    epoch: usize,
    env_seed: u64,
    explore: bool,
    rng: &mut R,
) -> Result<(EpisodeTrace, f64)> {
    let spec = env.spec().clone();
    let reset = env.reset(env_seed);
    let goal = reset.goal;
    let n_total = config.sub_episodes;
    let len = config.sub_episode_len();

    let mut obs = reset.observation;
    let mut achieved = reset.achieved;
    let mut transitions = Vec::with_capacity(config.horizon);
    let mut high_transitions = Vec::with_capacity(n_total);
    let mut success = false;
    let mut episode_return = 0.0;

    for n in 0..n_total {
        let subgoal = select_subgoal(
            &agents.high,
            &spec,
            &config.schedule,
            epoch,
            n,
            n_total,
            &obs,
            &achieved,
            &goal,
            explore,
            rng,
        )?;
        let start_obs = obs.clone();
        let start_achieved = achieved.clone();
        for i in 0..len {
            let t = n * len + i;
            let action = agents.low.act(&obs, &subgoal, explore, rng)?;
            let step = env.step(&action)?;
            episode_return += step.reward;
            if n + 1 == n_total && step.is_success {
                success = true;
            }
            let reward = crate::envs::compute_reward(&spec, &step.achieved_goal, &subgoal)?;
            transitions.push(Transition {
                obs: std::mem::replace(&mut obs, step.observation.clone()),
                next_obs: step.observation,
                achieved: std::mem::replace(&mut achieved, step.achieved_goal.clone()),
                next_achieved: step.achieved_goal,
                subgoal: subgoal.clone(),
                action,
                reward,
                episode_goal: goal.clone(),
                step_index: t,
                sub_episode_index: n,
            });
        }
        let reward = crate::envs::compute_reward(&spec, &achieved, &goal)?;
        high_transitions.push(HighTransition {
            obs: start_obs,
            achieved: start_achieved,
            subgoal_action: subgoal,
            next_obs: obs.clone(),
            next_achieved: achieved.clone(),
            episode_goal: goal.clone(),
            reward,
            sub_episode_index: n,
        });
    }

    Ok((
        EpisodeTrace {
            transitions,
            high_transitions,
            episode_goal: goal,
            success,
        },
        episode_return,
    ))
}

fn mean_stats(acc: TrainStats, count: usize) -> TrainStats {
    if count == 0 {
        return TrainStats::default();
    }
    let c = count as f64;
    TrainStats {
        critic_loss: acc.critic_loss / c,
        actor_loss: acc.actor_loss / c,
        mean_q: acc.mean_q / c,
    }
}

fn add_stats(acc: &mut TrainStats, s: TrainStats) {
    acc.critic_loss += s.critic_loss;
    acc.actor_loss += s.actor_loss;
    acc.mean_q += s.mean_q;
}

/// Folds relabeled samples of a fresh trace into both input normalizers.
fn update_normalizers<R: Rng + ?Sized>(
    spec: &EnvSpec,
    agents: &mut Agents,
    trace: &EpisodeTrace,
    relabel_prob: f64,
    train_high: bool,
    rng: &mut R,
) -> Result<()> {
    let low = sample_low_from_trace(spec, trace, trace.horizon(), relabel_prob, rng)?;
    agents.low.normalizer_update(&low.inputs())?;
    if train_high {
        let high = sample_high_from_trace(spec, trace, trace.horizon(), relabel_prob, rng)?;
        agents.high.normalizer_update(&high.inputs())?;
    }
    Ok(())
}

/// One epoch: `M` exploratory episodes, `N_trainings` updates of both levels,
/// then a deterministic evaluation.
///
/// With a single sub-episode every sub-goal is the episode goal, so the
/// high level is neither used nor trained.
pub fn train_epoch<E: GoalEnv + ?Sized, R: Rng + ?Sized>(
    env: &mut E,
    agents: &mut Agents,
    buffer: &mut ReplayBuffer,
    config: &DtDConfig,
    epoch: usize,
    rng: &mut R,
) -> Result<EpochMetrics> {
    let started = Instant::now();
    let spec = env.spec().clone();
    let train_high = config.sub_episodes > 1;

    for _ in 0..config.episodes_per_epoch {
        let env_seed: u64 = rng.random();
        let (trace, _) = run_episode(env, agents, config, epoch, env_seed, true, rng)?;
        update_normalizers(&spec, agents, &trace, config.relabel_prob, train_high, rng)?;
        buffer.store_episode(trace)?;
    }

    let mut low_acc = TrainStats::default();
    let mut high_acc = TrainStats::default();
    for _ in 0..config.trainings_per_epoch {
        let batch = buffer.sample_low(config.batch_size, config.relabel_prob, rng)?;
        add_stats(&mut low_acc, agents.low.train_batch(&batch)?);
        if train_high {
            let batch = buffer.sample_high(config.batch_size, config.relabel_prob, rng)?;
            add_stats(&mut high_acc, agents.high.train_batch(&batch)?);
        }
        agents.low.update_targets()?;
        if train_high {
            agents.high.update_targets()?;
        }
    }
    let high_updates = if train_high { config.trainings_per_epoch } else { 0 };

    let report = evaluate(env, agents, config, config.eval_episodes, config.seed)?;
    let episodes = (epoch + 1) * config.episodes_per_epoch;
    Ok(EpochMetrics {
        epoch,
        episodes,
        env_steps: episodes * config.horizon,
        success_rate: report.success_rate,
        mean_return: report.mean_return,
        low: mean_stats(low_acc, config.trainings_per_epoch),
        high: mean_stats(high_acc, high_updates),
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

/// Deterministic episodes on the fixed seed set `seed + EVAL_SEED_OFFSET + i`.
pub fn evaluate<E: GoalEnv + ?Sized>(
    env: &mut E,
    agents: &Agents,
    config: &DtDConfig,
    n_episodes: usize,
    seed: u64,
) -> Result<EvalReport> {
    if n_episodes == 0 {
        return Err(crate::error::Error::InvalidArgument(
            "evaluation needs at least one episode".into(),
        ));
    }
    // never consulted when explore = false
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut episodes = Vec::with_capacity(n_episodes);
    for i in 0..n_episodes {
        let env_seed = seed.wrapping_add(EVAL_SEED_OFFSET).wrapping_add(i as u64);
        let (trace, episode_return) = run_episode(env, agents, config, usize::MAX, env_seed, false, &mut rng)?;
        episodes.push(EvalEpisode {
            seed: env_seed,
            success: trace.success,
            episode_return,
        });
    }
    let n = n_episodes as f64;
    Ok(EvalReport {
        success_rate: episodes.iter().filter(|e| e.success).count() as f64 / n,
        mean_return: episodes.iter().map(|e| e.episode_return).sum::<f64>() / n,
        episodes,
    })
}
