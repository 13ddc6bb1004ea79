//! Run configuration and its flat `key: value` file format.
//!
//! Lines are `key: value`; `#` starts a comment; blank lines are ignored.
//! Every key is optional. Keys left out take the defaults below, some of
//! which depend on the chosen environment.
//!
//! | key | default |
//! |-----|---------|
//! | `env` | `planar-push` |
//! | `epochs` | 100 |
//! | `episodes_per_epoch` | 50 |
//! | `sub_episodes` | 5 (`block-rotate`: 4) |
//! | `horizon` | 50 (`block-rotate`: 48) |
//! | `trainings_per_epoch` | 400 |
//! | `batch_size` | 128 |
//! | `relabel_prob` | 0.8 |
//! | `sigma` | 0.1 (`block-rotate`: 0.5) |
//! | `eps_start` / `eps_end` | 1.0 / 0.2 |
//! | `anneal_epochs` | `epochs / 2` |
//! | `hidden_layers` | `64,64,64` |
//! | `gamma` / `tau` | 0.98 / 0.95 |
//! | `lr_actor` / `lr_critic` | 0.001 / 0.001 |
//! | `explore_eps` / `explore_noise_std` | 0.2 / 0.1 |
//! | `high_explore_eps` / `high_explore_noise_std` | 0.2 / 0.1 |
//! | `action_l2` | 0.05 |
//! | `norm_clip` | 5.0 |
//! | `buffer_capacity` | 10000 |
//! | `eval_episodes` | 30 |
//! | `checkpoint_every` | 10 |
//! | `record_wall_time` | false |
//! | `seed` | 0 |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::agent::AgentConfig;
use crate::envs::{self, BLOCK_ROTATE, PLANAR_PUSH};
use crate::error::{Error, Result};

/// Sub-goal generation schedule: Gaussian perturbations of the achieved goal
/// with probability ε, annealed linearly, otherwise the high-level actor.
#[derive(Debug, Clone, PartialEq)]
pub struct SubgoalSchedule {
    pub sigma: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    pub anneal_epochs: usize,
}

impl SubgoalSchedule {
    pub fn epsilon(&self, epoch: usize) -> f64 {
        if self.anneal_epochs == 0 || epoch >= self.anneal_epochs {
            return self.eps_end;
        }
        let frac = epoch as f64 / self.anneal_epochs as f64;
        self.eps_start + (self.eps_end - self.eps_start) * frac
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DtDConfig {
    pub env: String,
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    pub sub_episodes: usize,
    pub horizon: usize,
    pub trainings_per_epoch: usize,
    pub batch_size: usize,
    pub relabel_prob: f64,
    pub schedule: SubgoalSchedule,
    pub low: AgentConfig,
    pub high: AgentConfig,
    pub buffer_capacity: usize,
    pub eval_episodes: usize,
    pub checkpoint_every: usize,
    pub record_wall_time: bool,
    pub seed: u64,
}

impl Default for DtDConfig {
    fn default() -> Self {
        Self::defaults_for(PLANAR_PUSH)
    }
}

const KEYS: &[&str] = &[
    "env",
    "epochs",
    "episodes_per_epoch",
    "sub_episodes",
    "horizon",
    "trainings_per_epoch",
    "batch_size",
    "relabel_prob",
    "sigma",
    "eps_start",
    "eps_end",
    "anneal_epochs",
    "hidden_layers",
    "gamma",
    "tau",
    "lr_actor",
    "lr_critic",
    "explore_eps",
    "explore_noise_std",
    "high_explore_eps",
    "high_explore_noise_std",
    "action_l2",
    "norm_clip",
    "buffer_capacity",
    "eval_episodes",
    "checkpoint_every",
    "record_wall_time",
    "seed",
];

fn parse_value<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse::<T>().map_err(|_| {
        Error::config(
            key,
            format!("cannot parse `{raw}` as {}", std::any::type_name::<T>()),
        )
    })
}

fn parse_layers(raw: &str) -> Result<Vec<usize>> {
    raw.split(',')
        .map(|w| parse_value::<usize>("hidden_layers", w.trim()))
        .collect()
}

impl DtDConfig {
    pub fn defaults_for(env: &str) -> Self {
        let rotate = env == BLOCK_ROTATE;
        let epochs = 100;
        Self {
            env: env.to_string(),
            epochs,
            episodes_per_epoch: 50,
            sub_episodes: if rotate { 4 } else { 5 },
            horizon: if rotate { 48 } else { 50 },
            trainings_per_epoch: 400,
            batch_size: 128,
            relabel_prob: 0.8,
            schedule: SubgoalSchedule {
                sigma: if rotate { 0.5 } else { 0.1 },
                eps_start: 1.0,
                eps_end: 0.2,
                anneal_epochs: epochs / 2,
            },
            low: AgentConfig::default(),
            high: AgentConfig::default(),
            buffer_capacity: 10_000,
            eval_episodes: 30,
            checkpoint_every: 10,
            record_wall_time: false,
            seed: 0,
        }
    }

    pub fn sub_episode_len(&self) -> usize {
        self.horizon / self.sub_episodes
    }

    pub fn validate(&self) -> Result<()> {
        envs::env_spec(&self.env).map_err(|e| Error::config("env", e.to_string()))?;
        let positive = [
            ("epochs", self.epochs),
            ("episodes_per_epoch", self.episodes_per_epoch),
            ("sub_episodes", self.sub_episodes),
            ("horizon", self.horizon),
            ("batch_size", self.batch_size),
            ("buffer_capacity", self.buffer_capacity),
            ("eval_episodes", self.eval_episodes),
            ("checkpoint_every", self.checkpoint_every),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if self.horizon % self.sub_episodes != 0 {
            return Err(Error::config(
                "sub_episodes",
                format!(
                    "horizon {} is not divisible by {} sub-episodes",
                    self.horizon, self.sub_episodes
                ),
            ));
        }
        let unit = |key: &str, v: f64| -> Result<()> {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(key, format!("{v} outside [0, 1]")))
            }
        };
        unit("relabel_prob", self.relabel_prob)?;
        unit("eps_start", self.schedule.eps_start)?;
        unit("eps_end", self.schedule.eps_end)?;
        unit("tau", self.low.tau)?;
        unit("explore_eps", self.low.explore_eps)?;
        unit("high_explore_eps", self.high.explore_eps)?;
        if self.schedule.eps_end > self.schedule.eps_start {
            return Err(Error::config("eps_end", "must not exceed eps_start"));
        }
        if !(self.schedule.sigma > 0.0) {
            return Err(Error::config("sigma", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.low.gamma) {
            return Err(Error::config("gamma", "must lie in [0, 1)"));
        }
        for (key, v) in [
            ("lr_actor", self.low.lr_actor),
            ("lr_critic", self.low.lr_critic),
            ("norm_clip", self.low.norm_clip),
        ] {
            if !(v > 0.0) {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if self.low.hidden_layers.iter().any(|&w| w == 0) {
            return Err(Error::config("hidden_layers", "widths must be positive"));
        }
        Ok(())
    }

    /// Parses the `key: value` format, fills defaults and validates.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: BTreeMap<&str, &str> = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once(':').ok_or_else(|| {
                Error::config(
                    format!("line {}", lineno + 1),
                    format!("expected `key: value`, got `{line}`"),
                )
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(Error::config(key, "unknown key"));
            }
            if entries.insert(key, value).is_some() {
                return Err(Error::config(key, "duplicate key"));
            }
        }

        let env = entries.get("env").copied().unwrap_or(PLANAR_PUSH);
        let mut cfg = Self::defaults_for(env);
        let mut anneal_set = false;
        for (&key, &raw) in &entries {
            match key {
                "env" => {}
                "epochs" => cfg.epochs = parse_value(key, raw)?,
                "episodes_per_epoch" => cfg.episodes_per_epoch = parse_value(key, raw)?,
                "sub_episodes" => cfg.sub_episodes = parse_value(key, raw)?,
                "horizon" => cfg.horizon = parse_value(key, raw)?,
                "trainings_per_epoch" => cfg.trainings_per_epoch = parse_value(key, raw)?,
                "batch_size" => cfg.batch_size = parse_value(key, raw)?,
                "relabel_prob" => cfg.relabel_prob = parse_value(key, raw)?,
                "sigma" => cfg.schedule.sigma = parse_value(key, raw)?,
                "eps_start" => cfg.schedule.eps_start = parse_value(key, raw)?,
                "eps_end" => cfg.schedule.eps_end = parse_value(key, raw)?,
                "anneal_epochs" => {
                    cfg.schedule.anneal_epochs = parse_value(key, raw)?;
                    anneal_set = true;
                }
                "hidden_layers" => {
                    let layers = parse_layers(raw)?;
                    cfg.low.hidden_layers = layers.clone();
                    cfg.high.hidden_layers = layers;
                }
                "gamma" => {
                    cfg.low.gamma = parse_value(key, raw)?;
                    cfg.high.gamma = cfg.low.gamma;
                }
                "tau" => {
                    cfg.low.tau = parse_value(key, raw)?;
                    cfg.high.tau = cfg.low.tau;
                }
                "lr_actor" => {
                    cfg.low.lr_actor = parse_value(key, raw)?;
                    cfg.high.lr_actor = cfg.low.lr_actor;
                }
                "lr_critic" => {
                    cfg.low.lr_critic = parse_value(key, raw)?;
                    cfg.high.lr_critic = cfg.low.lr_critic;
                }
                "action_l2" => {
                    cfg.low.action_l2 = parse_value(key, raw)?;
                    cfg.high.action_l2 = cfg.low.action_l2;
                }
                "norm_clip" => {
                    cfg.low.norm_clip = parse_value(key, raw)?;
                    cfg.high.norm_clip = cfg.low.norm_clip;
                }
                "explore_eps" => cfg.low.explore_eps = parse_value(key, raw)?,
                "explore_noise_std" => cfg.low.explore_noise_std = parse_value(key, raw)?,
                "high_explore_eps" => cfg.high.explore_eps = parse_value(key, raw)?,
                "high_explore_noise_std" => cfg.high.explore_noise_std = parse_value(key, raw)?,
                "buffer_capacity" => cfg.buffer_capacity = parse_value(key, raw)?,
                "eval_episodes" => cfg.eval_episodes = parse_value(key, raw)?,
                "checkpoint_every" => cfg.checkpoint_every = parse_value(key, raw)?,
                "record_wall_time" => cfg.record_wall_time = parse_value(key, raw)?,
                "seed" => cfg.seed = parse_value(key, raw)?,
                _ => unreachable!("key list and match arms out of sync: {key}"),
            }
        }
        if !anneal_set {
            cfg.schedule.anneal_epochs = cfg.epochs / 2;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Writes every key, in the documented order.
    pub fn to_config_string(&self) -> String {
        let layers = self
            .low
            .hidden_layers
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(",");
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k}: {v}");
        };
        kv("env", self.env.clone());
        kv("epochs", self.epochs.to_string());
        kv("episodes_per_epoch", self.episodes_per_epoch.to_string());
        kv("sub_episodes", self.sub_episodes.to_string());
        kv("horizon", self.horizon.to_string());
        kv("trainings_per_epoch", self.trainings_per_epoch.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("relabel_prob", self.relabel_prob.to_string());
        kv("sigma", self.schedule.sigma.to_string());
        kv("eps_start", self.schedule.eps_start.to_string());
        kv("eps_end", self.schedule.eps_end.to_string());
        kv("anneal_epochs", self.schedule.anneal_epochs.to_string());
        kv("hidden_layers", layers);
        kv("gamma", self.low.gamma.to_string());
        kv("tau", self.low.tau.to_string());
        kv("lr_actor", self.low.lr_actor.to_string());
        kv("lr_critic", self.low.lr_critic.to_string());
        kv("explore_eps", self.low.explore_eps.to_string());
        kv("explore_noise_std", self.low.explore_noise_std.to_string());
        kv("high_explore_eps", self.high.explore_eps.to_string());
        kv("high_explore_noise_std", self.high.explore_noise_std.to_string());
        kv("action_l2", self.low.action_l2.to_string());
        kv("norm_clip", self.low.norm_clip.to_string());
        kv("buffer_capacity", self.buffer_capacity.to_string());
        kv("eval_episodes", self.eval_episodes.to_string());
        kv("checkpoint_every", self.checkpoint_every.to_string());
        kv("record_wall_time", self.record_wall_time.to_string());
        kv("seed", self.seed.to_string());
        out
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<DtDConfig> {
    let text = std::fs::read_to_string(path)?;
    DtDConfig::parse(&text)
}
