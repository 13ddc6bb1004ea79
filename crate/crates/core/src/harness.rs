//! Multi-seed training runs, metrics files, evaluation reports and the
//! high-level value landscape export.
//!
//! Output layout of a training run rooted at `out`:
//!
//! ```text
//! out/<algo>/manifest.txt          config snapshot, algorithm, seeds, version
//! out/<algo>/aggregate.csv         per-epoch median and quartiles over seeds
//! out/<algo>/seed_<s>/metrics.csv  one row per epoch
//! out/<algo>/seed_<s>/checkpoints/{epoch_NNNN,latest,best}.ckpt
//! ```

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::config::DtDConfig;
use crate::controller::{evaluate, train_epoch, Agents, EpochMetrics, EvalReport};
use crate::envs::make_env;
use crate::error::{Error, Result};
use crate::replay::ReplayBuffer;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const METRICS_HEADER: &str = "epoch,episodes,env_steps,success_rate,critic_loss_low,actor_loss_low,critic_loss_high,actor_loss_high,mean_q_low,mean_q_high,wall_time_s";

pub const AGGREGATE_HEADER: &str = "epoch,success_median,success_p25,success_p75,success_mean";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algo {
    /// Flat agent, no relabeling.
    Ddpg,
    /// Flat agent with hindsight relabeling.
    Her,
    /// Two-level agent with relabeling at both levels.
    Dtd,
}

impl Algo {
    pub const ALL: [Algo; 3] = [Algo::Ddpg, Algo::Her, Algo::Dtd];

    pub fn as_str(self) -> &'static str {
        match self {
            Algo::Ddpg => "ddpg",
            Algo::Her => "her",
            Algo::Dtd => "dtd",
        }
    }

    /// Applies the algorithm's preset: `ddpg` ⇒ one sub-episode, no
    /// relabeling; `her` ⇒ one sub-episode; `dtd` ⇒ at least two sub-episodes.
    pub fn apply_preset(self, config: &DtDConfig) -> Result<DtDConfig> {
        let mut cfg = config.clone();
        match self {
            Algo::Ddpg => {
                cfg.sub_episodes = 1;
                cfg.relabel_prob = 0.0;
            }
            Algo::Her => cfg.sub_episodes = 1,
            Algo::Dtd => {
                if cfg.sub_episodes < 2 {
                    return Err(Error::config(
                        "sub_episodes",
                        "the dtd preset needs at least 2 sub-episodes",
                    ));
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ddpg" => Ok(Algo::Ddpg),
            "her" => Ok(Algo::Her),
            "dtd" => Ok(Algo::Dtd),
            other => Err(Error::InvalidArgument(format!(
                "unknown algorithm `{other}` (expected ddpg, her or dtd)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    /// Config with the algorithm preset already applied.
    pub config: DtDConfig,
    pub algo: Algo,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub tool_version: String,
    /// Run seeds on separate threads (each writes only its own directory).
    pub parallel: bool,
}

impl RunManifest {
    /// Seeds are `config.seed, config.seed + 1, …`.
    pub fn new(config: &DtDConfig, algo: Algo, n_seeds: usize, out_dir: impl Into<PathBuf>) -> Result<Self> {
        if n_seeds == 0 {
            return Err(Error::InvalidArgument("need at least one seed".into()));
        }
        Ok(Self {
            config: algo.apply_preset(config)?,
            algo,
            seeds: (0..n_seeds as u64).map(|i| config.seed + i).collect(),
            out_dir: out_dir.into(),
            tool_version: TOOL_VERSION.to_string(),
            parallel: false,
        })
    }

    pub fn algo_dir(&self) -> PathBuf {
        self.out_dir.join(self.algo.as_str())
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.algo_dir().join(format!("seed_{seed}"))
    }

    fn describe(&self) -> String {
        let seeds = self
            .seeds
            .iter()
            .map(u64::to_string)
            .collect::<Vec<_>>()
            .join(",");
        format!(
            "# algo: {}\n# seeds: {seeds}\n# tool_version: {}\n{}",
            self.algo,
            self.tool_version,
            self.config.to_config_string()
        )
    }
}

pub fn format_metrics_row(m: &EpochMetrics, record_wall_time: bool) -> String {
    let wall = if record_wall_time { m.wall_time_s } else { 0.0 };
    format!(
        "{},{},{},{},{},{},{},{},{},{},{:.3}",
        m.epoch,
        m.episodes,
        m.env_steps,
        m.success_rate,
        m.low.critic_loss,
        m.low.actor_loss,
        m.high.critic_loss,
        m.high.actor_loss,
        m.low.mean_q,
        m.high.mean_q,
        wall
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    pub metrics: Vec<EpochMetrics>,
    pub dir: PathBuf,
}

impl SeedRun {
    pub fn checkpoint_path(&self, name: &str) -> PathBuf {
        self.dir.join("checkpoints").join(name)
    }

    pub fn final_success(&self) -> f64 {
        self.metrics.last().map_or(0.0, |m| m.success_rate)
    }
}

pub fn epoch_checkpoint_name(epoch_number: usize) -> String {
    format!("epoch_{epoch_number:04}.ckpt")
}

/// Trains one seed, writing its metrics CSV and checkpoints.
pub fn run_seed(manifest: &RunManifest, seed: u64) -> Result<SeedRun> {
    let mut config = manifest.config.clone();
    config.seed = seed;
    let dir = manifest.seed_dir(seed);
    let ckpt_dir = dir.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir)?;

    let mut env = make_env(&config.env)?;
    let spec = env.spec().clone();
    let mut agents = Agents::new(&spec, &config, seed)?;
    let mut buffer = ReplayBuffer::new(spec, config.buffer_capacity)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut csv = String::new();
    csv.push_str(METRICS_HEADER);
    csv.push('\n');
    let mut metrics = Vec::with_capacity(config.epochs);
    let mut best = f64::NEG_INFINITY;
    for epoch in 0..config.epochs {
        let m = train_epoch(env.as_mut(), &mut agents, &mut buffer, &config, epoch, &mut rng)?;
        csv.push_str(&format_metrics_row(&m, config.record_wall_time));
        csv.push('\n');
        let number = epoch + 1;
        if number == 1 || number % config.checkpoint_every == 0 || number == config.epochs {
            save_checkpoint(ckpt_dir.join(epoch_checkpoint_name(number)), &config, &agents)?;
        }
        save_checkpoint(ckpt_dir.join("latest.ckpt"), &config, &agents)?;
        if m.success_rate >= best {
            best = m.success_rate;
            save_checkpoint(ckpt_dir.join("best.ckpt"), &config, &agents)?;
        }
        metrics.push(m);
        std::fs::write(dir.join("metrics.csv"), &csv)?;
    }
    std::fs::write(dir.join("metrics.csv"), &csv)?;
    Ok(SeedRun { seed, metrics, dir })
}

/// Linear-interpolation percentile of an ascending slice, `q` in `[0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of an empty slice");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateRow {
    pub epoch: usize,
    pub median: f64,
    pub p25: f64,
    pub p75: f64,
    pub mean: f64,
}

/// Per-epoch success-rate order statistics across seeds.
pub fn aggregate(runs: &[SeedRun]) -> Vec<AggregateRow> {
    let epochs = runs.iter().map(|r| r.metrics.len()).min().unwrap_or(0);
    (0..epochs)
        .map(|e| {
            let mut v: Vec<f64> = runs.iter().map(|r| r.metrics[e].success_rate).collect();
            v.sort_by(f64::total_cmp);
            AggregateRow {
                epoch: e,
                median: percentile(&v, 0.5),
                p25: percentile(&v, 0.25),
                p75: percentile(&v, 0.75),
                mean: v.iter().sum::<f64>() / v.len() as f64,
            }
        })
        .collect()
}

pub fn format_aggregate(rows: &[AggregateRow]) -> String {
    let mut out = String::from(AGGREGATE_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.epoch, r.median, r.p25, r.p75, r.mean);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub runs: Vec<SeedRun>,
    pub aggregate: Vec<AggregateRow>,
}

pub fn run_train(manifest: &RunManifest) -> Result<TrainSummary> {
    let algo_dir = manifest.algo_dir();
    std::fs::create_dir_all(&algo_dir)?;
    std::fs::write(algo_dir.join("manifest.txt"), manifest.describe())?;

    let runs = if manifest.parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> = manifest
                .seeds
                .iter()
                .map(|&seed| scope.spawn(move || run_seed(manifest, seed)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("seed worker panicked"))
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        manifest
            .seeds
            .iter()
            .map(|&seed| run_seed(manifest, seed))
            .collect::<Result<Vec<_>>>()?
    };
    let aggregate = aggregate(&runs);
    std::fs::write(algo_dir.join("aggregate.csv"), format_aggregate(&aggregate))?;
    Ok(TrainSummary { runs, aggregate })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapRequest {
    pub checkpoint: PathBuf,
    pub scenario: String,
    pub resolution: usize,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    /// `(x, y, q)` per cell, rows of constant `y` in ascending order.
    pub cells: Vec<(f64, f64, f64)>,
    pub min: f64,
    pub max: f64,
    pub argmax: (f64, f64),
    pub start: Vec<f64>,
    pub goal: Vec<f64>,
}

impl Heatmap {
    pub fn spread(&self) -> f64 {
        self.max - self.min
    }

    pub fn summary_line(&self) -> String {
        format!(
            "# min={},max={},argmax_x={},argmax_y={}",
            self.min, self.max, self.argmax.0, self.argmax.1
        )
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,q\n");
        for (x, y, q) in &self.cells {
            let _ = writeln!(out, "{x},{y},{q}");
        }
        out.push_str(&self.summary_line());
        out.push('\n');
        out
    }
}

/// Evaluates the high-level critic over a grid of candidate sub-goals
/// covering the goal-space x/y extent, for the scenario's fixed start and goal.
pub fn compute_heatmap(checkpoint: &Checkpoint, scenario: &str, resolution: usize) -> Result<Heatmap> {
    if resolution < 2 {
        return Err(Error::InvalidArgument(format!(
            "heatmap resolution must be at least 2, got {resolution}"
        )));
    }
    let mut env = make_env(&checkpoint.env)?;
    let spec = env.spec().clone();
    if spec.goal_dim < 2 {
        return Err(Error::UnknownScenario {
            scenario: scenario.to_string(),
            env: spec.name.to_string(),
        });
    }
    let reset = env.reset_scenario(scenario)?;
    let high = &checkpoint.agents.high;

    let axis = |d: usize, i: usize| {
        let (lo, hi) = (spec.goal_low[d], spec.goal_high[d]);
        lo + (i as f64 + 0.5) * (hi - lo) / resolution as f64
    };
    let mut candidates = Vec::with_capacity(resolution * resolution * spec.goal_dim);
    let mut coords = Vec::with_capacity(resolution * resolution);
    for iy in 0..resolution {
        for ix in 0..resolution {
            let (x, y) = (axis(0, ix), axis(1, iy));
            candidates.push(x);
            candidates.push(y);
            // remaining goal coordinates follow the episode goal
            candidates.extend_from_slice(&reset.goal[2..]);
            coords.push((x, y));
        }
    }
    let q = high.q_values(&reset.observation, &reset.goal, &candidates)?;
    if let Some(bad) = q.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite Q value {bad}")));
    }
    let cells: Vec<(f64, f64, f64)> = coords.iter().zip(&q).map(|(&(x, y), &q)| (x, y, q)).collect();
    let mut best = 0;
    for (i, c) in cells.iter().enumerate() {
        if c.2 > cells[best].2 {
            best = i;
        }
    }
    Ok(Heatmap {
        min: q.iter().copied().fold(f64::INFINITY, f64::min),
        max: q.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        argmax: (cells[best].0, cells[best].1),
        cells,
        start: reset.achieved.coords.clone(),
        goal: reset.goal.coords.clone(),
    })
}

pub fn export_heatmap(request: &HeatmapRequest) -> Result<Heatmap> {
    let checkpoint = load_checkpoint(&request.checkpoint)?;
    let map = compute_heatmap(&checkpoint, &request.scenario, request.resolution)?;
    write_file(&request.out, &map.to_csv())?;
    Ok(map)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, contents)?;
    Ok(())
}

/// Deterministic evaluation of a checkpoint in its own environment.
pub fn evaluate_checkpoint(checkpoint: &Checkpoint, episodes: usize, seed: u64) -> Result<EvalReport> {
    let mut env = make_env(&checkpoint.env)?;
    checkpoint.check_against(env.spec())?;
    let mut config = DtDConfig::defaults_for(&checkpoint.env);
    config.sub_episodes = checkpoint.sub_episodes;
    config.horizon = checkpoint.horizon;
    evaluate(env.as_mut(), &checkpoint.agents, &config, episodes, seed)
}

pub fn run_eval(checkpoint: impl AsRef<Path>, episodes: usize, seed: u64) -> Result<EvalReport> {
    evaluate_checkpoint(&load_checkpoint(checkpoint)?, episodes, seed)
}

pub fn eval_csv(report: &EvalReport) -> String {
    let mut out = String::from("episode,seed,success,return\n");
    for (i, e) in report.episodes.iter().enumerate() {
        let _ = writeln!(out, "{i},{},{},{}", e.seed, u8::from(e.success), e.episode_return);
    }
    out
}

pub fn eval_report_text(report: &EvalReport) -> String {
    format!(
        "episodes: {}\nsuccess_rate: {}\nmean_return: {}\n",
        report.episodes.len(),
        report.success_rate,
        report.mean_return
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_statistics_of_five_seeds() {
        let v = [0.0, 0.25, 0.5, 0.75, 1.0];
        assert_eq!(percentile(&v, 0.25), 0.25);
        assert_eq!(percentile(&v, 0.5), 0.5);
        assert_eq!(percentile(&v, 0.75), 0.75);
        assert_eq!(percentile(&[2.0, 4.0], 0.5), 3.0);
    }

    #[test]
    fn presets() {
        let base = DtDConfig::default();
        let d = Algo::Ddpg.apply_preset(&base).unwrap();
        assert_eq!((d.sub_episodes, d.relabel_prob), (1, 0.0));
        let h = Algo::Her.apply_preset(&base).unwrap();
        assert_eq!((h.sub_episodes, h.relabel_prob), (1, 0.8));
        let t = Algo::Dtd.apply_preset(&base).unwrap();
        assert_eq!((t.sub_episodes, t.relabel_prob), (5, 0.8));
        let mut flat = base.clone();
        flat.sub_episodes = 1;
        assert!(Algo::Dtd.apply_preset(&flat).is_err());
    }

    #[test]
    fn algo_parsing() {
        assert_eq!("dtd".parse::<Algo>().unwrap(), Algo::Dtd);
        assert!("td3".parse::<Algo>().is_err());
    }
}
