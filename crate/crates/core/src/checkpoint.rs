//! Binary checkpoints of both agents.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic  b"DTD1"
//! u8     format version
//! u32    env name length, then UTF-8 bytes
//! record*  until end of file:
//!     u32 name length, name bytes
//!     u32 rank, rank × u32 dims
//!     prod(dims) × f64 values
//! ```
//!
//! Records hold every network tensor (online and target), activation codes,
//! action bounds, agent hyperparameters and input-normalizer statistics.
//! Optimizer moments are not stored.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::agent::{AgentConfig, DdpgAgent, Normalizer};
use crate::config::DtDConfig;
use crate::controller::Agents;
use crate::envs::{self, EnvSpec};
use crate::error::{Error, Result};
use crate::nn::{Activation, AdamState, MlpParams};

pub const MAGIC: &[u8; 4] = b"DTD1";
pub const FORMAT_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub dims: Vec<u32>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub env: String,
    pub sub_episodes: usize,
    pub horizon: usize,
    pub agents: Agents,
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn record(&mut self, name: &str, dims: &[usize], values: &[f64]) {
        debug_assert_eq!(dims.iter().product::<usize>(), values.len());
        self.buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        self.buf.extend_from_slice(name.as_bytes());
        self.buf.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for &d in dims {
            self.buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in values {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn scalar(&mut self, name: &str, v: f64) {
        self.record(name, &[1], &[v]);
    }

    fn vector(&mut self, name: &str, v: &[f64]) {
        self.record(name, &[v.len()], v);
    }

    fn mlp(&mut self, prefix: &str, p: &MlpParams) {
        self.vector(
            &format!("{prefix}.activations"),
            &[p.hidden_activation.code() as f64, p.output_activation.code() as f64],
        );
        for k in 0..p.num_layers() {
            let (fan_in, fan_out) = (p.layer_sizes[k], p.layer_sizes[k + 1]);
            self.record(&format!("{prefix}.w{k}"), &[fan_out, fan_in], &p.weights[k]);
            self.record(&format!("{prefix}.b{k}"), &[fan_out], &p.biases[k]);
        }
    }

    fn agent(&mut self, prefix: &str, a: &DdpgAgent) {
        self.vector(&format!("{prefix}.dims"), &[a.obs_dim as f64, a.goal_dim as f64]);
        self.vector(&format!("{prefix}.action_low"), &a.action_low);
        self.vector(&format!("{prefix}.action_high"), &a.action_high);
        let c = &a.config;
        self.vector(
            &format!("{prefix}.hparams"),
            &[
                c.gamma,
                c.tau,
                c.lr_actor,
                c.lr_critic,
                c.explore_eps,
                c.explore_noise_std,
                c.action_l2,
                c.norm_clip,
            ],
        );
        self.mlp(&format!("{prefix}.actor"), &a.actor);
        self.mlp(&format!("{prefix}.critic"), &a.critic);
        self.mlp(&format!("{prefix}.actor_target"), &a.actor_target);
        self.mlp(&format!("{prefix}.critic_target"), &a.critic_target);
        self.scalar(&format!("{prefix}.norm.count"), a.normalizer.count);
        self.vector(&format!("{prefix}.norm.mean"), &a.normalizer.mean);
        self.vector(&format!("{prefix}.norm.m2"), &a.normalizer.m2);
    }
}

pub fn encode_checkpoint(env: &str, sub_episodes: usize, horizon: usize, agents: &Agents) -> Vec<u8> {
    let mut w = Writer { buf: Vec::new() };
    w.buf.extend_from_slice(MAGIC);
    w.buf.push(FORMAT_VERSION);
    w.buf.extend_from_slice(&(env.len() as u32).to_le_bytes());
    w.buf.extend_from_slice(env.as_bytes());
    w.scalar("meta.sub_episodes", sub_episodes as f64);
    w.scalar("meta.horizon", horizon as f64);
    w.agent("low", &agents.low);
    w.agent("high", &agents.high);
    w.buf
}

pub fn save_checkpoint(path: impl AsRef<Path>, config: &DtDConfig, agents: &Agents) -> Result<()> {
    let bytes = encode_checkpoint(&config.env, config.sub_episodes, config.horizon, agents);
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.flush()?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!(
                "truncated file: wanted {n} bytes at offset {}",
                self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::Format("name is not UTF-8".into()))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

/// Parses the header and all records without interpreting them.
pub fn decode_records(bytes: &[u8]) -> Result<(String, BTreeMap<String, Record>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).map_err(|_| Error::Format("file too short for magic".into()))? != MAGIC {
        return Err(Error::Format("bad magic bytes".into()));
    }
    let version = r.take(1)?[0];
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let env = r.string()?;
    let mut records = BTreeMap::new();
    while !r.done() {
        let name = r.string()?;
        let rank = r.u32()? as usize;
        let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let count = dims.iter().map(|&d| d as usize).product::<usize>();
        let raw = r.take(count.checked_mul(8).ok_or_else(|| Error::Format("record too large".into()))?)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if records.insert(name.clone(), Record { dims, values }).is_some() {
            return Err(Error::Format(format!("duplicate record `{name}`")));
        }
    }
    Ok((env, records))
}

struct Records {
    map: BTreeMap<String, Record>,
}

impl Records {
    fn get(&self, name: &str) -> Result<&Record> {
        self.map
            .get(name)
            .ok_or_else(|| Error::Format(format!("missing record `{name}`")))
    }

    fn vector(&self, name: &str) -> Result<Vec<f64>> {
        let r = self.get(name)?;
        if r.dims.len() != 1 {
            return Err(Error::Shape(format!("`{name}` should be rank 1")));
        }
        Ok(r.values.clone())
    }

    fn scalar(&self, name: &str) -> Result<f64> {
        let v = self.vector(name)?;
        if v.len() != 1 {
            return Err(Error::Shape(format!("`{name}` should hold one value")));
        }
        Ok(v[0])
    }

    fn count(&self, name: &str) -> Result<usize> {
        let v = self.scalar(name)?;
        if v < 0.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
            return Err(Error::Format(format!("`{name}` is not a count: {v}")));
        }
        Ok(v as usize)
    }

    fn activation(&self, name: &str, slot: usize) -> Result<Activation> {
        let v = self.vector(name)?;
        v.get(slot)
            .filter(|c| c.fract() == 0.0 && **c >= 0.0)
            .and_then(|&c| Activation::from_code(c as u8))
            .ok_or_else(|| Error::Format(format!("bad activation code in `{name}`")))
    }

    fn mlp(&self, prefix: &str) -> Result<MlpParams> {
        let acts = format!("{prefix}.activations");
        let hidden = self.activation(&acts, 0)?;
        let output = self.activation(&acts, 1)?;
        let mut layer_sizes = Vec::new();
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut k = 0;
        while let Some(w) = self.map.get(&format!("{prefix}.w{k}")) {
            if w.dims.len() != 2 {
                return Err(Error::Shape(format!("{prefix}.w{k} should be rank 2")));
            }
            let (fan_out, fan_in) = (w.dims[0] as usize, w.dims[1] as usize);
            if k == 0 {
                layer_sizes.push(fan_in);
            } else if layer_sizes[k] != fan_in {
                return Err(Error::Shape(format!(
                    "{prefix}.w{k} input width {fan_in} does not chain with {}",
                    layer_sizes[k]
                )));
            }
            layer_sizes.push(fan_out);
            let b = self.get(&format!("{prefix}.b{k}"))?;
            if b.dims != [fan_out as u32] {
                return Err(Error::Shape(format!("{prefix}.b{k} should have {fan_out} values")));
            }
            weights.push(w.values.clone());
            biases.push(b.values.clone());
            k += 1;
        }
        MlpParams::from_parts(layer_sizes, weights, biases, hidden, output)
            .map_err(|e| Error::Shape(format!("{prefix}: {e}")))
    }

    fn agent(&self, prefix: &str) -> Result<DdpgAgent> {
        let dims = self.vector(&format!("{prefix}.dims"))?;
        if dims.len() != 2 {
            return Err(Error::Shape(format!("{prefix}.dims should hold 2 values")));
        }
        let (obs_dim, goal_dim) = (dims[0] as usize, dims[1] as usize);
        let action_low = self.vector(&format!("{prefix}.action_low"))?;
        let action_high = self.vector(&format!("{prefix}.action_high"))?;
        let h = self.vector(&format!("{prefix}.hparams"))?;
        if h.len() != 8 {
            return Err(Error::Shape(format!("{prefix}.hparams should hold 8 values")));
        }
        let actor = self.mlp(&format!("{prefix}.actor"))?;
        let critic = self.mlp(&format!("{prefix}.critic"))?;
        let actor_target = self.mlp(&format!("{prefix}.actor_target"))?;
        let critic_target = self.mlp(&format!("{prefix}.critic_target"))?;
        let action_dim = action_low.len();
        if action_high.len() != action_dim
            || actor.input_dim() != obs_dim + goal_dim
            || actor.output_dim() != action_dim
            || critic.input_dim() != obs_dim + goal_dim + action_dim
            || critic.output_dim() != 1
            || !actor.same_architecture(&actor_target)
            || !critic.same_architecture(&critic_target)
        {
            return Err(Error::Shape(format!("{prefix} networks have inconsistent shapes")));
        }
        let hidden_layers = actor.layer_sizes[1..actor.layer_sizes.len() - 1].to_vec();
        let config = AgentConfig {
            hidden_layers,
            gamma: h[0],
            tau: h[1],
            lr_actor: h[2],
            lr_critic: h[3],
            explore_eps: h[4],
            explore_noise_std: h[5],
            action_l2: h[6],
            norm_clip: h[7],
        };
        let mean = self.vector(&format!("{prefix}.norm.mean"))?;
        let m2 = self.vector(&format!("{prefix}.norm.m2"))?;
        if mean.len() != obs_dim + goal_dim || m2.len() != mean.len() {
            return Err(Error::Shape(format!("{prefix} normalizer width mismatch")));
        }
        let normalizer = Normalizer {
            count: self.scalar(&format!("{prefix}.norm.count"))?,
            mean,
            m2,
            clip: config.norm_clip,
        };
        Ok(DdpgAgent {
            actor_opt: AdamState::new(&actor, config.lr_actor),
            critic_opt: AdamState::new(&critic, config.lr_critic),
            actor,
            critic,
            actor_target,
            critic_target,
            action_low,
            action_high,
            normalizer,
            obs_dim,
            goal_dim,
            config,
        })
    }
}

impl Checkpoint {
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let (env, map) = decode_records(bytes)?;
        let records = Records { map };
        let checkpoint = Checkpoint {
            sub_episodes: records.count("meta.sub_episodes")?,
            horizon: records.count("meta.horizon")?,
            agents: Agents {
                low: records.agent("low")?,
                high: records.agent("high")?,
            },
            env,
        };
        let spec = envs::env_spec(&checkpoint.env)
            .map_err(|_| Error::Format(format!("unknown environment `{}`", checkpoint.env)))?;
        checkpoint.check_against(&spec)?;
        Ok(checkpoint)
    }

    /// Verifies the agents' dimensions against an environment.
    pub fn check_against(&self, spec: &EnvSpec) -> Result<()> {
        let (low, high) = (&self.agents.low, &self.agents.high);
        let expect = |what: &str, got: usize, want: usize| -> Result<()> {
            if got == want {
                Ok(())
            } else {
                Err(Error::Shape(format!(
                    "{what} is {got} but `{}` needs {want}",
                    spec.name
                )))
            }
        };
        expect("low-level observation width", low.obs_dim, spec.observation_dim)?;
        expect("low-level goal width", low.goal_dim, spec.goal_dim)?;
        expect("low-level action width", low.action_dim(), spec.action_dim)?;
        expect("high-level observation width", high.obs_dim, spec.observation_dim)?;
        expect("high-level goal width", high.goal_dim, spec.goal_dim)?;
        expect("high-level sub-goal width", high.action_dim(), spec.goal_dim)?;
        if self.sub_episodes == 0 || self.horizon == 0 || self.horizon % self.sub_episodes != 0 {
            return Err(Error::Format(format!(
                "invalid episode layout: horizon {} with {} sub-episodes",
                self.horizon, self.sub_episodes
            )));
        }
        Ok(())
    }
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    Checkpoint::decode(&bytes)
}
