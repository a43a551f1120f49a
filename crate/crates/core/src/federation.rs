//! Round-based federation of A2C agents.
//!
//! Every round each agent plays `period` training episodes on its own, then
//! the agents upload knowledge, the server aggregates it and every agent
//! downloads the result:
//!
//! | protocol   | uplink                   | server                    | local step                 |
//! |------------|--------------------------|---------------------------|----------------------------|
//! | Standalone | nothing                  | nothing                   | nothing                    |
//! | FRD        | proxy memory (12 B/entry)| merge into global proxy   | distill on proxy samples   |
//! | MixFRD     | proxy memory (12 B/entry)| merge into global proxy   | mixup, then distill        |
//! | PD         | raw memory (24 B/entry)  | concatenate               | distill on raw pairs       |
//! | FRL        | weights (4 B/parameter)  | average                   | replace local weights      |
//!
//! All knowledge crosses the server as encoded bytes, so the logged payload
//! is the length of what was actually sent.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{A2cAgent, AgentConfig, AgentError, ReplayMemory};
use crate::codec::WireError;
use crate::env::EnvConfig;
use crate::nn::{average_models, Mlp, NnError, Target, TrainBatch};
use crate::proxy::{ClusterSpec, MergeWeighting, MixupPortion, PolicySample, ProxyError, ProxyReplayMemory};
use crate::scalar::Scalar;

/// Bytes per proxy memory entry.
pub const PROXY_ENTRY_BYTES: u64 = 12;
/// Bytes per raw replay entry.
pub const REPLAY_ENTRY_BYTES: u64 = 24;
/// Bytes per network parameter.
pub const WEIGHT_BYTES: u64 = 4;

#[derive(Debug, Error, PartialEq)]
pub enum FederationError {
    #[error("invalid federation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Proxy(#[from] ProxyError),
    #[error(transparent)]
    Wire(#[from] WireError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Standalone,
    Frd,
    MixFrd,
    Pd,
    Frl,
}

impl Protocol {
    pub const ALL: [Protocol; 5] = [Protocol::Standalone, Protocol::Frd, Protocol::MixFrd, Protocol::Pd, Protocol::Frl];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Standalone => "standalone",
            Protocol::Frd => "frd",
            Protocol::MixFrd => "mixfrd",
            Protocol::Pd => "pd",
            Protocol::Frl => "frl",
        }
    }

    /// Bytes per unit of knowledge exchanged.
    pub fn unit_bytes(self) -> u64 {
        match self {
            Protocol::Standalone => 0,
            Protocol::Frd | Protocol::MixFrd => PROXY_ENTRY_BYTES,
            Protocol::Pd => REPLAY_ENTRY_BYTES,
            Protocol::Frl => WEIGHT_BYTES,
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Protocol::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown protocol `{s}` (expected one of standalone, frd, mixfrd, pd, frl)"))
    }
}

/// Payload of one knowledge transfer: `12 * M^p` for proxy memories,
/// `24 * M` for raw memories, `4 * W` for weights. The size is the entry or
/// parameter count of whatever is sent, in either direction.
pub fn payload_bytes(protocol: Protocol, knowledge_size: u64) -> u64 {
    protocol.unit_bytes() * knowledge_size
}

/// Which networks FRL averages and sends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum FrlScope {
    #[default]
    PolicyAndValue,
    PolicyOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig<T> {
    pub epochs: usize,
    pub learning_rate: T,
    /// Mini-batch size; 0 means one full-batch step per epoch.
    pub batch_size: usize,
}

impl<T: Scalar> Default for DistillConfig<T> {
    fn default() -> Self {
        Self { epochs: 5, learning_rate: T::lit(1e-3), batch_size: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig<T> {
    pub protocol: Protocol,
    pub num_agents: usize,
    /// Sections per state component.
    pub sections: u32,
    /// Local episodes between exchanges.
    pub period: usize,
    /// Episodes each agent may play before the run is capped.
    pub episode_budget: usize,
    pub agent: AgentConfig<T>,
    pub env: EnvConfig<T>,
    pub distill: DistillConfig<T>,
    pub merge_weighting: MergeWeighting,
    /// Leave an agent's own upload out of the memory it downloads.
    pub exclude_self: bool,
    pub mixup: MixupPortion,
    pub frl_scope: FrlScope,
}

impl<T: Scalar> Default for FederationConfig<T> {
    fn default() -> Self {
        Self {
            protocol: Protocol::Frd,
            num_agents: 2,
            sections: 30,
            period: 25,
            episode_budget: 5000,
            agent: AgentConfig::default(),
            env: EnvConfig::default(),
            distill: DistillConfig::default(),
            merge_weighting: MergeWeighting::Uniform,
            exclude_self: false,
            mixup: MixupPortion::default(),
            frl_scope: FrlScope::default(),
        }
    }
}

impl<T: Scalar> FederationConfig<T> {
    pub fn validate(&self) -> Result<(), FederationError> {
        let bad = |m: &str| Err(FederationError::InvalidConfig(m.into()));
        if self.num_agents == 0 {
            return bad("at least one agent is required");
        }
        if self.period == 0 {
            return bad("communication period must be >= 1");
        }
        if self.exclude_self && self.num_agents < 2 && self.protocol != Protocol::Standalone {
            return bad("exclude_self needs at least two agents");
        }
        self.agent.policy_net().validate()?;
        ClusterSpec::cartpole(self.sections, self.env.angle_limit)?;
        Ok(())
    }

    pub fn cluster_spec(&self) -> Result<ClusterSpec<T>, FederationError> {
        Ok(ClusterSpec::cartpole(self.sections, self.env.angle_limit)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub protocol: Protocol,
    pub per_agent_uplink_bytes: Vec<u64>,
    /// Bytes each agent downloads.
    pub downlink_bytes: Vec<u64>,
    /// Visit-count side channel, only nonzero for count-weighted merging.
    pub count_uplink_bytes: Vec<u64>,
    /// Episodes per agent since the start of the run, after this round.
    pub episodes_played: usize,
    pub rolling_averages: Vec<f64>,
    /// Entries (or parameters for FRL) in each agent's upload.
    pub local_sizes: Vec<usize>,
    /// Entries (or parameters) each agent downloads.
    pub global_sizes: Vec<usize>,
    /// Distillation samples each agent trained on.
    pub distill_samples: Vec<usize>,
}

impl RoundLog {
    pub fn uplink_total(&self) -> u64 {
        self.per_agent_uplink_bytes.iter().sum()
    }

    pub fn downlink_total(&self) -> u64 {
        self.downlink_bytes.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub protocol: Protocol,
    pub num_agents: usize,
    pub seed: u64,
    /// Episode at which some agent's rolling average first reached the
    /// target; `None` when the budget ran out.
    pub completion_episode: Option<usize>,
    pub episodes_played: usize,
    pub rounds: Vec<RoundLog>,
    pub total_uplink_bytes: u64,
    pub total_downlink_bytes: u64,
    pub total_count_bytes: u64,
}

/// Soft-target cross-entropy training of the policy network. The value
/// network is untouched. Samples are reshuffled each epoch.
pub fn distill<T: Scalar, R: Rng + ?Sized>(
    agent: &mut A2cAgent<T>,
    samples: &[PolicySample<T>],
    config: &DistillConfig<T>,
    rng: &mut R,
) -> Result<(), FederationError> {
    if samples.is_empty() || config.epochs == 0 {
        return Ok(());
    }
    let batch_size = if config.batch_size == 0 { samples.len() } else { config.batch_size };
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch_size) {
            let mut batch = TrainBatch::new();
            for &i in chunk {
                let s = &samples[i];
                batch.push(s.state.to_array().to_vec(), Target::SoftTarget(normalized(s.policy).to_vec()));
            }
            let grads = agent.policy_net.backward(&batch)?.gradients;
            agent.policy_net.apply_update(&grads, config.learning_rate)?;
        }
    }
    Ok(())
}

fn normalized<T: Scalar>(p: [T; 2]) -> [T; 2] {
    let total = p[0] + p[1];
    if total > T::zero() {
        [p[0] / total, p[1] / total]
    } else {
        [T::lit(0.5); 2]
    }
}

/// State of a federated run between rounds.
#[derive(Debug, Clone)]
pub struct Federation<T> {
    config: FederationConfig<T>,
    spec: ClusterSpec<T>,
    agents: Vec<A2cAgent<T>>,
    rngs: Vec<ChaCha8Rng>,
    round: usize,
    episodes: usize,
    completion: Option<usize>,
}

/// Per-agent seed stream.
fn agent_seed(run_seed: u64, agent: usize, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
    rng.set_stream(stream.wrapping_mul(1 << 20) + agent as u64);
    rng.random()
}

impl<T: Scalar> Federation<T> {
    pub fn new(config: FederationConfig<T>, seed: u64) -> Result<Self, FederationError> {
        config.validate()?;
        let mut agents = (0..config.num_agents)
            .map(|i| A2cAgent::new(config.agent, agent_seed(seed, i, 1)))
            .collect::<Result<Vec<_>, _>>()?;
        if config.protocol == Protocol::Frl {
            // Weight averaging starts from one shared initialization.
            let (policy, value) = (agents[0].policy_net.clone(), agents[0].value_net.clone());
            for a in &mut agents[1..] {
                a.policy_net = policy.clone();
                a.value_net = value.clone();
            }
        }
        let rngs = (0..config.num_agents).map(|i| ChaCha8Rng::seed_from_u64(agent_seed(seed, i, 2))).collect();
        Ok(Self { spec: config.cluster_spec()?, config, agents, rngs, round: 0, episodes: 0, completion: None })
    }

    pub fn config(&self) -> &FederationConfig<T> {
        &self.config
    }

    pub fn agents(&self) -> &[A2cAgent<T>] {
        &self.agents
    }

    pub fn agents_mut(&mut self) -> &mut [A2cAgent<T>] {
        &mut self.agents
    }

    pub fn episodes_played(&self) -> usize {
        self.episodes
    }

    pub fn completion(&self) -> Option<usize> {
        self.completion
    }

    pub fn finished(&self) -> bool {
        self.completion.is_some() || self.episodes >= self.config.episode_budget
    }

    /// Local play of up to `period` episodes per agent, then the exchange.
    /// The exchange is skipped once the mission is complete or the budget is
    /// spent.
    pub fn run_round(&mut self) -> Result<RoundLog, FederationError> {
        let planned = self.config.period.min(self.config.episode_budget.saturating_sub(self.episodes));
        let env = self.config.env;
        let start = self.episodes;

        let finishes = self
            .agents
            .par_iter_mut()
            .zip(self.rngs.par_iter_mut())
            .map(|(agent, rng)| -> Result<Option<usize>, FederationError> {
                for k in 1..=planned {
                    agent.run_episode(&env, rng)?;
                    if agent.mission_progress().complete {
                        return Ok(Some(k));
                    }
                }
                Ok(None)
            })
            .collect::<Result<Vec<_>, _>>()?;

        let first = finishes.into_iter().flatten().min();
        self.episodes = start + first.unwrap_or(planned);
        self.completion = first.map(|k| start + k);
        self.round += 1;

        let mut log = RoundLog {
            round: self.round,
            protocol: self.config.protocol,
            per_agent_uplink_bytes: vec![0; self.agents.len()],
            downlink_bytes: vec![0; self.agents.len()],
            count_uplink_bytes: vec![0; self.agents.len()],
            episodes_played: self.episodes,
            rolling_averages: self.agents.iter().map(|a| a.mission_progress().rolling_average).collect(),
            local_sizes: vec![0; self.agents.len()],
            global_sizes: vec![0; self.agents.len()],
            distill_samples: vec![0; self.agents.len()],
        };
        if !self.finished() {
            self.exchange(&mut log)?;
        }
        for a in &mut self.agents {
            a.local_rm.clear();
        }
        Ok(log)
    }

    fn exchange(&mut self, log: &mut RoundLog) -> Result<(), FederationError> {
        match self.config.protocol {
            Protocol::Standalone => Ok(()),
            Protocol::Frd | Protocol::MixFrd => self.exchange_proxy(log),
            Protocol::Pd => self.exchange_replay(log),
            Protocol::Frl => self.exchange_weights(log),
        }
    }

    /// Receivers for agent `i`: everyone, or everyone else.
    fn sources(&self, i: usize) -> Vec<usize> {
        (0..self.agents.len()).filter(|&j| !(self.config.exclude_self && j == i)).collect()
    }

    fn exchange_proxy(&mut self, log: &mut RoundLog) -> Result<(), FederationError> {
        let spec = self.spec;
        let weighting = self.config.merge_weighting;

        // Agents -> server.
        let mut received = Vec::with_capacity(self.agents.len());
        for (i, agent) in self.agents.iter().enumerate() {
            let local = ProxyReplayMemory::build(spec, &agent.local_rm);
            let wire = local.serialize();
            log.per_agent_uplink_bytes[i] = wire.len() as u64;
            log.local_sizes[i] = local.len();
            let mut decoded = ProxyReplayMemory::deserialize(&wire, spec)?;
            if weighting == MergeWeighting::VisitCount {
                let counts = local.serialize_counts();
                log.count_uplink_bytes[i] = counts.len() as u64;
                decoded.apply_counts(&counts)?;
            }
            received.push(decoded);
        }

        // Server -> agents.
        let mut downloads = Vec::with_capacity(self.agents.len());
        let shared = if self.config.exclude_self {
            None
        } else {
            Some(ProxyReplayMemory::merge_global(&received.iter().collect::<Vec<_>>(), weighting)?.serialize())
        };
        for i in 0..self.agents.len() {
            let wire = match &shared {
                Some(w) => w.clone(),
                None => {
                    let parts: Vec<_> = self.sources(i).into_iter().map(|j| &received[j]).collect();
                    ProxyReplayMemory::merge_global(&parts, weighting)?.serialize()
                }
            };
            log.downlink_bytes[i] = wire.len() as u64;
            let global = ProxyReplayMemory::deserialize(&wire, spec)?;
            log.global_sizes[i] = global.len();
            downloads.push(global);
        }

        let mixup = (self.config.protocol == Protocol::MixFrd).then_some(self.config.mixup);
        let distill_cfg = self.config.distill;
        let counts = self
            .agents
            .par_iter_mut()
            .zip(self.rngs.par_iter_mut())
            .zip(downloads.par_iter())
            .map(|((agent, rng), global)| -> Result<usize, FederationError> {
                let samples = match mixup {
                    Some(portion) => global.mixup_augment(portion, rng)?,
                    None => global.samples(),
                };
                distill(agent, &samples, &distill_cfg, rng)?;
                Ok(samples.len())
            })
            .collect::<Result<Vec<_>, _>>()?;
        log.distill_samples = counts;
        Ok(())
    }

    fn exchange_replay(&mut self, log: &mut RoundLog) -> Result<(), FederationError> {
        let mut received = Vec::with_capacity(self.agents.len());
        for (i, agent) in self.agents.iter().enumerate() {
            let wire = agent.local_rm.serialize();
            log.per_agent_uplink_bytes[i] = wire.len() as u64;
            log.local_sizes[i] = agent.local_rm.len();
            received.push(ReplayMemory::<T>::deserialize(&wire)?);
        }
        let mut downloads = Vec::with_capacity(self.agents.len());
        for i in 0..self.agents.len() {
            let mut global = ReplayMemory::new();
            for j in self.sources(i) {
                global.extend(&received[j]);
            }
            let wire = global.serialize();
            log.downlink_bytes[i] = wire.len() as u64;
            let decoded = ReplayMemory::<T>::deserialize(&wire)?;
            log.global_sizes[i] = decoded.len();
            downloads.push(decoded);
        }
        let distill_cfg = self.config.distill;
        let counts = self
            .agents
            .par_iter_mut()
            .zip(self.rngs.par_iter_mut())
            .zip(downloads.par_iter())
            .map(|((agent, rng), global)| -> Result<usize, FederationError> {
                let samples: Vec<_> =
                    global.iter().map(|e| PolicySample { state: e.state, policy: e.policy }).collect();
                distill(agent, &samples, &distill_cfg, rng)?;
                Ok(samples.len())
            })
            .collect::<Result<Vec<_>, _>>()?;
        log.distill_samples = counts;
        Ok(())
    }

    fn exchange_weights(&mut self, log: &mut RoundLog) -> Result<(), FederationError> {
        let with_value = self.config.frl_scope == FrlScope::PolicyAndValue;
        let policy_cfg = *self.agents[0].policy_net.config();
        let value_cfg = *self.agents[0].value_net.config();
        let policy_len = 4 * policy_cfg.weight_count();

        let mut policies = Vec::with_capacity(self.agents.len());
        let mut values = Vec::with_capacity(self.agents.len());
        for (i, agent) in self.agents.iter().enumerate() {
            if agent.policy_net.config() != &policy_cfg || agent.value_net.config() != &value_cfg {
                return Err(NnError::ConfigMismatch.into());
            }
            let mut wire = agent.policy_net.to_le_bytes();
            if with_value {
                wire.extend(agent.value_net.to_le_bytes());
            }
            log.per_agent_uplink_bytes[i] = wire.len() as u64;
            log.local_sizes[i] = wire.len() / WEIGHT_BYTES as usize;
            policies.push(Mlp::<T>::from_le_bytes(policy_cfg, &wire[..policy_len])?);
            if with_value {
                values.push(Mlp::<T>::from_le_bytes(value_cfg, &wire[policy_len..])?);
            }
        }

        let aggregate = |models: &[Mlp<T>], sources: &[usize]| -> Result<Vec<u8>, FederationError> {
            let refs: Vec<&Mlp<T>> = sources.iter().map(|&j| &models[j]).collect();
            Ok(average_models(&refs, &vec![T::one(); refs.len()])?.to_le_bytes())
        };
        for i in 0..self.agents.len() {
            let sources = self.sources(i);
            let mut wire = aggregate(&policies, &sources)?;
            if with_value {
                wire.extend(aggregate(&values, &sources)?);
            }
            log.downlink_bytes[i] = wire.len() as u64;
            log.global_sizes[i] = wire.len() / WEIGHT_BYTES as usize;
            let agent = &mut self.agents[i];
            agent.policy_net = Mlp::from_le_bytes(policy_cfg, &wire[..policy_len])?;
            if with_value {
                agent.value_net = Mlp::from_le_bytes(value_cfg, &wire[policy_len..])?;
            }
        }
        Ok(())
    }

    pub fn into_result(self, seed: u64, rounds: Vec<RoundLog>) -> RunResult {
        let total_uplink_bytes = rounds.iter().map(RoundLog::uplink_total).sum();
        let total_downlink_bytes = rounds.iter().map(RoundLog::downlink_total).sum();
        let total_count_bytes = rounds.iter().flat_map(|r| r.count_uplink_bytes.iter()).sum();
        RunResult {
            protocol: self.config.protocol,
            num_agents: self.config.num_agents,
            seed,
            completion_episode: self.completion,
            episodes_played: self.episodes,
            rounds,
            total_uplink_bytes,
            total_downlink_bytes,
            total_count_bytes,
        }
    }
}

/// Rounds until some agent completes the mission or the budget runs out.
pub fn run_mission<T: Scalar>(config: &FederationConfig<T>, seed: u64) -> Result<RunResult, FederationError> {
    let mut fed = Federation::new(*config, seed)?;
    let mut rounds = Vec::new();
    while !fed.finished() {
        rounds.push(fed.run_round()?);
    }
    Ok(fed.into_result(seed, rounds))
}
