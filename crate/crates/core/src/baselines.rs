//! Comparison allocators: proportional centralized sharing, independent
//! per-slice DQN agents, and the twin-free state used by the FL-only variant.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::marl::{AgentConfig, Experience, MarlError, ReplayBuffer, SliceState};
use crate::nn::{LayerSpec, Net, Optimizer, ParamVector};
use crate::radio::{AllocationState, RadioError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum AllocatorId {
    DtMafl,
    FlOnly,
    Madqn,
    Netshare,
}

impl AllocatorId {
    pub const ALL: [AllocatorId; 4] = [
        AllocatorId::DtMafl,
        AllocatorId::FlOnly,
        AllocatorId::Madqn,
        AllocatorId::Netshare,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AllocatorId::DtMafl => "dt-mafl",
            AllocatorId::FlOnly => "fl-only",
            AllocatorId::Madqn => "madqn",
            AllocatorId::Netshare => "netshare",
        }
    }
}

impl fmt::Display for AllocatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AllocatorId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AllocatorId::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown allocator '{s}' (expected dt-mafl, fl-only, madqn or netshare)"))
    }
}

/// Proportional split of the pool by demand with largest-remainder
/// rounding; every slice keeps at least one RB. Ties in the remainder go to
/// the lower slice index. All-zero demand splits the pool evenly.
pub fn netshare_grants(demands: &[f64], total: u32) -> Result<Vec<u32>, RadioError> {
    let m = demands.len();
    if m == 0 || (total as usize) < m {
        return Err(RadioError::InvalidConfig(format!("pool of {total} RBs cannot serve {m} slices")));
    }
    if demands.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
        return Err(RadioError::InvalidConfig("demands must be finite and non-negative".into()));
    }
    let sum: f64 = demands.iter().sum();
    let quotas: Vec<f64> = if sum > 0.0 {
        demands.iter().map(|d| total as f64 * d / sum).collect()
    } else {
        vec![total as f64 / m as f64; m]
    };
    let mut grants: Vec<u32> = quotas.iter().map(|q| (q.floor() as u32).max(1)).collect();
    let mut assigned: i64 = grants.iter().map(|&w| w as i64).sum();
    // largest remainder first, lower index on ties
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut k = 0;
    while assigned < total as i64 {
        grants[order[k % m]] += 1;
        assigned += 1;
        k += 1;
    }
    // the one-RB floor can overshoot; take back from the largest grants
    while assigned > total as i64 {
        let i = (0..m).max_by(|&a, &b| grants[a].cmp(&grants[b]).then(b.cmp(&a))).expect("non-empty");
        grants[i] -= 1;
        assigned -= 1;
    }
    Ok(grants)
}

pub fn netshare_allocate(demands: &[f64], total: u32) -> Result<AllocationState, RadioError> {
    let grants = netshare_grants(demands, total)?;
    AllocationState::new(grants, vec![total; demands.len()], total)
}

/// FL-only state: the twin forecast is replaced by the lagged demand.
pub fn fl_only_state(demand: f64, lagged_demand: f64, allocation: f64) -> SliceState {
    SliceState {
        demand,
        estimate: lagged_demand,
        allocation,
    }
}

/// Grant changes available to a DQN agent, as fractions of the pool.
pub const DELTA_FRACTIONS: [f64; 5] = [-0.10, -0.05, 0.0, 0.05, 0.10];

pub fn delta_for(action: usize, total: u32) -> i64 {
    (DELTA_FRACTIONS[action] * total as f64).round() as i64
}

/// Independent DQN agent over [`DELTA_FRACTIONS`].
#[derive(Debug, Clone)]
pub struct DqnAgent {
    q: Net,
    target: Net,
    opt: Optimizer,
    pub buffer: ReplayBuffer,
    config: AgentConfig,
    epsilon: f64,
}

impl DqnAgent {
    /// Uses the hidden widths, discount, soft-update rate, replay settings,
    /// epsilon schedule and critic optimizer from `config`.
    pub fn new<R: Rng + ?Sized>(config: AgentConfig, rng: &mut R) -> Result<Self, MarlError> {
        config.validate()?;
        let mut specs = Vec::new();
        let mut width = config.state_dim();
        for &h in &config.hidden {
            specs.push(LayerSpec::dense(width, h));
            specs.push(LayerSpec::relu(h));
            width = h;
        }
        specs.push(LayerSpec::dense(width, DELTA_FRACTIONS.len()));
        let q = Net::new(specs, rng)?;
        Ok(DqnAgent {
            target: q.clone(),
            q,
            opt: Optimizer::new(config.critic_optimizer),
            buffer: ReplayBuffer::new(config.buffer_capacity)?,
            epsilon: config.epsilon_start,
            config,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn params(&self) -> &ParamVector {
        self.q.params()
    }

    pub fn q_values(&self, state: &[f64]) -> Result<Vec<f64>, MarlError> {
        Ok(self.q.infer(state)?)
    }

    pub fn greedy(&self, state: &[f64]) -> Result<usize, MarlError> {
        let q = self.q_values(state)?;
        Ok((0..q.len()).fold(0, |best, i| if q[i] > q[best] { i } else { best }))
    }

    /// Epsilon-greedy action index.
    pub fn act<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<usize, MarlError> {
        if self.epsilon > 0.0 && rng.gen::<f64>() < self.epsilon {
            return Ok(rng.gen_range(0..DELTA_FRACTIONS.len()));
        }
        self.greedy(state)
    }

    /// Squared TD error against `R + gamma max_a' Q'(s', a')` on one
    /// minibatch, one optimizer step and a target blend. `exp.action` holds
    /// the action index.
    pub fn learn(&mut self, batch: &[Experience]) -> Result<f64, MarlError> {
        if batch.is_empty() {
            return Err(MarlError::EmptyBatch);
        }
        let n = batch.len() as f64;
        let mut grad = self.q.params().zeros_like();
        let mut loss = 0.0;
        for exp in batch {
            let next = self.target.infer(&exp.next_state)?;
            let y = exp.reward + self.config.gamma * next.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let tape = self.q.forward_tape(&exp.state)?;
            let a = exp.action as usize;
            let err = tape.output()[a] - y;
            loss += err * err / n;
            let mut upstream = vec![0.0; DELTA_FRACTIONS.len()];
            upstream[a] = 2.0 * err / n;
            self.q.backward_tape_into(&tape, &upstream, &mut grad)?;
        }
        if !loss.is_finite() {
            return Err(MarlError::NonFinite("dqn loss".into()));
        }
        self.opt.step(self.q.params_mut(), &grad)?;
        let main = self.q.params().clone();
        self.target.params_mut().blend_toward(&main, self.config.soft_update)?;
        Ok(loss)
    }

    /// Stores the transition, learns from a sampled minibatch and decays
    /// epsilon; returns the loss.
    pub fn observe<R: Rng + ?Sized>(&mut self, exp: Experience, rng: &mut R) -> Result<f64, MarlError> {
        if exp.action.fract() != 0.0 || exp.action < 0.0 || exp.action as usize >= DELTA_FRACTIONS.len() {
            return Err(MarlError::InvalidConfig(format!("action index {} out of range", exp.action)));
        }
        self.buffer.push(exp)?;
        let batch = self.buffer.sample(self.config.batch_size, rng)?;
        let loss = self.learn(&batch)?;
        self.epsilon = (self.epsilon * self.config.epsilon_decay).max(self.config.epsilon_floor);
        Ok(loss)
    }
}
