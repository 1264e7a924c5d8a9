//! Per-slice DDPG agents: actor and critic with target copies, replay, and
//! exploration that mixes uniform random actions with Gaussian policy noise.

mod replay;

pub use replay::{Experience, ReplayBuffer};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{LayerSpec, Net, NnError, Optimizer, OptimizerConfig, ParamVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarlError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("invalid agent configuration: {0}")]
    InvalidConfig(String),
    #[error("cannot sample from an empty replay buffer")]
    EmptyBuffer,
    #[error("empty minibatch")]
    EmptyBatch,
    #[error("non-finite {0}")]
    NonFinite(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    /// Hidden layer widths shared by actor and critic.
    pub hidden: Vec<usize>,
    pub gamma: f64,
    /// Target blending rate per update.
    pub soft_update: f64,
    pub actor_optimizer: OptimizerConfig,
    pub critic_optimizer: OptimizerConfig,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub epsilon_start: f64,
    pub epsilon_decay: f64,
    pub epsilon_floor: f64,
    pub noise_std: f64,
    pub noise_decay: f64,
    /// Largest per-step change as a fraction of the RB pool.
    pub max_delta_fraction: f64,
    /// Append the current allocation share to the state.
    pub include_allocation: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            hidden: vec![64, 64],
            gamma: 0.95,
            soft_update: 0.05,
            actor_optimizer: OptimizerConfig::adam(0.1),
            critic_optimizer: OptimizerConfig::adam(0.1),
            buffer_capacity: 1000,
            batch_size: 64,
            epsilon_start: 0.5,
            epsilon_decay: 0.995,
            epsilon_floor: 0.01,
            noise_std: 0.1,
            noise_decay: 0.999,
            max_delta_fraction: 0.1,
            include_allocation: true,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), MarlError> {
        let bad = |m: &str| Err(MarlError::InvalidConfig(m.into()));
        if self.hidden.iter().any(|&h| h == 0) {
            return bad("hidden widths must be positive");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if !(self.soft_update > 0.0 && self.soft_update <= 1.0) {
            return bad("soft_update must lie in (0, 1]");
        }
        for lr in [self.actor_optimizer.learning_rate, self.critic_optimizer.learning_rate] {
            if !(lr.is_finite() && lr >= 0.0) {
                return bad("learning rates must be finite and non-negative");
            }
        }
        if self.buffer_capacity == 0 || self.batch_size == 0 {
            return bad("buffer capacity and batch size must be positive");
        }
        for p in [self.epsilon_start, self.epsilon_decay, self.epsilon_floor, self.noise_decay] {
            if !(0.0..=1.0).contains(&p) {
                return bad("exploration rates and decays must lie in [0, 1]");
            }
        }
        if !(self.noise_std >= 0.0) || !(self.max_delta_fraction > 0.0 && self.max_delta_fraction <= 1.0) {
            return bad("noise_std must be non-negative and max_delta_fraction in (0, 1]");
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        if self.include_allocation {
            3
        } else {
            2
        }
    }
}

/// Observation of one slice, all normalized by the pool capacity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceState {
    /// Latest observed demand.
    pub demand: f64,
    /// Estimate of the demand about to be served: the twin forecast, or the
    /// lagged demand when no twin is used.
    pub estimate: f64,
    /// Current grant over total RBs.
    pub allocation: f64,
}

impl SliceState {
    pub fn to_vec(&self, include_allocation: bool) -> Vec<f64> {
        if include_allocation {
            vec![self.demand, self.estimate, self.allocation]
        } else {
            vec![self.demand, self.estimate]
        }
    }
}

fn mlp(input: usize, hidden: &[usize]) -> Vec<LayerSpec> {
    let mut specs = Vec::new();
    let mut width = input;
    for &h in hidden {
        specs.push(LayerSpec::dense(width, h));
        specs.push(LayerSpec::relu(h));
        width = h;
    }
    specs.push(LayerSpec::dense(width, 1));
    specs
}

fn with_action(state: &[f64], action: f64) -> Vec<f64> {
    let mut x = state.to_vec();
    x.push(action);
    x
}

/// Actor `pi(s)` in `[-1, 1]`, critic `Q(s, a)`, their target copies and
/// optimizers.
#[derive(Debug, Clone)]
pub struct ActorCritic {
    actor: Net,
    critic: Net,
    actor_target: Net,
    critic_target: Net,
    actor_opt: Optimizer,
    critic_opt: Optimizer,
    gamma: f64,
    nu: f64,
}

impl ActorCritic {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, config: &AgentConfig, rng: &mut R) -> Result<Self, MarlError> {
        config.validate()?;
        let mut actor_specs = mlp(state_dim, &config.hidden);
        actor_specs.push(LayerSpec::tanh(1));
        let actor = Net::new(actor_specs, rng)?;
        let critic = Net::new(mlp(state_dim + 1, &config.hidden), rng)?;
        Ok(ActorCritic {
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
            actor_opt: Optimizer::new(config.actor_optimizer),
            critic_opt: Optimizer::new(config.critic_optimizer),
            gamma: config.gamma,
            nu: config.soft_update,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.actor.in_dim()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn actor(&self) -> &Net {
        &self.actor
    }

    pub fn critic(&self) -> &Net {
        &self.critic
    }

    pub fn policy(&self, state: &[f64]) -> Result<f64, MarlError> {
        Ok(self.actor.infer(state)?[0])
    }

    pub fn q_value(&self, state: &[f64], action: f64) -> Result<f64, MarlError> {
        Ok(self.critic.infer(&with_action(state, action))?[0])
    }

    /// `y = R + gamma Q'(s', pi'(s'))` from the target networks.
    pub fn td_target(&self, exp: &Experience) -> Result<f64, MarlError> {
        let a_next = self.actor_target.infer(&exp.next_state)?[0];
        let q_next = self.critic_target.infer(&with_action(&exp.next_state, a_next))?[0];
        Ok(exp.reward + self.gamma * q_next)
    }

    /// Mean squared TD error over the batch and its gradient w.r.t. the
    /// critic parameters.
    pub fn critic_loss(&self, batch: &[Experience]) -> Result<(f64, ParamVector), MarlError> {
        if batch.is_empty() {
            return Err(MarlError::EmptyBatch);
        }
        let n = batch.len() as f64;
        let mut grad = self.critic.params().zeros_like();
        let mut loss = 0.0;
        for exp in batch {
            let y = self.td_target(exp)?;
            let tape = self.critic.forward_tape(&with_action(&exp.state, exp.action))?;
            let err = tape.output()[0] - y;
            loss += err * err / n;
            self.critic.backward_tape_into(&tape, &[2.0 * err / n], &mut grad)?;
        }
        if !loss.is_finite() {
            return Err(MarlError::NonFinite("critic loss".into()));
        }
        Ok((loss, grad))
    }

    /// One optimizer step on the critic; returns the pre-step loss.
    pub fn critic_update(&mut self, batch: &[Experience]) -> Result<f64, MarlError> {
        let (loss, grad) = self.critic_loss(batch)?;
        self.critic_opt.step(self.critic.params_mut(), &grad)?;
        Ok(loss)
    }

    /// `dQ/da` at `(s, a)` from the critic.
    pub fn action_gradient(&self, state: &[f64], action: f64) -> Result<f64, MarlError> {
        let tape = self.critic.forward_tape(&with_action(state, action))?;
        let g = self.critic.backward_tape(&tape, &[1.0])?;
        Ok(g.input[state.len()])
    }

    /// Gradient of `(1/n) sum Q(s, pi(s))` w.r.t. the actor parameters, with
    /// `dq_da(s, a)` supplying the critic's action gradient.
    pub fn policy_gradient_with<F>(&self, states: &[Vec<f64>], mut dq_da: F) -> Result<ParamVector, MarlError>
    where
        F: FnMut(&[f64], f64) -> Result<f64, MarlError>,
    {
        if states.is_empty() {
            return Err(MarlError::EmptyBatch);
        }
        let n = states.len() as f64;
        let mut grad = self.actor.params().zeros_like();
        for s in states {
            let tape = self.actor.forward_tape(s)?;
            let g = dq_da(s, tape.output()[0])?;
            self.actor.backward_tape_into(&tape, &[g / n], &mut grad)?;
        }
        Ok(grad)
    }

    pub fn policy_gradient(&self, states: &[Vec<f64>]) -> Result<ParamVector, MarlError> {
        self.policy_gradient_with(states, |s, a| self.action_gradient(s, a))
    }

    /// Ascends the policy objective with an arbitrary action gradient;
    /// returns the gradient norm.
    pub fn actor_update_with<F>(&mut self, states: &[Vec<f64>], dq_da: F) -> Result<f64, MarlError>
    where
        F: FnMut(&[f64], f64) -> Result<f64, MarlError>,
    {
        let mut grad = self.policy_gradient_with(states, dq_da)?;
        let norm = grad.norm();
        if !norm.is_finite() {
            return Err(MarlError::NonFinite("policy gradient".into()));
        }
        grad.scale(-1.0);
        self.actor_opt.step(self.actor.params_mut(), &grad)?;
        Ok(norm)
    }

    pub fn actor_update(&mut self, batch: &[Experience]) -> Result<f64, MarlError> {
        let states: Vec<Vec<f64>> = batch.iter().map(|e| e.state.clone()).collect();
        let critic = self.critic.clone();
        self.actor_update_with(&states, |s, a| {
            let tape = critic.forward_tape(&with_action(s, a))?;
            Ok(critic.backward_tape(&tape, &[1.0])?.input[s.len()])
        })
    }

    /// `theta' <- nu theta + (1 - nu) theta'` for both target networks.
    pub fn soft_update(&mut self) -> Result<(), MarlError> {
        self.soft_update_by(self.nu)
    }

    pub fn soft_update_by(&mut self, nu: f64) -> Result<(), MarlError> {
        if !(nu > 0.0 && nu <= 1.0) {
            return Err(MarlError::InvalidConfig(format!("soft update rate {nu} outside (0, 1]")));
        }
        let actor = self.actor.params().clone();
        let critic = self.critic.params().clone();
        self.actor_target.params_mut().blend_toward(&actor, nu)?;
        self.critic_target.params_mut().blend_toward(&critic, nu)?;
        Ok(())
    }

    /// Actor then critic parameters as one vector.
    pub fn main_params(&self) -> ParamVector {
        ParamVector::concat(&[self.actor.params(), self.critic.params()])
    }

    pub fn target_params(&self) -> ParamVector {
        ParamVector::concat(&[self.actor_target.params(), self.critic_target.params()])
    }

    pub fn set_main_params(&mut self, params: &ParamVector) -> Result<(), MarlError> {
        if !params.same_layout(&self.main_params()) {
            return Err(NnError::LayoutMismatch.into());
        }
        params.split_into(&mut [self.actor.params_mut(), self.critic.params_mut()])?;
        Ok(())
    }

    pub fn set_target_params(&mut self, params: &ParamVector) -> Result<(), MarlError> {
        if !params.same_layout(&self.target_params()) {
            return Err(NnError::LayoutMismatch.into());
        }
        params.split_into(&mut [self.actor_target.params_mut(), self.critic_target.params_mut()])?;
        Ok(())
    }
}

/// With probability `epsilon` a uniform action on `[-1, 1]`, otherwise the
/// policy action plus Gaussian noise, clipped to `[-1, 1]`.
pub fn select_action<R: Rng + ?Sized>(
    agent: &ActorCritic,
    state: &[f64],
    epsilon: f64,
    noise_std: f64,
    rng: &mut R,
) -> Result<f64, MarlError> {
    if !(0.0..=1.0).contains(&epsilon) || !(noise_std >= 0.0) {
        return Err(MarlError::InvalidConfig("epsilon outside [0, 1] or negative noise".into()));
    }
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        return Ok(rng.gen_range(-1.0..=1.0));
    }
    let mut a = agent.policy(state)?;
    if noise_std > 0.0 {
        a += Normal::new(0.0, noise_std).expect("valid std").sample(rng);
    }
    Ok(a.clamp(-1.0, 1.0))
}

/// Losses from one learning step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_grad_norm: f64,
}

/// An actor-critic with its replay buffer and exploration schedule.
#[derive(Debug, Clone)]
pub struct DdpgAgent {
    pub model: ActorCritic,
    pub buffer: ReplayBuffer,
    config: AgentConfig,
    epsilon: f64,
    noise_std: f64,
}

impl DdpgAgent {
    pub fn new<R: Rng + ?Sized>(config: AgentConfig, rng: &mut R) -> Result<Self, MarlError> {
        let model = ActorCritic::new(config.state_dim(), &config, rng)?;
        Ok(DdpgAgent {
            model,
            buffer: ReplayBuffer::new(config.buffer_capacity)?,
            epsilon: config.epsilon_start,
            noise_std: config.noise_std,
            config,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    pub fn act<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<f64, MarlError> {
        select_action(&self.model, state, self.epsilon, self.noise_std, rng)
    }

    /// Stores the transition, then runs one critic, actor and target update
    /// on a sampled minibatch, and decays exploration.
    pub fn observe<R: Rng + ?Sized>(&mut self, exp: Experience, rng: &mut R) -> Result<UpdateStats, MarlError> {
        self.buffer.push(exp)?;
        let batch = self.buffer.sample(self.config.batch_size, rng)?;
        let critic_loss = self.model.critic_update(&batch)?;
        let actor_grad_norm = self.model.actor_update(&batch)?;
        self.model.soft_update()?;
        self.epsilon = (self.epsilon * self.config.epsilon_decay).max(self.config.epsilon_floor);
        self.noise_std *= self.config.noise_decay;
        Ok(UpdateStats {
            critic_loss,
            actor_grad_norm,
        })
    }

    /// Grant change in RBs for an action.
    pub fn delta_rbs(&self, action: f64, total_rbs: u32) -> i64 {
        crate::radio::action_to_delta(action, self.config.max_delta_fraction * total_rbs as f64)
    }
}
