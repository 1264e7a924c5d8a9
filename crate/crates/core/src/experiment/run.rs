use log::{debug, info};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ExperimentError, Scenario, SweepRow};
use crate::baselines::{delta_for, fl_only_state, netshare_grants, AllocatorId, DqnAgent};
use crate::federation::{global_loss, should_aggregate, CommCost, Orchestrator};
use crate::marl::{DdpgAgent, Experience, SliceState};
use crate::nn::ParamVector;
use crate::radio::{AllocationState, RadioEnv};
use crate::rng::{stream_id, stream_rng};
use crate::traffic::{gen_topology, gen_traces, DemandTensor};
use crate::twin::{ArimaModel, Normalizer, TwinModel, Window, ARIMA_ID, PERSISTENCE_ID, TWIN_ID};

/// One slice at one step of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub t: usize,
    pub slice_id: usize,
    pub allocator_id: AllocatorId,
    pub seed: u64,
    pub reward: f64,
    pub critic_loss: Option<f64>,
    /// Clipped utilization.
    pub omega: f64,
    pub u_mean: f64,
    /// RMSE of the demand estimate in the agent state so far, Mb/s.
    pub rmse_so_far: f64,
    /// Cumulative scalars exchanged by the whole run.
    pub comm_scalars: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRow {
    pub t: usize,
    pub slice_id: usize,
    pub allocator_id: AllocatorId,
    pub seed: u64,
    pub critic_loss: f64,
    pub actor_grad_norm: Option<f64>,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRow {
    pub round: usize,
    pub t: usize,
    pub allocator_id: AllocatorId,
    pub seed: u64,
    pub slice_id: usize,
    pub local_loss: f64,
    pub global_loss: f64,
    pub cumulative_scalars: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRow {
    pub seed: u64,
    pub t: usize,
    pub slice_id: usize,
    pub model_id: String,
    pub actual: f64,
    pub predicted: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub allocator: AllocatorId,
    pub seed: u64,
    pub device_count: usize,
    pub metrics: Vec<MetricsRow>,
    pub training: Vec<TrainingRow>,
    pub rounds: Vec<RoundRow>,
    pub forecasts: Vec<ForecastRow>,
    pub comm: CommCost,
    /// Named parameter vectors at the end of the run.
    pub checkpoints: Vec<(String, ParamVector)>,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOutput {
    pub runs: Vec<RunOutput>,
    pub sweep: Vec<SweepRow>,
}

/// Traffic and radio environment shared by every allocator for one seed.
struct World {
    env: RadioEnv,
    tensors: Vec<DemandTensor>,
    totals: Vec<Vec<f64>>,
}

fn derive_seed(seed: u64, tag: &str, index: u64) -> u64 {
    stream_rng(seed, stream_id(tag, index)).gen()
}

fn build_world(scenario: &Scenario, seed: u64) -> Result<World, ExperimentError> {
    let len = scenario.warmup_steps + scenario.steps + 1;
    let mut tensors = Vec::with_capacity(scenario.slices.len());
    let mut positions = Vec::with_capacity(scenario.slices.len());
    for (m, slice) in scenario.slices.iter().enumerate() {
        let topo = gen_topology(
            slice.device_count,
            &scenario.topology,
            &scenario.radio,
            derive_seed(seed, "topology", m as u64),
        )?;
        tensors.push(gen_traces(
            &topo,
            len,
            scenario.traffic_for(m),
            m,
            derive_seed(seed, "traffic", m as u64),
        )?);
        positions.push(topo.positions);
    }
    let env = RadioEnv::new(
        scenario.radio.clone(),
        scenario.slices.clone(),
        Some(positions),
        derive_seed(seed, "radio", 0),
    )?;
    let totals = tensors.iter().map(|t| t.totals()).collect();
    Ok(World { env, tensors, totals })
}

enum Policy {
    Ddpg(Vec<DdpgAgent>),
    Dqn(Vec<DqnAgent>),
    Netshare,
}

struct Twins {
    models: Vec<TwinModel>,
    arima: Vec<ArimaModel>,
}

fn pretrain_twins(scenario: &Scenario, world: &World, seed: u64) -> Result<Twins, ExperimentError> {
    let w = scenario.warmup_steps;
    let l = scenario.twin.window;
    let mut models = Vec::new();
    let mut arima = Vec::new();
    for (m, tensor) in world.tensors.iter().enumerate() {
        let init_stream = if scenario.federate_twins { 0 } else { m as u64 };
        let mut rng = stream_rng(seed, stream_id("twin-init", init_stream));
        let mut model = TwinModel::new(scenario.twin.clone(), tensor.nodes(), tensor.channels(), &mut rng)?;
        let history: Vec<f64> = (0..w).flat_map(|t| tensor.at(t).to_vec()).collect();
        model.set_normalizer(Normalizer::fit(&history));
        let mut fit_rng = stream_rng(seed, stream_id("twin-fit", m as u64));
        let report = model.fit(tensor, l - 1..w - 1, scenario.twin.pretrain_epochs, &mut fit_rng)?;
        debug!(
            "seed {seed} slice {m}: twin pretrained, best epoch {} of {}",
            report.best_epoch,
            report.train_losses.len()
        );
        models.push(model);
        let [p, d, q] = scenario.arima_order;
        arima.push(ArimaModel::fit(&world.totals[m][..w], p, d, q)?);
    }
    Ok(Twins { models, arima })
}

/// Runs one allocator on one seed. Every step each slice observes
/// `[latest demand, estimate of the coming demand, grant share]`, the
/// allocator changes the grants, the environment serves the demand, and
/// learning agents update from the transition. Federated agents are
/// averaged every `agg_tau` steps.
pub fn run_single(scenario: &Scenario, allocator: AllocatorId, seed: u64) -> Result<RunOutput, ExperimentError> {
    scenario.validate()?;
    let world = build_world(scenario, seed)?;
    let m_count = scenario.slices.len();
    let radio = &scenario.radio;
    let total = radio.total_rbs;
    let pool = radio.pool_reference_mbps();
    let w0 = scenario.warmup_steps;
    let window = scenario.twin.window;
    let include_alloc = scenario.agent.include_allocation;
    let state_dim = scenario.agent.state_dim();

    let mut twins = if allocator == AllocatorId::DtMafl {
        Some(pretrain_twins(scenario, &world, seed)?)
    } else {
        None
    };
    let mut policy = match allocator {
        AllocatorId::DtMafl | AllocatorId::FlOnly => {
            // a shared init stream gives every slice the same starting model
            let agents = (0..m_count)
                .map(|_| DdpgAgent::new(scenario.agent.clone(), &mut stream_rng(seed, stream_id("agent-init", 0))))
                .collect::<Result<Vec<_>, _>>()?;
            Policy::Ddpg(agents)
        }
        AllocatorId::Madqn => {
            let agents = (0..m_count)
                .map(|m| DqnAgent::new(scenario.agent.clone(), &mut stream_rng(seed, stream_id("dqn-init", m as u64))))
                .collect::<Result<Vec<_>, _>>()?;
            Policy::Dqn(agents)
        }
        AllocatorId::Netshare => Policy::Netshare,
    };
    let mut rngs: Vec<ChaCha8Rng> = (0..m_count).map(|m| stream_rng(seed, stream_id("explore", m as u64))).collect();
    let mut orchestrator = Orchestrator::new();
    let mut twin_orchestrator = Orchestrator::new();

    let estimate = |twins: &Option<Twins>, m: usize, g: usize| -> Result<f64, ExperimentError> {
        match twins {
            Some(tw) => Ok(tw.models[m].predict(&Window::from_tensor(&world.tensors[m], g - 1, window)?)?.aggregate),
            None => Ok(world.totals[m][g - 2]),
        }
    };

    let cap = radio.slice_cap();
    let mut alloc = AllocationState::equal_split(m_count, cap, total)?;
    let mut est: Vec<f64> = (0..m_count).map(|m| estimate(&twins, m, w0)).collect::<Result<_, _>>()?;
    let mut sq_err = vec![0.0; m_count];
    let mut last_loss = vec![0.0; m_count];

    let mut out = RunOutput {
        allocator,
        seed,
        device_count: scenario.slices[0].device_count,
        metrics: Vec::with_capacity(scenario.steps * m_count),
        training: Vec::new(),
        rounds: Vec::new(),
        forecasts: Vec::new(),
        comm: CommCost::default(),
        checkpoints: Vec::new(),
    };

    // state features are in units of an equal per-slice share of the pool
    let fair_mbps = pool / m_count as f64;
    let fair_rbs = total as f64 / m_count as f64;
    let observe = |m: usize, g: usize, est: &[f64], alloc: &AllocationState| -> Vec<f64> {
        let s = SliceState {
            demand: world.totals[m][g - 1] / fair_mbps,
            estimate: est[m] / fair_mbps,
            allocation: alloc.grants()[m] as f64 / fair_rbs,
        };
        if allocator == AllocatorId::FlOnly {
            fl_only_state(s.demand, s.estimate, s.allocation).to_vec(include_alloc)
        } else {
            s.to_vec(include_alloc)
        }
    };

    for t in 0..scenario.steps {
        let g = w0 + t;
        let states: Vec<Vec<f64>> = (0..m_count).map(|m| observe(m, g, &est, &alloc)).collect();

        let mut actions = vec![0.0; m_count];
        alloc = match &policy {
            Policy::Ddpg(agents) => {
                let mut deltas = Vec::with_capacity(m_count);
                for m in 0..m_count {
                    actions[m] = agents[m].act(&states[m], &mut rngs[m])?;
                    deltas.push(agents[m].delta_rbs(actions[m], total));
                }
                alloc.apply(&deltas)
            }
            Policy::Dqn(agents) => {
                let mut deltas = Vec::with_capacity(m_count);
                for m in 0..m_count {
                    let a = agents[m].act(&states[m], &mut rngs[m])?;
                    actions[m] = a as f64;
                    deltas.push(delta_for(a, total));
                }
                alloc.apply(&deltas)
            }
            Policy::Netshare => {
                let latest: Vec<f64> = (0..m_count).map(|m| radio.demand_to_rbs(world.totals[m][g - 1]) as f64).collect();
                alloc.with_grants(&netshare_grants(&latest, total)?)
            }
        };

        let demand: Vec<Vec<f64>> = world.tensors.iter().map(|x| x.at(g).to_vec()).collect();
        let step = world.env.step(t, &alloc, &demand)?;

        for m in 0..m_count {
            let actual = world.totals[m][g];
            sq_err[m] += (est[m] - actual).powi(2);
            if let Some(tw) = twins.as_mut() {
                let history = &world.totals[m][..g];
                let arima = tw.arima[m].forecast(history)?.value;
                for (id, predicted) in [(TWIN_ID, est[m]), (PERSISTENCE_ID, history[g - 1]), (ARIMA_ID, arima)] {
                    out.forecasts.push(ForecastRow {
                        seed,
                        t,
                        slice_id: m,
                        model_id: id.to_string(),
                        actual,
                        predicted,
                    });
                }
                let win = Window::from_tensor(&world.tensors[m], g - 1, window)?;
                tw.models[m].train_step(&win, world.tensors[m].at(g))?;
            }
        }
        for m in 0..m_count {
            est[m] = estimate(&twins, m, g + 1)?;
        }

        let mut losses: Vec<Option<f64>> = vec![None; m_count];
        match &mut policy {
            Policy::Ddpg(agents) => {
                for m in 0..m_count {
                    let exp = Experience {
                        state: states[m].clone(),
                        action: actions[m],
                        reward: step.slices[m].reward,
                        next_state: observe(m, g + 1, &est, &alloc),
                    };
                    let stats = agents[m].observe(exp, &mut rngs[m])?;
                    losses[m] = Some(stats.critic_loss);
                    last_loss[m] = stats.critic_loss;
                    out.training.push(TrainingRow {
                        t,
                        slice_id: m,
                        allocator_id: allocator,
                        seed,
                        critic_loss: stats.critic_loss,
                        actor_grad_norm: Some(stats.actor_grad_norm),
                        epsilon: agents[m].epsilon(),
                    });
                }
                if should_aggregate(t + 1, scenario.agg_tau)? {
                    let sizes: Vec<usize> = agents.iter().map(|a| a.buffer.len()).collect();
                    let mut models: Vec<_> = agents.iter_mut().map(|a| &mut a.model).collect();
                    orchestrator.sync(&mut models, &sizes)?;
                    if scenario.federate_twins {
                        if let Some(tw) = twins.as_mut() {
                            let twin_sizes: Vec<usize> = tw.models.iter().map(|x| x.steps_trained().max(1)).collect();
                            let mut refs: Vec<_> = tw.models.iter_mut().collect();
                            twin_orchestrator.sync(&mut refs, &twin_sizes)?;
                        }
                    }
                    let f = global_loss(&last_loss, &sizes)?;
                    let cumulative = orchestrator.ledger().cost().total_scalars()
                        + twin_orchestrator.ledger().cost().total_scalars();
                    for m in 0..m_count {
                        out.rounds.push(RoundRow {
                            round: orchestrator.round(),
                            t,
                            allocator_id: allocator,
                            seed,
                            slice_id: m,
                            local_loss: last_loss[m],
                            global_loss: f,
                            cumulative_scalars: cumulative,
                        });
                    }
                }
            }
            Policy::Dqn(agents) => {
                for m in 0..m_count {
                    let exp = Experience {
                        state: states[m].clone(),
                        action: actions[m],
                        reward: step.slices[m].reward,
                        next_state: observe(m, g + 1, &est, &alloc),
                    };
                    let loss = agents[m].observe(exp, &mut rngs[m])?;
                    losses[m] = Some(loss);
                    out.training.push(TrainingRow {
                        t,
                        slice_id: m,
                        allocator_id: allocator,
                        seed,
                        critic_loss: loss,
                        actor_grad_norm: None,
                        epsilon: agents[m].epsilon(),
                    });
                }
                // state and reward reported to the central monitor
                orchestrator
                    .ledger_mut()
                    .charge_report((m_count * (state_dim + 1)) as u64, 2 * m_count as u64);
            }
            Policy::Netshare => {}
        }

        let comm = orchestrator.ledger().cost().total_scalars() + twin_orchestrator.ledger().cost().total_scalars();
        for m in 0..m_count {
            let s = &step.slices[m];
            out.metrics.push(MetricsRow {
                t,
                slice_id: m,
                allocator_id: allocator,
                seed,
                reward: s.reward,
                critic_loss: losses[m],
                omega: s.utilization.clipped,
                u_mean: s.utility.mean,
                rmse_so_far: (sq_err[m] / (t + 1) as f64).sqrt(),
                comm_scalars: comm,
            });
        }
    }

    let mut comm = orchestrator.ledger().cost();
    let twin_comm = twin_orchestrator.ledger().cost();
    comm.federation_scalars += twin_comm.federation_scalars;
    comm.federation_messages += twin_comm.federation_messages;
    out.comm = comm;
    match &policy {
        Policy::Ddpg(agents) => {
            let global = orchestrator.global().cloned().unwrap_or_else(|| agents[0].model.main_params());
            out.checkpoints.push(("global".into(), global));
        }
        Policy::Dqn(agents) => {
            for (m, a) in agents.iter().enumerate() {
                out.checkpoints.push((format!("slice{m}"), a.params().clone()));
            }
        }
        Policy::Netshare => {}
    }
    if let Some(tw) = &twins {
        for (m, model) in tw.models.iter().enumerate() {
            out.checkpoints.push((format!("twin-slice{m}"), model.params()));
        }
    }
    info!(
        "{allocator} seed {seed}: {} steps, {} scalars exchanged",
        scenario.steps,
        out.comm.total_scalars()
    );
    Ok(out)
}

/// Every allocator on every seed, then the device-count sweep if one is
/// configured. Runs share nothing but the scenario.
pub fn run_experiment(scenario: &Scenario) -> Result<ExperimentOutput, ExperimentError> {
    scenario.validate()?;
    let mut output = ExperimentOutput::default();
    for &seed in &scenario.seeds {
        for &allocator in &scenario.allocators {
            output.runs.push(run_single(scenario, allocator, seed)?);
        }
    }
    for &devices in &scenario.device_sweep {
        let swept = scenario.with_device_count(devices);
        for &seed in &scenario.seeds {
            for &allocator in &scenario.allocators {
                let run = run_single(&swept, allocator, seed)?;
                output.sweep.push(SweepRow::from_run(&run, swept.window_len()));
            }
        }
    }
    Ok(output)
}
