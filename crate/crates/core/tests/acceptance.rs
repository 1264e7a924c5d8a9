//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and a tally; the process only fails when a check cannot be evaluated.
//!
//! Run a subset with `cargo test --test acceptance -- 1 4 9`.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slicetwin::baselines::AllocatorId;
use slicetwin::experiment::{run_single, summarize, write_csv, RunOutput, Scenario};
use slicetwin::federation::{aggregate, Orchestrator};
use slicetwin::linalg::Mat;
use slicetwin::marl::{AgentConfig, DdpgAgent, Experience};
use slicetwin::nn::{grad_check, relative_error, LayerSpec, Net, OptimizerConfig, ParamVector};
use slicetwin::radio::{action_to_delta, AllocationState};
use slicetwin::rng::{stream_id, stream_rng};
use slicetwin::traffic::{gen_topology, gen_traces, TopologyConfig, TraceParams};
use slicetwin::twin::{compare_forecasters, gat_attention, learn_graph, HeadMode, TwinConfig, TwinModel, Window};

type Outcome = Result<(bool, String), String>;

struct Criterion {
    id: usize,
    name: &'static str,
    check: fn(&mut Cache) -> Outcome,
}

/// Runs shared between criteria.
#[derive(Default)]
struct Cache {
    reference_dt: Vec<RunOutput>,
}

impl Cache {
    fn reference_dt_mafl(&mut self) -> Result<&[RunOutput], String> {
        if self.reference_dt.is_empty() {
            let s = Scenario::reference();
            for &seed in &s.seeds {
                self.reference_dt
                    .push(run_single(&s, AllocatorId::DtMafl, seed).map_err(|e| e.to_string())?);
            }
        }
        Ok(&self.reference_dt)
    }
}

fn within(elapsed: Duration, budget_s: u64) -> bool {
    elapsed <= Duration::from_secs(budget_s)
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn random_mat(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Mat {
    Mat::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect())
}

fn layer_nets(rng: &mut ChaCha8Rng) -> Result<Vec<(&'static str, Net)>, String> {
    let nets = vec![
        ("dense", vec![LayerSpec::dense(5, 4)]),
        ("conv1d", vec![LayerSpec::conv1d(8, 2, 3, 3)]),
        ("relu", vec![LayerSpec::dense(5, 6), LayerSpec::relu(6)]),
        ("tanh", vec![LayerSpec::dense(5, 6), LayerSpec::tanh(6)]),
        ("sigmoid", vec![LayerSpec::dense(5, 6), LayerSpec::sigmoid(6)]),
        ("leaky_relu", vec![LayerSpec::dense(5, 6), LayerSpec::leaky_relu(6, 0.2)]),
        ("softmax", vec![LayerSpec::dense(5, 6), LayerSpec::softmax(6)]),
    ];
    nets.into_iter()
        .map(|(name, specs)| Ok((name, Net::new(specs, rng).map_err(err)?)))
        .collect()
}

fn twin_gradient_error(model: &TwinModel, window: &Window) -> Result<f64, String> {
    let out = model.raw_output(window).map_err(err)?;
    let c: Vec<f64> = (0..out.len()).map(|i| (i + 1) as f64 / out.len() as f64 - 0.3).collect();
    let analytic = model.raw_gradient(window, &c).map_err(err)?;
    let base = model.params();
    let mut probe = model.clone();
    let h = 1e-4;
    let mut eval = |i: usize, offset: f64| -> Result<f64, String> {
        let mut p = base.clone();
        p.values_mut()[i] += offset;
        probe.set_params(&p).map_err(err)?;
        Ok(probe.raw_output(window).map_err(err)?.iter().zip(&c).map(|(y, w)| y * w).sum())
    };
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let numeric = (eval(i, -2.0 * h)? - 8.0 * eval(i, -h)? + 8.0 * eval(i, h)? - eval(i, 2.0 * h)?) / (12.0 * h);
        worst = worst.max(relative_error(analytic.values()[i], numeric));
    }
    Ok(worst)
}

fn gradient_suite(_: &mut Cache) -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut worst_at = String::new();
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (name, net) in layer_nets(&mut rng)? {
            let x: Vec<f64> = (0..net.in_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let report = grad_check(&net, &x, 1e-4).map_err(err)?;
            if report.max_error > worst {
                worst = report.max_error;
                worst_at = format!("{name} seed {seed}");
            }
        }
        let config = TwinConfig {
            window: 8,
            conv_channels: 3,
            features: 5,
            graph_dim: 4,
            attention_dim: 3,
            output_dim: 4,
            head: if seed % 2 == 0 { HeadMode::Linear } else { HeadMode::Softmax },
            ..TwinConfig::default()
        };
        let model = TwinModel::new(config, 4, 1, &mut rng).map_err(err)?;
        let window = Window {
            t_end: rng.gen_range(8..500),
            nodes: (0..4).map(|_| (0..8).map(|_| rng.gen_range(0.0..2.0)).collect()).collect(),
        };
        let e = twin_gradient_error(&model, &window)?;
        if e > worst {
            worst = e;
            worst_at = format!("twin seed {seed}");
        }
    }
    let elapsed = start.elapsed();
    Ok((
        worst < 1e-4 && within(elapsed, 30),
        format!("worst relative error {worst:.2e} ({worst_at}), {:.1}s", elapsed.as_secs_f64()),
    ))
}

fn graph_invariants(_: &mut Cache) -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut violations = 0;
    let mut nonzero_equal = 0;
    for _ in 0..1000 {
        let v = rng.gen_range(1..=8);
        let f = rng.gen_range(1..=6);
        let k = rng.gen_range(1..=5);
        let beta = rng.gen_range(0.1..3.0);
        let features = random_mat(v, f, 2.0, &mut rng);
        let embeddings = random_mat(v, f, 2.0, &mut rng);
        let t1 = random_mat(f, k, 1.5, &mut rng);
        let t2 = random_mat(f, k, 1.5, &mut rng);
        let a = learn_graph(&features, &embeddings, &t1, &t2, beta);
        for i in 0..v {
            if a[(i, i)] != 0.0 {
                violations += 1;
            }
            for j in 0..v {
                if a[(i, j)].min(a[(j, i)]) != 0.0 {
                    violations += 1;
                }
            }
        }
        let same = learn_graph(&features, &embeddings, &t1, &t1, beta);
        if same.data().iter().any(|&x| x != 0.0) {
            nonzero_equal += 1;
        }
    }
    let elapsed = start.elapsed();
    Ok((
        violations == 0 && nonzero_equal == 0 && within(elapsed, 10),
        format!(
            "{violations} invariant violations, {nonzero_equal} non-empty graphs from equal projections, {:.2}s",
            elapsed.as_secs_f64()
        ),
    ))
}

fn attention_normalization(_: &mut Cache) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let v = rng.gen_range(1..=10);
        let f = rng.gen_range(1..=6);
        let d = rng.gen_range(1..=5);
        let x = random_mat(v, f, 3.0, &mut rng);
        let mut adjacency = Mat::zeros(v, v);
        for i in 0..v {
            for j in 0..v {
                if i != j && rng.gen_bool(0.4) {
                    adjacency[(i, j)] = rng.gen_range(0.01..1.0);
                }
            }
        }
        let wz = random_mat(f, d, 2.0, &mut rng);
        let q: Vec<f64> = (0..2 * d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let alpha = gat_attention(&x, &adjacency, &wz, &q, 0.2);
        for i in 0..v {
            worst = worst.max((alpha.row(i).iter().sum::<f64>() - 1.0).abs());
        }
    }
    Ok((worst <= 1e-9, format!("max |row sum - 1| = {worst:.1e}")))
}

fn forecasting(_: &mut Cache) -> Outcome {
    let start = Instant::now();
    let radio = Scenario::reference().radio;
    let topology = TopologyConfig {
        rho: 0.6,
        ..TopologyConfig::default()
    };
    let config = TwinConfig::default();
    let mut wins = 0;
    let mut detail = Vec::new();
    for seed in 0..5u64 {
        let topo = gen_topology(20, &topology, &radio, seed).map_err(err)?;
        let tensor = gen_traces(&topo, 2000, &TraceParams::default(), 0, seed).map_err(err)?;
        let mut rng = stream_rng(seed, stream_id("forecast-benchmark", 0));
        let cmp = compare_forecasters(&tensor, &config, 0.8, (1, 1, 1), &mut rng).map_err(err)?;
        let vs_persist = cmp.twin_rmse / cmp.persistence_rmse;
        let ok = cmp.twin_rmse <= 0.9 * cmp.persistence_rmse && cmp.twin_rmse <= cmp.arima_rmse;
        wins += ok as usize;
        detail.push(format!(
            "{vs_persist:.3}x persistence, {:.3}x arima",
            cmp.twin_rmse / cmp.arima_rmse
        ));
    }
    let elapsed = start.elapsed();
    Ok((
        wins >= 4 && within(elapsed, 300),
        format!(
            "{wins}/5 seeds pass; twin RMSE [{}], {:.0}s",
            detail.join("; "),
            elapsed.as_secs_f64()
        ),
    ))
}

fn fedavg_oracle(_: &mut Cache) -> Outcome {
    // identical agents fed identical data, aggregated every step
    let config = AgentConfig {
        batch_size: 8,
        actor_optimizer: OptimizerConfig::adam(1e-3),
        critic_optimizer: OptimizerConfig::adam(1e-3),
        ..AgentConfig::default()
    };
    let agents_n = 3;
    let mut agents: Vec<DdpgAgent> = (0..agents_n)
        .map(|_| DdpgAgent::new(config.clone(), &mut ChaCha8Rng::seed_from_u64(9)))
        .collect::<Result<_, _>>()
        .map_err(err)?;
    let mut rngs: Vec<ChaCha8Rng> = (0..agents_n).map(|_| ChaCha8Rng::seed_from_u64(10)).collect();
    let mut data_rng = ChaCha8Rng::seed_from_u64(11);
    let mut orchestrator = Orchestrator::new();
    let mut worst: f64 = 0.0;
    let rounds = 40;
    for _ in 0..rounds {
        let s: Vec<f64> = (0..3).map(|_| data_rng.gen_range(0.0..1.0)).collect();
        let next: Vec<f64> = (0..3).map(|_| data_rng.gen_range(0.0..1.0)).collect();
        let (a, r) = (data_rng.gen_range(-1.0..1.0), data_rng.gen_range(0.0..1.0));
        for (agent, rng) in agents.iter_mut().zip(rngs.iter_mut()) {
            let exp = Experience {
                state: s.clone(),
                action: a,
                reward: r,
                next_state: next.clone(),
            };
            agent.observe(exp, rng).map_err(err)?;
        }
        let locals: Vec<Vec<f64>> = agents.iter().map(|a| a.model.main_params().values().to_vec()).collect();
        let sizes: Vec<usize> = agents.iter().map(|a| a.buffer.len()).collect();
        let mut models: Vec<_> = agents.iter_mut().map(|a| &mut a.model).collect();
        orchestrator.sync(&mut models, &sizes).map_err(err)?;
        let global = orchestrator.global().ok_or("no global model")?;
        for (i, g) in global.values().iter().enumerate() {
            let plain = locals.iter().map(|l| l[i]).sum::<f64>() / agents_n as f64;
            worst = worst.max((g - plain).abs());
        }
    }

    // weighted case: dyadic values and sizes summing to a power of two keep
    // every operation exact, so the oracle must agree bit for bit
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut mismatches = 0;
    for _ in 0..200 {
        let m = rng.gen_range(1..=6);
        let mut sizes: Vec<usize> = (0..m).map(|_| rng.gen_range(1..=16)).collect();
        let total: usize = sizes.iter().sum();
        let target = total.next_power_of_two();
        sizes[0] += target - total;
        let len = rng.gen_range(1..=20);
        let locals: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..len).map(|_| rng.gen_range(-64i32..64) as f64 / 8.0).collect())
            .collect();
        let params: Vec<ParamVector> = locals.iter().map(|l| ParamVector::from_flat(l.clone())).collect();
        let got = aggregate(&params, &sizes).map_err(err)?;
        for i in 0..len {
            let mut num = 0.0;
            for (l, &s) in locals.iter().zip(&sizes) {
                num += s as f64 * l[i];
            }
            if got.values()[i] != num / target as f64 {
                mismatches += 1;
            }
        }
    }
    Ok((
        worst <= 1e-9 && mismatches == 0,
        format!("max deviation from plain mean {worst:.1e} over {rounds} rounds; {mismatches} weighted mismatches"),
    ))
}

fn window_means(run: &RunOutput, window: usize) -> (f64, f64, f64, f64) {
    let steps = run.metrics.iter().map(|r| r.t + 1).max().unwrap_or(0);
    let mean = |it: Vec<f64>| it.iter().sum::<f64>() / it.len().max(1) as f64;
    let first = |r: &&slicetwin::experiment::MetricsRow| r.t < window;
    let last = |r: &&slicetwin::experiment::MetricsRow| r.t + window >= steps;
    (
        mean(run.metrics.iter().filter(first).map(|r| r.reward).collect()),
        mean(run.metrics.iter().filter(last).map(|r| r.reward).collect()),
        mean(run.metrics.iter().filter(first).filter_map(|r| r.critic_loss).collect()),
        mean(run.metrics.iter().filter(last).filter_map(|r| r.critic_loss).collect()),
    )
}

fn convergence(cache: &mut Cache) -> Outcome {
    let start = Instant::now();
    let window = Scenario::reference().window_len();
    let runs = cache.reference_dt_mafl()?;
    let mut passes = 0;
    let mut detail = Vec::new();
    for run in runs {
        let (r0, r1, l0, l1) = window_means(run, window);
        let ok = r1 >= 1.2 * r0 && l1 < l0;
        passes += ok as usize;
        detail.push(format!("{:.2}x/{:.2}", r1 / r0, l1 / l0));
    }
    let elapsed = start.elapsed();
    Ok((
        passes >= 4 && within(elapsed, 600),
        format!(
            "{passes}/5 seeds; reward ratio/loss ratio [{}], {:.0}s",
            detail.join(", "),
            elapsed.as_secs_f64()
        ),
    ))
}

fn allocator_ordering(_: &mut Cache) -> Outcome {
    let s = Scenario::reference().with_device_count(40);
    let window = s.window_len();
    let mut frame = Vec::new();
    for &seed in &s.seeds {
        for a in AllocatorId::ALL {
            frame.extend(run_single(&s, a, seed).map_err(err)?.metrics);
        }
    }
    let summary = summarize(&frame, &AllocatorId::ALL, window);
    let values = |a: AllocatorId, omega: bool| -> Vec<f64> {
        let x = &summary.allocators[&a];
        if omega {
            x.final_omega.values.clone()
        } else {
            x.final_u_mean.values.clone()
        }
    };
    let pairs = [
        (AllocatorId::DtMafl, AllocatorId::FlOnly),
        (AllocatorId::FlOnly, AllocatorId::Netshare),
        (AllocatorId::DtMafl, AllocatorId::Madqn),
    ];
    let mut ok = true;
    let mut detail = Vec::new();
    for (hi, lo) in pairs {
        for (metric, omega) in [("omega", true), ("qos", false)] {
            let wins = values(hi, omega)
                .iter()
                .zip(values(lo, omega))
                .filter(|(a, b)| **a >= *b)
                .count();
            ok &= wins >= 3;
            detail.push(format!("{hi}>={lo} {metric} {wins}/5"));
        }
    }
    let means: Vec<String> = AllocatorId::ALL
        .iter()
        .map(|a| {
            let x = &summary.allocators[a];
            format!(
                "{a} {:.3}/{:.3}",
                x.final_omega.mean.unwrap_or(f64::NAN),
                x.final_u_mean.mean.unwrap_or(f64::NAN)
            )
        })
        .collect();
    Ok((
        ok,
        format!("{}; omega/qos means: {}", detail.join(", "), means.join(", ")),
    ))
}

fn communication_cost(cache: &mut Cache) -> Outcome {
    let s = Scenario::reference();
    let seed = s.seeds[0];
    let periodic = cache.reference_dt_mafl()?[0].comm;
    let mut every_step = s.clone();
    every_step.agg_tau = 1;
    let dense = run_single(&every_step, AllocatorId::DtMafl, seed).map_err(err)?.comm;
    let madqn = run_single(&s, AllocatorId::Madqn, seed).map_err(err)?.comm;
    let exact = dense.federation_scalars == 50 * periodic.federation_scalars;
    let cheaper = periodic.total_scalars() < madqn.total_scalars();
    Ok((
        exact && cheaper,
        format!(
            "tau=50: {} scalars, tau=1: {} (ratio {}); madqn reporting: {} scalars",
            periodic.federation_scalars,
            dense.federation_scalars,
            if exact { "exactly 1/50".to_string() } else { format!("{:.4}", periodic.federation_scalars as f64 / dense.federation_scalars as f64) },
            madqn.total_scalars()
        ),
    ))
}

fn allocation_safety(_: &mut Cache) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut violations = 0;
    let trials = 100_000;
    for _ in 0..trials {
        let m = rng.gen_range(1..=12);
        let total = rng.gen_range(m as u32..=200);
        let cap = rng.gen_range(1..=total);
        let caps = vec![cap; m];
        // feasible start: one RB each, the rest scattered under the caps
        let mut grants = vec![1u32; m];
        let mut spare = total - m as u32;
        for g in grants.iter_mut() {
            let add = rng.gen_range(0..=spare.min(cap - 1));
            *g += add;
            spare -= add;
        }
        let state = AllocationState::new(grants, caps, total).map_err(err)?;
        let deltas: Vec<i64> = (0..m)
            .map(|_| action_to_delta(rng.gen_range(-1.0..=1.0), 0.1 * total as f64))
            .collect();
        let next = state.apply(&deltas);
        let sum: u64 = next.grants().iter().map(|&w| w as u64).sum();
        if next.grants().iter().any(|&w| w == 0 || w > cap) || sum > total as u64 {
            violations += 1;
        }
    }
    Ok((violations == 0, format!("{violations} violations in {trials} random action vectors")))
}

fn determinism(_: &mut Cache) -> Outcome {
    let s = Scenario::reference();
    let dir = tempfile::tempdir().map_err(err)?;
    let mut files = Vec::new();
    for attempt in 0..2 {
        let mut frame = Vec::new();
        for a in &s.allocators {
            frame.extend(run_single(&s, *a, 7).map_err(err)?.metrics);
        }
        let path = dir.path().join(format!("metrics-{attempt}.csv"));
        write_csv(&path, &frame).map_err(err)?;
        files.push(std::fs::read(&path).map_err(err)?);
    }
    Ok((
        files[0] == files[1],
        format!("{} bytes per metrics file", files[0].len()),
    ))
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "gradient suite", check: gradient_suite },
        Criterion { id: 2, name: "graph invariants", check: graph_invariants },
        Criterion { id: 3, name: "attention normalization", check: attention_normalization },
        Criterion { id: 4, name: "forecasting vs persistence and ARIMA", check: forecasting },
        Criterion { id: 5, name: "FedAvg oracle", check: fedavg_oracle },
        Criterion { id: 6, name: "convergence", check: convergence },
        Criterion { id: 7, name: "allocator ordering at 40 devices", check: allocator_ordering },
        Criterion { id: 8, name: "communication cost", check: communication_cost },
        Criterion { id: 9, name: "allocation safety", check: allocation_safety },
        Criterion { id: 10, name: "determinism", check: determinism },
    ];
    // libtest-style flags from cargo are ignored; bare numbers select criteria
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut cache = Cache::default();
    let (mut passed, mut failed, mut errors) = (0, 0, 0);
    for c in criteria.iter().filter(|c| selected.is_empty() || selected.contains(&c.id)) {
        let start = Instant::now();
        let outcome = (c.check)(&mut cache);
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok((true, detail)) => {
                passed += 1;
                println!("PASS  {:>2}. {}: {detail} [{secs:.1}s]", c.id, c.name);
            }
            Ok((false, detail)) => {
                failed += 1;
                println!("FAIL  {:>2}. {}: {detail} [{secs:.1}s]", c.id, c.name);
            }
            Err(e) => {
                errors += 1;
                println!("ERROR {:>2}. {}: {e} [{secs:.1}s]", c.id, c.name);
            }
        }
    }
    println!("acceptance: {passed} passed, {failed} failed, {errors} errors");
    if errors > 0 {
        std::process::exit(1);
    }
}
