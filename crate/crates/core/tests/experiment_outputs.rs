use std::fs;
use std::path::Path;
use std::process::Command;

use slicetwin::baselines::AllocatorId;
use slicetwin::experiment::{
    emit_plot_data, export_metrics, read_csv, run_experiment, run_single, summarize, write_csv, write_run_outputs,
    MetricsRow, Scenario,
};
use slicetwin::federation::Upload;
use slicetwin::nn::{OptimizerConfig, ParamVector};

fn small() -> Scenario {
    let mut s = Scenario::reference().with_device_count(5);
    s.name = "small".into();
    s.slices.truncate(3);
    s.steps = 30;
    s.warmup_steps = 40;
    s.seeds = vec![3, 1];
    s.agg_tau = 10;
    s.twin.pretrain_epochs = 1;
    s
}

fn metrics_row(t: usize, seed: u64, reward: f64) -> MetricsRow {
    MetricsRow {
        t,
        slice_id: 0,
        allocator_id: AllocatorId::Netshare,
        seed,
        reward,
        critic_loss: None,
        omega: reward,
        u_mean: reward,
        rmse_so_far: 0.0,
        comm_scalars: 0,
    }
}

fn first_line(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap_or("").to_string()
}

#[test]
fn zero_steps_give_an_empty_frame_and_null_summary() {
    let mut s = small();
    s.steps = 0;
    let run = run_single(&s, AllocatorId::DtMafl, 0).unwrap();
    assert!(run.metrics.is_empty());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metrics.csv");
    let summary = export_metrics(&run.metrics, &path, &[AllocatorId::DtMafl], 1).unwrap();
    assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 1);
    let a = &summary.allocators[&AllocatorId::DtMafl];
    assert!(a.final_reward.mean.is_none() && a.final_reward.std.is_none());
    let json = fs::read_to_string(dir.path().join("metrics.summary.json")).unwrap();
    assert!(json.contains("\"mean\": null"));
}

#[test]
fn summary_averages_seed_means() {
    let frame: Vec<MetricsRow> = vec![metrics_row(0, 0, 0.4), metrics_row(0, 1, 0.6)];
    let summary = summarize(&frame, &[], 1);
    let stat = &summary.allocators[&AllocatorId::Netshare].final_reward;
    assert!((stat.mean.unwrap() - 0.5).abs() < 1e-12);
    assert!((stat.std.unwrap() - 0.1).abs() < 1e-12);
}

#[test]
fn same_scenario_and_seed_give_identical_bytes() {
    let s = small();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    write_run_outputs(a.path(), &s, &run_experiment(&s).unwrap()).unwrap();
    write_run_outputs(b.path(), &s, &run_experiment(&s).unwrap()).unwrap();
    for name in ["metrics.csv", "training_log.csv", "rounds.csv", "forecasts.csv", "summary.json"] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn seed_order_does_not_leak_between_runs() {
    let mut forward = small();
    forward.allocators = vec![AllocatorId::DtMafl, AllocatorId::Madqn];
    let mut backward = forward.clone();
    backward.seeds.reverse();
    let fa = run_experiment(&forward).unwrap();
    let fb = run_experiment(&backward).unwrap();
    for run in &fa.runs {
        let twin = fb
            .runs
            .iter()
            .find(|r| r.seed == run.seed && r.allocator == run.allocator)
            .unwrap();
        assert_eq!(run.metrics, twin.metrics);
        assert_eq!(run.forecasts, twin.forecasts);
    }
}

#[test]
fn csv_headers_are_stable() {
    let mut s = small();
    s.device_sweep = vec![4];
    s.seeds = vec![0];
    let dir = tempfile::tempdir().unwrap();
    write_run_outputs(dir.path(), &s, &run_experiment(&s).unwrap()).unwrap();
    let golden = [
        (
            "metrics.csv",
            "t,slice_id,allocator_id,seed,reward,critic_loss,omega,u_mean,rmse_so_far,comm_scalars",
        ),
        (
            "training_log.csv",
            "t,slice_id,allocator_id,seed,critic_loss,actor_grad_norm,epsilon",
        ),
        (
            "rounds.csv",
            "round,t,allocator_id,seed,slice_id,local_loss,global_loss,cumulative_scalars",
        ),
        ("forecasts.csv", "seed,t,slice_id,model_id,actual,predicted"),
        ("sweep.csv", "device_count,allocator_id,seed,reward,omega,u_mean"),
    ];
    for (name, header) in golden {
        assert_eq!(first_line(&dir.path().join(name)), header, "{name}");
    }
    let report = emit_plot_data(dir.path()).unwrap();
    assert!(report.warnings.is_empty(), "{:?}", report.warnings);
    assert_eq!(
        first_line(&dir.path().join("plots/fig2a_forecast.csv")),
        "t,model_id,actual,predicted,seed"
    );
    for panel in ["fig2b_rmse", "fig3a_reward", "fig3b_loss", "fig4a_utilization", "fig4b_qos"] {
        assert_eq!(
            first_line(&dir.path().join(format!("plots/{panel}.csv"))),
            "x,series_id,y,seed",
            "{panel}"
        );
    }
    let fig4 = fs::read_to_string(dir.path().join("plots/fig4a_utilization.csv")).unwrap();
    assert!(fig4.lines().skip(1).all(|l| l.starts_with("4,")));
}

#[test]
fn missing_inputs_become_warnings() {
    let mut s = small();
    s.allocators = vec![AllocatorId::Netshare];
    s.seeds = vec![0];
    let dir = tempfile::tempdir().unwrap();
    write_run_outputs(dir.path(), &s, &run_experiment(&s).unwrap()).unwrap();
    let report = emit_plot_data(dir.path()).unwrap();
    // netshare has no forecasts and there is no sweep
    assert_eq!(report.warnings.len(), 2, "{:?}", report.warnings);
    assert!(dir.path().join("plots/fig3a_reward.csv").exists());
    assert!(!dir.path().join("plots/fig4a_utilization.csv").exists());
}

#[test]
fn metrics_read_back_unchanged() {
    let run = run_single(&small(), AllocatorId::FlOnly, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    write_csv(&path, &run.metrics).unwrap();
    let back: Vec<MetricsRow> = read_csv(&path).unwrap();
    assert_eq!(back, run.metrics);
}

#[test]
fn zero_learning_rate_leaves_agents_untouched() {
    let mut s = small();
    s.agent.actor_optimizer = OptimizerConfig::adam(0.0);
    s.agent.critic_optimizer = OptimizerConfig::adam(0.0);
    let global = |steps: usize| -> ParamVector {
        let mut s = s.clone();
        s.steps = steps;
        let run = run_single(&s, AllocatorId::FlOnly, 5).unwrap();
        run.checkpoints.into_iter().find(|(n, _)| n == "global").unwrap().1
    };
    // weighted averaging of identical models may move the last bit
    let (a, b) = (global(10), global(30));
    assert!(a.distance(&b).unwrap() < 1e-12 * a.norm().max(1.0));
}

#[test]
fn uploads_carry_only_parameters_and_a_count() {
    // exhaustive literal: a new field on the upload type breaks this test
    let up = Upload {
        params: ParamVector::from_flat(vec![1.0, 2.0]),
        dataset_size: 7,
    };
    assert_eq!(up.params.len(), 2);
    let run = run_single(&small(), AllocatorId::FlOnly, 0).unwrap();
    let (federation, reports) = (run.comm.federation_scalars, run.comm.report_scalars);
    assert!(federation > 0);
    assert_eq!(reports, 0);
}

#[test]
fn shipped_reference_scenario_matches_the_builtin() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/reference.json");
    assert_eq!(Scenario::load(&path).unwrap(), Scenario::reference());
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_slicetwin"))
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"agent": {"gamma": "high"}}"#).unwrap();
    let out = cli().arg("validate").arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("agent.gamma"));

    let mut s = small();
    s.allocators = vec![AllocatorId::Netshare, AllocatorId::Madqn];
    let good = dir.path().join("good.json");
    fs::write(&good, s.to_json()).unwrap();
    assert_eq!(cli().arg("validate").arg(&good).output().unwrap().status.code(), Some(0));

    let out_dir = dir.path().join("out");
    let status = cli()
        .args(["run"])
        .arg(&good)
        .arg("--out")
        .arg(&out_dir)
        .args(["--seeds", "4", "--allocator", "netshare"])
        .output()
        .unwrap()
        .status;
    assert_eq!(status.code(), Some(0));
    let rows: Vec<MetricsRow> = read_csv(&out_dir.join("metrics.csv")).unwrap();
    assert!(rows.iter().all(|r| r.seed == 4 && r.allocator_id == AllocatorId::Netshare));
    assert_eq!(cli().arg("plots").arg(&out_dir).output().unwrap().status.code(), Some(0));

    // output path under a regular file cannot be created
    let blocked = good.join("out");
    let status = cli().arg("run").arg(&good).arg("--out").arg(&blocked).output().unwrap().status;
    assert_eq!(status.code(), Some(3));
    let status = cli().arg("schema").output().unwrap();
    assert!(String::from_utf8_lossy(&status.stdout).contains("agg_tau"));
}
