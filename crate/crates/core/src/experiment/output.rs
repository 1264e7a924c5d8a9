use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::run::{ExperimentOutput, ForecastRow, MetricsRow, RoundRow, RunOutput, TrainingRow};
use super::{ExperimentError, Scenario};
use crate::baselines::AllocatorId;
use crate::twin::rmse_of;

/// Final-window means of one sweep run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub device_count: usize,
    pub allocator_id: AllocatorId,
    pub seed: u64,
    pub reward: f64,
    pub omega: f64,
    pub u_mean: f64,
}

impl SweepRow {
    pub fn from_run(run: &RunOutput, window_len: usize) -> Self {
        let tail = final_window(&run.metrics, window_len);
        SweepRow {
            device_count: run.device_count,
            allocator_id: run.allocator,
            seed: run.seed,
            reward: mean(tail.iter().map(|r| r.reward)).unwrap_or(f64::NAN),
            omega: mean(tail.iter().map(|r| r.omega)).unwrap_or(f64::NAN),
            u_mean: mean(tail.iter().map(|r| r.u_mean)).unwrap_or(f64::NAN),
        }
    }
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn steps_of(rows: &[&MetricsRow]) -> usize {
    rows.iter().map(|r| r.t + 1).max().unwrap_or(0)
}

/// Rows with `t` in the first `window_len` steps.
pub(crate) fn first_window<'a>(rows: &'a [MetricsRow], window_len: usize) -> Vec<&'a MetricsRow> {
    rows.iter().filter(|r| r.t < window_len).collect()
}

/// Rows with `t` in the last `window_len` steps.
pub(crate) fn final_window<'a>(rows: &'a [MetricsRow], window_len: usize) -> Vec<&'a MetricsRow> {
    let all: Vec<&MetricsRow> = rows.iter().collect();
    let steps = steps_of(&all);
    all.into_iter().filter(|r| r.t + window_len >= steps).collect()
}

/// Across-seed statistics; `std` is the population standard deviation.
/// Both are `null` without values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub values: Vec<f64>,
}

impl Stat {
    pub fn of(values: Vec<f64>) -> Self {
        let m = mean(values.iter().copied());
        let std = m.map(|m| (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64).sqrt());
        Stat { mean: m, std, values }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AllocatorSummary {
    pub seeds: Vec<u64>,
    pub first_reward: Stat,
    pub final_reward: Stat,
    pub first_critic_loss: Stat,
    pub final_critic_loss: Stat,
    pub final_omega: Stat,
    pub final_u_mean: Stat,
    pub final_rmse: Stat,
    pub comm_scalars: Stat,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub window_len: usize,
    pub allocators: BTreeMap<AllocatorId, AllocatorSummary>,
}

/// Per-allocator first- and final-window statistics over seeds. Allocators
/// listed in `allocators` but absent from the frame get empty statistics.
pub fn summarize(frame: &[MetricsRow], allocators: &[AllocatorId], window_len: usize) -> Summary {
    let mut groups: BTreeMap<AllocatorId, BTreeMap<u64, Vec<MetricsRow>>> = BTreeMap::new();
    for a in allocators {
        groups.entry(*a).or_default();
    }
    for row in frame {
        groups
            .entry(row.allocator_id)
            .or_default()
            .entry(row.seed)
            .or_default()
            .push(row.clone());
    }
    let mut summary = Summary {
        window_len,
        allocators: BTreeMap::new(),
    };
    for (alloc, seeds) in groups {
        let mut cols: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        let mut push = |k: &'static str, v: Option<f64>| {
            let entry = cols.entry(k).or_default();
            if let Some(v) = v {
                entry.push(v);
            }
        };
        for rows in seeds.values() {
            let first = first_window(rows, window_len);
            let last = final_window(rows, window_len);
            let steps = steps_of(&rows.iter().collect::<Vec<_>>());
            push("first_reward", mean(first.iter().map(|r| r.reward)));
            push("final_reward", mean(last.iter().map(|r| r.reward)));
            push("first_critic_loss", mean(first.iter().filter_map(|r| r.critic_loss)));
            push("final_critic_loss", mean(last.iter().filter_map(|r| r.critic_loss)));
            push("final_omega", mean(last.iter().map(|r| r.omega)));
            push("final_u_mean", mean(last.iter().map(|r| r.u_mean)));
            push(
                "final_rmse",
                mean(rows.iter().filter(|r| r.t + 1 == steps).map(|r| r.rmse_so_far)),
            );
            push("comm_scalars", rows.iter().map(|r| r.comm_scalars).max().map(|c| c as f64));
        }
        let mut take = |k: &str| Stat::of(cols.remove(k).unwrap_or_default());
        summary.allocators.insert(
            alloc,
            AllocatorSummary {
                seeds: seeds.keys().copied().collect(),
                first_reward: take("first_reward"),
                final_reward: take("final_reward"),
                first_critic_loss: take("first_critic_loss"),
                final_critic_loss: take("final_critic_loss"),
                final_omega: take("final_omega"),
                final_u_mean: take("final_u_mean"),
                final_rmse: take("final_rmse"),
                comm_scalars: take("comm_scalars"),
            },
        );
    }
    summary
}

pub fn write_csv<T: CsvRow>(path: &Path, rows: &[T]) -> Result<(), ExperimentError> {
    let file = File::create(path).map_err(|e| ExperimentError::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(BufWriter::new(file));
    // headers come from the field names even when there are no rows
    w.write_record(T::HEADER)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| ExperimentError::io(path, e))?;
    Ok(())
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, ExperimentError> {
    let file = File::open(path).map_err(|e| ExperimentError::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    r.deserialize().map(|row| row.map_err(ExperimentError::from)).collect()
}

/// Row types written to CSV; the header is emitted even for empty frames.
pub trait CsvRow: Serialize {
    const HEADER: &'static [&'static str];
}

impl CsvRow for MetricsRow {
    const HEADER: &'static [&'static str] = &[
        "t",
        "slice_id",
        "allocator_id",
        "seed",
        "reward",
        "critic_loss",
        "omega",
        "u_mean",
        "rmse_so_far",
        "comm_scalars",
    ];
}

impl CsvRow for TrainingRow {
    const HEADER: &'static [&'static str] =
        &["t", "slice_id", "allocator_id", "seed", "critic_loss", "actor_grad_norm", "epsilon"];
}

impl CsvRow for RoundRow {
    const HEADER: &'static [&'static str] = &[
        "round",
        "t",
        "allocator_id",
        "seed",
        "slice_id",
        "local_loss",
        "global_loss",
        "cumulative_scalars",
    ];
}

impl CsvRow for ForecastRow {
    const HEADER: &'static [&'static str] = &["seed", "t", "slice_id", "model_id", "actual", "predicted"];
}

impl CsvRow for SweepRow {
    const HEADER: &'static [&'static str] = &["device_count", "allocator_id", "seed", "reward", "omega", "u_mean"];
}

impl CsvRow for PlotRow {
    const HEADER: &'static [&'static str] = &["x", "series_id", "y", "seed"];
}

impl CsvRow for ForecastPanelRow {
    const HEADER: &'static [&'static str] = &["t", "model_id", "actual", "predicted", "seed"];
}

/// Writes the metrics CSV and its JSON summary next to it
/// (`<stem>.summary.json`).
pub fn export_metrics(
    frame: &[MetricsRow],
    path: &Path,
    allocators: &[AllocatorId],
    window_len: usize,
) -> Result<Summary, ExperimentError> {
    write_csv(path, frame)?;
    let summary = summarize(frame, allocators, window_len);
    let json_path = path.with_extension("summary.json");
    write_json(&json_path, &summary)?;
    Ok(summary)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| ExperimentError::io(path, e))
}

/// Writes every output of an experiment under `dir`.
pub fn write_run_outputs(dir: &Path, scenario: &Scenario, output: &ExperimentOutput) -> Result<Summary, ExperimentError> {
    std::fs::create_dir_all(dir).map_err(|e| ExperimentError::io(dir, e))?;
    let metrics: Vec<MetricsRow> = output.runs.iter().flat_map(|r| r.metrics.clone()).collect();
    write_csv(&dir.join("metrics.csv"), &metrics)?;
    let training: Vec<_> = output.runs.iter().flat_map(|r| r.training.clone()).collect();
    write_csv(&dir.join("training_log.csv"), &training)?;
    let rounds: Vec<_> = output.runs.iter().flat_map(|r| r.rounds.clone()).collect();
    write_csv(&dir.join("rounds.csv"), &rounds)?;
    let forecasts: Vec<_> = output.runs.iter().flat_map(|r| r.forecasts.clone()).collect();
    write_csv(&dir.join("forecasts.csv"), &forecasts)?;
    if !output.sweep.is_empty() {
        write_csv(&dir.join("sweep.csv"), &output.sweep)?;
    }
    let summary = summarize(&metrics, &scenario.allocators, scenario.window_len());
    write_json(&dir.join("summary.json"), &summary)?;
    std::fs::write(dir.join("scenario.json"), scenario.to_json() + "\n")
        .map_err(|e| ExperimentError::io(&dir.join("scenario.json"), e))?;
    let ckpt = dir.join("checkpoints");
    std::fs::create_dir_all(&ckpt).map_err(|e| ExperimentError::io(&ckpt, e))?;
    for run in &output.runs {
        for (name, params) in &run.checkpoints {
            let path = ckpt.join(format!("{}-seed{}-{name}.bin", run.allocator, run.seed));
            std::fs::write(&path, params.to_bytes()).map_err(|e| ExperimentError::io(&path, e))?;
        }
    }
    Ok(summary)
}

/// One point of a figure panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub x: String,
    pub series_id: String,
    pub y: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlotReport {
    pub written: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastPanelRow {
    pub t: usize,
    pub model_id: String,
    pub actual: f64,
    pub predicted: f64,
    pub seed: u64,
}

/// Reads run outputs from `dir` and writes one tidy CSV per panel to
/// `dir/plots`. Missing inputs are reported as warnings and their panels
/// skipped.
pub fn emit_plot_data(dir: &Path) -> Result<PlotReport, ExperimentError> {
    let out_dir = dir.join("plots");
    std::fs::create_dir_all(&out_dir).map_err(|e| ExperimentError::io(&out_dir, e))?;
    let mut report = PlotReport::default();
    let emit_panel = |name: &str, rows: Vec<PlotRow>, report: &mut PlotReport| -> Result<(), ExperimentError> {
        let path = out_dir.join(name);
        write_csv(&path, &rows)?;
        report.written.push(path);
        Ok(())
    };

    let forecasts_path = dir.join("forecasts.csv");
    match read_optional::<ForecastRow>(&forecasts_path)? {
        Some(rows) if !rows.is_empty() => {
            let mut panel: Vec<ForecastPanelRow> = rows
                .iter()
                .filter(|r| r.slice_id == 0)
                .map(|r| ForecastPanelRow {
                    t: r.t,
                    model_id: r.model_id.clone(),
                    actual: r.actual,
                    predicted: r.predicted,
                    seed: r.seed,
                })
                .collect();
            panel.sort_by(|a, b| (&a.model_id, a.seed, a.t).cmp(&(&b.model_id, b.seed, b.t)));
            let path = out_dir.join("fig2a_forecast.csv");
            write_csv(&path, &panel)?;
            report.written.push(path);

            let mut errors: BTreeMap<(String, u64), Vec<f64>> = BTreeMap::new();
            for r in &rows {
                errors.entry((r.model_id.clone(), r.seed)).or_default().push(r.predicted - r.actual);
            }
            let panel = errors
                .into_iter()
                .map(|((model, seed), e)| {
                    Ok(PlotRow {
                        x: model.clone(),
                        series_id: model,
                        y: rmse_of(e)?,
                        seed,
                    })
                })
                .collect::<Result<Vec<_>, crate::twin::TwinError>>()?;
            emit_panel("fig2b_rmse.csv", panel, &mut report)?;
        }
        _ => report
            .warnings
            .push(format!("{}: no forecast records; fig2 panels skipped", forecasts_path.display())),
    }

    let metrics_path = dir.join("metrics.csv");
    match read_optional::<MetricsRow>(&metrics_path)? {
        Some(rows) if !rows.is_empty() => {
            type Key = (AllocatorId, u64, usize);
            let mut grouped: BTreeMap<Key, Vec<&MetricsRow>> = BTreeMap::new();
            for r in &rows {
                grouped.entry((r.allocator_id, r.seed, r.t)).or_default().push(r);
            }
            let panel = |f: &dyn Fn(&[&MetricsRow]) -> Option<f64>| -> Vec<PlotRow> {
                grouped
                    .iter()
                    .filter_map(|((a, seed, t), rs)| {
                        f(rs).map(|y| PlotRow {
                            x: t.to_string(),
                            series_id: a.to_string(),
                            y,
                            seed: *seed,
                        })
                    })
                    .collect()
            };
            emit_panel("fig3a_reward.csv", panel(&|rs| mean(rs.iter().map(|r| r.reward))), &mut report)?;
            emit_panel(
                "fig3b_loss.csv",
                panel(&|rs| mean(rs.iter().filter_map(|r| r.critic_loss))),
                &mut report,
            )?;
            emit_panel("fig3c_utilization.csv", panel(&|rs| mean(rs.iter().map(|r| r.omega))), &mut report)?;
            emit_panel("fig3d_qos.csv", panel(&|rs| mean(rs.iter().map(|r| r.u_mean))), &mut report)?;
        }
        _ => report
            .warnings
            .push(format!("{}: no metrics rows; fig3 panels skipped", metrics_path.display())),
    }

    let sweep_path = dir.join("sweep.csv");
    match read_optional::<SweepRow>(&sweep_path)? {
        Some(rows) if !rows.is_empty() => {
            let mut sorted = rows.clone();
            sorted.sort_by(|a, b| {
                (a.allocator_id, a.seed, a.device_count).cmp(&(b.allocator_id, b.seed, b.device_count))
            });
            let panel = |f: fn(&SweepRow) -> f64| -> Vec<PlotRow> {
                sorted
                    .iter()
                    .map(|r| PlotRow {
                        x: r.device_count.to_string(),
                        series_id: r.allocator_id.to_string(),
                        y: f(r),
                        seed: r.seed,
                    })
                    .collect()
            };
            emit_panel("fig4a_utilization.csv", panel(|r| r.omega), &mut report)?;
            emit_panel("fig4b_qos.csv", panel(|r| r.u_mean), &mut report)?;
        }
        _ => report
            .warnings
            .push(format!("{}: no device-count sweep; fig4 panels skipped", sweep_path.display())),
    }
    Ok(report)
}

fn read_optional<T: DeserializeOwned>(path: &Path) -> Result<Option<Vec<T>>, ExperimentError> {
    if path.exists() {
        read_csv(path).map(Some)
    } else {
        Ok(None)
    }
}
