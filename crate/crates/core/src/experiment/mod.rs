//! Scenario files, seeded end-to-end runs and their outputs.

mod output;
mod run;

pub use output::{
    emit_plot_data, export_metrics, read_csv, summarize, write_csv, write_run_outputs, AllocatorSummary, CsvRow,
    ForecastPanelRow, PlotReport, PlotRow, Stat, Summary, SweepRow,
};
pub use run::{run_experiment, run_single, ExperimentOutput, ForecastRow, MetricsRow, RoundRow, RunOutput, TrainingRow};

use std::collections::BTreeSet;
use std::path::Path;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::AllocatorId;
use crate::federation::FederationError;
use crate::marl::{AgentConfig, MarlError};
use crate::nn::OptimizerConfig;
use crate::radio::{RadioConfig, RadioError, SliceKind, SliceSpec};
use crate::traffic::{TopologyConfig, TraceParams, TrafficError};
use crate::twin::{TwinConfig, TwinError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("scenario does not match the schema at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Radio(#[from] RadioError),
    #[error(transparent)]
    Traffic(#[from] TrafficError),
    #[error(transparent)]
    Twin(#[from] TwinError),
    #[error(transparent)]
    Marl(#[from] MarlError),
    #[error(transparent)]
    Federation(#[from] FederationError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl ExperimentError {
    /// Whether the error comes from the scenario itself rather than from
    /// running it.
    pub fn is_schema_error(&self) -> bool {
        matches!(self, ExperimentError::Schema { .. } | ExperimentError::Invalid(_))
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        ExperimentError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Everything needed to reproduce a set of runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub radio: RadioConfig,
    /// Slice ids must be `0..n` in order.
    pub slices: Vec<SliceSpec>,
    pub topology: TopologyConfig,
    /// One entry shared by every slice, or one entry per slice.
    pub traffic: Vec<TraceParams>,
    pub twin: TwinConfig,
    /// Demand history generated before step 0; the twin pretrains on it.
    pub warmup_steps: usize,
    /// Also average the twins across slices (requires equal device counts).
    pub federate_twins: bool,
    pub agent: AgentConfig,
    pub allocators: Vec<AllocatorId>,
    /// Steps between federated aggregations.
    pub agg_tau: usize,
    pub steps: usize,
    pub seeds: Vec<u64>,
    /// Share of the run, at each end, used for first- and final-window
    /// statistics.
    pub window_fraction: f64,
    /// Device counts per slice for the load sweep; empty skips the sweep.
    pub device_sweep: Vec<usize>,
    /// `(p, d, q)` of the ARIMA forecaster logged next to the twin.
    pub arima_order: [usize; 3],
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario::reference()
    }
}

fn rate_slice(id: usize, r_min_bps: f64) -> SliceSpec {
    SliceSpec {
        id,
        kind: SliceKind::Rate { r_min_bps },
        steepness: 2e-5,
        device_count: 20,
        arrival_rate: 10.0,
        packet_bits: 12_000.0,
    }
}

fn delay_slice(id: usize, tau_max_s: f64) -> SliceSpec {
    SliceSpec {
        id,
        kind: SliceKind::Delay { tau_max_s },
        steepness: 100.0,
        device_count: 20,
        arrival_rate: 10.0,
        packet_bits: 12_000.0,
    }
}

impl Scenario {
    /// Desk-scale default: six slices of twenty devices, 1000 steps, five
    /// seeds, every allocator.
    pub fn reference() -> Self {
        let agent = AgentConfig {
            gamma: 0.5,
            actor_optimizer: OptimizerConfig::adam(1e-4),
            critic_optimizer: OptimizerConfig::adam(1e-3),
            ..AgentConfig::default()
        };
        let twin = TwinConfig {
            pretrain_epochs: 10,
            ..TwinConfig::default()
        };
        Scenario {
            name: "reference".into(),
            radio: RadioConfig::default(),
            slices: vec![
                rate_slice(0, 1e5),
                rate_slice(1, 1.5e5),
                rate_slice(2, 2e5),
                delay_slice(3, 0.1),
                delay_slice(4, 0.15),
                delay_slice(5, 0.2),
            ],
            topology: TopologyConfig::default(),
            traffic: vec![TraceParams::default()],
            twin,
            warmup_steps: 400,
            federate_twins: false,
            agent,
            allocators: AllocatorId::ALL.to_vec(),
            agg_tau: 50,
            steps: 1000,
            seeds: vec![0, 1, 2, 3, 4],
            window_fraction: 0.1,
            device_sweep: Vec::new(),
            arima_order: [1, 1, 1],
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self, ExperimentError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| ExperimentError::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn json_schema() -> String {
        serde_json::to_string_pretty(&schemars::schema_for!(Scenario)).expect("schema serializes")
    }

    pub fn traffic_for(&self, slice: usize) -> &TraceParams {
        if self.traffic.len() == 1 {
            &self.traffic[0]
        } else {
            &self.traffic[slice]
        }
    }

    /// Same scenario with every slice carrying `devices` devices.
    pub fn with_device_count(&self, devices: usize) -> Scenario {
        let mut s = self.clone();
        s.slices.iter_mut().for_each(|sl| sl.device_count = devices);
        s
    }

    pub fn window_len(&self) -> usize {
        ((self.steps as f64 * self.window_fraction).round() as usize).clamp(1, self.steps.max(1))
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Invalid(m));
        let invalid = |e: &dyn std::fmt::Display| ExperimentError::Invalid(e.to_string());
        self.radio.validate().map_err(|e| invalid(&e))?;
        if self.slices.is_empty() {
            return bad("at least one slice is required".into());
        }
        for (i, s) in self.slices.iter().enumerate() {
            if s.id != i {
                return bad(format!("slices[{i}] has id {}; ids must be 0..n in order", s.id));
            }
            s.validate().map_err(|e| invalid(&e))?;
        }
        if self.traffic.len() != 1 && self.traffic.len() != self.slices.len() {
            return bad(format!(
                "traffic has {} entries; expected 1 or one per slice ({})",
                self.traffic.len(),
                self.slices.len()
            ));
        }
        for t in &self.traffic {
            if !(t.period > 0.0 && t.base_load_mbps >= 0.0 && t.noise_std_mbps >= 0.0 && t.load_spread >= 0.0) {
                return bad("traffic periods must be positive and loads, noise and spread non-negative".into());
            }
        }
        if !(0.0..1.0).contains(&self.topology.rho) {
            return bad(format!("topology.rho {} outside [0, 1)", self.topology.rho));
        }
        self.twin.validate().map_err(|e| invalid(&e))?;
        self.agent.validate().map_err(|e| invalid(&e))?;
        if self.allocators.is_empty() {
            return bad("at least one allocator is required".into());
        }
        if self.allocators.iter().collect::<BTreeSet<_>>().len() != self.allocators.len() {
            return bad("allocators are listed more than once".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.agg_tau == 0 {
            return bad("agg_tau must be at least 1".into());
        }
        if self.warmup_steps < self.twin.window + 2 {
            return bad(format!(
                "warmup_steps {} must be at least twin.window + 2 = {}",
                self.warmup_steps,
                self.twin.window + 2
            ));
        }
        if !(self.window_fraction > 0.0 && self.window_fraction <= 1.0) {
            return bad("window_fraction must lie in (0, 1]".into());
        }
        if self.device_sweep.iter().any(|&d| d < 2) {
            return bad("device_sweep counts must be at least 2".into());
        }
        if self.slices.iter().any(|s| s.device_count < 2) {
            return bad("every slice needs at least two devices".into());
        }
        if self.federate_twins && self.slices.iter().any(|s| s.device_count != self.slices[0].device_count) {
            return bad("federate_twins needs equal device counts across slices".into());
        }
        let [p, d, q] = self.arima_order;
        if self.warmup_steps <= p + d + q + 10 {
            return bad("warmup_steps too short to fit the ARIMA forecaster".into());
        }
        if (self.radio.total_rbs as usize) < self.slices.len() {
            return bad("fewer RBs than slices".into());
        }
        Ok(())
    }
}
