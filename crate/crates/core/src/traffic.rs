//! Synthetic spatiotemporal traffic with planted spatial correlation.
//!
//! Devices sit at random positions in the cell; a latent diffusion graph
//! links nearby devices, and each device's load follows
//! `x(t+1) = rho * P x(t) + (1 - rho) * max(0, s(t+1) + noise)` where `s` is a
//! diurnal sinusoid and `P` is the latent adjacency with any missing row
//! mass put back on the diagonal.

use std::io::{Read, Write};
use std::path::Path;

use rand_distr::{Distribution, Normal};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::radio::{env_uniform_in_cell, RadioConfig};
use crate::rng::stream_rng;

#[derive(Debug, Error)]
pub enum TrafficError {
    #[error("invalid traffic parameter: {0}")]
    Invalid(String),
    #[error("step {t} out of range for a trace of {steps} steps")]
    OutOfRange { t: usize, steps: usize },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct TopologyConfig {
    /// Edge weight decay length, meters.
    pub scale_m: f64,
    /// Devices farther apart than this are not linked.
    pub connect_radius_m: f64,
    /// Diffusion strength, in `[0, 1)`.
    pub rho: f64,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig {
            scale_m: 80.0,
            connect_radius_m: 200.0,
            rho: 0.6,
        }
    }
}

/// Ground-truth diffusion graph over devices.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTopology {
    pub positions: Vec<(f64, f64)>,
    /// Row-major `V x V`, non-negative, zero diagonal, row sums at most 1.
    pub adjacency: Vec<Vec<f64>>,
    pub rho: f64,
}

impl LatentTopology {
    pub fn nodes(&self) -> usize {
        self.positions.len()
    }
}

/// Places `nodes` devices uniformly in the cell and links them.
pub fn gen_topology(
    nodes: usize,
    config: &TopologyConfig,
    radio: &RadioConfig,
    seed: u64,
) -> Result<LatentTopology, TrafficError> {
    if nodes < 2 {
        return Err(TrafficError::Invalid("topology needs at least two nodes".into()));
    }
    let mut rng = stream_rng(seed, 0);
    let positions = (0..nodes)
        .map(|_| env_uniform_in_cell(&mut rng, radio.min_distance_m, radio.cell_radius_m))
        .collect();
    topology_from_positions(positions, config)
}

/// Builds the latent graph for fixed positions: weight `exp(-dist/scale)`
/// for pairs within the connect radius, each row divided by
/// `max(1, row sum)`.
pub fn topology_from_positions(
    positions: Vec<(f64, f64)>,
    config: &TopologyConfig,
) -> Result<LatentTopology, TrafficError> {
    if !(0.0..1.0).contains(&config.rho) {
        return Err(TrafficError::Invalid(format!("rho {} outside [0, 1)", config.rho)));
    }
    if !(config.scale_m >= 0.0) || !(config.connect_radius_m >= 0.0) {
        return Err(TrafficError::Invalid("negative length scale".into()));
    }
    let v = positions.len();
    let mut adjacency = vec![vec![0.0; v]; v];
    for i in 0..v {
        for j in 0..v {
            if i == j {
                continue;
            }
            let (xi, yi) = positions[i];
            let (xj, yj) = positions[j];
            let dist = (xi - xj).hypot(yi - yj);
            if dist <= config.connect_radius_m {
                adjacency[i][j] = if config.scale_m > 0.0 {
                    (-dist / config.scale_m).exp()
                } else if dist == 0.0 {
                    1.0
                } else {
                    0.0
                };
            }
        }
        let sum: f64 = adjacency[i].iter().sum();
        if sum > 1.0 {
            adjacency[i].iter_mut().for_each(|w| *w /= sum);
        }
    }
    Ok(LatentTopology {
        positions,
        adjacency,
        rho: config.rho,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct TraceParams {
    /// Mean load per device, Mb/s.
    pub base_load_mbps: f64,
    /// Diurnal swing per device, Mb/s.
    pub amplitude_mbps: f64,
    /// Diurnal period in steps.
    pub period: f64,
    pub phase: f64,
    /// Standard deviation of the per-step innovation, Mb/s.
    pub noise_std_mbps: f64,
    /// Log-normal spread of per-device mean load (0 = identical devices).
    pub load_spread: f64,
}

impl Default for TraceParams {
    fn default() -> Self {
        TraceParams {
            base_load_mbps: 0.1,
            amplitude_mbps: 0.03,
            period: 288.0,
            phase: 0.0,
            noise_std_mbps: 0.03,
            load_spread: 0.0,
        }
    }
}

/// Demand history for one slice, `channels x steps x nodes`, Mb/s.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandTensor {
    channels: usize,
    steps: usize,
    nodes: usize,
    values: Vec<f64>,
    pub node_ids: Vec<usize>,
    pub slice_id: usize,
}

impl DemandTensor {
    pub fn new(
        channels: usize,
        steps: usize,
        nodes: usize,
        values: Vec<f64>,
        slice_id: usize,
    ) -> Result<Self, TrafficError> {
        if values.len() != channels * steps * nodes {
            return Err(TrafficError::Invalid(format!(
                "{} values for shape {channels}x{steps}x{nodes}",
                values.len()
            )));
        }
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(TrafficError::Invalid("demand must be finite and non-negative".into()));
        }
        Ok(DemandTensor {
            channels,
            steps,
            nodes,
            values,
            node_ids: (0..nodes).collect(),
            slice_id,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn get(&self, z: usize, t: usize, v: usize) -> f64 {
        self.values[(z * self.steps + t) * self.nodes + v]
    }

    /// Per-node demand at step `t` (channel 0).
    pub fn at(&self, t: usize) -> &[f64] {
        &self.values[t * self.nodes..(t + 1) * self.nodes]
    }

    /// Sum over nodes at step `t` (channel 0).
    pub fn total_at(&self, t: usize) -> f64 {
        self.at(t).iter().sum()
    }

    /// Aggregate series over all steps (channel 0).
    pub fn totals(&self) -> Vec<f64> {
        (0..self.steps).map(|t| self.total_at(t)).collect()
    }

    /// Series of node `v` (channel 0).
    pub fn node_series(&self, v: usize) -> Vec<f64> {
        (0..self.steps).map(|t| self.get(0, t, v)).collect()
    }

    /// Copies steps `[start, start + len)` into a new tensor.
    pub fn slice_steps(&self, start: usize, len: usize) -> Result<DemandTensor, TrafficError> {
        if start + len > self.steps {
            return Err(TrafficError::OutOfRange {
                t: start + len,
                steps: self.steps,
            });
        }
        let mut values = Vec::with_capacity(self.channels * len * self.nodes);
        for z in 0..self.channels {
            let lo = (z * self.steps + start) * self.nodes;
            values.extend_from_slice(&self.values[lo..lo + len * self.nodes]);
        }
        Ok(DemandTensor {
            channels: self.channels,
            steps: len,
            nodes: self.nodes,
            values,
            node_ids: self.node_ids.clone(),
            slice_id: self.slice_id,
        })
    }

    /// Writes `t,node_id,demand` rows. Only single-channel tensors have a
    /// CSV form.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), TrafficError> {
        if self.channels != 1 {
            return Err(TrafficError::Invalid("CSV export needs a single channel".into()));
        }
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "node_id", "demand"])?;
        for t in 0..self.steps {
            for v in 0..self.nodes {
                out.serialize((t, self.node_ids[v], self.get(0, t, v)))?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, slice_id: usize) -> Result<DemandTensor, TrafficError> {
        #[derive(Deserialize)]
        struct Row {
            t: usize,
            node_id: usize,
            demand: f64,
        }
        let mut rows = Vec::new();
        for row in csv::Reader::from_reader(r).deserialize() {
            let row: Row = row?;
            rows.push(row);
        }
        let mut node_ids: Vec<usize> = rows.iter().map(|r| r.node_id).collect();
        node_ids.sort_unstable();
        node_ids.dedup();
        let steps = rows.iter().map(|r| r.t + 1).max().unwrap_or(0);
        let nodes = node_ids.len();
        if rows.len() != steps * nodes {
            return Err(TrafficError::Invalid(format!(
                "expected {} rows for {steps} steps x {nodes} nodes, got {}",
                steps * nodes,
                rows.len()
            )));
        }
        let mut values = vec![f64::NAN; steps * nodes];
        for r in rows {
            let v = node_ids.binary_search(&r.node_id).expect("id collected above");
            values[r.t * nodes + v] = r.demand;
        }
        let mut tensor = DemandTensor::new(1, steps, nodes, values, slice_id)?;
        tensor.node_ids = node_ids;
        Ok(tensor)
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), TrafficError> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load_csv(path: &Path, slice_id: usize) -> Result<DemandTensor, TrafficError> {
        Self::read_csv(std::fs::File::open(path)?, slice_id)
    }
}

/// Runs the diffusion recursion for `steps` steps.
pub fn gen_traces(
    topology: &LatentTopology,
    steps: usize,
    params: &TraceParams,
    slice_id: usize,
    seed: u64,
) -> Result<DemandTensor, TrafficError> {
    if steps == 0 {
        return Err(TrafficError::Invalid("trace needs at least one step".into()));
    }
    if !(params.period > 0.0) || !(params.noise_std_mbps >= 0.0) || !(params.base_load_mbps >= 0.0) {
        return Err(TrafficError::Invalid("period must be positive, loads and noise non-negative".into()));
    }
    let v = topology.nodes();
    let rho = topology.rho;
    let mut rng = stream_rng(seed, 1);
    let noise = Normal::new(0.0, params.noise_std_mbps).map_err(|e| TrafficError::Invalid(e.to_string()))?;
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    let base: Vec<f64> = (0..v)
        .map(|_| {
            if params.load_spread > 0.0 {
                let z: f64 = unit.sample(&mut rng);
                params.base_load_mbps * (params.load_spread * z - 0.5 * params.load_spread.powi(2)).exp()
            } else {
                params.base_load_mbps
            }
        })
        .collect();
    let diurnal = |t: usize, node: usize| {
        let angle = std::f64::consts::TAU * t as f64 / params.period + params.phase;
        base[node] * (1.0 + params.amplitude_mbps / params.base_load_mbps.max(f64::MIN_POSITIVE) * angle.sin())
    };

    // lazy completion: unused row mass stays on the node itself
    let mut transition = topology.adjacency.clone();
    for (i, row) in transition.iter_mut().enumerate() {
        let sum: f64 = row.iter().sum();
        row[i] += (1.0 - sum).max(0.0);
    }

    let mut values = Vec::with_capacity(steps * v);
    let mut x: Vec<f64> = (0..v).map(|n| diurnal(0, n).max(0.0)).collect();
    values.extend_from_slice(&x);
    let mut next = vec![0.0; v];
    for t in 1..steps {
        for i in 0..v {
            let diffused: f64 = transition[i].iter().zip(&x).map(|(a, b)| a * b).sum();
            let drive = (diurnal(t, i) + noise.sample(&mut rng)).max(0.0);
            next[i] = rho * diffused + (1.0 - rho) * drive;
        }
        std::mem::swap(&mut x, &mut next);
        values.extend_from_slice(&x);
    }
    DemandTensor::new(1, steps, v, values, slice_id)
}

/// RBs needed by the slice at step `t`: total demand converted at the
/// reference spectral efficiency, rounded up, at least one.
pub fn slice_demand_aggregate(
    tensor: &DemandTensor,
    t: usize,
    radio: &RadioConfig,
) -> Result<u32, TrafficError> {
    if t >= tensor.steps() {
        return Err(TrafficError::OutOfRange {
            t,
            steps: tensor.steps(),
        });
    }
    Ok(radio.demand_to_rbs(tensor.total_at(t)))
}
