//! Single-cell downlink OFDM model: channel, rate and delay, QoS utilities,
//! utilization, reward, and the shared resource-block pool.

mod allocation;
mod channel;
mod env;
mod utility;

pub use allocation::{action_to_delta, AllocationState};
pub use channel::{achievable_rate, average_delay, channel_coefficient, dbm_to_watts, path_loss, path_loss_db};
pub(crate) use env::uniform_in_cell as env_uniform_in_cell;
pub use env::{DeviceState, RadioEnv, SliceOutcome, StepOutcome};
pub use utility::{delay_utility, rate_utility, reward, slice_utility, utilization, SliceUtility, Utilization};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RadioError {
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("slice {0} has no devices")]
    EmptySlice(usize),
    #[error("no demand supplied for slice {slice} at step {t}")]
    MissingDemand { t: usize, slice: usize },
    #[error("invalid radio configuration: {0}")]
    InvalidConfig(String),
}

/// QoS constraint carried by a slice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SliceKind {
    /// Minimum per-device rate in bits/s.
    Rate { r_min_bps: f64 },
    /// Maximum tolerated per-device delay in seconds.
    Delay { tau_max_s: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SliceSpec {
    pub id: usize,
    pub kind: SliceKind,
    /// Sigmoid steepness of the satisfaction curve, in the inverse unit of
    /// the constrained quantity.
    pub steepness: f64,
    pub device_count: usize,
    /// Packet arrival rate per device, packets/s.
    pub arrival_rate: f64,
    pub packet_bits: f64,
}

impl SliceSpec {
    pub fn validate(&self) -> Result<(), RadioError> {
        positive("steepness", self.steepness)?;
        positive("arrival_rate", self.arrival_rate)?;
        positive("packet_bits", self.packet_bits)?;
        if self.device_count == 0 {
            return Err(RadioError::EmptySlice(self.id));
        }
        match self.kind {
            SliceKind::Rate { r_min_bps } => positive("r_min_bps", r_min_bps),
            SliceKind::Delay { tau_max_s } => positive("tau_max_s", tau_max_s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct RadioConfig {
    pub carrier_mhz: f64,
    pub cell_radius_m: f64,
    /// Devices are never placed closer than this to the base station.
    pub min_distance_m: f64,
    pub total_rbs: u32,
    pub rb_bandwidth_hz: f64,
    pub tx_power_dbm: f64,
    pub noise_density_dbm_hz: f64,
    pub shadowing_std_db: f64,
    /// Reward weight on utilization.
    pub utilization_weight: f64,
    /// Reward weight on mean QoS utility.
    pub utility_weight: f64,
    /// Delay reported for a saturated queue.
    pub delay_cap_s: f64,
    /// Per-slice RB cap; defaults to the whole pool.
    pub rb_cap: Option<u32>,
    /// Spectral efficiency (b/s/Hz) used to convert demand to RBs.
    pub reference_spectral_efficiency: f64,
    /// Recorded for completeness; a single cell has no interference.
    pub interference_threshold_dbm: f64,
}

impl Default for RadioConfig {
    fn default() -> Self {
        RadioConfig {
            carrier_mhz: 2000.0,
            cell_radius_m: 500.0,
            min_distance_m: 10.0,
            total_rbs: 50,
            rb_bandwidth_hz: 180e3,
            tx_power_dbm: 30.0,
            noise_density_dbm_hz: -174.0,
            shadowing_std_db: 8.0,
            utilization_weight: 0.5,
            utility_weight: 0.5,
            delay_cap_s: 10.0,
            rb_cap: None,
            reference_spectral_efficiency: 4.0,
            interference_threshold_dbm: -101.2,
        }
    }
}

impl RadioConfig {
    pub fn validate(&self) -> Result<(), RadioError> {
        positive("carrier_mhz", self.carrier_mhz)?;
        positive("cell_radius_m", self.cell_radius_m)?;
        positive("min_distance_m", self.min_distance_m)?;
        positive("rb_bandwidth_hz", self.rb_bandwidth_hz)?;
        positive("delay_cap_s", self.delay_cap_s)?;
        positive("reference_spectral_efficiency", self.reference_spectral_efficiency)?;
        if self.total_rbs == 0 {
            return Err(RadioError::InvalidConfig("total_rbs must be positive".into()));
        }
        if self.min_distance_m >= self.cell_radius_m {
            return Err(RadioError::InvalidConfig(
                "min_distance_m must be below cell_radius_m".into(),
            ));
        }
        if !(self.shadowing_std_db >= 0.0) {
            return Err(RadioError::InvalidConfig("shadowing_std_db must be >= 0".into()));
        }
        if !(self.utilization_weight >= 0.0 && self.utility_weight >= 0.0) {
            return Err(RadioError::InvalidConfig("reward weights must be >= 0".into()));
        }
        if let Some(cap) = self.rb_cap {
            if cap == 0 {
                return Err(RadioError::InvalidConfig("rb_cap must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn slice_cap(&self) -> u32 {
        self.rb_cap.unwrap_or(self.total_rbs).min(self.total_rbs)
    }

    pub fn pool_bandwidth_hz(&self) -> f64 {
        self.total_rbs as f64 * self.rb_bandwidth_hz
    }

    /// Capacity of one RB at the reference spectral efficiency, Mb/s.
    pub fn rb_reference_mbps(&self) -> f64 {
        self.rb_bandwidth_hz * self.reference_spectral_efficiency / 1e6
    }

    /// Capacity of the whole pool at the reference spectral efficiency, Mb/s.
    pub fn pool_reference_mbps(&self) -> f64 {
        self.total_rbs as f64 * self.rb_reference_mbps()
    }

    pub fn noise_density_w_hz(&self) -> f64 {
        dbm_to_watts(self.noise_density_dbm_hz)
    }
}

fn positive(name: &'static str, value: f64) -> Result<(), RadioError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(RadioError::NonPositive { name, value })
    }
}
