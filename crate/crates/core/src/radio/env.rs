use rand::Rng;
use rand_distr::{Distribution, Exp1, Normal};
use serde::{Deserialize, Serialize};

use super::allocation::AllocationState;
use super::channel::{achievable_rate, average_delay, channel_coefficient, dbm_to_watts, path_loss};
use super::utility::{reward, slice_utility, utilization, SliceUtility, Utilization};
use super::{RadioConfig, RadioError, SliceSpec};
use crate::rng::stream_rng;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DeviceState {
    /// Position relative to the base station, meters.
    pub position: (f64, f64),
    pub distance_m: f64,
    /// Log-normal shadowing draw in dB, fixed for an episode.
    pub shadowing_db: f64,
    /// Rayleigh fading power `|g|^2`, redrawn every TTI.
    pub fading_power: f64,
    pub bandwidth_hz: f64,
    pub rate_bps: f64,
    pub delay_s: f64,
    /// Whether the device had traffic this TTI.
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceOutcome {
    pub grant: u32,
    /// RBs needed by the slice's demand this TTI.
    pub demand_rbs: u32,
    pub demand_mbps: f64,
    pub utilization: Utilization,
    pub utility: SliceUtility,
    pub reward: f64,
    pub active_devices: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub t: usize,
    pub slices: Vec<SliceOutcome>,
    pub devices: Vec<Vec<DeviceState>>,
}

/// One base station shared by several slices. Device placement and
/// shadowing are fixed at construction; fading is a pure function of
/// `(seed, t)`, so `step` has no hidden state.
#[derive(Debug, Clone)]
pub struct RadioEnv {
    config: RadioConfig,
    slices: Vec<SliceSpec>,
    devices: Vec<Vec<DeviceState>>,
    seed: u64,
}

const SHADOW_STREAM: u64 = 0;
const PLACEMENT_STREAM: u64 = 1;
const FADING_STREAM_BASE: u64 = 1 << 32;

impl RadioEnv {
    /// `positions[m][u]` places device `u` of slice `m`; when `None`, devices
    /// are dropped uniformly over the cell.
    pub fn new(
        config: RadioConfig,
        slices: Vec<SliceSpec>,
        positions: Option<Vec<Vec<(f64, f64)>>>,
        seed: u64,
    ) -> Result<Self, RadioError> {
        config.validate()?;
        if slices.is_empty() {
            return Err(RadioError::InvalidConfig("no slices".into()));
        }
        for s in &slices {
            s.validate()?;
        }
        if (config.total_rbs as usize) < slices.len() {
            return Err(RadioError::InvalidConfig(
                "fewer RBs than slices".into(),
            ));
        }
        let positions = match positions {
            Some(p) => {
                if p.len() != slices.len()
                    || p.iter().zip(&slices).any(|(ps, s)| ps.len() != s.device_count)
                {
                    return Err(RadioError::InvalidConfig(
                        "device positions do not match slice device counts".into(),
                    ));
                }
                p
            }
            None => {
                let mut rng = stream_rng(seed, PLACEMENT_STREAM);
                slices
                    .iter()
                    .map(|s| {
                        (0..s.device_count)
                            .map(|_| uniform_in_cell(&mut rng, config.min_distance_m, config.cell_radius_m))
                            .collect()
                    })
                    .collect()
            }
        };

        let shadow = Normal::new(0.0, config.shadowing_std_db.max(0.0))
            .map_err(|e| RadioError::InvalidConfig(e.to_string()))?;
        let mut rng = stream_rng(seed, SHADOW_STREAM);
        let devices = positions
            .into_iter()
            .map(|slice_pos| {
                slice_pos
                    .into_iter()
                    .map(|(x, y)| DeviceState {
                        position: (x, y),
                        distance_m: x.hypot(y).clamp(config.min_distance_m, config.cell_radius_m),
                        shadowing_db: shadow.sample(&mut rng),
                        ..DeviceState::default()
                    })
                    .collect()
            })
            .collect();
        Ok(RadioEnv {
            config,
            slices,
            devices,
            seed,
        })
    }

    pub fn config(&self) -> &RadioConfig {
        &self.config
    }

    pub fn slices(&self) -> &[SliceSpec] {
        &self.slices
    }

    pub fn devices(&self) -> &[Vec<DeviceState>] {
        &self.devices
    }

    /// Runs one TTI. `demand[m][u]` is device `u`'s offered load in Mb/s.
    /// Each slice's grant is split equally over its active devices.
    pub fn step(
        &self,
        t: usize,
        allocation: &AllocationState,
        demand: &[Vec<f64>],
    ) -> Result<StepOutcome, RadioError> {
        if allocation.slices() != self.slices.len() {
            return Err(RadioError::InvalidConfig(
                "allocation does not cover every slice".into(),
            ));
        }
        let cfg = &self.config;
        let p_total = dbm_to_watts(cfg.tx_power_dbm);
        let n0 = cfg.noise_density_w_hz();
        let pool_hz = cfg.pool_bandwidth_hz();
        let mut rng = stream_rng(self.seed, FADING_STREAM_BASE + t as u64);

        let mut slices = Vec::with_capacity(self.slices.len());
        let mut all_devices = Vec::with_capacity(self.slices.len());
        for (m, spec) in self.slices.iter().enumerate() {
            let d = demand
                .get(m)
                .filter(|d| d.len() == spec.device_count)
                .ok_or(RadioError::MissingDemand { t, slice: m })?;
            let demand_mbps: f64 = d.iter().sum();
            let demand_rbs = if demand_mbps > 0.0 {
                cfg.demand_to_rbs(demand_mbps)
            } else {
                0
            };
            let any_active = d.iter().any(|&x| x > 0.0);
            let active_count = if any_active {
                d.iter().filter(|&&x| x > 0.0).count()
            } else {
                spec.device_count
            };
            let grant = allocation.grants()[m];
            let share_hz = grant as f64 * cfg.rb_bandwidth_hz / active_count as f64;

            let mut devices = self.devices[m].clone();
            let mut served = Vec::with_capacity(active_count);
            for (u, dev) in devices.iter_mut().enumerate() {
                dev.fading_power = Exp1.sample(&mut rng);
                dev.active = !any_active || d[u] > 0.0;
                if !dev.active {
                    dev.bandwidth_hz = 0.0;
                    dev.rate_bps = 0.0;
                    dev.delay_s = 0.0;
                    continue;
                }
                let h = channel_coefficient(
                    path_loss(dev.distance_m, cfg.carrier_mhz),
                    10f64.powf(dev.shadowing_db / 10.0),
                    dev.fading_power,
                );
                // transmit power is spread evenly over the pool
                let p = p_total * share_hz / pool_hz;
                dev.bandwidth_hz = share_hz;
                dev.rate_bps = achievable_rate(share_hz, p, h * h, n0 * share_hz);
                dev.delay_s = average_delay(dev.rate_bps, spec.arrival_rate, spec.packet_bits, cfg.delay_cap_s);
                served.push(dev.clone());
            }
            let utility = slice_utility(spec, &served)?;
            let util = utilization(grant, demand_rbs);
            slices.push(SliceOutcome {
                grant,
                demand_rbs,
                demand_mbps,
                utilization: util,
                utility,
                reward: reward(util.clipped, utility.mean, cfg.utilization_weight, cfg.utility_weight),
                active_devices: active_count,
            });
            all_devices.push(devices);
        }
        Ok(StepOutcome {
            t,
            slices,
            devices: all_devices,
        })
    }
}

impl RadioConfig {
    /// RBs needed to carry `mbps` at the reference spectral efficiency,
    /// rounded up, never below one.
    pub fn demand_to_rbs(&self, mbps: f64) -> u32 {
        let rbs = (mbps / self.rb_reference_mbps() - 1e-9).ceil();
        rbs.max(1.0) as u32
    }
}

pub(crate) fn uniform_in_cell<R: Rng + ?Sized>(rng: &mut R, r_min: f64, r_max: f64) -> (f64, f64) {
    let u: f64 = rng.gen();
    let r = (r_min * r_min + u * (r_max * r_max - r_min * r_min)).sqrt();
    let theta = rng.gen_range(0.0..std::f64::consts::TAU);
    (r * theta.cos(), r * theta.sin())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radio::SliceKind;

    fn slice(id: usize, devices: usize) -> SliceSpec {
        SliceSpec {
            id,
            kind: SliceKind::Rate { r_min_bps: 1e5 },
            steepness: 1e-4,
            device_count: devices,
            arrival_rate: 10.0,
            packet_bits: 1000.0,
        }
    }

    fn env(slices: Vec<SliceSpec>) -> RadioEnv {
        RadioEnv::new(RadioConfig::default(), slices, None, 42).unwrap()
    }

    #[test]
    fn zero_demand_gives_utility_only_reward() {
        let e = env(vec![slice(0, 3), slice(1, 2)]);
        let alloc = AllocationState::equal_split(2, 50, 50).unwrap();
        let out = e.step(0, &alloc, &[vec![0.0; 3], vec![0.0; 2]]).unwrap();
        for s in &out.slices {
            assert_eq!(s.demand_rbs, 0);
            assert_eq!(s.utilization.clipped, 0.0);
            assert_eq!(s.reward, 0.5 * s.utility.mean);
        }
    }

    #[test]
    fn full_pool_generous_demand_is_fully_utilized() {
        let e = env(vec![slice(0, 4)]);
        let alloc = AllocationState::new(vec![50], vec![50], 50).unwrap();
        let out = e.step(3, &alloc, &[vec![100.0; 4]]).unwrap();
        assert_eq!(out.slices[0].utilization.clipped, 1.0);
    }

    #[test]
    fn same_seed_same_outcome() {
        let a = env(vec![slice(0, 5)]);
        let b = env(vec![slice(0, 5)]);
        let alloc = AllocationState::new(vec![20], vec![50], 50).unwrap();
        let demand = vec![vec![0.5, 0.0, 1.0, 2.0, 0.1]];
        assert_eq!(a.step(7, &alloc, &demand).unwrap(), b.step(7, &alloc, &demand).unwrap());
        assert_ne!(
            a.step(7, &alloc, &demand).unwrap().devices,
            a.step(8, &alloc, &demand).unwrap().devices
        );
    }

    #[test]
    fn missing_demand_is_error() {
        let e = env(vec![slice(0, 2), slice(1, 2)]);
        let alloc = AllocationState::equal_split(2, 50, 50).unwrap();
        assert_eq!(
            e.step(4, &alloc, &[vec![1.0, 1.0]]).unwrap_err(),
            RadioError::MissingDemand { t: 4, slice: 1 }
        );
        assert!(e.step(4, &alloc, &[vec![1.0, 1.0], vec![1.0]]).is_err());
    }

    #[test]
    fn inactive_devices_get_no_bandwidth() {
        let e = env(vec![slice(0, 3)]);
        let alloc = AllocationState::new(vec![9], vec![50], 50).unwrap();
        let out = e.step(0, &alloc, &[vec![1.0, 0.0, 1.0]]).unwrap();
        let devs = &out.devices[0];
        assert_eq!(devs[1].bandwidth_hz, 0.0);
        assert!((devs[0].bandwidth_hz - 9.0 * 180e3 / 2.0).abs() < 1e-6);
        assert_eq!(out.slices[0].active_devices, 2);
    }

    #[test]
    fn devices_inside_cell() {
        let e = env(vec![slice(0, 200)]);
        for d in &e.devices()[0] {
            assert!(d.distance_m > 0.0 && d.distance_m <= 500.0);
        }
    }

    #[test]
    fn demand_to_rbs_rounding() {
        let cfg = RadioConfig::default();
        assert_eq!(cfg.demand_to_rbs(0.0), 1);
        assert_eq!(cfg.demand_to_rbs(7.2), 10);
        assert_eq!(cfg.demand_to_rbs(7.272), 11);
    }
}
