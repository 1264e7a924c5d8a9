use serde::{Deserialize, Serialize};

use super::env::DeviceState;
use super::{RadioError, SliceKind, SliceSpec};
use crate::nn::sigmoid;

/// Satisfaction of a rate-constrained device.
pub fn rate_utility(rate_bps: f64, r_min_bps: f64, steepness: f64) -> f64 {
    sigmoid(steepness * (rate_bps - r_min_bps))
}

/// Satisfaction of a delay-constrained device.
pub fn delay_utility(delay_s: f64, tau_max_s: f64, steepness: f64) -> f64 {
    sigmoid(steepness * (tau_max_s - delay_s))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceUtility {
    pub sum: f64,
    pub mean: f64,
}

/// Sum of per-device utilities for a slice, plus the per-device mean used by
/// the reward.
pub fn slice_utility(spec: &SliceSpec, devices: &[DeviceState]) -> Result<SliceUtility, RadioError> {
    if devices.is_empty() {
        return Err(RadioError::EmptySlice(spec.id));
    }
    let sum: f64 = devices
        .iter()
        .map(|d| match spec.kind {
            SliceKind::Rate { r_min_bps } => rate_utility(d.rate_bps, r_min_bps, spec.steepness),
            SliceKind::Delay { tau_max_s } => delay_utility(d.delay_s, tau_max_s, spec.steepness),
        })
        .sum();
    Ok(SliceUtility {
        sum,
        mean: sum / devices.len() as f64,
    })
}

/// Both forms of slice utilization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Utilization {
    /// `w / phi`, exceeds 1 when over-provisioned.
    pub raw: f64,
    /// `min(w, phi) / w`, the fraction of the grant actually needed.
    pub clipped: f64,
}

/// Utilization of `granted` RBs against `demanded` RBs. A slice with no
/// demand has zero utilization.
pub fn utilization(granted: u32, demanded: u32) -> Utilization {
    if demanded == 0 || granted == 0 {
        return Utilization { raw: 0.0, clipped: 0.0 };
    }
    let w = granted as f64;
    let phi = demanded as f64;
    Utilization {
        raw: w / phi,
        clipped: w.min(phi) / w,
    }
}

/// Weighted reward `lambda * omega + mu * mean_utility`.
pub fn reward(omega: f64, mean_utility: f64, lambda: f64, mu: f64) -> f64 {
    lambda * omega + mu * mean_utility
}
