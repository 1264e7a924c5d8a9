use super::{positive, RadioError};

/// Free-space style path loss in dB for distance `d_m` (meters) and
/// carrier `f_mhz` (MHz).
pub fn path_loss_db(d_m: f64, f_mhz: f64) -> Result<f64, RadioError> {
    positive("distance", d_m)?;
    positive("frequency", f_mhz)?;
    Ok(path_loss(d_m, f_mhz))
}

/// Unchecked form of [`path_loss_db`].
pub fn path_loss(d_m: f64, f_mhz: f64) -> f64 {
    20.0 * d_m.log10() + 20.0 * f_mhz.log10() - 27.55
}

/// Magnitude of the channel coefficient: path loss, linear shadowing factor
/// and fading power combined as `10^(-PL/20) * sqrt(shadow * fading)`.
pub fn channel_coefficient(path_loss_db: f64, shadowing_linear: f64, fading_power: f64) -> f64 {
    10f64.powf(-path_loss_db / 20.0) * (shadowing_linear * fading_power).sqrt()
}

/// Shannon rate in bits/s for bandwidth `w_hz`, transmit power `p_w`,
/// channel power gain `h2` and noise power `noise_w` over that bandwidth.
pub fn achievable_rate(w_hz: f64, p_w: f64, h2: f64, noise_w: f64) -> f64 {
    if w_hz <= 0.0 {
        return 0.0;
    }
    w_hz * (1.0 + p_w * h2 / noise_w).log2()
}

/// M/M/1 sojourn time `1 / (mu - lambda)` where the service rate is
/// `rate_bps / packet_bits` packets/s; a queue that cannot keep up reports
/// `cap` instead of diverging.
pub fn average_delay(rate_bps: f64, arrival_rate: f64, packet_bits: f64, cap: f64) -> f64 {
    let service = rate_bps / packet_bits;
    if service > arrival_rate {
        (1.0 / (service - arrival_rate)).min(cap)
    } else {
        cap
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}
