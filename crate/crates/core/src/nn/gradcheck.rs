use super::net::Net;
use super::params::ParamVector;
use super::Result;

/// Central finite-difference step.
const STEP: f64 = 1e-5;
/// Denominator floor for relative errors, so that gradients that are both
/// essentially zero do not register as failures.
const FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Relative error per parameter, in layout order.
    pub errors: Vec<f64>,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Weights of the scalar probe loss `L = sum_i c_i * y_i`. Non-uniform so
/// that softmax outputs still produce a non-trivial gradient.
fn probe_weights(n: usize) -> Vec<f64> {
    (0..n).map(|i| (i + 1) as f64 / n as f64 - 0.3).collect()
}

fn probe_loss(net: &Net, x: &[f64], c: &[f64]) -> Result<f64> {
    Ok(net.infer(x)?.iter().zip(c).map(|(y, w)| y * w).sum())
}

/// Compares the net's backward pass with central finite differences.
pub fn grad_check(net: &Net, x: &[f64], tolerance: f64) -> Result<GradCheckReport> {
    grad_check_with(net, x, tolerance, |net, x, upstream| {
        let tape = net.forward_tape(x)?;
        Ok(net.backward_tape(&tape, upstream)?.params)
    })
}

/// Same as [`grad_check`] with a caller-supplied analytic gradient, which
/// receives the net, the input, and the upstream gradient of the probe loss.
pub fn grad_check_with<F>(net: &Net, x: &[f64], tolerance: f64, analytic: F) -> Result<GradCheckReport>
where
    F: Fn(&Net, &[f64], &[f64]) -> Result<ParamVector>,
{
    let c = probe_weights(net.out_dim());
    let grad = analytic(net, x, &c)?;
    net.params().ensure_same_layout(&grad)?;

    let mut probe = net.clone();
    let mut errors = Vec::with_capacity(grad.len());
    for i in 0..grad.len() {
        let orig = probe.params().values()[i];
        probe.params_mut().values_mut()[i] = orig + STEP;
        let plus = probe_loss(&probe, x, &c)?;
        probe.params_mut().values_mut()[i] = orig - STEP;
        let minus = probe_loss(&probe, x, &c)?;
        probe.params_mut().values_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * STEP);
        errors.push(relative_error(grad.values()[i], numeric));
    }
    let max_error = errors.iter().cloned().fold(0.0, f64::max);
    Ok(GradCheckReport {
        passed: max_error < tolerance,
        errors,
        max_error,
        tolerance,
    })
}

/// Relative error with a small denominator floor.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}
