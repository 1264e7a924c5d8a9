use serde::{Deserialize, Serialize};

use super::{NnError, Result};

/// Elementwise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "function", rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    Tanh,
    LeakyRelu { slope: f64 },
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::LeakyRelu { slope } => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    /// Kinks (ReLU family at 0) take the left-hand subgradient.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::LeakyRelu { slope } => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One stage of a sequential net.
///
/// `Conv1d` works on channel-major flattened input (`x[c * length + i]`)
/// with zero "same" padding, so the sequence length is preserved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerSpec {
    Dense {
        input: usize,
        output: usize,
    },
    Conv1d {
        length: usize,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    },
    Activation {
        dim: usize,
        #[serde(flatten)]
        activation: Activation,
    },
    Softmax {
        dim: usize,
    },
}

impl LayerSpec {
    pub fn dense(input: usize, output: usize) -> Self {
        LayerSpec::Dense { input, output }
    }

    pub fn conv1d(length: usize, in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        LayerSpec::Conv1d {
            length,
            in_channels,
            out_channels,
            kernel,
        }
    }

    pub fn relu(dim: usize) -> Self {
        LayerSpec::Activation {
            dim,
            activation: Activation::Relu,
        }
    }

    pub fn tanh(dim: usize) -> Self {
        LayerSpec::Activation {
            dim,
            activation: Activation::Tanh,
        }
    }

    pub fn sigmoid(dim: usize) -> Self {
        LayerSpec::Activation {
            dim,
            activation: Activation::Sigmoid,
        }
    }

    pub fn leaky_relu(dim: usize, slope: f64) -> Self {
        LayerSpec::Activation {
            dim,
            activation: Activation::LeakyRelu { slope },
        }
    }

    pub fn softmax(dim: usize) -> Self {
        LayerSpec::Softmax { dim }
    }

    pub fn in_dim(&self) -> usize {
        match *self {
            LayerSpec::Dense { input, .. } => input,
            LayerSpec::Conv1d {
                length,
                in_channels,
                ..
            } => length * in_channels,
            LayerSpec::Activation { dim, .. } | LayerSpec::Softmax { dim } => dim,
        }
    }

    pub fn out_dim(&self) -> usize {
        match *self {
            LayerSpec::Dense { output, .. } => output,
            LayerSpec::Conv1d {
                length,
                out_channels,
                ..
            } => length * out_channels,
            LayerSpec::Activation { dim, .. } | LayerSpec::Softmax { dim } => dim,
        }
    }

    /// Shapes of the trainable tensors, weights first then bias.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Dense { input, output } => vec![vec![output, input], vec![output]],
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![vec![out_channels, in_channels, kernel], vec![out_channels]],
            LayerSpec::Activation { .. } | LayerSpec::Softmax { .. } => Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|s| s.iter().product::<usize>())
            .sum()
    }

    pub(crate) fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Dense { input, .. } => input,
            LayerSpec::Conv1d {
                in_channels,
                kernel,
                ..
            } => in_channels * kernel,
            _ => 0,
        }
    }

    pub(crate) fn validate(&self, index: usize) -> Result<()> {
        let invalid = |reason: &str| NnError::InvalidSpec {
            layer: index,
            reason: reason.to_string(),
        };
        match *self {
            LayerSpec::Dense { input, output } => {
                if input == 0 || output == 0 {
                    return Err(invalid("dense dimensions must be positive"));
                }
            }
            LayerSpec::Conv1d {
                length,
                in_channels,
                out_channels,
                kernel,
            } => {
                if length == 0 || in_channels == 0 || out_channels == 0 || kernel == 0 {
                    return Err(invalid("conv1d dimensions must be positive"));
                }
                if kernel % 2 == 0 {
                    return Err(invalid("conv1d kernel width must be odd"));
                }
                if kernel > length {
                    return Err(invalid("conv1d kernel wider than the sequence"));
                }
            }
            LayerSpec::Activation { dim, activation } => {
                if dim == 0 {
                    return Err(invalid("activation dimension must be positive"));
                }
                if let Activation::LeakyRelu { slope } = activation {
                    if !slope.is_finite() {
                        return Err(invalid("leaky-relu slope must be finite"));
                    }
                }
            }
            LayerSpec::Softmax { dim } => {
                if dim == 0 {
                    return Err(invalid("softmax dimension must be positive"));
                }
            }
        }
        Ok(())
    }

    /// Forward pass of a single layer. `params` holds exactly
    /// `param_count()` values in layout order.
    pub(crate) fn forward(&self, params: &[f64], x: &[f64], y: &mut Vec<f64>) {
        y.clear();
        match *self {
            LayerSpec::Dense { input, output } => {
                let (w, b) = params.split_at(input * output);
                y.extend((0..output).map(|o| {
                    let row = &w[o * input..(o + 1) * input];
                    b[o] + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>()
                }));
            }
            LayerSpec::Conv1d {
                length,
                in_channels,
                out_channels,
                kernel,
            } => {
                let (w, b) = params.split_at(out_channels * in_channels * kernel);
                let pad = kernel / 2;
                y.resize(out_channels * length, 0.0);
                for o in 0..out_channels {
                    for i in 0..length {
                        let mut acc = b[o];
                        for c in 0..in_channels {
                            let wk = &w[(o * in_channels + c) * kernel..][..kernel];
                            let xc = &x[c * length..(c + 1) * length];
                            for (k, wv) in wk.iter().enumerate() {
                                let pos = i + k;
                                if pos >= pad && pos - pad < length {
                                    acc += wv * xc[pos - pad];
                                }
                            }
                        }
                        y[o * length + i] = acc;
                    }
                }
            }
            LayerSpec::Activation { activation, .. } => {
                y.extend(x.iter().map(|&v| activation.apply(v)));
            }
            LayerSpec::Softmax { .. } => {
                let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                y.extend(x.iter().map(|&v| (v - max).exp()));
                let sum: f64 = y.iter().sum();
                y.iter_mut().for_each(|v| *v /= sum);
            }
        }
    }

    /// Backward pass of a single layer: accumulates parameter gradients into
    /// `grad_params` and returns the gradient with respect to the input.
    pub(crate) fn backward(
        &self,
        params: &[f64],
        x: &[f64],
        y: &[f64],
        upstream: &[f64],
        grad_params: &mut [f64],
    ) -> Vec<f64> {
        match *self {
            LayerSpec::Dense { input, output } => {
                let (w, _) = params.split_at(input * output);
                let (gw, gb) = grad_params.split_at_mut(input * output);
                let mut gx = vec![0.0; input];
                for o in 0..output {
                    let g = upstream[o];
                    if g == 0.0 {
                        continue;
                    }
                    gb[o] += g;
                    let row = &w[o * input..(o + 1) * input];
                    let grow = &mut gw[o * input..(o + 1) * input];
                    for i in 0..input {
                        grow[i] += g * x[i];
                        gx[i] += g * row[i];
                    }
                }
                gx
            }
            LayerSpec::Conv1d {
                length,
                in_channels,
                out_channels,
                kernel,
            } => {
                let nw = out_channels * in_channels * kernel;
                let w = &params[..nw];
                let (gw, gb) = grad_params.split_at_mut(nw);
                let pad = kernel / 2;
                let mut gx = vec![0.0; in_channels * length];
                for o in 0..out_channels {
                    for i in 0..length {
                        let g = upstream[o * length + i];
                        if g == 0.0 {
                            continue;
                        }
                        gb[o] += g;
                        for c in 0..in_channels {
                            let base = (o * in_channels + c) * kernel;
                            for k in 0..kernel {
                                let pos = i + k;
                                if pos >= pad && pos - pad < length {
                                    let xi = c * length + pos - pad;
                                    gw[base + k] += g * x[xi];
                                    gx[xi] += g * w[base + k];
                                }
                            }
                        }
                    }
                }
                gx
            }
            LayerSpec::Activation { activation, .. } => x
                .iter()
                .zip(y)
                .zip(upstream)
                .map(|((&xi, &yi), &g)| g * activation.derivative(xi, yi))
                .collect(),
            LayerSpec::Softmax { .. } => {
                let dot: f64 = y.iter().zip(upstream).map(|(a, b)| a * b).sum();
                y.iter()
                    .zip(upstream)
                    .map(|(&yi, &g)| yi * (g - dot))
                    .collect()
            }
        }
    }
}
