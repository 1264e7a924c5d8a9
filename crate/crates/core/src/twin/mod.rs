//! Per-slice demand forecaster: a temporal conv extractor per node, an
//! adaptively learned graph, one graph-attention layer, and a prediction
//! head on the sum-pooled node outputs. Persistence and ARIMA baselines
//! live alongside for comparison.

mod baseline;
mod benchmark;
mod graph;

pub use baseline::{forecast_arima, forecast_persistence, rmse, rmse_of, ArimaForecast, ArimaModel, ForecastRecord};
pub use benchmark::{compare_forecasters, ForecastComparison, ARIMA_ID, PERSISTENCE_ID, TWIN_ID};
pub use graph::{gat_attention, gat_output, learn_graph, GraphSnapshot};

use rand::seq::SliceRandom;
use rand::Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Mat;
use crate::nn::{sigmoid, LayerSpec, LayoutEntry, Net, NnError, Optimizer, OptimizerConfig, ParamVector, Tape};
use crate::traffic::DemandTensor;
use graph::{attention_parts, graph_factors, in_neighbourhood, GraphFactors};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TwinError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("invalid twin configuration: {0}")]
    InvalidConfig(String),
    #[error("window has {got} steps, need {needed}")]
    ShortWindow { needed: usize, got: usize },
    #[error("history has {got} values, need at least {needed}")]
    ShortHistory { needed: usize, got: usize },
    #[error("empty history")]
    EmptyHistory,
    #[error("expected {expected} nodes, got {got}")]
    NodeMismatch { expected: usize, got: usize },
    #[error("non-finite value: {0}")]
    NonFinite(String),
}

/// How the head turns pooled node outputs into a forecast.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum HeadMode {
    /// Affine map of the sum-pooled node outputs to the aggregate demand,
    /// clipped at zero when reported.
    #[default]
    Linear,
    /// Softmax over per-node scores, rescaled by the window's mean total
    /// demand. Node shares are trained against next-step node demand.
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct TwinConfig {
    /// Input window length in steps.
    pub window: usize,
    pub kernel: usize,
    pub conv_channels: usize,
    /// Per-node feature width after temporal pooling.
    pub features: usize,
    /// Width of the graph-learning projections.
    pub graph_dim: usize,
    /// Width of the attention projection.
    pub attention_dim: usize,
    /// Width of the attention output per node.
    pub output_dim: usize,
    pub beta: f64,
    pub leaky_slope: f64,
    pub head: HeadMode,
    /// Period in steps of the time-of-day phase fed to the extractor as two
    /// extra channels (sine and cosine); `None` feeds demand only.
    pub calendar_period: Option<f64>,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    /// Passes over the warm-up history before online use.
    pub pretrain_epochs: usize,
    /// Decay of the exponential moving average of the weights kept during
    /// pretraining; the average is what gets validated and kept. Zero
    /// disables averaging.
    pub weight_averaging: f64,
    /// L2 penalty on every weight except the node embeddings.
    pub weight_decay: f64,
    /// Chronological tail of the pretraining windows held out to pick the
    /// best epoch.
    pub validation_fraction: f64,
    /// Learning-rate multiplier reached at the last pretraining epoch;
    /// the rate decays geometrically towards it.
    pub final_lr_fraction: f64,
}

impl Default for TwinConfig {
    fn default() -> Self {
        TwinConfig {
            window: 12,
            kernel: 3,
            conv_channels: 8,
            features: 16,
            graph_dim: 8,
            attention_dim: 8,
            output_dim: 16,
            beta: 1.0,
            leaky_slope: 0.2,
            head: HeadMode::Linear,
            calendar_period: Some(288.0),
            optimizer: OptimizerConfig::adam(3e-3),
            batch_size: 16,
            pretrain_epochs: 40,
            weight_averaging: 0.99,
            weight_decay: 0.0,
            validation_fraction: 0.15,
            final_lr_fraction: 0.02,
        }
    }
}

impl TwinConfig {
    pub fn validate(&self) -> Result<(), TwinError> {
        let bad = |m: &str| Err(TwinError::InvalidConfig(m.into()));
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return bad("kernel must be odd");
        }
        if self.window < self.kernel {
            return bad("window must be at least the kernel width");
        }
        if [self.conv_channels, self.features, self.graph_dim, self.attention_dim, self.output_dim]
            .contains(&0)
        {
            return bad("layer widths must be positive");
        }
        if let Some(p) = self.calendar_period {
            if !(p > 0.0 && p.is_finite()) {
                return bad("calendar_period must be positive");
            }
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad("beta must be positive");
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return bad("leaky_slope must be in [0, 1)");
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return bad("final_lr_fraction must be in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.weight_averaging) {
            return bad("weight_averaging must be in [0, 1)");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be non-negative");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must be in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.optimizer.learning_rate >= 0.0 && self.optimizer.learning_rate.is_finite()) {
            return bad("learning rate must be finite and non-negative");
        }
        Ok(())
    }
}

/// Affine map between raw demand (Mb/s) and the scale the twin trains on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: f64,
    pub std: f64,
}

impl Default for Normalizer {
    fn default() -> Self {
        Normalizer { mean: 0.0, std: 1.0 }
    }
}

impl Normalizer {
    pub fn fit(values: &[f64]) -> Self {
        if values.is_empty() {
            return Normalizer::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        Normalizer { mean, std }
    }

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }
}

/// Model input: `nodes[v]` holds `channels x window` raw demand values,
/// channel-major, for the steps ending at `t_end`.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub t_end: usize,
    pub nodes: Vec<Vec<f64>>,
}

impl Window {
    /// Window of `len` steps ending at `t_end` (inclusive).
    pub fn from_tensor(tensor: &DemandTensor, t_end: usize, len: usize) -> Result<Self, TwinError> {
        if t_end + 1 < len || t_end >= tensor.steps() {
            return Err(TwinError::ShortWindow {
                needed: len,
                got: (t_end + 1).min(tensor.steps()),
            });
        }
        let start = t_end + 1 - len;
        let nodes = (0..tensor.nodes())
            .map(|v| {
                (0..tensor.channels())
                    .flat_map(|z| (start..=t_end).map(move |t| (z, t)))
                    .map(|(z, t)| tensor.get(z, t, v))
                    .collect()
            })
            .collect();
        Ok(Window { t_end, nodes })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    /// Forecast aggregate demand over all nodes, Mb/s, non-negative.
    pub aggregate: f64,
    /// Per-node forecasts (softmax head only).
    pub nodes: Option<Vec<f64>>,
}

/// Every intermediate of one forward pass.
struct Cache {
    tapes: Vec<Tape>,
    b: Mat,
    h: Mat,
    factors: GraphFactors,
    x: Mat,
    p: Mat,
    pre: Mat,
    alpha: Mat,
    qf: Mat,
    out: Mat,
    head_tapes: Vec<Tape>,
    /// Linear: `[normalized aggregate]`; softmax: node shares.
    raw: Vec<f64>,
    /// Mean window total, raw units (softmax rescale).
    window_total: f64,
}

const E: usize = 0;
const THETA1: usize = 1;
const THETA2: usize = 2;
const WZ: usize = 3;
const Q: usize = 4;
const WS: usize = 5;

#[derive(Debug, Clone)]
pub struct TwinModel {
    config: TwinConfig,
    nodes: usize,
    channels: usize,
    extractor: Net,
    /// Node embeddings, graph projections and attention weights.
    graph: ParamVector,
    offsets: [usize; 7],
    head: Net,
    optimizer: Optimizer,
    norm: Normalizer,
    steps_trained: usize,
}

impl TwinModel {
    pub fn new<R: Rng + ?Sized>(config: TwinConfig, nodes: usize, channels: usize, rng: &mut R) -> Result<Self, TwinError> {
        config.validate()?;
        if nodes == 0 || channels == 0 {
            return Err(TwinError::InvalidConfig("need at least one node and channel".into()));
        }
        let (l, c, f) = (config.window, config.conv_channels, config.features);
        let calendar = if config.calendar_period.is_some() { 2 } else { 0 };
        let extractor = Net::new(
            vec![
                LayerSpec::conv1d(l, channels + calendar, c, config.kernel),
                LayerSpec::tanh(l * c),
                // learned weighting over time positions and channels
                LayerSpec::dense(l * c, f),
            ],
            rng,
        )?;
        let head = Net::new(vec![LayerSpec::dense(config.output_dim, 1)], rng)?;
        let (k, d, h) = (config.graph_dim, config.attention_dim, config.output_dim);
        let shapes = [vec![nodes, f], vec![f, k], vec![f, k], vec![f, d], vec![2 * d], vec![f, h]];
        let layout: Vec<LayoutEntry> = shapes
            .iter()
            .enumerate()
            .map(|(layer, shape)| LayoutEntry {
                layer,
                shape: shape.clone(),
            })
            .collect();
        let mut offsets = [0; 7];
        for (i, e) in layout.iter().enumerate() {
            offsets[i + 1] = offsets[i] + e.len();
        }
        let mut graph = ParamVector::zeros(layout);
        {
            let vals = graph.values_mut();
            for x in &mut vals[offsets[E]..offsets[E + 1]] {
                *x = 1.0 + rng.gen_range(-0.1..0.1);
            }
            let fan_f = 1.0 / (f as f64).sqrt();
            for x in &mut vals[offsets[THETA1]..offsets[Q]] {
                *x = rng.gen_range(-fan_f..fan_f);
            }
            let fan_q = 1.0 / (2.0 * d as f64).sqrt();
            for x in &mut vals[offsets[Q]..offsets[Q + 1]] {
                *x = rng.gen_range(-fan_q..fan_q);
            }
            for x in &mut vals[offsets[WS]..offsets[WS + 1]] {
                *x = rng.gen_range(-fan_f..fan_f);
            }
        }
        let optimizer = Optimizer::new(config.optimizer.clone());
        Ok(TwinModel {
            config,
            nodes,
            channels,
            extractor,
            graph,
            offsets,
            head,
            optimizer,
            norm: Normalizer::default(),
            steps_trained: 0,
        })
    }

    pub fn config(&self) -> &TwinConfig {
        &self.config
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn normalizer(&self) -> Normalizer {
        self.norm
    }

    pub fn set_normalizer(&mut self, norm: Normalizer) {
        self.norm = norm;
    }

    pub fn steps_trained(&self) -> usize {
        self.steps_trained
    }

    /// All trainable parameters: extractor, graph block, head.
    pub fn params(&self) -> ParamVector {
        ParamVector::concat(&[self.extractor.params(), &self.graph, self.head.params()])
    }

    pub fn set_params(&mut self, params: &ParamVector) -> Result<(), TwinError> {
        let mut ext = self.extractor.params().clone();
        let mut graph = self.graph.clone();
        let mut head = self.head.params().clone();
        params.split_into(&mut [&mut ext, &mut graph, &mut head])?;
        self.extractor.set_params(ext)?;
        self.graph = graph;
        self.head.set_params(head)?;
        Ok(())
    }

    fn block(&self, idx: usize, rows: usize, cols: usize) -> Mat {
        Mat::from_vec(rows, cols, self.graph.values()[self.offsets[idx]..self.offsets[idx + 1]].to_vec())
    }

    fn dims(&self) -> (usize, usize, usize, usize, usize) {
        let c = &self.config;
        (self.nodes, c.features, c.graph_dim, c.attention_dim, c.output_dim)
    }

    /// Per-node features `B` (`V x F`) for a window of raw inputs.
    pub fn extract_features(&self, window: &Window) -> Result<Mat, TwinError> {
        let tapes = self.extractor_tapes(window)?;
        Ok(self.features_from(&tapes))
    }

    fn features_from(&self, tapes: &[Tape]) -> Mat {
        let f = self.config.features;
        let mut b = Mat::zeros(tapes.len(), f);
        for (v, tape) in tapes.iter().enumerate() {
            b.row_mut(v).copy_from_slice(tape.output());
        }
        b
    }

    fn check_inputs(&self, window: &Window) -> Result<(), TwinError> {
        if window.t_end + 1 < self.config.window {
            return Err(TwinError::ShortWindow {
                needed: self.config.window,
                got: window.t_end + 1,
            });
        }
        if window.nodes.len() != self.nodes {
            return Err(TwinError::NodeMismatch {
                expected: self.nodes,
                got: window.nodes.len(),
            });
        }
        let need = self.channels * self.config.window;
        if let Some(bad) = window.nodes.iter().find(|x| x.len() != need) {
            return Err(TwinError::ShortWindow {
                needed: self.config.window,
                got: bad.len() / self.channels.max(1),
            });
        }
        if window.nodes.iter().flatten().any(|x| !x.is_finite()) {
            return Err(TwinError::NonFinite("window input".into()));
        }
        Ok(())
    }

    fn extractor_tapes(&self, window: &Window) -> Result<Vec<Tape>, TwinError> {
        self.check_inputs(window)?;
        let l = self.config.window;
        let calendar: Vec<f64> = match self.config.calendar_period {
            Some(period) => {
                let start = window.t_end + 1 - l;
                let phase = |t: usize| std::f64::consts::TAU * t as f64 / period;
                let sin = (start..=window.t_end).map(|t| phase(t).sin());
                let cos = (start..=window.t_end).map(|t| phase(t).cos());
                sin.chain(cos).collect()
            }
            None => Vec::new(),
        };
        window
            .nodes
            .iter()
            .map(|x| {
                let mut u: Vec<f64> = x.iter().map(|&v| self.norm.apply(v)).collect();
                u.extend_from_slice(&calendar);
                self.extractor.forward_tape(&u).map_err(TwinError::from)
            })
            .collect()
    }

    /// Learned adjacency and node features for a window.
    pub fn graph_snapshot(&self, window: &Window) -> Result<GraphSnapshot, TwinError> {
        let c = self.forward(window)?;
        Ok(GraphSnapshot {
            adjacency: c.factors.a,
            features: c.x,
        })
    }

    fn forward(&self, window: &Window) -> Result<Cache, TwinError> {
        let (v, f, k, d, hd) = self.dims();
        let tapes = self.extractor_tapes(window)?;
        let b = self.features_from(&tapes);
        let e = self.block(E, v, f);
        let h = e.hadamard(&b);
        let factors = graph_factors(&h, &self.block(THETA1, f, k), &self.block(THETA2, f, k), self.config.beta);
        // node features mix each node with its learned neighbours
        let mut x = factors.a.matmul(&h);
        x.add_assign(&h);
        let wz = self.block(WZ, f, d);
        let q = &self.graph.values()[self.offsets[Q]..self.offsets[Q + 1]];
        let p = x.matmul(&wz);
        let (pre, alpha) = attention_parts(&x, &factors.a, &wz, q, self.config.leaky_slope);
        let qf = x.matmul(&self.block(WS, f, hd));
        let out = alpha.matmul(&qf).map(sigmoid);

        let window_total = window_mean_total(window, self.config.window);
        let (head_tapes, raw) = match self.config.head {
            HeadMode::Linear => {
                let mut pooled = vec![0.0; hd];
                for r in 0..v {
                    pooled.iter_mut().zip(out.row(r)).for_each(|(p, o)| *p += o);
                }
                let tape = self.head.forward_tape(&pooled)?;
                let raw = tape.output().to_vec();
                (vec![tape], raw)
            }
            HeadMode::Softmax => {
                let tapes = (0..v)
                    .map(|r| self.head.forward_tape(out.row(r)))
                    .collect::<Result<Vec<_>, _>>()?;
                let scores: Vec<f64> = tapes.iter().map(|t| t.output()[0]).collect();
                (tapes, softmax(&scores))
            }
        };
        if raw.iter().any(|x| !x.is_finite()) {
            return Err(TwinError::NonFinite(format!("twin output {raw:?}")));
        }
        Ok(Cache {
            tapes,
            b,
            h,
            factors,
            x,
            p,
            pre,
            alpha,
            qf,
            out,
            head_tapes,
            raw,
            window_total,
        })
    }

    /// Unclipped head output: the normalized aggregate (linear) or node
    /// shares (softmax).
    pub fn raw_output(&self, window: &Window) -> Result<Vec<f64>, TwinError> {
        Ok(self.forward(window)?.raw)
    }

    fn forecast_from(&self, c: &Cache) -> Forecast {
        let v = self.nodes as f64;
        match self.config.head {
            HeadMode::Linear => Forecast {
                aggregate: (v * (self.norm.mean + self.norm.std * c.raw[0])).max(0.0),
                nodes: None,
            },
            HeadMode::Softmax => Forecast {
                aggregate: c.window_total,
                nodes: Some(c.raw.iter().map(|p| p * c.window_total).collect()),
            },
        }
    }

    pub fn predict(&self, window: &Window) -> Result<Forecast, TwinError> {
        let c = self.forward(window)?;
        Ok(self.forecast_from(&c))
    }

    /// Gradient of `upstream . raw_output` with respect to [`Self::params`].
    pub fn raw_gradient(&self, window: &Window, upstream: &[f64]) -> Result<ParamVector, TwinError> {
        let c = self.forward(window)?;
        self.backward(&c, upstream)
    }

    fn backward(&self, c: &Cache, upstream: &[f64]) -> Result<ParamVector, TwinError> {
        let (v, f, k, d, hd) = self.dims();
        let beta = self.config.beta;
        let slope = self.config.leaky_slope;
        let mut g_ext = self.extractor.params().zeros_like();
        let mut g_graph = self.graph.zeros_like();
        let mut g_head = self.head.params().zeros_like();

        let mut dout = Mat::zeros(v, hd);
        match self.config.head {
            HeadMode::Linear => {
                let dpooled = self.head.backward_tape_into(&c.head_tapes[0], upstream, &mut g_head)?;
                for r in 0..v {
                    dout.row_mut(r).copy_from_slice(&dpooled);
                }
            }
            HeadMode::Softmax => {
                let s: f64 = c.raw.iter().zip(upstream).map(|(p, g)| p * g).sum();
                for r in 0..v {
                    let ds = c.raw[r] * (upstream[r] - s);
                    let drow = self.head.backward_tape_into(&c.head_tapes[r], &[ds], &mut g_head)?;
                    dout.row_mut(r).copy_from_slice(&drow);
                }
            }
        }

        // out = sigmoid(alpha qf)
        let mut dz = dout;
        dz.data_mut()
            .iter_mut()
            .zip(c.out.data())
            .for_each(|(g, o)| *g *= o * (1.0 - o));
        let dalpha = dz.matmul_t(&c.qf);
        let dqf = c.alpha.t_matmul(&dz);
        let ws = self.block(WS, f, hd);
        let mut dx = dqf.matmul_t(&ws);
        let dws = c.x.t_matmul(&dqf);

        // softmax and LeakyReLU of the attention logits
        let qv = &self.graph.values()[self.offsets[Q]..self.offsets[Q + 1]];
        let (q_src, q_dst) = qv.split_at(d);
        let mut dsrc = vec![0.0; v];
        let mut ddst = vec![0.0; v];
        for tv in 0..v {
            let s: f64 = (0..v).map(|z| c.alpha[(tv, z)] * dalpha[(tv, z)]).sum();
            for z in 0..v {
                if !in_neighbourhood(&c.factors.a, tv, z) {
                    continue;
                }
                let de = c.alpha[(tv, z)] * (dalpha[(tv, z)] - s);
                let dl = if c.pre[(tv, z)] > 0.0 { de } else { slope * de };
                dsrc[z] += dl;
                ddst[tv] += dl;
            }
        }
        let mut dq = vec![0.0; 2 * d];
        let mut dp = Mat::zeros(v, d);
        for r in 0..v {
            for j in 0..d {
                dq[j] += dsrc[r] * c.p[(r, j)];
                dq[d + j] += ddst[r] * c.p[(r, j)];
                dp[(r, j)] = dsrc[r] * q_src[j] + ddst[r] * q_dst[j];
            }
        }
        let wz = self.block(WZ, f, d);
        dx.add_assign(&dp.matmul_t(&wz));
        let dwz = c.x.t_matmul(&dp);

        // x = h + a h
        let a = &c.factors.a;
        let mut dh = a.t_matmul(&dx);
        dh.add_assign(&dx);
        let da = dx.matmul_t(&c.h);

        // a = relu(tanh(beta (m1 m2^T - m2 m1^T)))
        let mut dc = Mat::zeros(v, v);
        for i in 0..v {
            for j in 0..v {
                let s = c.factors.s[(i, j)];
                if i != j && s > 0.0 {
                    dc[(i, j)] = da[(i, j)] * beta * (1.0 - s * s);
                }
            }
        }
        let mut anti = dc.clone();
        let dct = dc.transpose();
        anti.data_mut().iter_mut().zip(dct.data()).for_each(|(x, y)| *x -= y);
        let dm1 = anti.matmul(&c.factors.m2);
        // (dC^T - dC) M1 = anti^T M1 since anti is antisymmetric
        let dm2 = anti.t_matmul(&c.factors.m1);

        let mut grads_theta = Vec::with_capacity(2);
        for (dm, m, idx) in [(dm1, &c.factors.m1, THETA1), (dm2, &c.factors.m2, THETA2)] {
            let mut dpre = dm;
            dpre.data_mut()
                .iter_mut()
                .zip(m.data())
                .for_each(|(g, y)| *g *= beta * (1.0 - y * y));
            grads_theta.push((idx, c.h.t_matmul(&dpre)));
            dh.add_assign(&dpre.matmul_t(&self.block(idx, f, k)));
        }

        // h = e * b
        let e = self.block(E, v, f);
        let de = dh.hadamard(&c.b);
        let db = dh.hadamard(&e);
        for (r, tape) in c.tapes.iter().enumerate() {
            self.extractor.backward_tape_into(tape, db.row(r), &mut g_ext)?;
        }

        let gv = g_graph.values_mut();
        let o = &self.offsets;
        gv[o[E]..o[E + 1]].copy_from_slice(de.data());
        for (idx, m) in grads_theta {
            gv[o[idx]..o[idx + 1]].copy_from_slice(m.data());
        }
        gv[o[WZ]..o[WZ + 1]].copy_from_slice(dwz.data());
        gv[o[Q]..o[Q + 1]].copy_from_slice(&dq);
        gv[o[WS]..o[WS + 1]].copy_from_slice(dws.data());
        Ok(ParamVector::concat(&[&g_ext, &g_graph, &g_head]))
    }

    /// Loss of one sample in raw units and the gradient of the
    /// normalized loss with respect to the raw output.
    fn sample_loss(&self, c: &Cache, next: &[f64]) -> Result<(f64, Vec<f64>), TwinError> {
        if next.len() != self.nodes {
            return Err(TwinError::NodeMismatch {
                expected: self.nodes,
                got: next.len(),
            });
        }
        let v = self.nodes as f64;
        match self.config.head {
            HeadMode::Linear => {
                let target = self.norm.apply(next.iter().sum::<f64>() / v);
                let err = c.raw[0] - target;
                Ok((err.abs() * v * self.norm.std, vec![sign(err)]))
            }
            HeadMode::Softmax => {
                let mut loss = 0.0;
                let mut grad = Vec::with_capacity(self.nodes);
                for (p, y) in c.raw.iter().zip(next) {
                    let err = p * c.window_total - y;
                    loss += err.abs() / v;
                    grad.push(sign(err) * c.window_total / (v * self.norm.std));
                }
                Ok((loss, grad))
            }
        }
    }

    /// Mean absolute error over the batch (raw units) after one optimizer
    /// step on it. `next` is the node demand vector following each window.
    pub fn train_batch(&mut self, batch: &[(Window, Vec<f64>)]) -> Result<f64, TwinError> {
        if batch.is_empty() {
            return Err(TwinError::EmptyHistory);
        }
        let mut grad = self.params().zeros_like();
        let mut total = 0.0;
        for (window, next) in batch {
            let c = self.forward(window)?;
            let (loss, upstream) = self.sample_loss(&c, next)?;
            if !loss.is_finite() {
                return Err(TwinError::NonFinite(format!(
                    "loss {loss} at training step {} (output {:?})",
                    self.steps_trained, c.raw
                )));
            }
            total += loss;
            let g = self.backward(&c, &upstream)?;
            grad.add_scaled(&g, 1.0 / batch.len() as f64)?;
        }
        let mut params = self.params();
        if self.config.weight_decay > 0.0 {
            let mut decay = params.clone();
            let e_start = self.extractor.params().len() + self.offsets[E];
            let e_end = self.extractor.params().len() + self.offsets[E + 1];
            decay.values_mut()[e_start..e_end].iter_mut().for_each(|x| *x = 0.0);
            grad.add_scaled(&decay, self.config.weight_decay)?;
        }
        self.optimizer.step(&mut params, &grad)?;
        if params.values().iter().any(|x| !x.is_finite()) {
            return Err(TwinError::NonFinite(format!(
                "parameters after training step {}",
                self.steps_trained
            )));
        }
        self.set_params(&params)?;
        self.steps_trained += 1;
        Ok(total / batch.len() as f64)
    }

    pub fn train_step(&mut self, window: &Window, next: &[f64]) -> Result<f64, TwinError> {
        self.train_batch(&[(window.clone(), next.to_vec())])
    }

    /// Mean loss (raw units) over samples without updating the model.
    pub fn evaluate(&self, samples: &[(Window, Vec<f64>)]) -> Result<f64, TwinError> {
        if samples.is_empty() {
            return Err(TwinError::EmptyHistory);
        }
        let mut total = 0.0;
        for (window, next) in samples {
            total += self.sample_loss(&self.forward(window)?, next)?.0;
        }
        Ok(total / samples.len() as f64)
    }

    /// Trains on windows ending at each `t` in `ends`, with the following
    /// step as target, for `epochs` shuffled passes. The chronologically
    /// last `validation_fraction` of the windows is held out and the
    /// parameters with the lowest validation loss are kept.
    pub fn fit<R: Rng + ?Sized>(
        &mut self,
        tensor: &DemandTensor,
        ends: std::ops::Range<usize>,
        epochs: usize,
        rng: &mut R,
    ) -> Result<FitReport, TwinError> {
        let samples: Vec<(Window, Vec<f64>)> = ends
            .map(|t| Ok((Window::from_tensor(tensor, t, self.config.window)?, tensor.at(t + 1).to_vec())))
            .collect::<Result<_, TwinError>>()?;
        if samples.is_empty() {
            return Err(TwinError::EmptyHistory);
        }
        let held = ((samples.len() as f64) * self.config.validation_fraction).round() as usize;
        let held = if held >= samples.len() { 0 } else { held };
        let (train, validation) = samples.split_at(samples.len() - held);

        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut report = FitReport::default();
        let mut best: Option<(f64, ParamVector)> = None;
        let base_lr = self.config.optimizer.learning_rate;
        let averaging = self.config.weight_averaging;
        let mut average = self.params();
        for epoch in 0..epochs {
            let progress = if epochs > 1 { epoch as f64 / (epochs - 1) as f64 } else { 0.0 };
            self.optimizer
                .set_learning_rate(base_lr * self.config.final_lr_fraction.powf(progress))?;
            order.shuffle(rng);
            let mut sum = 0.0;
            for chunk in order.chunks(self.config.batch_size) {
                let batch: Vec<_> = chunk.iter().map(|&i| train[i].clone()).collect();
                sum += self.train_batch(&batch)? * chunk.len() as f64;
                if averaging > 0.0 {
                    average.blend_toward(&self.params(), 1.0 - averaging)?;
                }
            }
            report.train_losses.push(sum / train.len() as f64);
            let candidate = if averaging > 0.0 {
                let mut probe = self.clone();
                probe.set_params(&average)?;
                probe
            } else {
                self.clone()
            };
            if !validation.is_empty() {
                let v = candidate.evaluate(validation)?;
                report.validation_losses.push(v);
                if best.as_ref().map_or(true, |(b, _)| v < *b) {
                    best = Some((v, candidate.params()));
                    report.best_epoch = epoch;
                }
            } else {
                best = Some((0.0, candidate.params()));
                report.best_epoch = epoch;
            }
        }
        if let Some((_, params)) = best {
            self.set_params(&params)?;
        }
        self.optimizer.set_learning_rate(base_lr * self.config.final_lr_fraction)?;
        Ok(report)
    }
}

/// Per-epoch losses of [`TwinModel::fit`], raw units.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub train_losses: Vec<f64>,
    pub validation_losses: Vec<f64>,
    /// Epoch whose parameters were kept (last epoch without validation).
    pub best_epoch: usize,
}

/// Mean over the window of the channel-0 total across nodes.
fn window_mean_total(window: &Window, len: usize) -> f64 {
    let sum: f64 = window.nodes.iter().map(|x| x[..len].iter().sum::<f64>()).sum();
    sum / len as f64
}

/// Mean absolute error between paired actual and predicted values.
pub fn mae(actual: &[f64], predicted: &[f64]) -> Result<f64, TwinError> {
    if actual.is_empty() || actual.len() != predicted.len() {
        return Err(TwinError::EmptyHistory);
    }
    Ok(actual.iter().zip(predicted).map(|(a, p)| (a - p).abs()).sum::<f64>() / actual.len() as f64)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[cfg(test)]
mod tests;
