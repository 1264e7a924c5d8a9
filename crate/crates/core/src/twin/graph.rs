//! Adaptive graph construction and graph attention over per-node features.

use crate::linalg::Mat;
use crate::nn::sigmoid;

/// Adjacency learned for one window together with the node features it was
/// learned from.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSnapshot {
    pub adjacency: Mat,
    pub features: Mat,
}

impl GraphSnapshot {
    /// Checks zero diagonal, one-directional support, and range `[0, 1]`.
    pub fn check(&self) -> Result<(), String> {
        let a = &self.adjacency;
        let v = a.rows();
        if a.cols() != v {
            return Err(format!("adjacency is {}x{}", a.rows(), a.cols()));
        }
        for i in 0..v {
            if a[(i, i)] != 0.0 {
                return Err(format!("A[{i},{i}] = {}", a[(i, i)]));
            }
            for j in 0..v {
                let x = a[(i, j)];
                if !(0.0..=1.0).contains(&x) {
                    return Err(format!("A[{i},{j}] = {x} outside [0, 1]"));
                }
                if i != j && a[(i, j)].min(a[(j, i)]) != 0.0 {
                    return Err(format!("both A[{i},{j}] and A[{j},{i}] are positive"));
                }
            }
        }
        Ok(())
    }
}

/// Intermediate values of [`learn_graph`], kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct GraphFactors {
    pub m1: Mat,
    pub m2: Mat,
    pub s: Mat,
    pub a: Mat,
}

pub(crate) fn graph_factors(h: &Mat, theta1: &Mat, theta2: &Mat, beta: f64) -> GraphFactors {
    let m1 = h.matmul(theta1).map(|x| (beta * x).tanh());
    let m2 = h.matmul(theta2).map(|x| (beta * x).tanh());
    let mut c = m1.matmul_t(&m2);
    let c21 = m2.matmul_t(&m1);
    c.data_mut().iter_mut().zip(c21.data()).for_each(|(x, y)| *x -= y);
    // the difference is antisymmetric; pin the diagonal against rounding
    for i in 0..c.rows() {
        c[(i, i)] = 0.0;
    }
    let s = c.map(|x| (beta * x).tanh());
    let a = s.map(|x| x.max(0.0));
    GraphFactors { m1, m2, s, a }
}

/// `A = ReLU(tanh(beta (M1 M2^T - M2 M1^T)))` with
/// `Mi = tanh(beta (E * B) Theta_i)`, where `E * B` is the element-wise
/// product of node embeddings and extracted features (both `V x F`).
pub fn learn_graph(features: &Mat, embeddings: &Mat, theta1: &Mat, theta2: &Mat, beta: f64) -> Mat {
    let h = embeddings.hadamard(features);
    graph_factors(&h, theta1, theta2, beta).a
}

/// Whether `z` is in the attention neighbourhood of `v`.
pub(crate) fn in_neighbourhood(a: &Mat, v: usize, z: usize) -> bool {
    v == z || a[(v, z)] > 0.0
}

pub(crate) fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

/// Attention logits `e[(v, z)] = LeakyReLU(q_src . W x_z + q_dst . W x_v)`
/// for neighbours and the resulting softmax. Returns `(pre_activation, alpha)`.
pub(crate) fn attention_parts(x: &Mat, a: &Mat, wz: &Mat, q: &[f64], slope: f64) -> (Mat, Mat) {
    let v_count = x.rows();
    let d = wz.cols();
    let p = x.matmul(wz);
    let (q_src, q_dst) = q.split_at(d);
    let src: Vec<f64> = (0..v_count).map(|z| crate::linalg::dot(q_src, p.row(z))).collect();
    let dst: Vec<f64> = (0..v_count).map(|v| crate::linalg::dot(q_dst, p.row(v))).collect();
    let mut pre = Mat::zeros(v_count, v_count);
    let mut alpha = Mat::zeros(v_count, v_count);
    for v in 0..v_count {
        let mut max = f64::NEG_INFINITY;
        for z in 0..v_count {
            if in_neighbourhood(a, v, z) {
                pre[(v, z)] = src[z] + dst[v];
                max = max.max(leaky(pre[(v, z)], slope));
            }
        }
        let mut total = 0.0;
        for z in 0..v_count {
            if in_neighbourhood(a, v, z) {
                let e = (leaky(pre[(v, z)], slope) - max).exp();
                alpha[(v, z)] = e;
                total += e;
            }
        }
        alpha.row_mut(v).iter_mut().for_each(|x| *x /= total);
    }
    (pre, alpha)
}

/// Attention coefficients; `alpha[(v, z)]` is the weight node `v` puts on
/// neighbour `z`. Each node attends to `{z : A[v][z] > 0}` plus itself, and
/// every row sums to one.
pub fn gat_attention(x: &Mat, adjacency: &Mat, wz: &Mat, q: &[f64], slope: f64) -> Mat {
    attention_parts(x, adjacency, wz, q, slope).1
}

/// `x'_v = sigmoid(sum_z alpha[(v, z)] Ws^T x_z)`; `ws` is `F x H`.
pub fn gat_output(x: &Mat, alpha: &Mat, ws: &Mat) -> Mat {
    alpha.matmul(&x.matmul(ws)).map(sigmoid)
}
