//! Forecast records, RMSE, and the persistence and ARIMA baselines.

use serde::{Deserialize, Serialize};

use super::TwinError;
use crate::linalg::least_squares;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub t: usize,
    pub slice_id: usize,
    pub actual: f64,
    pub predicted: f64,
    pub model_id: String,
}

impl ForecastRecord {
    pub fn error(&self) -> f64 {
        self.predicted - self.actual
    }
}

pub fn rmse(records: &[ForecastRecord]) -> Result<f64, TwinError> {
    rmse_of(records.iter().map(ForecastRecord::error))
}

/// Root mean square of a sequence of forecast errors.
pub fn rmse_of(errors: impl IntoIterator<Item = f64>) -> Result<f64, TwinError> {
    let (mut n, mut sum) = (0usize, 0.0);
    for e in errors {
        if !e.is_finite() {
            return Err(TwinError::NonFinite(format!("forecast error {e}")));
        }
        n += 1;
        sum += e * e;
    }
    if n == 0 {
        return Err(TwinError::EmptyHistory);
    }
    Ok((sum / n as f64).sqrt())
}

/// Next value equals the last observed one.
pub fn forecast_persistence(history: &[f64]) -> Result<f64, TwinError> {
    history.last().copied().ok_or(TwinError::EmptyHistory)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArimaForecast {
    pub value: f64,
    /// The fit was non-invertible or non-stationary and persistence was
    /// used instead.
    pub fell_back: bool,
}

/// ARIMA(p, d, q) fitted by conditional least squares on the `d`-times
/// differenced series. An intercept is estimated only when `d == 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArimaModel {
    pub p: usize,
    pub d: usize,
    pub q: usize,
    pub intercept: f64,
    pub ar: Vec<f64>,
    pub ma: Vec<f64>,
    pub sigma2: f64,
    pub fell_back: bool,
}

impl ArimaModel {
    pub fn fit(history: &[f64], p: usize, d: usize, q: usize) -> Result<Self, TwinError> {
        let needed = p + d + q + 11;
        if history.len() < needed {
            return Err(TwinError::ShortHistory {
                needed,
                got: history.len(),
            });
        }
        if history.iter().any(|x| !x.is_finite()) {
            return Err(TwinError::NonFinite("ARIMA history".into()));
        }
        let w = difference(history, d);
        let with_intercept = d == 0;
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let spread = w.iter().map(|x| (x - mean).abs()).fold(0.0, f64::max);
        let mut model = ArimaModel {
            p,
            d,
            q,
            intercept: if with_intercept { mean } else { 0.0 },
            ar: vec![0.0; p],
            ma: vec![0.0; q],
            sigma2: 0.0,
            fell_back: false,
        };
        if spread <= 1e-12 * mean.abs().max(1.0) {
            return Ok(model);
        }

        let mut theta = hannan_rissanen(&w, p, q, with_intercept)
            .unwrap_or_else(|| initial_guess(mean, p, q, with_intercept));
        theta = levenberg_marquardt(&w, p, q, with_intercept, theta);
        model.unpack(&theta, with_intercept);
        let e = residuals(&w, model.intercept, &model.ar, &model.ma);
        let tail = &e[p..];
        model.sigma2 = tail.iter().map(|x| x * x).sum::<f64>() / tail.len().max(1) as f64;
        let ar_poly: Vec<f64> = model.ar.iter().map(|a| -a).collect();
        model.fell_back = !min_phase(&ar_poly) || !min_phase(&model.ma) || !model.sigma2.is_finite();
        Ok(model)
    }

    fn unpack(&mut self, theta: &[f64], with_intercept: bool) {
        let mut it = theta.iter().copied();
        if with_intercept {
            self.intercept = it.next().unwrap_or(0.0);
        }
        self.ar = it.by_ref().take(self.p).collect();
        self.ma = it.take(self.q).collect();
    }

    /// One-step forecast of the value following `history`, running the
    /// fitted filter over the whole history to recover residuals.
    pub fn forecast(&self, history: &[f64]) -> Result<ArimaForecast, TwinError> {
        let last = forecast_persistence(history)?;
        if self.fell_back {
            return Ok(ArimaForecast {
                value: last,
                fell_back: true,
            });
        }
        if history.len() <= self.d + self.p {
            return Err(TwinError::ShortHistory {
                needed: self.d + self.p + 1,
                got: history.len(),
            });
        }
        let w = difference(history, self.d);
        let e = residuals(&w, self.intercept, &self.ar, &self.ma);
        let n = w.len();
        let mut next = self.intercept;
        for (i, a) in self.ar.iter().enumerate() {
            next += a * w[n - 1 - i];
        }
        for (j, m) in self.ma.iter().enumerate() {
            if n > j {
                next += m * e[n - 1 - j];
            }
        }
        // undo the differencing: y_n = w_n - sum_k (-1)^k C(d,k) y_{n-k}
        let mut value = next;
        let mut binom = 1.0;
        for k in 1..=self.d {
            binom = binom * (self.d + 1 - k) as f64 / k as f64;
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            value += sign * binom * history[history.len() - k];
        }
        Ok(ArimaForecast {
            value,
            fell_back: false,
        })
    }
}

/// Fits ARIMA(p, d, q) to `history` and forecasts one step ahead.
pub fn forecast_arima(history: &[f64], p: usize, d: usize, q: usize) -> Result<ArimaForecast, TwinError> {
    ArimaModel::fit(history, p, d, q)?.forecast(history)
}

fn difference(x: &[f64], d: usize) -> Vec<f64> {
    let mut w = x.to_vec();
    for _ in 0..d {
        w = w.windows(2).map(|p| p[1] - p[0]).collect();
    }
    w
}

/// Conditional residuals; the first `p` are zero.
fn residuals(w: &[f64], c: f64, ar: &[f64], ma: &[f64]) -> Vec<f64> {
    let p = ar.len();
    let mut e = vec![0.0; w.len()];
    for t in p..w.len() {
        let mut pred = c;
        for (i, a) in ar.iter().enumerate() {
            pred += a * w[t - 1 - i];
        }
        for (j, m) in ma.iter().enumerate() {
            if t > j {
                pred += m * e[t - 1 - j];
            }
        }
        e[t] = w[t] - pred;
    }
    e
}

fn initial_guess(mean: f64, p: usize, q: usize, with_intercept: bool) -> Vec<f64> {
    let mut theta = Vec::with_capacity(p + q + 1);
    if with_intercept {
        theta.push(mean);
    }
    theta.extend(std::iter::repeat(0.0).take(p + q));
    theta
}

/// Long autoregression for residual proxies, then OLS on lagged values and
/// lagged proxies.
fn hannan_rissanen(w: &[f64], p: usize, q: usize, with_intercept: bool) -> Option<Vec<f64>> {
    let n = w.len();
    let proxies = if q > 0 {
        let m = (p + q + 4).max(8).min(n / 4);
        if m == 0 {
            return None;
        }
        let rows: Vec<Vec<f64>> = (m..n)
            .map(|t| {
                let mut r = vec![1.0];
                r.extend((1..=m).map(|i| w[t - i]));
                r
            })
            .collect();
        let beta = least_squares(&rows, &w[m..])?;
        let mut e = vec![0.0; n];
        for (t, row) in (m..n).zip(&rows) {
            e[t] = w[t] - crate::linalg::dot(row, &beta);
        }
        e
    } else {
        vec![0.0; n]
    };
    let start = p.max(q) + if q > 0 { (p + q + 4).max(8).min(n / 4) } else { 0 };
    if start + p + q + 2 >= n {
        return None;
    }
    let rows: Vec<Vec<f64>> = (start..n)
        .map(|t| {
            let mut r = Vec::with_capacity(p + q + 1);
            if with_intercept {
                r.push(1.0);
            }
            r.extend((1..=p).map(|i| w[t - i]));
            r.extend((1..=q).map(|j| proxies[t - j]));
            r
        })
        .collect();
    least_squares(&rows, &w[start..])
}

fn sse(w: &[f64], p: usize, q: usize, with_intercept: bool, theta: &[f64]) -> (Vec<f64>, f64) {
    let (c, rest) = if with_intercept {
        (theta[0], &theta[1..])
    } else {
        (0.0, theta)
    };
    let e = residuals(w, c, &rest[..p], &rest[p..p + q]);
    let tail = e[p..].to_vec();
    let s = tail.iter().map(|x| x * x).sum();
    (tail, s)
}

fn levenberg_marquardt(w: &[f64], p: usize, q: usize, with_intercept: bool, mut theta: Vec<f64>) -> Vec<f64> {
    let k = theta.len();
    if k == 0 {
        return theta;
    }
    let (mut e, mut cost) = sse(w, p, q, with_intercept, &theta);
    if !cost.is_finite() {
        return theta;
    }
    let mut lambda = 1e-3;
    for _ in 0..100 {
        // forward-difference Jacobian of the residual vector
        let mut jac = vec![vec![0.0; k]; e.len()];
        for col in 0..k {
            let step = 1e-7 * theta[col].abs().max(1.0);
            let mut probe = theta.clone();
            probe[col] += step;
            let (e2, _) = sse(w, p, q, with_intercept, &probe);
            for (row, (a, b)) in jac.iter_mut().zip(e2.iter().zip(&e)) {
                row[col] = (a - b) / step;
            }
        }
        let mut jtj = vec![vec![0.0; k]; k];
        let mut jte = vec![0.0; k];
        for (row, r) in jac.iter().zip(&e) {
            for i in 0..k {
                jte[i] += row[i] * r;
                for j in 0..k {
                    jtj[i][j] += row[i] * row[j];
                }
            }
        }
        let mut improved = false;
        for _ in 0..10 {
            let mut a = jtj.clone();
            for (i, row) in a.iter_mut().enumerate() {
                row[i] += lambda * (jtj[i][i] + 1e-12);
            }
            let Some(delta) = crate::linalg::solve(a, jte.clone()) else {
                lambda *= 10.0;
                continue;
            };
            let cand: Vec<f64> = theta.iter().zip(&delta).map(|(t, d)| t - d).collect();
            let (e2, c2) = sse(w, p, q, with_intercept, &cand);
            if c2.is_finite() && c2 < cost {
                let rel = (cost - c2) / cost.max(1e-300);
                theta = cand;
                e = e2;
                cost = c2;
                lambda = (lambda / 10.0).max(1e-12);
                improved = true;
                if rel < 1e-12 {
                    return theta;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    theta
}

/// Whether `1 + c_1 z + ... + c_n z^n` has every root strictly outside the
/// unit circle (step-down recursion on reflection coefficients).
pub(crate) fn min_phase(coeffs: &[f64]) -> bool {
    let mut a: Vec<f64> = std::iter::once(1.0).chain(coeffs.iter().copied()).collect();
    while a.len() > 1 && a[a.len() - 1] == 0.0 {
        a.pop();
    }
    while a.len() > 1 {
        let n = a.len() - 1;
        let k = a[n];
        if !(k.abs() < 1.0) {
            return false;
        }
        let denom = 1.0 - k * k;
        a = (0..n).map(|i| (a[i] - k * a[n - i]) / denom).collect();
    }
    true
}
