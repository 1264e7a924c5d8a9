//! Held-out comparison of the twin against persistence and ARIMA on one
//! demand tensor.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    forecast_persistence, rmse, ArimaModel, ForecastRecord, Normalizer, TwinConfig, TwinError,
    TwinModel, Window, FitReport,
};
use crate::traffic::DemandTensor;

pub const TWIN_ID: &str = "twin";
pub const PERSISTENCE_ID: &str = "persistence";
pub const ARIMA_ID: &str = "arima";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastComparison {
    pub train_steps: usize,
    pub twin_rmse: f64,
    pub persistence_rmse: f64,
    pub arima_rmse: f64,
    pub arima_fell_back: bool,
    pub fit: FitReport,
    pub records: Vec<ForecastRecord>,
}

/// Trains on the first `train_fraction` of the steps and makes one-step
/// forecasts of the aggregate demand over the remainder.
pub fn compare_forecasters<R: Rng + ?Sized>(
    tensor: &DemandTensor,
    config: &TwinConfig,
    train_fraction: f64,
    arima_order: (usize, usize, usize),
    rng: &mut R,
) -> Result<ForecastComparison, TwinError> {
    let steps = tensor.steps();
    let l = config.window;
    let train = ((steps as f64) * train_fraction).floor() as usize;
    if !(0.0..1.0).contains(&train_fraction) || train < l + 2 || train + 1 >= steps {
        return Err(TwinError::ShortHistory {
            needed: l + 3,
            got: train,
        });
    }
    let mut model = TwinModel::new(config.clone(), tensor.nodes(), tensor.channels(), rng)?;
    let train_values: Vec<f64> = (0..train).flat_map(|t| tensor.at(t).to_vec()).collect();
    model.set_normalizer(Normalizer::fit(&train_values));
    let fit = model.fit(tensor, l - 1..train - 1, config.pretrain_epochs, rng)?;

    let totals = tensor.totals();
    let (p, d, q) = arima_order;
    let arima = ArimaModel::fit(&totals[..train], p, d, q)?;
    let mut records = Vec::new();
    for t_end in train - 1..steps - 1 {
        let actual = totals[t_end + 1];
        let history = &totals[..=t_end];
        let twin = model.predict(&Window::from_tensor(tensor, t_end, l)?)?.aggregate;
        let persist = forecast_persistence(history)?;
        let ar = arima.forecast(history)?.value;
        for (id, predicted) in [(TWIN_ID, twin), (PERSISTENCE_ID, persist), (ARIMA_ID, ar)] {
            records.push(ForecastRecord {
                t: t_end + 1,
                slice_id: tensor.slice_id,
                actual,
                predicted,
                model_id: id.to_string(),
            });
        }
    }
    let by = |id: &str| -> Result<f64, TwinError> {
        let subset: Vec<ForecastRecord> = records.iter().filter(|r| r.model_id == id).cloned().collect();
        rmse(&subset)
    };
    Ok(ForecastComparison {
        train_steps: train,
        twin_rmse: by(TWIN_ID)?,
        persistence_rmse: by(PERSISTENCE_ID)?,
        arima_rmse: by(ARIMA_ID)?,
        arima_fell_back: arima.fell_back,
        fit,
        records,
    })
}
