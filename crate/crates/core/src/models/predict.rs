use serde::{Deserialize, Serialize};

use crate::datagen::UnitTrajectory;
use crate::error::{Error, Result};
use crate::netcore::Tensor;
use crate::preprocess::{self, RUL_SCALE};
use crate::scalar::Scalar;

use super::forward::{BottleneckOutput, Substitution};
use super::model::Model;

/// Cycle-level aggregate of window predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct CyclePrediction<T> {
    /// 1-based cycle index.
    pub cycle: usize,
    /// Mean window RUL in cycles (unscaled, not clamped).
    pub rul: T,
    /// Mean activation per concept (empty for the plain CNN).
    pub activations: Vec<T>,
}

/// Cycle prediction together with its window outputs.
#[derive(Debug, Clone)]
pub struct CycleDetail<T> {
    pub summary: CyclePrediction<T>,
    pub windows: Vec<BottleneckOutput<T>>,
}

/// Averages window outputs of one cycle.
pub fn summarize<T: Scalar>(cycle: usize, windows: &[BottleneckOutput<T>]) -> CyclePrediction<T> {
    let n = T::of_usize(windows.len().max(1));
    let rul = windows.iter().fold(T::zero(), |a, w| a + w.rul) / n * T::of(RUL_SCALE);
    let k = windows.first().map(|w| w.activations.len()).unwrap_or(0);
    let activations = (0..k)
        .map(|j| windows.iter().fold(T::zero(), |a, w| a + w.activations[j]) / n)
        .collect();
    CyclePrediction { cycle, rul, activations }
}

impl<T: Scalar> Model<T> {
    /// Scaled input windows of every cycle, each cycle as one `[n x C x W]` batch.
    pub fn unit_windows(&self, unit: &UnitTrajectory) -> Result<Vec<Tensor<T>>> {
        let scaler = self
            .scaler
            .as_ref()
            .ok_or_else(|| Error::Usage("model has no fitted scaler".into()))?;
        let cfg = &self.preprocess;
        preprocess::scaled_cycles(unit, cfg, scaler)?
            .iter()
            .map(|steps| {
                let ws = preprocess::make_windows::<T>(steps, cfg.window, cfg.stride)?;
                let n = ws.len();
                let mut data = Vec::with_capacity(n * ws[0].len());
                for w in ws {
                    data.extend(w.into_data());
                }
                Tensor::new(vec![n, self.config.in_channels, cfg.window], data)
            })
            .collect()
    }

    /// Window outputs of one cycle batch with per-concept overrides.
    pub fn cycle_outputs(&self, windows: &Tensor<T>, overrides: &[Option<T>]) -> Result<Vec<BottleneckOutput<T>>> {
        if overrides.iter().any(Option::is_some) {
            if overrides.len() != self.k() {
                return Err(Error::Shape(format!("{} overrides for k = {}", overrides.len(), self.k())));
            }
            self.forward_with(windows, &Substitution::uniform(windows.shape()[0], overrides))
        } else {
            self.forward(windows)
        }
    }

    /// Per-cycle predictions with window-level detail.
    pub fn predict_unit(&self, unit: &UnitTrajectory) -> Result<Vec<CycleDetail<T>>> {
        self.unit_windows(unit)?
            .iter()
            .enumerate()
            .map(|(q, w)| {
                let windows = self.forward(w)?;
                Ok(CycleDetail { summary: summarize(q + 1, &windows), windows })
            })
            .collect()
    }

    /// Cycle-mean RUL (in cycles) and cycle-mean concept activations.
    pub fn predict_trajectory(&self, unit: &UnitTrajectory) -> Result<Vec<CyclePrediction<T>>> {
        Ok(self.predict_unit(unit)?.into_iter().map(|d| d.summary).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn out(rul: f64, act: f64) -> BottleneckOutput<f64> {
        BottleneckOutput {
            rul,
            probabilities: vec![act],
            activations: vec![act],
            embeddings: vec![],
            positive_embeddings: vec![],
            negative_embeddings: vec![],
            extra: vec![],
            latent: vec![],
        }
    }

    #[test]
    fn cycle_mean_then_unscale() {
        let s = summarize(3, &[out(0.10, 0.2), out(0.20, 0.6)]);
        assert!((s.rul - 15.0).abs() < 1e-12);
        assert!((s.activations[0] - 0.4).abs() < 1e-15);
        let single = summarize(1, &[out(0.37, 0.9)]);
        assert!((single.rul - 37.0).abs() < 1e-12);
        assert_eq!(single.activations, vec![0.9]);
    }
}
