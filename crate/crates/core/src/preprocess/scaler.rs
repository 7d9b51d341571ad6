use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::channel_name;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingMode {
    Standard,
    MinMax,
}

/// Per-channel statistics fitted on the training partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerStats {
    pub mode: ScalingMode,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl ScalerStats {
    /// Fits population mean/std and min/max per channel.
    pub fn fit<'a>(rows: impl Iterator<Item = &'a [f64]>, mode: ScalingMode) -> Result<Self> {
        let rows: Vec<&[f64]> = rows.collect();
        let Some(first) = rows.first() else {
            return Err(Error::Input("cannot fit scaler on zero rows".into()));
        };
        let d = first.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Shape("scaler rows have inconsistent widths".into()));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        for r in &rows {
            for c in 0..d {
                mean[c] += r[c];
                min[c] = min[c].min(r[c]);
                max[c] = max[c].max(r[c]);
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in &rows {
            for c in 0..d {
                var[c] += (r[c] - mean[c]) * (r[c] - mean[c]);
            }
        }
        let std: Vec<f64> = var.iter().map(|v| (v / n).sqrt()).collect();
        for c in 0..d {
            let degenerate = match mode {
                ScalingMode::Standard => !(std[c] > 0.0),
                ScalingMode::MinMax => !(max[c] > min[c]),
            };
            if degenerate {
                return Err(Error::Input(format!(
                    "channel {} has zero variance in the training data",
                    channel_name(c)
                )));
            }
        }
        Ok(Self { mode, mean, std, min, max })
    }

    pub fn n_channels(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, row: &[f64]) -> Result<()> {
        if row.len() != self.n_channels() {
            return Err(Error::Shape(format!(
                "scaler fitted on {} channels, got {}",
                self.n_channels(),
                row.len()
            )));
        }
        Ok(())
    }

    pub fn apply_in_place(&self, row: &mut [f64]) -> Result<()> {
        self.check(row)?;
        for (c, v) in row.iter_mut().enumerate() {
            *v = match self.mode {
                ScalingMode::Standard => (*v - self.mean[c]) / self.std[c],
                ScalingMode::MinMax => (*v - self.min[c]) / (self.max[c] - self.min[c]),
            };
        }
        Ok(())
    }

    pub fn apply(&self, row: &[f64]) -> Result<Vec<f64>> {
        let mut out = row.to_vec();
        self.apply_in_place(&mut out)?;
        Ok(out)
    }

    pub fn invert(&self, row: &[f64]) -> Result<Vec<f64>> {
        self.check(row)?;
        Ok(row
            .iter()
            .enumerate()
            .map(|(c, v)| match self.mode {
                ScalingMode::Standard => v * self.std[c] + self.mean[c],
                ScalingMode::MinMax => v * (self.max[c] - self.min[c]) + self.min[c],
            })
            .collect())
    }
}
