//! Raw trajectories to training samples: subsampling, windowing, scaling,
//! piecewise-linear RUL targets and concept binarization.

pub mod csv;
mod scaler;

use serde::{Deserialize, Serialize};

use crate::datagen::{UnitTrajectory, N_CHANNELS, N_MEASUREMENTS, N_OP_CONDITIONS};
use crate::error::{Error, Result};
use crate::netcore::Tensor;
use crate::scalar::Scalar;

pub use scaler::{ScalerStats, ScalingMode};

/// Default concept threshold on the aggregated degradation parameter.
pub const DEFAULT_TAU: f64 = -0.0015;
/// RUL targets are divided by this factor for training.
pub const RUL_SCALE: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub subsample: usize,
    pub window: usize,
    pub stride: usize,
    pub scaling: ScalingMode,
    pub tau: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            subsample: 10,
            window: 50,
            stride: 1,
            scaling: ScalingMode::Standard,
            tau: DEFAULT_TAU,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.subsample == 0 || self.window == 0 || self.stride == 0 {
            return Err(Error::Config("subsample, window and stride must be positive".into()));
        }
        Ok(())
    }
}

/// One time step: 14 measurements followed by 4 operating conditions.
pub type Step = [f64; N_CHANNELS];

pub fn channel_name(c: usize) -> String {
    if c < N_MEASUREMENTS {
        format!("x{}", c + 1)
    } else {
        format!("w{}", c - N_MEASUREMENTS + 1)
    }
}

/// Keeps every `factor`-th second of a cycle, starting at offset 0.
pub fn subsample<S: Copy>(seconds: &[S], factor: usize) -> Result<Vec<S>> {
    if factor == 0 {
        return Err(Error::Config("subsample factor must be >= 1".into()));
    }
    Ok(seconds.iter().step_by(factor).copied().collect())
}

/// Subsampled input steps of one cycle.
pub fn cycle_steps(unit: &UnitTrajectory, cycle_index: usize, factor: usize) -> Result<Vec<Step>> {
    let c = &unit.cycles[cycle_index];
    let merged: Vec<Step> = c
        .measurements
        .iter()
        .zip(&c.ops)
        .map(|(x, w)| {
            let mut s = [0.0; N_CHANNELS];
            s[..N_MEASUREMENTS].copy_from_slice(x);
            s[N_MEASUREMENTS..N_MEASUREMENTS + N_OP_CONDITIONS].copy_from_slice(w);
            s
        })
        .collect();
    subsample(&merged, factor)
}

/// Indices of the steps at which windows end.
pub fn window_ends(n_steps: usize, stride: usize) -> impl Iterator<Item = usize> {
    (0..n_steps).step_by(stride.max(1))
}

/// Writes one channel-major `[N_CHANNELS x size]` window ending at `end`, zero-padded on the left.
pub(crate) fn fill_window<T: Scalar>(steps: &[Step], end: usize, size: usize, out: &mut [T]) {
    debug_assert_eq!(out.len(), N_CHANNELS * size);
    out.fill(T::zero());
    let first = (end + 1).saturating_sub(size);
    let pad = size - (end + 1 - first);
    for (offset, step) in steps[first..=end].iter().enumerate() {
        for (c, &v) in step.iter().enumerate() {
            out[c * size + pad + offset] = T::of(v);
        }
    }
}

/// Right-aligned sliding windows, one per step (for `stride == 1`). Windows ending
/// before `size` steps are left-padded with zeros.
pub fn make_windows<T: Scalar>(steps: &[Step], size: usize, stride: usize) -> Result<Vec<Tensor<T>>> {
    if steps.is_empty() {
        return Err(Error::Input("cannot window an empty cycle".into()));
    }
    if size == 0 || stride == 0 {
        return Err(Error::Config("window size and stride must be positive".into()));
    }
    window_ends(steps.len(), stride)
        .map(|end| {
            let mut buf = vec![T::zero(); N_CHANNELS * size];
            fill_window(steps, end, size, &mut buf);
            Tensor::new(vec![N_CHANNELS, size], buf)
        })
        .collect()
}

/// Piecewise-linear RUL per cycle: constant `N - q_on` before onset, `N - q` from onset on.
pub fn rul_targets(unit: &UnitTrajectory) -> Result<Vec<f64>> {
    let n = unit.n_cycles();
    let onset = unit
        .onset_cycle()
        .ok_or_else(|| Error::Input(format!("unit {} never reaches a faulty health state", unit.id())))?;
    Ok((1..=n)
        .map(|q| if q < onset { (n - onset) as f64 } else { (n - q) as f64 })
        .collect())
}

/// `c_j = 1` iff `min(theta_eff_j, theta_flow_j) <= tau`.
pub fn binarize_concepts(theta_eff: &[f64], theta_flow: &[f64], tau: f64) -> Vec<u8> {
    theta_eff
        .iter()
        .zip(theta_flow)
        .map(|(e, f)| u8::from(e.min(*f) <= tau))
        .collect()
}

/// One training example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    /// `[N_CHANNELS x window]`, scaled.
    pub window: Tensor<T>,
    /// RUL in cycles divided by [`RUL_SCALE`].
    pub rul_target: T,
    pub concepts: Vec<u8>,
    pub unit_id: String,
    /// 1-based cycle index.
    pub cycle: usize,
}

/// Fits a scaler on every subsampled step of the given (training) units.
pub fn fit_scaler(units: &[UnitTrajectory], cfg: &PreprocessConfig) -> Result<ScalerStats> {
    let mut rows = Vec::new();
    for u in units {
        for q in 0..u.n_cycles() {
            rows.extend(cycle_steps(u, q, cfg.subsample)?);
        }
    }
    ScalerStats::fit(rows.iter().map(|r| &r[..]), cfg.scaling)
}

/// Scaled steps of every cycle of a unit.
pub fn scaled_cycles(unit: &UnitTrajectory, cfg: &PreprocessConfig, scaler: &ScalerStats) -> Result<Vec<Vec<Step>>> {
    (0..unit.n_cycles())
        .map(|q| {
            let mut steps = cycle_steps(unit, q, cfg.subsample)?;
            for s in &mut steps {
                scaler.apply_in_place(s)?;
            }
            Ok(steps)
        })
        .collect()
}

/// Builds samples for every window of every unit. `concept_subset` selects
/// which concepts (by index) the sample labels carry.
pub fn build_samples<T: Scalar>(
    units: &[UnitTrajectory],
    cfg: &PreprocessConfig,
    scaler: &ScalerStats,
    concept_subset: &[usize],
) -> Result<Vec<Sample<T>>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for u in units {
        let ruls = rul_targets(u)?;
        let concepts = u.concepts(cfg.tau);
        let id = u.id();
        for (q, steps) in scaled_cycles(u, cfg, scaler)?.iter().enumerate() {
            let labels: Vec<u8> = concept_subset.iter().map(|&j| concepts[q][j]).collect();
            for w in make_windows::<T>(steps, cfg.window, cfg.stride)? {
                out.push(Sample {
                    window: w,
                    rul_target: T::of(ruls[q] / RUL_SCALE),
                    concepts: labels.clone(),
                    unit_id: id.clone(),
                    cycle: q + 1,
                });
            }
        }
    }
    Ok(out)
}
