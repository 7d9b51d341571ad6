use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{summarize, Model};
use crate::netcore::Tensor;
use crate::scalar::Scalar;

use super::require_bottleneck;

/// Operator-driven sticky overrides on one unit.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InterventionSession {
    n_cycles: usize,
    k: usize,
    /// Concept index to first overridden cycle (1-based).
    overrides: BTreeMap<usize, usize>,
}

/// One cycle of a session trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCycle {
    pub cycle: usize,
    /// Cycle-mean RUL in cycles with overrides applied.
    pub rul: f64,
    pub activations: Vec<f64>,
    /// Concepts whose cycle-mean activation first exceeds the threshold at this cycle.
    pub detections: Vec<bool>,
    /// Concepts overridden at this cycle.
    pub overridden: Vec<bool>,
}

impl InterventionSession {
    pub fn new<T: Scalar>(model: &Model<T>, n_cycles: usize) -> Self {
        Self { n_cycles, k: model.k(), overrides: BTreeMap::new() }
    }

    pub fn n_cycles(&self) -> usize {
        self.n_cycles
    }

    pub fn overrides(&self) -> &BTreeMap<usize, usize> {
        &self.overrides
    }

    pub fn check_cycle(&self, cycle: usize) -> Result<()> {
        if cycle == 0 || cycle > self.n_cycles {
            return Err(Error::Input(format!("cycle {cycle} outside 1..={}", self.n_cycles)));
        }
        Ok(())
    }

    /// Whether `concept` is already overridden.
    pub fn is_overridden(&self, concept: usize) -> bool {
        self.overrides.contains_key(&concept)
    }

    /// Sets `concept` to 1 from `cycle` on. Fails with a usage error if it is already overridden.
    pub fn intervene<T: Scalar>(&mut self, model: &Model<T>, cycle: usize, concept: usize) -> Result<()> {
        require_bottleneck(model)?;
        self.check_cycle(cycle)?;
        if concept >= self.k {
            return Err(Error::Input(format!("concept index {concept} outside 0..{}", self.k)));
        }
        if self.is_overridden(concept) {
            return Err(Error::Usage(format!(
                "concept {} already overridden from cycle {}",
                model.concepts()[concept],
                self.overrides[&concept]
            )));
        }
        self.overrides.insert(concept, cycle);
        Ok(())
    }

    /// Overrides in effect at `cycle`.
    pub fn overrides_at<T: Scalar>(&self, cycle: usize) -> Vec<Option<T>> {
        (0..self.k)
            .map(|j| match self.overrides.get(&j) {
                Some(&start) if cycle >= start => Some(T::one()),
                _ => None,
            })
            .collect()
    }

    /// Per-cycle trajectory for cycles `from..=upto` given each cycle's window batch.
    pub fn trajectory<T: Scalar>(
        &self,
        model: &Model<T>,
        cycle_windows: &[Tensor<T>],
        from: usize,
        upto: usize,
        threshold: f64,
    ) -> Result<Vec<SessionCycle>> {
        if cycle_windows.len() != self.n_cycles {
            return Err(Error::Shape(format!("{} window batches for {} cycles", cycle_windows.len(), self.n_cycles)));
        }
        self.check_cycle(upto)?;
        let from = from.max(1);
        let mut crossed = vec![false; self.k];
        let mut out = Vec::new();
        for (q0, w) in cycle_windows.iter().enumerate().take(upto) {
            let q = q0 + 1;
            let overrides = self.overrides_at::<T>(q);
            let s = summarize(q, &model.cycle_outputs(w, &overrides)?);
            let activations: Vec<f64> = s.activations.iter().map(|a| a.f64()).collect();
            let detections: Vec<bool> = activations
                .iter()
                .zip(crossed.iter_mut())
                .map(|(&a, c)| {
                    let first = a > threshold && !*c;
                    *c |= a > threshold;
                    first
                })
                .collect();
            if q >= from {
                out.push(SessionCycle {
                    cycle: q,
                    rul: s.rul.f64(),
                    activations,
                    detections,
                    overridden: overrides.iter().map(Option::is_some).collect(),
                });
            }
        }
        Ok(out)
    }
}
