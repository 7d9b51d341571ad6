//! Test-time concept interventions: detection-triggered inspections, sticky
//! overrides and stateless what-if queries.

mod session;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::datagen::UnitTrajectory;
use crate::error::{Error, Result};
use crate::metrics::{evaluate_predictions, predictions_from_details, unit_predictions, EvalOptions, MetricReport};
use crate::models::{summarize, CycleDetail, CyclePrediction, Model};
use crate::netcore::Tensor;
use crate::scalar::Scalar;

pub use session::{InterventionSession, SessionCycle};

/// When to inspect and how long a confirmed override lasts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InterventionPolicy {
    pub detection_threshold: f64,
    /// Confirmed overrides persist for all remaining cycles; otherwise they cover the inspected cycle only.
    pub sticky: bool,
    /// After a negative inspection, allow another inspection once the activation
    /// has dropped back to the threshold and crosses it again.
    pub rearm_on_negative_inspection: bool,
}

impl Default for InterventionPolicy {
    fn default() -> Self {
        Self { detection_threshold: 0.5, sticky: true, rearm_on_negative_inspection: false }
    }
}

impl InterventionPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.detection_threshold > 0.0 && self.detection_threshold < 1.0) {
            return Err(Error::Config(format!(
                "detection threshold {} must lie in (0, 1)",
                self.detection_threshold
            )));
        }
        Ok(())
    }
}

/// Simulated expert inspection.
pub trait InspectionOracle {
    /// Whether `concept` (index into the model's concepts) is degraded at 1-based `cycle`.
    fn inspect(&self, unit: &str, cycle: usize, concept: usize) -> Result<bool>;
}

/// Answers inspections from the units' own concept labels.
#[derive(Debug, Clone, Default)]
pub struct GroundTruthOracle {
    labels: HashMap<String, Vec<Vec<u8>>>,
}

impl GroundTruthOracle {
    /// `concepts` names the model's concepts, in order, among each unit's components.
    pub fn new(units: &[UnitTrajectory], concepts: &[String], tau: f64) -> Result<Self> {
        let mut labels = HashMap::new();
        for u in units {
            let cols = concepts
                .iter()
                .map(|c| {
                    u.components
                        .iter()
                        .position(|x| x == c)
                        .ok_or_else(|| Error::Input(format!("unit {} has no component {c:?}", u.id())))
                })
                .collect::<Result<Vec<_>>>()?;
            let per_cycle = u
                .concepts(tau)
                .into_iter()
                .map(|row| cols.iter().map(|&c| row[c]).collect())
                .collect();
            labels.insert(u.id(), per_cycle);
        }
        Ok(Self { labels })
    }
}

impl InspectionOracle for GroundTruthOracle {
    fn inspect(&self, unit: &str, cycle: usize, concept: usize) -> Result<bool> {
        let rows = self
            .labels
            .get(unit)
            .ok_or_else(|| Error::Input(format!("unknown unit {unit:?}")))?;
        let row = cycle
            .checked_sub(1)
            .and_then(|q| rows.get(q))
            .ok_or_else(|| Error::Input(format!("cycle {cycle} outside 1..={} for {unit}", rows.len())))?;
        row.get(concept)
            .map(|&c| c == 1)
            .ok_or_else(|| Error::Input(format!("concept index {concept} out of range")))
    }
}

/// One detection and the inspection it triggered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionEvent {
    pub unit: String,
    pub cycle: usize,
    pub concept: String,
    pub concept_index: usize,
    pub detected_activation: f64,
    pub inspection_result: bool,
    pub override_applied: bool,
}

/// Ordered events of one unit.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InterventionLog {
    pub unit: String,
    pub events: Vec<InterventionEvent>,
}

impl InterventionLog {
    pub fn applied(&self) -> impl Iterator<Item = &InterventionEvent> {
        self.events.iter().filter(|e| e.override_applied)
    }

    pub fn n_applied(&self) -> usize {
        self.applied().count()
    }

    /// One JSON object per line, newline-terminated.
    pub fn to_json_lines(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_json_lines(unit: &str, text: &str) -> Result<Self> {
        let events = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<InterventionEvent>, _>>()?;
        Ok(Self { unit: unit.to_string(), events })
    }
}

/// Corrected predictions of one unit together with the log that produced them.
#[derive(Debug, Clone)]
pub struct PolicyOutcome<T> {
    pub cycles: Vec<CycleDetail<T>>,
    pub log: InterventionLog,
}

impl<T: Scalar> PolicyOutcome<T> {
    pub fn trajectory(&self) -> Vec<CyclePrediction<T>> {
        self.cycles.iter().map(|c| c.summary.clone()).collect()
    }
}

pub(crate) fn require_bottleneck<T: Scalar>(model: &Model<T>) -> Result<()> {
    if model.family().is_bottleneck() {
        Ok(())
    } else {
        Err(Error::UnsupportedFamily(format!("{} has no intervenable concept bottleneck", model.family())))
    }
}

/// Steps through the unit's cycles, inspecting on detections and overriding
/// confirmed concepts with activation (CBMs) or probability (CEM) 1.
pub fn run_policy<T: Scalar>(
    model: &Model<T>,
    unit: &UnitTrajectory,
    policy: &InterventionPolicy,
    oracle: &dyn InspectionOracle,
) -> Result<PolicyOutcome<T>> {
    require_bottleneck(model)?;
    policy.validate()?;
    let k = model.k();
    let thr = T::of(policy.detection_threshold);
    let id = unit.id();
    let windows = model.unit_windows(unit)?;
    let mut sticky: Vec<Option<T>> = vec![None; k];
    let mut armed = vec![true; k];
    let mut log = InterventionLog { unit: id.clone(), events: Vec::new() };
    let mut cycles = Vec::with_capacity(windows.len());

    for (q0, w) in windows.iter().enumerate() {
        let q = q0 + 1;
        let mut overrides = sticky.clone();
        let mut outputs = model.cycle_outputs(w, &overrides)?;
        let mean = summarize(q, &outputs).activations;
        let mut changed = false;
        for j in 0..k {
            if overrides[j].is_some() {
                continue;
            }
            let a = mean[j];
            if a <= thr {
                if policy.rearm_on_negative_inspection {
                    armed[j] = true;
                }
                continue;
            }
            if !armed[j] {
                continue;
            }
            let degraded = oracle.inspect(&id, q, j)?;
            log.events.push(InterventionEvent {
                unit: id.clone(),
                cycle: q,
                concept: model.concepts()[j].clone(),
                concept_index: j,
                detected_activation: a.f64(),
                inspection_result: degraded,
                override_applied: degraded,
            });
            if degraded {
                overrides[j] = Some(T::one());
                changed = true;
                if policy.sticky {
                    sticky[j] = Some(T::one());
                }
            }
            armed[j] = !policy.sticky && degraded;
        }
        if changed {
            outputs = model.cycle_outputs(w, &overrides)?;
        }
        cycles.push(CycleDetail { summary: summarize(q, &outputs), windows: outputs });
    }
    Ok(PolicyOutcome { cycles, log })
}

/// Validated per-concept overrides from a name map.
pub fn overrides_by_name<T: Scalar>(model: &Model<T>, values: &BTreeMap<String, f64>) -> Result<Vec<Option<T>>> {
    let mut out = vec![None; model.k()];
    for (name, &v) in values {
        let j = model
            .concept_index(name)
            .ok_or_else(|| Error::Input(format!("model has no concept {name:?}")))?;
        out[j] = Some(T::of(v));
    }
    check_overrides(model, &out)?;
    Ok(out)
}

fn check_overrides<T: Scalar>(model: &Model<T>, overrides: &[Option<T>]) -> Result<()> {
    if overrides.len() != model.k() {
        return Err(Error::Shape(format!("{} overrides for k = {}", overrides.len(), model.k())));
    }
    if let Some(v) = overrides.iter().flatten().find(|v| !(**v >= T::zero() && **v <= T::one())) {
        return Err(Error::Input(format!("override value {v} outside [0, 1]")));
    }
    if overrides.iter().any(Option::is_some) {
        require_bottleneck(model)?;
    }
    Ok(())
}

/// Scaled RUL of one `[C x W]` window with the given concept overrides.
pub fn whatif_window<T: Scalar>(model: &Model<T>, window: &Tensor<T>, overrides: &[Option<T>]) -> Result<T> {
    check_overrides(model, overrides)?;
    let mut shape = vec![1];
    shape.extend_from_slice(window.shape());
    let batch = window.clone().reshape(&shape)?;
    Ok(model.cycle_outputs(&batch, overrides)?[0].rul)
}

/// Cycle-mean RUL, in cycles, of 1-based `cycle` with the given concept overrides.
pub fn whatif_cycle<T: Scalar>(model: &Model<T>, unit: &UnitTrajectory, cycle: usize, overrides: &[Option<T>]) -> Result<T> {
    check_overrides(model, overrides)?;
    let windows = model.unit_windows(unit)?;
    let w = cycle
        .checked_sub(1)
        .and_then(|q| windows.get(q))
        .ok_or_else(|| Error::Input(format!("cycle {cycle} outside 1..={}", windows.len())))?;
    Ok(summarize(cycle, &model.cycle_outputs(w, overrides)?).rul)
}

/// Unit id with its true, uncorrected and corrected RUL per cycle.
pub type UnitSeries = (String, Vec<f64>, Vec<f64>, Vec<f64>);

/// Reports before and after applying the policy to every unit.
#[derive(Debug, Clone)]
pub struct InterventionReport {
    pub before: MetricReport,
    pub after: MetricReport,
    pub logs: Vec<InterventionLog>,
    /// Per unit: (true RUL, uncorrected, corrected) cycle series in cycles.
    pub series: Vec<UnitSeries>,
}

pub fn evaluate_interventions<T: Scalar>(
    model: &Model<T>,
    units: &[UnitTrajectory],
    policy: &InterventionPolicy,
    oracle: &dyn InspectionOracle,
    opts: &EvalOptions,
) -> Result<InterventionReport> {
    let mut before = Vec::with_capacity(units.len());
    let mut after = Vec::with_capacity(units.len());
    let mut logs = Vec::with_capacity(units.len());
    let mut series = Vec::with_capacity(units.len());
    for u in units {
        let b = unit_predictions(model, u)?;
        let outcome = run_policy(model, u, policy, oracle)?;
        let a = predictions_from_details(model, u, outcome.cycles)?;
        series.push((u.id(), b.true_rul.clone(), b.pred_rul.clone(), a.pred_rul.clone()));
        before.push(b);
        after.push(a);
        logs.push(outcome.log);
    }
    Ok(InterventionReport {
        before: evaluate_predictions(&before, opts)?,
        after: evaluate_predictions(&after, opts)?,
        logs,
        series,
    })
}
