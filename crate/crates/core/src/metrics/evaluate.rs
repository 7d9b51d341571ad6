use rand::seq::index;

use crate::datagen::UnitTrajectory;
use crate::error::{Error, Result};
use crate::models::{CycleDetail, Family, Model};
use crate::preprocess;
use crate::scalar::Scalar;
use crate::seed;

use super::{
    auc_roc, concept_accuracy, concept_alignment, fault_score, nasa_score, rmse_per_cycle, ConfusionClasses,
    ConfusionMatrix, MetricReport, UnitMetrics,
};

/// Per-window representations used for concept alignment.
#[derive(Debug, Clone, PartialEq)]
pub enum Representations {
    /// One representation per concept: `[concept][window]`.
    PerConcept(Vec<Vec<Vec<f64>>>),
    /// A single code shared by every concept: `[window]`.
    Shared(Vec<Vec<f64>>),
}

/// Everything evaluation needs from one unit's predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitPredictions {
    pub unit: String,
    /// True RUL per cycle, in cycles.
    pub true_rul: Vec<f64>,
    /// Cycle-mean predicted RUL, in cycles (negative values are clamped when scored).
    pub pred_rul: Vec<f64>,
    pub hs: Vec<u8>,
    /// Cycle-mean activations, empty rows for models without concepts.
    pub cycle_activations: Vec<Vec<f64>>,
    /// Window activations, empty rows for models without concepts.
    pub window_activations: Vec<Vec<f64>>,
    pub window_labels: Vec<Vec<u8>>,
    pub representations: Representations,
}

/// Metric report of one unit plus its predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitEvaluation {
    pub metrics: UnitMetrics,
    pub predictions: UnitPredictions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub name: String,
    pub family: String,
    pub classes: ConfusionClasses,
    /// Windows drawn (without replacement) for concept alignment.
    pub cas_max_points: usize,
    pub seed: u64,
}

fn clamp_nonneg(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x.max(0.0)).collect()
}

fn unit_metrics(p: &UnitPredictions, with_concepts: bool) -> Result<UnitMetrics> {
    let pred = clamp_nonneg(&p.pred_rul);
    let rmse = rmse_per_cycle(&pred, &p.true_rul)?;
    let nasa = nasa_score(&pred, &p.true_rul)?;
    let (concept_accuracy, auc) = if with_concepts {
        let acc = concept_accuracy(&p.window_activations, &p.window_labels)?.macro_mean;
        let scores: Vec<f64> = p
            .cycle_activations
            .iter()
            .map(|a| fault_score(a).ok_or_else(|| Error::Input("cycle without activations".into())))
            .collect::<Result<_>>()?;
        let auc = auc_roc(&scores, &p.hs).ok();
        (Some(acc), auc)
    } else {
        (None, None)
    };
    Ok(UnitMetrics { unit: p.unit.clone(), n_cycles: p.true_rul.len(), rmse, nasa, concept_accuracy, auc })
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Builds a report from already computed predictions.
pub fn evaluate_predictions(units: &[UnitPredictions], opts: &EvalOptions) -> Result<MetricReport> {
    if units.is_empty() {
        return Err(Error::Input("no units to evaluate".into()));
    }
    let k = opts.classes.concepts.len();
    let with_concepts = units.iter().all(|u| u.window_activations.first().is_some_and(|a| !a.is_empty()));
    let unit_rows = units.iter().map(|u| unit_metrics(u, with_concepts)).collect::<Result<Vec<_>>>()?;

    let mut confusion = None;
    let mut acc_per = Vec::new();
    if with_concepts {
        let mut m = ConfusionMatrix::empty(&opts.classes);
        let mut per = vec![0.0; k];
        for u in units {
            m.add(&ConfusionMatrix::compute(&opts.classes, &u.window_activations, &u.window_labels)?)?;
            for (p, a) in per.iter_mut().zip(concept_accuracy(&u.window_activations, &u.window_labels)?.per_concept) {
                *p += a / units.len() as f64;
            }
        }
        confusion = Some(m);
        acc_per = per;
    }

    let n_windows: usize = units.iter().map(|u| u.window_labels.len()).sum();
    let mut picked = index::sample(&mut seed::rng(opts.seed, "cas/points"), n_windows, opts.cas_max_points.min(n_windows)).into_vec();
    picked.sort_unstable();
    let mut locate = Vec::with_capacity(n_windows);
    for (ui, u) in units.iter().enumerate() {
        locate.extend((0..u.window_labels.len()).map(|w| (ui, w)));
    }
    let mut reps: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(picked.len()); k];
    let mut labels: Vec<Vec<u8>> = vec![Vec::with_capacity(picked.len()); k];
    for &i in &picked {
        let (ui, w) = locate[i];
        let u = &units[ui];
        for j in 0..k {
            let r = match &u.representations {
                Representations::PerConcept(r) => &r[j][w],
                Representations::Shared(r) => &r[w],
            };
            reps[j].push(r.clone());
            labels[j].push(u.window_labels[w][j]);
        }
    }
    let cas = concept_alignment(&reps, &labels, seed::derive(opts.seed, "cas"))?;

    Ok(MetricReport {
        model: opts.name.clone(),
        family: opts.family.clone(),
        concepts: opts.classes.concepts.clone(),
        rmse: mean(unit_rows.iter().map(|u| u.rmse)).unwrap_or(0.0),
        nasa: mean(unit_rows.iter().map(|u| u.nasa)).unwrap_or(0.0),
        concept_accuracy: mean(unit_rows.iter().filter_map(|u| u.concept_accuracy)),
        concept_accuracy_per_concept: acc_per,
        auc: mean(unit_rows.iter().filter_map(|u| u.auc)),
        cas: cas.macro_mean,
        cas_per_concept: cas.per_concept,
        confusion,
        units: unit_rows,
    })
}

/// Concept indices of `model`'s concepts within a unit's component list.
pub(crate) fn concept_columns<T: Scalar>(model: &Model<T>, unit: &UnitTrajectory) -> Result<Vec<usize>> {
    model
        .concepts()
        .iter()
        .map(|c| {
            unit.components
                .iter()
                .position(|u| u == c)
                .ok_or_else(|| Error::Input(format!("unit {} has no component {c:?}", unit.id())))
        })
        .collect()
}

fn to_f64<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.f64()).collect()
}

/// Runs the model over every cycle of `unit` and collects its predictions.
pub fn unit_predictions<T: Scalar>(model: &Model<T>, unit: &UnitTrajectory) -> Result<UnitPredictions> {
    predictions_from_details(model, unit, model.predict_unit(unit)?)
}

/// Collects predictions from already computed cycle outputs (e.g. with interventions applied).
pub fn predictions_from_details<T: Scalar>(
    model: &Model<T>,
    unit: &UnitTrajectory,
    details: Vec<CycleDetail<T>>,
) -> Result<UnitPredictions> {
    if details.len() != unit.n_cycles() {
        return Err(Error::Shape(format!("{} cycle outputs for {} cycles of {}", details.len(), unit.n_cycles(), unit.id())));
    }
    let cols = concept_columns(model, unit)?;
    let concepts = unit.concepts(model.preprocess().tau);
    let true_rul = preprocess::rul_targets(unit)?;
    let family = model.family();
    let k = model.k();
    let mut out = UnitPredictions {
        unit: unit.id(),
        true_rul,
        pred_rul: Vec::new(),
        hs: unit.health_states(),
        cycle_activations: Vec::new(),
        window_activations: Vec::new(),
        window_labels: Vec::new(),
        representations: Representations::Shared(Vec::new()),
    };
    let mut per_concept: Vec<Vec<Vec<f64>>> = vec![Vec::new(); k];
    let mut shared = Vec::new();
    for (q, detail) in details.into_iter().enumerate() {
        out.pred_rul.push(detail.summary.rul.f64());
        out.cycle_activations.push(to_f64(&detail.summary.activations));
        let labels: Vec<u8> = cols.iter().map(|&c| concepts[q][c]).collect();
        for w in detail.windows {
            out.window_activations.push(to_f64(&w.activations));
            out.window_labels.push(labels.clone());
            match family {
                Family::Cnn | Family::CnnCls => shared.push(to_f64(&w.latent)),
                Family::Cem => {
                    for (j, e) in w.embeddings.iter().enumerate() {
                        per_concept[j].push(to_f64(e));
                    }
                }
                Family::CbmBool | Family::CbmFuzzy | Family::CbmHybrid => {
                    for (set, a) in per_concept.iter_mut().zip(&w.activations) {
                        set.push(vec![a.f64()]);
                    }
                }
            }
        }
    }
    out.representations = match family {
        Family::Cnn | Family::CnnCls => Representations::Shared(shared),
        _ => Representations::PerConcept(per_concept),
    };
    Ok(out)
}

/// Evaluates `model` on test units.
pub fn evaluate<T: Scalar>(model: &Model<T>, units: &[UnitTrajectory], opts: &EvalOptions) -> Result<(MetricReport, Vec<UnitEvaluation>)> {
    let preds = units.iter().map(|u| unit_predictions(model, u)).collect::<Result<Vec<_>>>()?;
    let report = evaluate_predictions(&preds, opts)?;
    let per_unit = report
        .units
        .iter()
        .cloned()
        .zip(preds)
        .map(|(metrics, predictions)| UnitEvaluation { metrics, predictions })
        .collect();
    Ok((report, per_unit))
}
