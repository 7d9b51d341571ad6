//! Evaluation: RUL error, NASA score, concept accuracy, fault-detection AUC,
//! concept alignment and confusion matrices.

mod cluster;
mod confusion;
mod evaluate;
mod report;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use cluster::{concept_alignment, homogeneity, kmeans, ConceptAlignment, KMEANS_MAX_ITER, CAS_CLUSTER_COUNTS};
pub use confusion::{class_index, ConfusionClasses, ConfusionMatrix};
pub(crate) use evaluate::concept_columns;
pub use evaluate::{evaluate, evaluate_predictions, predictions_from_details, unit_predictions, EvalOptions, Representations, UnitEvaluation, UnitPredictions};
pub use report::{MetricReport, UnitMetrics};

/// Decision threshold for concept activations.
pub const DECISION_THRESHOLD: f64 = 0.5;
/// NASA score exponent for under-estimates (prediction below truth).
pub const NASA_ALPHA_UNDER: f64 = 1.0 / 13.0;
/// NASA score exponent for over-estimates.
pub const NASA_ALPHA_OVER: f64 = 1.0 / 10.0;

fn check_pair<A, B>(a: &[A], b: &[B], what: &str) -> Result<()> {
    if a.is_empty() {
        return Err(Error::Input(format!("{what}: empty input")));
    }
    if a.len() != b.len() {
        return Err(Error::Shape(format!("{what}: {} predictions for {} targets", a.len(), b.len())));
    }
    Ok(())
}

/// Root mean squared error over cycle-mean predictions.
pub fn rmse_per_cycle<T: Scalar>(pred: &[T], truth: &[T]) -> Result<T> {
    check_pair(pred, truth, "rmse")?;
    let sum = pred.iter().zip(truth).fold(T::zero(), |a, (&p, &t)| a + (p - t) * (p - t));
    Ok((sum / T::of_usize(pred.len())).sqrt())
}

/// Mean of `exp(alpha * |error|) - 1`, with the larger alpha for over-estimates.
pub fn nasa_score<T: Scalar>(pred: &[T], truth: &[T]) -> Result<T> {
    check_pair(pred, truth, "nasa score")?;
    let sum = pred.iter().zip(truth).fold(T::zero(), |a, (&p, &t)| {
        let alpha = if p > t { T::of(NASA_ALPHA_OVER) } else { T::of(NASA_ALPHA_UNDER) };
        a + ((p - t).abs() * alpha).exp() - T::one()
    });
    Ok(sum / T::of_usize(pred.len()))
}

/// Per-concept and macro-averaged accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptAccuracy {
    pub per_concept: Vec<f64>,
    pub macro_mean: f64,
}

/// Accuracy of thresholded activations (`> 0.5` means active) against binary labels.
pub fn concept_accuracy<T: Scalar>(activations: &[Vec<T>], labels: &[Vec<u8>]) -> Result<ConceptAccuracy> {
    check_pair(activations, labels, "concept accuracy")?;
    let k = labels[0].len();
    if k == 0 {
        return Err(Error::Input("concept accuracy: no concepts".into()));
    }
    let mut correct = vec![0usize; k];
    for (a, l) in activations.iter().zip(labels) {
        if a.len() != k || l.len() != k {
            return Err(Error::Shape(format!("concept accuracy: rows must have {k} entries")));
        }
        for j in 0..k {
            let hard = u8::from(a[j] > T::of(DECISION_THRESHOLD));
            if hard == l[j] {
                correct[j] += 1;
            }
        }
    }
    let n = activations.len() as f64;
    let per_concept: Vec<f64> = correct.iter().map(|&c| c as f64 / n).collect();
    let macro_mean = per_concept.iter().sum::<f64>() / k as f64;
    Ok(ConceptAccuracy { per_concept, macro_mean })
}

/// Midranks (1-based) of `values`.
fn midranks<T: Scalar>(values: &[T]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Rank-based (Mann-Whitney) ROC AUC; ties count one half.
pub fn auc_roc<T: Scalar>(scores: &[T], labels: &[u8]) -> Result<f64> {
    check_pair(scores, labels, "auc")?;
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Input("auc: non-finite score".into()));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::Input("auc: labels must be 0 or 1".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Input("auc: labels contain a single class".into()));
    }
    let ranks = midranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l == 1).map(|(r, _)| r).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

/// Fault score of one cycle: the highest cycle-mean concept activation.
pub fn fault_score<T: Scalar>(cycle_activations: &[T]) -> Option<T> {
    cycle_activations.iter().copied().reduce(T::max)
}

/// Pearson correlation; zero when either series is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, "pearson")?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok(sxy / (sxx * syy).sqrt())
}
