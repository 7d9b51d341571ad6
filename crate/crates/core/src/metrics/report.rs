use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::ConfusionMatrix;

/// Metrics of one test unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitMetrics {
    pub unit: String,
    pub n_cycles: usize,
    pub rmse: f64,
    pub nasa: f64,
    pub concept_accuracy: Option<f64>,
    pub auc: Option<f64>,
}

/// Evaluation of one model on a set of units. Scalar metrics are macro
/// averages over units; concept alignment is computed on the pooled windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model: String,
    pub family: String,
    pub concepts: Vec<String>,
    pub rmse: f64,
    pub nasa: f64,
    pub concept_accuracy: Option<f64>,
    pub concept_accuracy_per_concept: Vec<f64>,
    pub auc: Option<f64>,
    pub cas: f64,
    pub cas_per_concept: Vec<f64>,
    pub confusion: Option<ConfusionMatrix>,
    pub units: Vec<UnitMetrics>,
}

fn num(v: Option<f64>) -> Value {
    v.and_then(serde_json::Number::from_f64).map(Value::Number).unwrap_or(Value::Null)
}

impl MetricReport {
    /// Ordered scalar columns shared by the flat JSON and the CSV row.
    pub fn columns(&self) -> Vec<(String, Value)> {
        let mut cols = vec![
            ("model".to_string(), Value::String(self.model.clone())),
            ("family".to_string(), Value::String(self.family.clone())),
            ("rmse".to_string(), num(Some(self.rmse))),
            ("nasa".to_string(), num(Some(self.nasa))),
            ("concept_accuracy".to_string(), num(self.concept_accuracy)),
        ];
        for (i, c) in self.concepts.iter().enumerate() {
            cols.push((format!("concept_accuracy.{c}"), num(self.concept_accuracy_per_concept.get(i).copied())));
        }
        cols.push(("auc".to_string(), num(self.auc)));
        cols.push(("cas".to_string(), num(Some(self.cas))));
        for (i, c) in self.concepts.iter().enumerate() {
            cols.push((format!("cas.{c}"), num(self.cas_per_concept.get(i).copied())));
        }
        cols
    }

    /// One-level JSON object of the scalar metrics; not-applicable metrics are `null`.
    pub fn to_flat_json(&self) -> Value {
        Value::Object(self.columns().into_iter().collect::<Map<_, _>>())
    }

    pub fn csv_header(&self) -> String {
        self.columns().into_iter().map(|(k, _)| k).collect::<Vec<_>>().join(",")
    }

    /// CSV row matching [`csv_header`](Self::csv_header); not-applicable cells are empty.
    pub fn csv_row(&self) -> String {
        self.columns()
            .into_iter()
            .map(|(_, v)| match v {
                Value::Null => String::new(),
                Value::String(s) => s,
                other => other.to_string(),
            })
            .collect::<Vec<_>>()
            .join(",")
    }
}
