use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::DECISION_THRESHOLD;

/// Mutually exclusive classes: healthy, one per concept, one per configured concept pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionClasses {
    pub concepts: Vec<String>,
    /// Pairs of concept indices that form a combined class.
    pub pairs: Vec<(usize, usize)>,
}

impl ConfusionClasses {
    pub fn new(concepts: Vec<String>, pairs: Vec<(usize, usize)>) -> Result<Self> {
        let k = concepts.len();
        let mut norm = Vec::with_capacity(pairs.len());
        for (a, b) in pairs {
            if a == b || a >= k || b >= k {
                return Err(Error::Config(format!("invalid concept pair ({a}, {b}) for k = {k}")));
            }
            let p = (a.min(b), a.max(b));
            if !norm.contains(&p) {
                norm.push(p);
            }
        }
        Ok(Self { concepts, pairs: norm })
    }

    /// Builds the classes from concept-name pairs.
    pub fn from_names(concepts: Vec<String>, pairs: &[(String, String)]) -> Result<Self> {
        let idx = |n: &str| {
            concepts
                .iter()
                .position(|c| c == n)
                .ok_or_else(|| Error::Config(format!("unknown concept {n:?} in combined class")))
        };
        let pairs = pairs.iter().map(|(a, b)| Ok((idx(a)?, idx(b)?))).collect::<Result<Vec<_>>>()?;
        Self::new(concepts, pairs)
    }

    pub fn len(&self) -> usize {
        1 + self.concepts.len() + self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn labels(&self) -> Vec<String> {
        let mut out = vec!["healthy".to_string()];
        out.extend(self.concepts.iter().cloned());
        out.extend(self.pairs.iter().map(|&(a, b)| format!("{}+{}", self.concepts[a], self.concepts[b])));
        out
    }
}

/// Class of an activation vector. Several active concepts outside a configured
/// pair fall back to the single concept with the highest activation (lowest index on ties).
pub fn class_index<T: Scalar>(classes: &ConfusionClasses, activations: &[T]) -> Result<usize> {
    let k = classes.concepts.len();
    if activations.len() != k {
        return Err(Error::Shape(format!("{} activations for {k} concepts", activations.len())));
    }
    let active: Vec<usize> = (0..k).filter(|&j| activations[j] > T::of(DECISION_THRESHOLD)).collect();
    match active.as_slice() {
        [] => Ok(0),
        [j] => Ok(1 + j),
        [a, b] if classes.pairs.contains(&(*a, *b)) => {
            let p = classes.pairs.iter().position(|&p| p == (*a, *b)).unwrap_or(0);
            Ok(1 + k + p)
        }
        many => {
            let mut best = many[0];
            for &j in &many[1..] {
                if activations[j] > activations[best] {
                    best = j;
                }
            }
            Ok(1 + best)
        }
    }
}

/// Counts indexed `[true class][predicted class]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn empty(classes: &ConfusionClasses) -> Self {
        let n = classes.len();
        Self { labels: classes.labels(), counts: vec![vec![0; n]; n] }
    }

    pub fn compute<T: Scalar>(classes: &ConfusionClasses, activations: &[Vec<T>], labels: &[Vec<u8>]) -> Result<Self> {
        if activations.len() != labels.len() {
            return Err(Error::Shape(format!("{} predictions for {} labels", activations.len(), labels.len())));
        }
        let mut m = Self::empty(classes);
        for (a, l) in activations.iter().zip(labels) {
            let truth: Vec<f64> = l.iter().map(|&v| f64::from(v)).collect();
            let t = class_index(classes, &truth)?;
            let p = class_index(classes, a)?;
            m.counts[t][p] += 1;
        }
        Ok(m)
    }

    pub fn add(&mut self, other: &Self) -> Result<()> {
        if self.labels != other.labels {
            return Err(Error::Shape("confusion matrices have different classes".into()));
        }
        for (r, o) in self.counts.iter_mut().zip(&other.counts) {
            for (c, v) in r.iter_mut().zip(o) {
                *c += v;
            }
        }
        Ok(())
    }

    pub fn row_sums(&self) -> Vec<usize> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn total(&self) -> usize {
        self.row_sums().iter().sum()
    }

    /// CSV with a `true\predicted` corner cell.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\predicted");
        for l in &self.labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (l, row) in self.labels.iter().zip(&self.counts) {
            out.push_str(l);
            for c in row {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hpt_lpt() -> ConfusionClasses {
        ConfusionClasses::from_names(vec!["HPT".into(), "LPT".into()], &[("HPT".into(), "LPT".into())]).unwrap()
    }

    #[test]
    fn healthy_mass() {
        let c = hpt_lpt();
        let m = ConfusionMatrix::compute(&c, &vec![vec![0.1, 0.2]; 3], &vec![vec![0u8, 0]; 3]).unwrap();
        assert_eq!(m.counts[0][0], 3);
        assert_eq!(m.total(), 3);
    }

    #[test]
    fn combined_label_predicted_single() {
        let c = hpt_lpt();
        let m = ConfusionMatrix::compute(&c, &[vec![0.2, 0.9]], &[vec![1, 1]]).unwrap();
        assert_eq!(m.labels, vec!["healthy", "HPT", "LPT", "HPT+LPT"]);
        assert_eq!(m.counts[3][2], 1);
    }

    #[test]
    fn hand_tally() {
        let c = hpt_lpt();
        let acts = vec![vec![0.9, 0.1], vec![0.8, 0.7], vec![0.3, 0.2]];
        let labels = vec![vec![1, 0], vec![0, 1], vec![1, 0]];
        let m = ConfusionMatrix::compute(&c, &acts, &labels).unwrap();
        let mut want = vec![vec![0; 4]; 4];
        want[1][1] = 1;
        want[2][3] = 1;
        want[1][0] = 1;
        assert_eq!(m.counts, want);
        assert_eq!(m.row_sums(), vec![0, 2, 1, 0]);
    }

    #[test]
    fn unpaired_multi_falls_back_to_max() {
        let c = ConfusionClasses::new(vec!["A".into(), "B".into(), "C".into()], vec![]).unwrap();
        assert_eq!(class_index(&c, &[0.6, 0.9, 0.7]).unwrap(), 2);
        assert_eq!(class_index(&c, &[0.8, 0.8, 0.1]).unwrap(), 1);
    }
}
