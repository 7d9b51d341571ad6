use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed;

/// Cluster counts averaged by the concept alignment score.
pub const CAS_CLUSTER_COUNTS: [usize; 5] = [2, 4, 6, 8, 10];
pub const KMEANS_MAX_ITER: usize = 100;

/// k-means with k-means++ seeding and a single restart; returns cluster assignments.
pub fn kmeans<T: Scalar, R: Rng>(points: &[Vec<T>], k: usize, max_iter: usize, rng: &mut R) -> Result<Vec<usize>> {
    if points.is_empty() {
        return Err(Error::Input("k-means: no points".into()));
    }
    if k == 0 {
        return Err(Error::Input("k-means: zero clusters".into()));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Shape("k-means: points differ in dimension".into()));
    }
    let k = k.min(points.len());
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    let to_f64 = |p: &[T]| p.iter().map(|v| v.f64()).collect::<Vec<f64>>();
    centers.push(to_f64(&points[rng.gen_range(0..points.len())]));
    let mut d2: Vec<f64> = points.iter().map(|p| dist2_mixed(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut pick = d2.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    pick = i;
                    break;
                }
                r -= d;
            }
            pick
        } else {
            rng.gen_range(0..points.len())
        };
        let c = to_f64(&points[next]);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2_mixed(p, &c));
        }
        centers.push(c);
    }

    let mut assign = vec![usize::MAX; points.len()];
    for _ in 0..max_iter {
        let mut changed = false;
        for (a, p) in assign.iter_mut().zip(points) {
            let best = nearest(p, &centers);
            if *a != best {
                *a = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assign.iter().zip(points) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v.f64();
            }
        }
        for ((c, s), &n) in centers.iter_mut().zip(sums).zip(&counts) {
            if n > 0 {
                *c = s.into_iter().map(|v| v / n as f64).collect();
            }
        }
    }
    Ok(assign)
}

fn dist2_mixed<T: Scalar>(p: &[T], c: &[f64]) -> f64 {
    p.iter().zip(c).map(|(&x, &y)| (x.f64() - y).powi(2)).sum()
}

fn nearest<T: Scalar>(p: &[T], centers: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centers.iter().enumerate() {
        let d = dist2_mixed(p, c);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

fn entropy(counts: impl Iterator<Item = usize>, total: usize) -> f64 {
    let n = total as f64;
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Homogeneity `1 - H(C|K) / H(C)` of labels given clusters; 1 when the labels carry no entropy.
pub fn homogeneity(labels: &[u8], clusters: &[usize]) -> Result<f64> {
    if labels.len() != clusters.len() || labels.is_empty() {
        return Err(Error::Shape("homogeneity: labels and clusters must be non-empty and equal in length".into()));
    }
    let n = labels.len();
    let mut class_counts: BTreeMap<u8, usize> = BTreeMap::new();
    let mut cluster_counts: BTreeMap<usize, usize> = BTreeMap::new();
    let mut joint: BTreeMap<(usize, u8), usize> = BTreeMap::new();
    for (&c, &k) in labels.iter().zip(clusters) {
        *class_counts.entry(c).or_default() += 1;
        *cluster_counts.entry(k).or_default() += 1;
        *joint.entry((k, c)).or_default() += 1;
    }
    let h_c = entropy(class_counts.values().copied(), n);
    if h_c == 0.0 {
        return Ok(1.0);
    }
    let nf = n as f64;
    let h_ck: f64 = joint
        .iter()
        .map(|(&(k, _), &nkc)| {
            let nk = cluster_counts[&k] as f64;
            -(nkc as f64 / nf) * (nkc as f64 / nk).ln()
        })
        .sum();
    Ok((1.0 - h_ck / h_c).clamp(0.0, 1.0))
}

/// Concept alignment score per concept and macro-averaged.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptAlignment {
    pub per_concept: Vec<f64>,
    pub macro_mean: f64,
}

/// Clusters each concept's representation for every count in [`CAS_CLUSTER_COUNTS`]
/// and averages the homogeneity of that concept's labels.
/// `representations[j][i]` is sample `i`'s representation for concept `j`.
pub fn concept_alignment<T: Scalar>(representations: &[Vec<Vec<T>>], labels: &[Vec<u8>], seed_root: u64) -> Result<ConceptAlignment> {
    if representations.is_empty() || representations.len() != labels.len() {
        return Err(Error::Shape("concept alignment: need one representation set per concept".into()));
    }
    let mut per_concept = Vec::with_capacity(labels.len());
    for (j, (reps, lab)) in representations.iter().zip(labels).enumerate() {
        if reps.len() != lab.len() {
            return Err(Error::Shape(format!("concept alignment: concept {j} has {} points and {} labels", reps.len(), lab.len())));
        }
        let mut total = 0.0;
        for &kappa in &CAS_CLUSTER_COUNTS {
            let mut rng = seed::rng(seed_root, &format!("cas/{j}/{kappa}"));
            let clusters = kmeans(reps, kappa, KMEANS_MAX_ITER, &mut rng)?;
            total += homogeneity(lab, &clusters)?;
        }
        per_concept.push(total / CAS_CLUSTER_COUNTS.len() as f64);
    }
    let macro_mean = per_concept.iter().sum::<f64>() / per_concept.len() as f64;
    Ok(ConceptAlignment { per_concept, macro_mean })
}
