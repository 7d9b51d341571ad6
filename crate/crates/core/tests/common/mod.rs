//! Independent reference implementations and fixtures shared by the
//! integration tests and the acceptance harness.

#![allow(dead_code)]

use std::collections::BTreeMap;

use prognostics_core::datagen::{FleetSpec, GeneratorConfig};
use prognostics_core::experiment::ExperimentConfig;
use prognostics_core::models::{Batch, Family, Model, ModelConfig, Substitution};
use prognostics_core::netcore::{Graph, ParameterSet, Tensor};
use prognostics_core::preprocess::PreprocessConfig;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
pub const FD_ABS_FLOOR: f64 = 1e-7;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Passes when the absolute difference is below the floor or the relative error below the tolerance.
pub fn grads_agree(analytic: f64, numeric: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= FD_ABS_FLOOR || diff / analytic.abs().max(numeric.abs()) < FD_REL_TOL
}

// ---------------------------------------------------------------- models

pub const TINY_CHANNELS: usize = 3;
pub const TINY_WINDOW: usize = 7;

/// A model small enough for exhaustive finite differences (under 500 parameters).
pub fn tiny_config(family: Family, seed: u64) -> ModelConfig {
    ModelConfig {
        family,
        k: 2,
        in_channels: TINY_CHANNELS,
        window: TINY_WINDOW,
        conv_channels: vec![3, 2],
        kernel_size: 2,
        latent_dim: 5,
        embed_dim: 3,
        seed,
        ..ModelConfig::default()
    }
}

pub fn tiny_model(family: Family, seed: u64) -> Model<f64> {
    let cfg = tiny_config(family, seed);
    let pre = PreprocessConfig { window: TINY_WINDOW, ..PreprocessConfig::default() };
    Model::new(cfg, vec!["A".into(), "B".into()], pre).expect("tiny model")
}

pub fn random_windows(rng: &mut impl Rng, batch: usize, channels: usize, window: usize) -> Tensor<f64> {
    Tensor::from_fn(&[batch, channels, window], |_| rng.gen_range(-2.0..2.0))
}

pub fn random_batch(rng: &mut impl Rng, model: &Model<f64>, batch: usize) -> Batch<f64> {
    let cfg = model.config();
    Batch {
        windows: random_windows(rng, batch, cfg.in_channels, cfg.window),
        rul: (0..batch).map(|_| rng.gen_range(0.0..0.6)).collect(),
        concepts: (0..batch * cfg.k).map(|_| f64::from(u8::from(rng.gen_bool(0.5)))).collect(),
    }
}

pub fn random_substitution(rng: &mut impl Rng, rows: usize, k: usize) -> Substitution<f64> {
    let mask: Vec<bool> = (0..rows * k).map(|_| rng.gen_bool(0.4)).collect();
    let values = (0..rows * k).map(|_| f64::from(u8::from(rng.gen_bool(0.5)))).collect();
    Substitution { mask, values }
}

/// Worst mismatch of a model's analytic gradients against central differences.
#[derive(Debug, Clone, Copy, Default)]
pub struct GradCheck {
    pub checked: usize,
    pub failures: usize,
    pub worst_rel: f64,
}

impl GradCheck {
    fn record(&mut self, analytic: f64, numeric: f64) {
        self.checked += 1;
        let scale = analytic.abs().max(numeric.abs());
        if scale > FD_ABS_FLOOR {
            self.worst_rel = self.worst_rel.max((analytic - numeric).abs() / scale);
        }
        if !grads_agree(analytic, numeric) {
            self.failures += 1;
        }
    }

    pub fn merge(&mut self, other: GradCheck) {
        self.checked += other.checked;
        self.failures += other.failures;
        self.worst_rel = self.worst_rel.max(other.worst_rel);
    }
}

pub fn grad_check_model(model: &mut Model<f64>, batch: &Batch<f64>, subst: Option<&Substitution<f64>>) -> GradCheck {
    let (_, grads) = model.loss_and_gradients(batch, subst).expect("analytic gradients");
    let loss = |m: &Model<f64>| m.loss_and_gradients(batch, subst).expect("loss").0.total;
    let ids: Vec<_> = model.parameters().ids().collect();
    let mut out = GradCheck::default();
    for id in ids {
        let n = model.parameters().value(id).len();
        let analytic = grads.param(id).map(|g| g.data().to_vec()).unwrap_or_else(|| vec![0.0; n]);
        for i in 0..n {
            let orig = model.parameters().value(id).data()[i];
            model.parameters_mut().value_mut(id).data_mut()[i] = orig + FD_STEP;
            let up = loss(model);
            model.parameters_mut().value_mut(id).data_mut()[i] = orig - FD_STEP;
            let down = loss(model);
            model.parameters_mut().value_mut(id).data_mut()[i] = orig;
            out.record(analytic[i], (up - down) / (2.0 * FD_STEP));
        }
    }
    out
}

/// Random network exercising every differentiable graph operation, built
/// directly on the tape. Returns the check over parameters and the input.
pub fn grad_check_random_graph(seed: u64) -> GradCheck {
    let mut r = rng(seed);
    let batch = r.gen_range(1..=3);
    let c_in = r.gen_range(1..=3);
    let c_out = r.gen_range(1..=3);
    let kernel = r.gen_range(1..=3);
    let width = kernel + r.gen_range(0..=3);
    let t_out = width - kernel + 1;
    let hidden = r.gen_range(2..=4);
    let m = r.gen_range(1..=3);
    let lambda = r.gen_range(0.0..1.0);

    let mut ps = ParameterSet::new();
    let add = |ps: &mut ParameterSet<f64>, name: &str, shape: &[usize], r: &mut ChaCha8Rng| {
        ps.add(name, Tensor::from_fn(shape, |_| r.gen_range(-1.0..1.0)))
    };
    let cw = add(&mut ps, "cw", &[c_out, c_in, kernel], &mut r);
    let cb = add(&mut ps, "cb", &[c_out], &mut r);
    let dw = add(&mut ps, "dw", &[hidden, c_out * t_out], &mut r);
    let db = add(&mut ps, "db", &[hidden], &mut r);
    let pw = add(&mut ps, "pw", &[m, hidden], &mut r);
    let pb = add(&mut ps, "pb", &[m], &mut r);
    let nw = add(&mut ps, "nw", &[m, hidden], &mut r);
    let nb = add(&mut ps, "nb", &[m], &mut r);
    let hw = add(&mut ps, "hw", &[1, m + hidden - 1], &mut r);
    let hb = add(&mut ps, "hb", &[1], &mut r);
    let x0 = Tensor::from_fn(&[batch, c_in, width], |_| r.gen_range(-1.5..1.5));
    let target: Vec<f64> = (0..batch).map(|_| r.gen_range(-1.0..1.0)).collect();
    let labels: Vec<f64> = (0..batch).map(|_| f64::from(u8::from(r.gen_bool(0.5)))).collect();
    let mask: Vec<bool> = (0..batch * (hidden - 1)).map(|_| r.gen_bool(0.3)).collect();
    let fill: Vec<f64> = (0..batch * (hidden - 1)).map(|_| r.gen_range(0.0..1.0)).collect();

    let run = |ps: &ParameterSet<f64>, x: &Tensor<f64>, grads: bool| {
        let mut g = Graph::new(ps);
        let xi = g.variable(x.clone());
        let (cw, cb, dw, db) = (g.param(cw), g.param(cb), g.param(dw), g.param(db));
        let (pw, pb, nw, nb, hw, hb) = (g.param(pw), g.param(pb), g.param(nw), g.param(nb), g.param(hw), g.param(hb));
        let conv = g.conv1d(xi, cw, cb).unwrap();
        let act = g.relu(conv);
        let flat = g.reshape(act, &[batch, c_out * t_out]).unwrap();
        let h = g.dense(flat, dw, db).unwrap();
        let s = g.sigmoid(h);
        let p = g.slice(s, 0, 1).unwrap();
        let rest = g.slice(s, 1, hidden - 1).unwrap();
        let rest = g.substitute(rest, mask.clone(), &fill).unwrap();
        let pos_lin = g.dense(s, pw, pb).unwrap();
        let pos = g.relu(pos_lin);
        let neg = g.dense(s, nw, nb).unwrap();
        let mixed = g.mix(p, pos, neg).unwrap();
        let head_in = g.concat(&[mixed, rest]).unwrap();
        let y = g.dense(head_in, hw, hb).unwrap();
        let mse = g.mse(y, &target).unwrap();
        let bce = g.bce(p, &labels).unwrap();
        let total = g.combine(mse, 1.0, bce, lambda).unwrap();
        let value = g.value(total).data()[0];
        let gr = grads.then(|| {
            let gr = g.backward(total).unwrap();
            (gr.node(xi).map(|t| t.data().to_vec()), gr)
        });
        (value, gr)
    };

    let (_, gr) = run(&ps, &x0, true);
    let (x_grad, gr) = gr.expect("gradients");
    let mut out = GradCheck::default();
    let ids: Vec<_> = ps.ids().collect();
    let param_grads: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| gr.param(id).map(|g| g.data().to_vec()).unwrap_or_else(|| vec![0.0; ps.value(id).len()]))
        .collect();
    for (id, analytic) in ids.into_iter().zip(param_grads) {
        for (i, &a) in analytic.iter().enumerate() {
            let orig = ps.value(id).data()[i];
            ps.value_mut(id).data_mut()[i] = orig + FD_STEP;
            let up = run(&ps, &x0, false).0;
            ps.value_mut(id).data_mut()[i] = orig - FD_STEP;
            let down = run(&ps, &x0, false).0;
            ps.value_mut(id).data_mut()[i] = orig;
            out.record(a, (up - down) / (2.0 * FD_STEP));
        }
    }
    let x_grad = x_grad.expect("input gradient");
    for (i, &a) in x_grad.iter().enumerate() {
        let mut x = x0.clone();
        x.data_mut()[i] += FD_STEP;
        let up = run(&ps, &x, false).0;
        x.data_mut()[i] -= 2.0 * FD_STEP;
        let down = run(&ps, &x, false).0;
        out.record(a, (up - down) / (2.0 * FD_STEP));
    }
    out
}

// ---------------------------------------------------------------- metrics

pub fn ref_rmse(pred: &[f64], truth: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..pred.len() {
        s += (pred[i] - truth[i]).powi(2);
    }
    (s / pred.len() as f64).sqrt()
}

pub fn ref_nasa(pred: &[f64], truth: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..pred.len() {
        let d = pred[i] - truth[i];
        s += if d > 0.0 { (d / 10.0).exp() - 1.0 } else { (-d / 13.0).exp() - 1.0 };
    }
    s / pred.len() as f64
}

pub fn ref_concept_accuracy(acts: &[Vec<f64>], labels: &[Vec<u8>]) -> Vec<f64> {
    let k = labels[0].len();
    (0..k)
        .map(|j| {
            let hits = acts
                .iter()
                .zip(labels)
                .filter(|(a, l)| (a[j] > 0.5) == (l[j] == 1))
                .count();
            hits as f64 / acts.len() as f64
        })
        .collect()
}

/// Pairwise Mann-Whitney count.
pub fn ref_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// Homogeneity from an explicit contingency table.
pub fn ref_homogeneity(labels: &[u8], clusters: &[usize]) -> f64 {
    let n = labels.len() as f64;
    let mut table: BTreeMap<usize, [f64; 2]> = BTreeMap::new();
    let mut class = [0.0f64; 2];
    for (&l, &c) in labels.iter().zip(clusters) {
        table.entry(c).or_default()[l as usize] += 1.0;
        class[l as usize] += 1.0;
    }
    let h_c: f64 = class.iter().filter(|&&c| c > 0.0).map(|&c| -(c / n) * (c / n).ln()).sum();
    if h_c == 0.0 {
        return 1.0;
    }
    let mut h_ck = 0.0;
    for row in table.values() {
        let nk = row[0] + row[1];
        for &nkc in row {
            if nkc > 0.0 {
                h_ck -= nkc / n * (nkc / nk).ln();
            }
        }
    }
    1.0 - h_ck / h_c
}

/// Confusion class by enumerating the active set.
pub fn ref_class(acts: &[f64], pairs: &[(usize, usize)]) -> usize {
    let k = acts.len();
    let active: Vec<usize> = (0..k).filter(|&j| acts[j] > 0.5).collect();
    if active.is_empty() {
        return 0;
    }
    if active.len() == 2 {
        for (p, &(a, b)) in pairs.iter().enumerate() {
            if (active[0], active[1]) == (a.min(b), a.max(b)) {
                return 1 + k + p;
            }
        }
    }
    let mut best = active[0];
    for &j in &active {
        if acts[j] > acts[best] {
            best = j;
        }
    }
    1 + best
}

pub fn ref_confusion(acts: &[Vec<f64>], labels: &[Vec<u8>], k: usize, pairs: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let n = 1 + k + pairs.len();
    let mut m = vec![vec![0; n]; n];
    for (a, l) in acts.iter().zip(labels) {
        let truth: Vec<f64> = l.iter().map(|&v| f64::from(v)).collect();
        m[ref_class(&truth, pairs)][ref_class(a, pairs)] += 1;
    }
    m
}

/// True when every point sits in the cluster whose mean is nearest (a Lloyd fixed point).
pub fn is_lloyd_fixed_point(points: &[Vec<f64>], assign: &[usize]) -> bool {
    let dim = points[0].len();
    let mut sums: BTreeMap<usize, (Vec<f64>, f64)> = BTreeMap::new();
    for (p, &a) in points.iter().zip(assign) {
        let e = sums.entry(a).or_insert_with(|| (vec![0.0; dim], 0.0));
        for (s, x) in e.0.iter_mut().zip(p) {
            *s += x;
        }
        e.1 += 1.0;
    }
    let means: BTreeMap<usize, Vec<f64>> = sums
        .into_iter()
        .map(|(c, (s, n))| (c, s.into_iter().map(|v| v / n).collect()))
        .collect();
    let d2 = |p: &[f64], c: &[f64]| p.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    points.iter().zip(assign).all(|(p, a)| {
        let own = d2(p, &means[a]);
        means.values().all(|m| own <= d2(p, m) + 1e-12)
    })
}

// ---------------------------------------------------------------- experiments

/// Small two-fleet experiment that trains in seconds.
pub fn quick_experiment(out: &std::path::Path, seed: u64, epochs: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        seed,
        out_dir: out.to_path_buf(),
        ..ExperimentConfig::default()
    };
    cfg.generator = GeneratorConfig {
        n_units: 4,
        cycles_per_unit: [8, 10],
        seconds_per_cycle: [40, 60],
        ..cfg.generator
    };
    cfg.fleets = vec![
        FleetSpec { name: "DS01".into(), faults: vec!["HPT".into()] },
        FleetSpec { name: "DS02".into(), faults: vec!["LPT".into()] },
    ];
    cfg.train_units = vec![1, 2];
    cfg.test_units = vec![3, 4];
    cfg.model.epochs = epochs;
    cfg.model.latent_dim = 16;
    cfg.model.embed_dim = 4;
    cfg.evaluation.cas_max_points = 200;
    cfg.ablation.k_max = Some(2);
    cfg
}
