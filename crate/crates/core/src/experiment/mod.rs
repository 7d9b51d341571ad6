//! End-to-end study driver: data generation, training, evaluation, ablation,
//! interventions and embedding export, all writing CSV/JSON under one directory.

mod config;
mod export;

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::datagen::{generate_scenario_fleets, Scenario, UnitTrajectory};
use crate::error::{Error, Result};
use crate::intervene::{evaluate_interventions, GroundTruthOracle, InterventionLog, UnitSeries};
use crate::metrics::{evaluate, pearson, ConfusionClasses, EvalOptions, MetricReport, UnitEvaluation};
use crate::models::{self, Family, Model};
use crate::preprocess::{self, csv as fleet_csv, Sample};

pub use config::{
    AblationConfig, EvaluationConfig, ExperimentConfig, ExportConfig, InterventionConfig, ServiceConfig, Split,
};
pub use export::{embedding_columns, export_embeddings, write_embeddings};

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Config(format!("output directory {} not writable: {e}", dir.display())))
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Writes one CSV file per fleet into the data directory.
pub fn generate(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let dir = cfg.data_dir();
    ensure_dir(&dir)?;
    generate_scenario_fleets(&cfg.seeded_generator(), &cfg.fleets)?
        .into_iter()
        .map(|(name, units)| {
            let path = dir.join(format!("{name}.csv"));
            fleet_csv::write_fleet_file(&path, &units)?;
            Ok(path)
        })
        .collect()
}

/// Reads the configured fleets from the data directory and splits them.
pub fn load_scenario(cfg: &ExperimentConfig) -> Result<Scenario> {
    let dir = cfg.data_dir();
    let mut fleets = Vec::with_capacity(cfg.fleets.len());
    for f in &cfg.fleets {
        let path = dir.join(format!("{}.csv", f.name));
        if !path.is_file() {
            return Err(Error::Input(format!(
                "missing data file {} (run generate first or set data_dir)",
                path.display()
            )));
        }
        fleets.push(fleet_csv::read_fleet_file(&path)?);
    }
    Scenario::split(fleets, &cfg.train_units, &cfg.test_units)
}

fn concept_indices(scenario: &Scenario, names: &[String]) -> Result<Vec<usize>> {
    names
        .iter()
        .map(|n| {
            scenario
                .components
                .iter()
                .position(|c| c == n)
                .ok_or_else(|| Error::Config(format!("concept {n:?} not among data components {:?}", scenario.components)))
        })
        .collect()
}

/// Scaled training samples for the given concepts and the scaler fitted on them.
pub fn training_samples(
    cfg: &ExperimentConfig,
    scenario: &Scenario,
    concepts: &[String],
) -> Result<(preprocess::ScalerStats, Vec<Sample<f64>>)> {
    let scaler = preprocess::fit_scaler(&scenario.train, &cfg.preprocess)?;
    let idx = concept_indices(scenario, concepts)?;
    let samples = preprocess::build_samples(&scenario.train, &cfg.preprocess, &scaler, &idx)?;
    Ok((scaler, samples))
}

/// One trained family.
#[derive(Debug, Clone, Serialize)]
pub struct TrainedEntry {
    pub family: Family,
    pub checkpoint: PathBuf,
    pub loss_curve: PathBuf,
    pub final_loss: f64,
}

fn write_loss_curve(path: &Path, model: &Model<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "loss", "mse", "bce"])?;
    for e in model.history() {
        w.write_record([e.epoch.to_string(), e.loss.to_string(), e.mse.to_string(), e.bce.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Trains every configured family and writes checkpoints and loss curves.
pub fn train(cfg: &ExperimentConfig) -> Result<Vec<TrainedEntry>> {
    let scenario = load_scenario(cfg)?;
    let names = cfg.concept_names();
    let (scaler, samples) = training_samples(cfg, &scenario, &names)?;
    let dir = cfg.models_dir();
    ensure_dir(&dir)?;
    let mut out = Vec::new();
    for &family in &cfg.families {
        let mc = cfg.model_config(family, names.len());
        let model = models::train(mc, names.clone(), cfg.preprocess.clone(), scaler.clone(), &samples)?;
        let checkpoint = cfg.checkpoint_path(family);
        model.save(&checkpoint)?;
        let loss_curve = dir.join(format!("{}_loss.csv", family.slug()));
        write_loss_curve(&loss_curve, &model)?;
        let final_loss = model.history().last().map(|e| e.loss).unwrap_or(f64::NAN);
        out.push(TrainedEntry { family, checkpoint, loss_curve, final_loss });
    }
    Ok(out)
}

pub fn load_model(cfg: &ExperimentConfig, family: Family) -> Result<Model<f64>> {
    let path = cfg.checkpoint_path(family);
    if !path.is_file() {
        return Err(Error::Input(format!("missing checkpoint {} (run train first)", path.display())));
    }
    Model::load(&path)
}

pub fn eval_options(cfg: &ExperimentConfig, model: &Model<f64>, name: &str) -> Result<EvalOptions> {
    let pairs: Vec<(String, String)> = cfg
        .combined_classes
        .iter()
        .filter(|(a, b)| model.concepts().contains(a) && model.concepts().contains(b))
        .cloned()
        .collect();
    Ok(EvalOptions {
        name: name.to_string(),
        family: model.family().to_string(),
        classes: ConfusionClasses::from_names(model.concepts().to_vec(), &pairs)?,
        cas_max_points: cfg.evaluation.cas_max_points,
        seed: crate::seed::derive(cfg.seed, "evaluate"),
    })
}

/// Writes a methods-by-units table with a trailing macro-average column.
fn write_unit_table(path: &Path, reports: &[MetricReport], cell: impl Fn(&crate::metrics::UnitMetrics) -> Option<f64>) -> Result<()> {
    let Some(first) = reports.first() else {
        return Ok(());
    };
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["method".to_string()];
    header.extend(first.units.iter().map(|u| u.unit.clone()));
    header.push("mean".into());
    w.write_record(&header)?;
    for r in reports {
        let cells: Vec<Option<f64>> = r.units.iter().map(&cell).collect();
        let present: Vec<f64> = cells.iter().flatten().copied().collect();
        let mut row = vec![r.family.clone()];
        row.extend(cells.iter().map(|c| c.map(|v| v.to_string()).unwrap_or_default()));
        row.push(if present.is_empty() {
            String::new()
        } else {
            (present.iter().sum::<f64>() / present.len() as f64).to_string()
        });
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_summary(dir: &Path, reports: &[MetricReport]) -> Result<()> {
    let Some(first) = reports.first() else {
        return Ok(());
    };
    let mut text = first.csv_header() + "\n";
    for r in reports {
        text.push_str(&r.csv_row());
        text.push('\n');
    }
    fs::write(dir.join("summary.csv"), text)?;
    let flat: Vec<_> = reports.iter().map(MetricReport::to_flat_json).collect();
    write_json(&dir.join("summary.json"), &flat)
}

/// Evaluation of all trained families on the test units.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub reports: Vec<MetricReport>,
    pub units: Vec<Vec<UnitEvaluation>>,
}

pub fn evaluate_models(cfg: &ExperimentConfig) -> Result<Evaluation> {
    let scenario = load_scenario(cfg)?;
    let dir = cfg.out_dir.join("eval");
    ensure_dir(&dir)?;
    let mut reports = Vec::new();
    let mut units = Vec::new();
    for &family in &cfg.families {
        let model = load_model(cfg, family)?;
        let opts = eval_options(cfg, &model, family.slug())?;
        let (report, per_unit) = evaluate(&model, &scenario.test, &opts)?;
        if let Some(m) = &report.confusion {
            fs::write(dir.join(format!("confusion_{}.csv", family.slug())), m.to_csv())?;
        }
        reports.push(report);
        units.push(per_unit);
    }
    write_summary(&dir, &reports)?;
    write_unit_table(&dir.join("per_unit_rmse.csv"), &reports, |u| Some(u.rmse))?;
    write_unit_table(&dir.join("per_unit_nasa.csv"), &reports, |u| Some(u.nasa))?;
    write_unit_table(&dir.join("per_unit_accuracy.csv"), &reports, |u| u.concept_accuracy)?;
    write_unit_table(&dir.join("per_unit_auc.csv"), &reports, |u| u.auc)?;
    write_json(&dir.join("reports.json"), &reports)?;
    Ok(Evaluation { reports, units })
}

/// One point of the concept-count ablation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub family: Family,
    pub k: usize,
    pub concepts: Vec<String>,
    pub rmse: f64,
    pub nasa: f64,
    pub concept_accuracy: Option<f64>,
    pub auc: Option<f64>,
    pub cas: f64,
}

/// Correlation between a lone concept's cycle activations and the cycle index
/// on a unit that does not degrade in that concept.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeakageRow {
    pub family: Family,
    pub concept: String,
    pub unit: String,
    pub unit_faults: Vec<String>,
    pub pearson: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct AblationResult {
    pub rows: Vec<AblationRow>,
    pub leakage: Vec<LeakageRow>,
}

impl AblationResult {
    /// Mean leakage correlation of one family.
    pub fn mean_leakage(&self, family: Family) -> Option<f64> {
        let v: Vec<f64> = self.leakage.iter().filter(|l| l.family == family).map(|l| l.pearson).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Units whose ground-truth faults exclude `concept` but include another component.
pub fn other_fault_units<'a>(units: &'a [UnitTrajectory], concept: &str, tau: f64) -> Vec<&'a UnitTrajectory> {
    units
        .iter()
        .filter(|u| {
            let f = u.faulty_components(tau);
            !f.is_empty() && !f.iter().any(|c| c == concept)
        })
        .collect()
}

/// Leakage rows of a single-concept model on the given units.
pub fn leakage(model: &Model<f64>, units: &[&UnitTrajectory]) -> Result<Vec<LeakageRow>> {
    if model.k() != 1 {
        return Err(Error::Usage("leakage diagnostic needs a single-concept model".into()));
    }
    let tau = model.preprocess().tau;
    units
        .iter()
        .map(|u| {
            let traj = model.predict_trajectory(u)?;
            let act: Vec<f64> = traj.iter().map(|c| c.activations[0]).collect();
            let idx: Vec<f64> = traj.iter().map(|c| c.cycle as f64).collect();
            Ok(LeakageRow {
                family: model.family(),
                concept: model.concepts()[0].clone(),
                unit: u.id(),
                unit_faults: u.faulty_components(tau),
                pearson: pearson(&act, &idx)?,
            })
        })
        .collect()
}

/// Trains and evaluates each ablation family with the first `k` concepts, `k = 1..=k_max`.
pub fn ablate(cfg: &ExperimentConfig) -> Result<AblationResult> {
    let scenario = load_scenario(cfg)?;
    let names = cfg.concept_names();
    let k_max = cfg.ablation.k_max.unwrap_or(names.len());
    let dir = cfg.out_dir.join("ablation");
    ensure_dir(&dir)?;
    let mut result = AblationResult::default();
    for k in 1..=k_max {
        let subset = names[..k].to_vec();
        let (scaler, samples) = training_samples(cfg, &scenario, &subset)?;
        for &family in &cfg.ablation.families {
            let mc = cfg.model_config(family, k);
            let model = models::train(mc, subset.clone(), cfg.preprocess.clone(), scaler.clone(), &samples)?;
            let opts = eval_options(cfg, &model, &format!("{}_k{k}", family.slug()))?;
            let (r, _) = evaluate(&model, &scenario.test, &opts)?;
            result.rows.push(AblationRow {
                family,
                k,
                concepts: subset.clone(),
                rmse: r.rmse,
                nasa: r.nasa,
                concept_accuracy: r.concept_accuracy,
                auc: r.auc,
                cas: r.cas,
            });
            if k == 1 && family.has_concepts() {
                let others = other_fault_units(&scenario.test, &subset[0], cfg.preprocess.tau);
                result.leakage.extend(leakage(&model, &others)?);
            }
        }
    }
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut w = csv::Writer::from_path(dir.join("ablation.csv"))?;
    w.write_record(["family", "k", "rmse", "nasa", "concept_accuracy", "auc", "cas"])?;
    for r in &result.rows {
        w.write_record([
            r.family.slug().to_string(),
            r.k.to_string(),
            r.rmse.to_string(),
            r.nasa.to_string(),
            opt(r.concept_accuracy),
            opt(r.auc),
            r.cas.to_string(),
        ])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("leakage.csv"))?;
    w.write_record(["family", "concept", "unit", "unit_faults", "pearson"])?;
    for l in &result.leakage {
        w.write_record([l.family.slug(), &l.concept, &l.unit, &l.unit_faults.join("+"), &l.pearson.to_string()])?;
    }
    w.flush()?;
    Ok(result)
}

/// Before/after reports of one family.
#[derive(Debug, Clone)]
pub struct InterventionSummary {
    pub family: Family,
    pub before: MetricReport,
    pub after: MetricReport,
    pub logs: Vec<InterventionLog>,
    pub buckets: Vec<ErrorBucket>,
}

/// Signed error statistics of cycles in `[start, end]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorBucket {
    pub start: usize,
    pub end: usize,
    pub n: usize,
    pub mean_error_before: f64,
    pub mean_error_after: f64,
    pub rmse_before: f64,
    pub rmse_after: f64,
}

/// Groups per-cycle errors (prediction minus truth, predictions clamped at 0) into cycle buckets.
pub fn error_buckets(series: &[UnitSeries], width: usize) -> Vec<ErrorBucket> {
    let max_len = series.iter().map(|s| s.1.len()).max().unwrap_or(0);
    let mut out = Vec::new();
    let mut start = 1;
    while start <= max_len {
        let end = start + width - 1;
        let (mut n, mut sb, mut sa, mut qb, mut qa) = (0usize, 0.0, 0.0, 0.0, 0.0);
        for (_, truth, before, after) in series {
            for q in start..=end.min(truth.len()) {
                let eb = before[q - 1].max(0.0) - truth[q - 1];
                let ea = after[q - 1].max(0.0) - truth[q - 1];
                n += 1;
                sb += eb;
                sa += ea;
                qb += eb * eb;
                qa += ea * ea;
            }
        }
        if n > 0 {
            let nf = n as f64;
            out.push(ErrorBucket {
                start,
                end,
                n,
                mean_error_before: sb / nf,
                mean_error_after: sa / nf,
                rmse_before: (qb / nf).sqrt(),
                rmse_after: (qa / nf).sqrt(),
            });
        }
        start = end + 1;
    }
    out
}

pub fn intervene(cfg: &ExperimentConfig) -> Result<Vec<InterventionSummary>> {
    let scenario = load_scenario(cfg)?;
    let dir = cfg.out_dir.join("interventions");
    ensure_dir(&dir)?;
    let mut out = Vec::new();
    for &family in &cfg.intervention.families {
        if !family.is_bottleneck() {
            return Err(Error::UnsupportedFamily(format!("{family} has no intervenable concept bottleneck")));
        }
        let model = load_model(cfg, family)?;
        let oracle = GroundTruthOracle::new(&scenario.test, model.concepts(), model.preprocess().tau)?;
        let opts = eval_options(cfg, &model, family.slug())?;
        let rep = evaluate_interventions(&model, &scenario.test, &cfg.intervention.policy, &oracle, &opts)?;
        let mut lines = String::new();
        for l in &rep.logs {
            lines.push_str(&l.to_json_lines()?);
        }
        fs::write(dir.join(format!("log_{}.jsonl", family.slug())), lines)?;
        let buckets = error_buckets(&rep.series, cfg.intervention.bucket_width);
        let mut w = csv::Writer::from_path(dir.join(format!("buckets_{}.csv", family.slug())))?;
        for b in &buckets {
            w.serialize(b)?;
        }
        w.flush()?;
        out.push(InterventionSummary { family, before: rep.before, after: rep.after, logs: rep.logs, buckets });
    }
    let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
    w.write_record(["family", "rmse_before", "nasa_before", "rmse_after", "nasa_after", "overrides"])?;
    for s in &out {
        let n: usize = s.logs.iter().map(InterventionLog::n_applied).sum();
        w.write_record([
            s.family.slug().to_string(),
            s.before.rmse.to_string(),
            s.before.nasa.to_string(),
            s.after.rmse.to_string(),
            s.after.nasa.to_string(),
            n.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(out)
}

/// Units of the requested split.
pub fn split_units(scenario: &Scenario, split: Split) -> Vec<UnitTrajectory> {
    match split {
        Split::Train => scenario.train.clone(),
        Split::Test => scenario.test.clone(),
        Split::All => scenario.train.iter().chain(&scenario.test).cloned().collect(),
    }
}

/// Writes `embeddings_<family>.csv` for every configured export family.
pub fn export(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let scenario = load_scenario(cfg)?;
    let units = split_units(&scenario, cfg.export.split);
    let dir = cfg.out_dir.join("embeddings");
    ensure_dir(&dir)?;
    cfg.export
        .families
        .iter()
        .map(|&family| {
            let model = load_model(cfg, family)?;
            let path = dir.join(format!("embeddings_{}.csv", family.slug()));
            let file = fs::File::create(&path)?;
            write_embeddings(std::io::BufWriter::new(file), &model, &units)?;
            Ok(path)
        })
        .collect()
}
