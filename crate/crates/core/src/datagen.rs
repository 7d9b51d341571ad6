//! Synthetic run-to-failure fleets.
//!
//! Each unit runs for a random number of cycles (flights). A subset of its
//! components degrades from a random onset cycle until end of life, while the
//! rest stay healthy. Each second of a cycle carries four operating-condition
//! channels and fourteen measurements. The measurements are a fixed linear
//! signature of the operating conditions and the per-component degradation
//! parameters, plus Gaussian noise:
//!
//! ```text
//! x_m(t) = offset_m + sum_c A[m][c] * w_c(t) + sum_j B[m][j] * theta_j(cycle) + noise
//! ```
//!
//! where `theta_j = min(theta_j_eff, theta_j_flow)`. Operating conditions are
//! smooth AR(1) random walks around a per-cycle level; they are synthetic and
//! make no attempt at reproducing real flight profiles.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const N_OP_CONDITIONS: usize = 4;
pub const N_MEASUREMENTS: usize = 14;
/// Input channels per time step: measurements followed by operating conditions.
pub const N_CHANNELS: usize = N_MEASUREMENTS + N_OP_CONDITIONS;

/// Turbofan component labels usable as concept names.
pub const COMPONENT_NAMES: [&str; 5] = ["Fan", "LPC", "HPC", "HPT", "LPT"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegradationShape {
    Linear,
    Exponential,
}

/// Mixes the fault signature of `from` into `to`: `b_to = (1 - weight) b_to + weight b_from`.
/// Weights close to one make two faults nearly indistinguishable from the sensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignatureBlend {
    pub from: String,
    pub to: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    /// Component names, one concept each.
    pub components: Vec<String>,
    pub n_units: usize,
    /// Inclusive `[min, max]` life length in cycles.
    pub cycles_per_unit: [usize; 2],
    /// Inclusive `[min, max]` cycle duration in seconds.
    pub seconds_per_cycle: [usize; 2],
    /// Fraction of life before abnormal degradation starts.
    pub onset_fraction: [f64; 2],
    pub degradation_shape: DegradationShape,
    /// Degradation parameter value reached at end of life.
    pub degradation_depth: f64,
    pub sensor_noise_std: f64,
    /// Scale of the fault signature coefficients.
    pub signature_gain: f64,
    pub signature_blend: Vec<SignatureBlend>,
    /// Components that degrade in every unit of this fleet.
    pub faulty_components: Vec<String>,
    /// Concept threshold the depth must cross.
    pub tau: f64,
    pub seed: u64,
    /// Seed of the signature matrices; shared by every fleet of a scenario.
    pub signature_seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            components: vec!["HPT".into(), "LPT".into()],
            n_units: 10,
            cycles_per_unit: [60, 90],
            seconds_per_cycle: [300, 600],
            onset_fraction: [0.3, 0.5],
            degradation_shape: DegradationShape::Linear,
            degradation_depth: -0.01,
            sensor_noise_std: 0.05,
            signature_gain: 100.0,
            signature_blend: Vec::new(),
            faulty_components: vec!["HPT".into()],
            tau: crate::preprocess::DEFAULT_TAU,
            seed: 0,
            signature_seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.components.is_empty() {
            return cfg("at least one component is required".into());
        }
        if self.n_units == 0 {
            return cfg("n_units must be positive".into());
        }
        let [cmin, cmax] = self.cycles_per_unit;
        if cmin < 3 || cmin > cmax {
            return cfg(format!("cycles_per_unit {:?} must be a non-empty range with min >= 3", self.cycles_per_unit));
        }
        let [smin, smax] = self.seconds_per_cycle;
        if smin == 0 || smin > smax {
            return cfg(format!("seconds_per_cycle {:?} must be a non-empty positive range", self.seconds_per_cycle));
        }
        let [omin, omax] = self.onset_fraction;
        if !(omin > 0.0 && omax < 1.0 && omin <= omax) {
            return cfg(format!("onset_fraction {:?} must lie strictly inside (0, 1)", self.onset_fraction));
        }
        if !(self.degradation_depth < self.tau) {
            return cfg(format!(
                "degradation_depth {} must be below the concept threshold {}",
                self.degradation_depth, self.tau
            ));
        }
        if !(self.sensor_noise_std >= 0.0) {
            return cfg("sensor_noise_std must be >= 0".into());
        }
        if self.faulty_components.is_empty() {
            return cfg("empty fault assignment: every run-to-failure fleet needs at least one faulty component".into());
        }
        for f in self.faulty_components.iter().chain(self.signature_blend.iter().flat_map(|b| [&b.from, &b.to])) {
            if !self.components.contains(f) {
                return cfg(format!("unknown component {f:?}"));
            }
        }
        Ok(())
    }

    fn component_index(&self, name: &str) -> usize {
        self.components.iter().position(|c| c == name).expect("validated component")
    }
}

/// Linear measurement model shared by all fleets of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignatureModel {
    pub offsets: Vec<f64>,
    /// `[N_MEASUREMENTS][N_OP_CONDITIONS]`
    pub op_coeffs: Vec<Vec<f64>>,
    /// `[N_MEASUREMENTS][k]`
    pub fault_coeffs: Vec<Vec<f64>>,
}

impl SignatureModel {
    pub fn draw(config: &GeneratorConfig) -> Self {
        let mut rng = seed::rng(config.signature_seed, "signature");
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let k = config.k();
        let offsets = (0..N_MEASUREMENTS).map(|_| normal.sample(&mut rng)).collect();
        let op_coeffs = (0..N_MEASUREMENTS)
            .map(|_| (0..N_OP_CONDITIONS).map(|_| normal.sample(&mut rng)).collect())
            .collect();
        let mut fault_coeffs: Vec<Vec<f64>> = (0..N_MEASUREMENTS)
            .map(|_| (0..k).map(|_| config.signature_gain * normal.sample(&mut rng)).collect())
            .collect();
        for blend in &config.signature_blend {
            let (from, to) = (config.component_index(&blend.from), config.component_index(&blend.to));
            for row in &mut fault_coeffs {
                row[to] = (1.0 - blend.weight) * row[to] + blend.weight * row[from];
            }
        }
        Self { offsets, op_coeffs, fault_coeffs }
    }

    /// Noise-free measurements for one second.
    pub fn measurements(&self, ops: &[f64; N_OP_CONDITIONS], theta: &[f64]) -> [f64; N_MEASUREMENTS] {
        let mut x = [0.0; N_MEASUREMENTS];
        for (m, xm) in x.iter_mut().enumerate() {
            let mut v = self.offsets[m];
            for (c, w) in ops.iter().enumerate() {
                v += self.op_coeffs[m][c] * w;
            }
            for (j, th) in theta.iter().enumerate() {
                v += self.fault_coeffs[m][j] * th;
            }
            *xm = v;
        }
        x
    }
}

/// One cycle of a unit: per-cycle degradation state and per-second channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub theta_eff: Vec<f64>,
    pub theta_flow: Vec<f64>,
    pub hs: u8,
    pub ops: Vec<[f64; N_OP_CONDITIONS]>,
    pub measurements: Vec<[f64; N_MEASUREMENTS]>,
}

impl CycleRecord {
    /// Aggregated degradation parameter per component.
    pub fn theta(&self) -> Vec<f64> {
        self.theta_eff.iter().zip(&self.theta_flow).map(|(e, f)| e.min(*f)).collect()
    }

    pub fn seconds(&self) -> usize {
        self.ops.len()
    }
}

/// A unit's full run-to-failure record. Cycles are stored in order; cycle `q` (1-based) is `cycles[q - 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitTrajectory {
    pub fleet: String,
    pub unit: u32,
    pub components: Vec<String>,
    pub cycles: Vec<CycleRecord>,
}

impl UnitTrajectory {
    /// `"<fleet>#<unit>"`
    pub fn id(&self) -> String {
        format!("{}#{}", self.fleet, self.unit)
    }

    pub fn n_cycles(&self) -> usize {
        self.cycles.len()
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    /// First cycle (1-based) with `hs == 1`, if any.
    pub fn onset_cycle(&self) -> Option<usize> {
        self.cycles.iter().position(|c| c.hs == 1).map(|i| i + 1)
    }

    pub fn health_states(&self) -> Vec<u8> {
        self.cycles.iter().map(|c| c.hs).collect()
    }

    /// Per-cycle binary concepts at threshold `tau`.
    pub fn concepts(&self, tau: f64) -> Vec<Vec<u8>> {
        self.cycles
            .iter()
            .map(|c| crate::preprocess::binarize_concepts(&c.theta_eff, &c.theta_flow, tau))
            .collect()
    }

    /// Components whose concept is active at some cycle.
    pub fn faulty_components(&self, tau: f64) -> Vec<String> {
        let concepts = self.concepts(tau);
        (0..self.k())
            .filter(|&j| concepts.iter().any(|c| c[j] == 1))
            .map(|j| self.components[j].clone())
            .collect()
    }

    pub fn total_seconds(&self) -> usize {
        self.cycles.iter().map(CycleRecord::seconds).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Input(format!("unit {}: {m}", self.id())));
        if self.cycles.is_empty() {
            return bad("no cycles".into());
        }
        for (q, c) in self.cycles.iter().enumerate() {
            if c.theta_eff.len() != self.k() || c.theta_flow.len() != self.k() {
                return bad(format!("cycle {} has wrong degradation arity", q + 1));
            }
            if c.ops.len() != c.measurements.len() || c.ops.is_empty() {
                return bad(format!("cycle {} has inconsistent or empty channels", q + 1));
            }
            if c.hs > 1 {
                return bad(format!("cycle {} has health state {}", q + 1, c.hs));
            }
        }
        Ok(())
    }
}

fn shape_value(shape: DegradationShape, s: f64) -> f64 {
    match shape {
        DegradationShape::Linear => s,
        DegradationShape::Exponential => {
            const RATE: f64 = 3.0;
            ((RATE * s).exp() - 1.0) / (RATE.exp() - 1.0)
        }
    }
}

/// Nominal degradation trajectory: zero before onset, then `depth * shape((q - onset) / (life - onset))`.
pub fn nominal_theta(shape: DegradationShape, depth: f64, onset: usize, life: usize, q: usize) -> f64 {
    if q < onset {
        0.0
    } else {
        depth * shape_value(shape, (q - onset) as f64 / (life - onset) as f64)
    }
}

fn ops_walk(rng: &mut ChaCha8Rng, seconds: usize, normal: &Normal<f64>) -> Vec<[f64; N_OP_CONDITIONS]> {
    const RHO: f64 = 0.98;
    const SD: f64 = 0.3;
    let innov = SD * (1.0 - RHO * RHO).sqrt();
    let level: [f64; N_OP_CONDITIONS] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
    let mut r = [0.0; N_OP_CONDITIONS];
    (0..seconds)
        .map(|_| {
            std::array::from_fn(|c| {
                r[c] = RHO * r[c] + innov * normal.sample(rng);
                level[c] + r[c]
            })
        })
        .collect()
}

fn generate_unit(config: &GeneratorConfig, signature: &SignatureModel, fleet: &str, unit: u32) -> UnitTrajectory {
    let mut rng = seed::rng(config.seed, &format!("unit/{unit}"));
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let k = config.k();
    let life = rng.gen_range(config.cycles_per_unit[0]..=config.cycles_per_unit[1]);
    let frac = rng.gen_range(config.onset_fraction[0]..=config.onset_fraction[1]);
    let onset = ((frac * life as f64).round() as usize).clamp(2, life - 1);

    let faulty: Vec<bool> = (0..k)
        .map(|j| config.faulty_components.contains(&config.components[j]))
        .collect();
    // one sub-parameter follows the nominal trajectory, the other a scaled copy
    let factors: Vec<(f64, f64)> = (0..k)
        .map(|_| {
            let other = rng.gen_range(0.5..=1.0);
            if rng.gen_bool(0.5) {
                (1.0, other)
            } else {
                (other, 1.0)
            }
        })
        .collect();

    let cycles = (1..=life)
        .map(|q| {
            let nominal = nominal_theta(config.degradation_shape, config.degradation_depth, onset, life, q);
            let theta_eff: Vec<f64> = (0..k).map(|j| if faulty[j] { nominal * factors[j].0 } else { 0.0 }).collect();
            let theta_flow: Vec<f64> = (0..k).map(|j| if faulty[j] { nominal * factors[j].1 } else { 0.0 }).collect();
            let theta: Vec<f64> = theta_eff.iter().zip(&theta_flow).map(|(a, b)| a.min(*b)).collect();
            let seconds = rng.gen_range(config.seconds_per_cycle[0]..=config.seconds_per_cycle[1]);
            let ops = ops_walk(&mut rng, seconds, &normal);
            let measurements = ops
                .iter()
                .map(|w| {
                    let mut x = signature.measurements(w, &theta);
                    if config.sensor_noise_std > 0.0 {
                        for v in &mut x {
                            *v += config.sensor_noise_std * normal.sample(&mut rng);
                        }
                    }
                    x
                })
                .collect();
            CycleRecord { theta_eff, theta_flow, hs: u8::from(q >= onset), ops, measurements }
        })
        .collect();

    UnitTrajectory { fleet: fleet.to_string(), unit, components: config.components.clone(), cycles }
}

/// Generates `n_units` units (ids `1..=n_units`) named after `fleet`.
pub fn generate_fleet(config: &GeneratorConfig, fleet: &str) -> Result<Vec<UnitTrajectory>> {
    config.validate()?;
    let signature = SignatureModel::draw(config);
    Ok((1..=config.n_units as u32)
        .map(|u| generate_unit(config, &signature, fleet, u))
        .collect())
}

/// One fleet of a scenario and the components that fail in it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetSpec {
    pub name: String,
    pub faults: Vec<String>,
}

/// Train/test partition over several fleets.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub components: Vec<String>,
    pub train: Vec<UnitTrajectory>,
    pub test: Vec<UnitTrajectory>,
}

fn check_split(train_units: &[u32], test_units: &[u32]) -> Result<()> {
    if test_units.is_empty() {
        return Err(Error::Config("test unit list is empty".into()));
    }
    if train_units.is_empty() {
        return Err(Error::Config("train unit list is empty".into()));
    }
    if let Some(u) = train_units.iter().find(|u| test_units.contains(u)) {
        return Err(Error::Config(format!("unit {u} is in both train and test lists")));
    }
    Ok(())
}

impl Scenario {
    /// Splits already-built fleets by unit number.
    pub fn split(fleets: Vec<Vec<UnitTrajectory>>, train_units: &[u32], test_units: &[u32]) -> Result<Self> {
        check_split(train_units, test_units)?;
        let components = fleets
            .iter()
            .flatten()
            .next()
            .map(|u| u.components.clone())
            .ok_or_else(|| Error::Config("scenario has no units".into()))?;
        let mut train = Vec::new();
        let mut test = Vec::new();
        for fleet in fleets {
            for unit in fleet {
                if unit.components != components {
                    return Err(Error::Config(format!(
                        "unit {} has components {:?}, scenario uses {:?}",
                        unit.id(),
                        unit.components,
                        components
                    )));
                }
                if train_units.contains(&unit.unit) {
                    train.push(unit);
                } else if test_units.contains(&unit.unit) {
                    test.push(unit);
                }
            }
        }
        if train.is_empty() || test.is_empty() {
            return Err(Error::Config("train/test unit lists select no units".into()));
        }
        Ok(Self { components, train, test })
    }
}

/// Generates every fleet with a shared signature model and splits units into train and test.
pub fn make_scenario(
    base: &GeneratorConfig,
    datasets: &[FleetSpec],
    train_units: &[u32],
    test_units: &[u32],
) -> Result<Scenario> {
    check_split(train_units, test_units)?;
    let fleets = generate_scenario_fleets(base, datasets)?;
    for &u in train_units.iter().chain(test_units) {
        if u == 0 || u as usize > base.n_units {
            return Err(Error::Config(format!("unit {u} outside 1..={}", base.n_units)));
        }
    }
    Scenario::split(fleets.into_iter().map(|(_, units)| units).collect(), train_units, test_units)
}

/// Per-fleet generator config: the base with its own faults and a derived seed.
pub fn fleet_config(base: &GeneratorConfig, fleet: &FleetSpec) -> GeneratorConfig {
    GeneratorConfig {
        faulty_components: fleet.faults.clone(),
        seed: seed::derive(base.seed, &format!("fleet/{}", fleet.name)),
        ..base.clone()
    }
}

pub fn generate_scenario_fleets(base: &GeneratorConfig, datasets: &[FleetSpec]) -> Result<Vec<(String, Vec<UnitTrajectory>)>> {
    if datasets.is_empty() {
        return Err(Error::Config("scenario needs at least one fleet".into()));
    }
    datasets
        .iter()
        .map(|f| Ok((f.name.clone(), generate_fleet(&fleet_config(base, f), &f.name)?)))
        .collect()
}
