use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::{FleetSpec, GeneratorConfig};
use crate::error::{Error, Result};
use crate::intervene::InterventionPolicy;
use crate::models::{Family, ModelConfig};
use crate::preprocess::PreprocessConfig;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    /// Largest concept count; defaults to every configured concept.
    pub k_max: Option<usize>,
    pub families: Vec<Family>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { k_max: None, families: Family::ALL.iter().copied().filter(|f| f.has_concepts()).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InterventionConfig {
    #[serde(flatten)]
    pub policy: InterventionPolicy,
    /// Width, in cycles, of the buckets of the error distribution.
    pub bucket_width: usize,
    pub families: Vec<Family>,
}

impl Default for InterventionConfig {
    fn default() -> Self {
        Self {
            policy: InterventionPolicy::default(),
            bucket_width: 10,
            families: Family::ALL.iter().copied().filter(|f| f.is_bottleneck()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExportConfig {
    pub families: Vec<Family>,
    pub split: Split,
}

impl Default for ExportConfig {
    fn default() -> Self {
        Self { families: Family::ALL.to_vec(), split: Split::Test }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationConfig {
    /// Windows sampled for the concept alignment score.
    pub cas_max_points: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self { cas_max_points: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub bind: String,
    /// Checkpoints to serve; defaults to every trained family under the output directory.
    pub checkpoints: Vec<PathBuf>,
    pub session_ttl_secs: u64,
    /// Allowed browser origin; any origin when unset.
    pub cors_origin: Option<String>,
    pub split: Split,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            checkpoints: Vec::new(),
            session_ttl_secs: 3600,
            cors_origin: None,
            split: Split::Test,
        }
    }
}

/// Everything one study needs. Every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Directory of `<fleet>.csv` files; defaults to `<out_dir>/data`.
    pub data_dir: Option<PathBuf>,
    pub generator: GeneratorConfig,
    pub fleets: Vec<FleetSpec>,
    pub train_units: Vec<u32>,
    pub test_units: Vec<u32>,
    /// Concepts supervised by the models; defaults to every component.
    pub concepts: Vec<String>,
    /// Concept pairs reported as a combined confusion class.
    pub combined_classes: Vec<(String, String)>,
    pub preprocess: PreprocessConfig,
    /// Template for every model; `family`, `k` and `seed` are set per run.
    pub model: ModelConfig,
    pub families: Vec<Family>,
    pub evaluation: EvaluationConfig,
    pub ablation: AblationConfig,
    pub intervention: InterventionConfig,
    pub export: ExportConfig,
    pub service: ServiceConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            data_dir: None,
            generator: GeneratorConfig::default(),
            fleets: vec![
                FleetSpec { name: "DS01".into(), faults: vec!["HPT".into()] },
                FleetSpec { name: "DS02".into(), faults: vec!["LPT".into()] },
            ],
            train_units: (1..=6).collect(),
            test_units: (7..=10).collect(),
            concepts: Vec::new(),
            combined_classes: Vec::new(),
            preprocess: PreprocessConfig::default(),
            model: ModelConfig::default(),
            families: Family::ALL.to_vec(),
            evaluation: EvaluationConfig::default(),
            ablation: AblationConfig::default(),
            intervention: InterventionConfig::default(),
            export: ExportConfig::default(),
            service: ServiceConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid experiment config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Concept names, defaulting to all components.
    pub fn concept_names(&self) -> Vec<String> {
        if self.concepts.is_empty() {
            self.generator.components.clone()
        } else {
            self.concepts.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.preprocess.validate()?;
        self.intervention.policy.validate()?;
        let names = self.concept_names();
        if names.is_empty() {
            return Err(Error::Config("no concepts configured".into()));
        }
        for c in &names {
            if !self.generator.components.contains(c) {
                return Err(Error::Config(format!("concept {c:?} is not a component of the scenario")));
            }
        }
        for (a, b) in &self.combined_classes {
            if !names.contains(a) || !names.contains(b) {
                return Err(Error::Config(format!("combined class {a}+{b} references an unknown concept")));
            }
        }
        for f in &self.fleets {
            for c in &f.faults {
                if !self.generator.components.contains(c) {
                    return Err(Error::Config(format!("fleet {} faults unknown component {c:?}", f.name)));
                }
            }
        }
        if let Some(k) = self.ablation.k_max {
            if k == 0 || k > names.len() {
                return Err(Error::Config(format!("ablation k_max {k} outside 1..={}", names.len())));
            }
        }
        if self.fleets.is_empty() {
            return Err(Error::Config("no fleets configured".into()));
        }
        if self.intervention.bucket_width == 0 {
            return Err(Error::Config("bucket_width must be positive".into()));
        }
        Ok(())
    }

    pub fn data_dir(&self) -> PathBuf {
        self.data_dir.clone().unwrap_or_else(|| self.out_dir.join("data"))
    }

    pub fn models_dir(&self) -> PathBuf {
        self.out_dir.join("models")
    }

    pub fn checkpoint_path(&self, family: Family) -> PathBuf {
        self.models_dir().join(format!("{}.json", family.slug()))
    }

    /// Generator settings with stage seeds derived from the root seed.
    pub fn seeded_generator(&self) -> GeneratorConfig {
        GeneratorConfig {
            seed: seed::derive(self.seed, "generate"),
            signature_seed: seed::derive(self.seed, "signature"),
            tau: self.preprocess.tau,
            ..self.generator.clone()
        }
    }

    /// Model settings for one run. Every family shares the training seed, so
    /// batch order and substitution draws depend only on the data.
    pub fn model_config(&self, family: Family, k: usize) -> ModelConfig {
        ModelConfig {
            family,
            k,
            window: self.preprocess.window,
            seed: seed::derive(self.seed, "train"),
            ..self.model.clone()
        }
    }
}
