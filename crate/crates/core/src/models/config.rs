use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datagen::N_CHANNELS;
use crate::error::{Error, Result};
use crate::netcore::AdamConfig;

/// The compared model families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Plain regressor `f(phi(x))`.
    Cnn,
    /// Regressor plus a sigmoid classification head on the same latent code.
    CnnCls,
    /// Concept bottleneck with hard-thresholded activations.
    CbmBool,
    /// Concept bottleneck with sigmoid activations.
    CbmFuzzy,
    /// Sigmoid concepts plus unsupervised extra bottleneck dimensions.
    CbmHybrid,
    /// Concept embedding model.
    Cem,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::Cnn,
        Family::CnnCls,
        Family::CbmBool,
        Family::CbmFuzzy,
        Family::CbmHybrid,
        Family::Cem,
    ];

    pub fn slug(self) -> &'static str {
        match self {
            Family::Cnn => "cnn",
            Family::CnnCls => "cnn_cls",
            Family::CbmBool => "cbm_bool",
            Family::CbmFuzzy => "cbm_fuzzy",
            Family::CbmHybrid => "cbm_hybrid",
            Family::Cem => "cem",
        }
    }

    /// Whether the model predicts concept probabilities at all.
    pub fn has_concepts(self) -> bool {
        self != Family::Cnn
    }

    /// Whether the RUL is computed from the concepts, i.e. interventions change it.
    pub fn is_bottleneck(self) -> bool {
        matches!(self, Family::CbmBool | Family::CbmFuzzy | Family::CbmHybrid | Family::Cem)
    }

    pub fn is_cbm(self) -> bool {
        matches!(self, Family::CbmBool | Family::CbmFuzzy | Family::CbmHybrid)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Cnn => "CNN",
            Family::CnnCls => "CNN+CLS",
            Family::CbmBool => "Boolean CBM",
            Family::CbmFuzzy => "Fuzzy CBM",
            Family::CbmHybrid => "Hybrid CBM",
            Family::Cem => "CEM",
        })
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.slug() == s)
            .ok_or_else(|| Error::Config(format!("unknown model family {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub family: Family,
    /// Number of concepts.
    pub k: usize,
    pub in_channels: usize,
    pub window: usize,
    /// Output channels of the stacked 1-D convolutions.
    pub conv_channels: Vec<usize>,
    pub kernel_size: usize,
    pub latent_dim: usize,
    /// Per-concept embedding size of the CEM.
    pub embed_dim: usize,
    /// Unsupervised width of the hybrid bottleneck; `k * embed_dim - k` when unset.
    pub extra_capacity: Option<usize>,
    pub lambda: f64,
    /// Probability of replacing a predicted concept probability by its label during CEM training.
    pub randint_prob: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            family: Family::Cem,
            k: 2,
            in_channels: N_CHANNELS,
            window: 50,
            conv_channels: vec![20, 20, 10, 10],
            kernel_size: 3,
            latent_dim: 256,
            embed_dim: 16,
            extra_capacity: None,
            lambda: 0.1,
            randint_prob: 0.25,
            epochs: 30,
            batch_size: 256,
            lr: 1e-3,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn extra(&self) -> usize {
        self.extra_capacity.unwrap_or(self.k * self.embed_dim - self.k)
    }

    /// Temporal length left after the convolution stack.
    pub fn conv_out_len(&self) -> usize {
        self.window
            .saturating_sub(self.conv_channels.len() * (self.kernel_size.saturating_sub(1)))
    }

    pub fn flat_features(&self) -> usize {
        self.conv_channels.last().copied().unwrap_or(self.in_channels) * self.conv_out_len()
    }

    /// Width of the representation the RUL head reads.
    pub fn bottleneck_width(&self) -> usize {
        match self.family {
            Family::Cnn | Family::CnnCls => self.latent_dim,
            Family::CbmBool | Family::CbmFuzzy => self.k,
            Family::CbmHybrid => self.k + self.extra(),
            Family::Cem => self.k * self.embed_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.k == 0 {
            return bad("k must be >= 1".into());
        }
        if self.in_channels == 0 || self.window == 0 || self.kernel_size == 0 {
            return bad("in_channels, window and kernel_size must be positive".into());
        }
        if self.conv_channels.contains(&0) {
            return bad("conv channel counts must be positive".into());
        }
        if self.window < 1 + self.conv_channels.len() * (self.kernel_size - 1) {
            return bad(format!(
                "kernel size {} does not fit window {} through {} convolutions",
                self.kernel_size,
                self.window,
                self.conv_channels.len()
            ));
        }
        if self.latent_dim == 0 || self.embed_dim == 0 {
            return bad("latent_dim and embed_dim must be positive".into());
        }
        if !(self.lambda >= 0.0) {
            return bad("lambda must be >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.randint_prob) {
            return bad("randint_prob must lie in [0, 1]".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.lr > 0.0) {
            return bad("lr must be positive".into());
        }
        Ok(())
    }
}
