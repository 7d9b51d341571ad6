use rand::Rng;

use crate::error::{Error, Result};
use crate::netcore::{he_uniform, Graph, NodeId, ParamId, ParameterSet, Tensor};
use crate::preprocess::{PreprocessConfig, ScalerStats};
use crate::scalar::Scalar;
use crate::seed;

use super::config::{Family, ModelConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct CemLayout {
    pub pos: Vec<Linear>,
    pub neg: Vec<Linear>,
    pub scorer: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    pub convs: Vec<Linear>,
    /// Flattened conv features to latent code (CNN, CNN+CLS, CEM) or to the concept bottleneck (CBMs).
    pub encoder: Linear,
    pub head: Linear,
    pub classifier: Option<Linear>,
    pub cem: Option<CemLayout>,
}

/// Per-epoch training loss.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub mse: f64,
    pub bce: f64,
}

/// A concept-bottleneck (or baseline) network with its preprocessing state.
#[derive(Debug, Clone)]
pub struct Model<T: Scalar> {
    pub(crate) config: ModelConfig,
    pub(crate) concepts: Vec<String>,
    pub(crate) preprocess: PreprocessConfig,
    pub(crate) scaler: Option<ScalerStats>,
    pub(crate) history: Vec<EpochStats>,
    pub(crate) params: ParameterSet<T>,
    pub(crate) layout: Layout,
}

fn linear<T: Scalar, R: Rng>(ps: &mut ParameterSet<T>, name: &str, out: usize, inp: usize, rng: &mut R) -> Linear {
    let w = ps.add(format!("{name}.weight"), he_uniform(&[out, inp], inp, rng));
    let b = ps.add(format!("{name}.bias"), Tensor::zeros(&[out]));
    Linear { w, b }
}

impl<T: Scalar> Model<T> {
    /// Freshly initialized model. `concepts` names the `k` supervised bottleneck units.
    pub fn new(config: ModelConfig, concepts: Vec<String>, preprocess: PreprocessConfig) -> Result<Self> {
        config.validate()?;
        if concepts.len() != config.k {
            return Err(Error::Config(format!(
                "{} concept names for k = {}",
                concepts.len(),
                config.k
            )));
        }
        if preprocess.window != config.window {
            return Err(Error::Config(format!(
                "preprocessing window {} differs from model window {}",
                preprocess.window, config.window
            )));
        }
        let mut ps = ParameterSet::new();
        let mut rng = seed::rng(config.seed, "init/extractor");
        let mut convs = Vec::new();
        let mut c_in = config.in_channels;
        for (i, &c_out) in config.conv_channels.iter().enumerate() {
            let fan_in = c_in * config.kernel_size;
            let w = ps.add(
                format!("extractor.conv{i}.weight"),
                he_uniform(&[c_out, c_in, config.kernel_size], fan_in, &mut rng),
            );
            let b = ps.add(format!("extractor.conv{i}.bias"), Tensor::zeros(&[c_out]));
            convs.push(Linear { w, b });
            c_in = c_out;
        }
        let flat = config.flat_features();
        let k = config.k;
        let encoder_out = match config.family {
            Family::Cnn | Family::CnnCls | Family::Cem => config.latent_dim,
            Family::CbmBool | Family::CbmFuzzy => k,
            Family::CbmHybrid => k + config.extra(),
        };
        let mut rng = seed::rng(config.seed, "init/encoder");
        let encoder = linear(&mut ps, "extractor.encoder", encoder_out, flat, &mut rng);

        let mut rng = seed::rng(config.seed, "init/bottleneck");
        let cem = (config.family == Family::Cem).then(|| {
            let m = config.embed_dim;
            let pos = (0..k)
                .map(|i| linear(&mut ps, &format!("cem.pos{i}"), m, config.latent_dim, &mut rng))
                .collect();
            let neg = (0..k)
                .map(|i| linear(&mut ps, &format!("cem.neg{i}"), m, config.latent_dim, &mut rng))
                .collect();
            let scorer = linear(&mut ps, "cem.scorer", 1, 2 * m, &mut rng);
            CemLayout { pos, neg, scorer }
        });

        let mut rng = seed::rng(config.seed, "init/heads");
        let head = linear(&mut ps, "head", 1, config.bottleneck_width(), &mut rng);
        let classifier = (config.family == Family::CnnCls)
            .then(|| linear(&mut ps, "classifier", k, config.latent_dim, &mut rng));

        Ok(Self {
            config,
            concepts,
            preprocess,
            scaler: None,
            history: Vec::new(),
            params: ps,
            layout: Layout { convs, encoder, head, classifier, cem },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn family(&self) -> Family {
        self.config.family
    }

    pub fn k(&self) -> usize {
        self.config.k
    }

    pub fn concepts(&self) -> &[String] {
        &self.concepts
    }

    pub fn preprocess(&self) -> &PreprocessConfig {
        &self.preprocess
    }

    pub fn scaler(&self) -> Option<&ScalerStats> {
        self.scaler.as_ref()
    }

    pub fn set_scaler(&mut self, scaler: ScalerStats) {
        self.scaler = Some(scaler);
    }

    pub fn history(&self) -> &[EpochStats] {
        &self.history
    }

    pub fn parameters(&self) -> &ParameterSet<T> {
        &self.params
    }

    /// Mutable access, e.g. to perturb or surgically edit weights.
    pub fn parameters_mut(&mut self) -> &mut ParameterSet<T> {
        &mut self.params
    }

    /// Weights of the linear RUL head, one per bottleneck dimension.
    pub fn head_weights(&self) -> &[T] {
        self.params.value(self.layout.head.w).data()
    }

    pub fn head_bias(&self) -> T {
        self.params.value(self.layout.head.b).data()[0]
    }

    pub fn concept_index(&self, name: &str) -> Option<usize> {
        self.concepts.iter().position(|c| c == name)
    }

    /// Runs the feature-extractor convolutions and the encoder; returns the encoder output node.
    pub(crate) fn extract(&self, g: &mut Graph<'_, T>, x: NodeId, batch: usize) -> Result<NodeId> {
        let mut h = x;
        for conv in &self.layout.convs {
            let (w, b) = (g.param(conv.w), g.param(conv.b));
            let c = g.conv1d(h, w, b)?;
            h = g.relu(c);
        }
        let flat = g.reshape(h, &[batch, self.config.flat_features()])?;
        let (w, b) = (g.param(self.layout.encoder.w), g.param(self.layout.encoder.b));
        g.dense(flat, w, b)
    }

    pub(crate) fn dense(&self, g: &mut Graph<'_, T>, x: NodeId, l: Linear) -> Result<NodeId> {
        let (w, b) = (g.param(l.w), g.param(l.b));
        g.dense(x, w, b)
    }
}
