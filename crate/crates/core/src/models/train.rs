use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::preprocess::{PreprocessConfig, Sample, ScalerStats};
use crate::scalar::Scalar;
use crate::seed;

use super::config::{Family, ModelConfig};
use super::forward::{Batch, Substitution};
use super::model::{EpochStats, Model};

/// Hooks into the training loop, used for instrumentation.
pub trait TrainObserver {
    /// Sample indices of the batch about to be processed.
    fn on_batch(&mut self, _epoch: usize, _indices: &[usize]) {}
    /// Number of concept probabilities replaced by ground truth in the batch.
    fn on_substitution(&mut self, _epoch: usize, _count: usize) {}
    fn on_epoch(&mut self, _stats: &EpochStats) {}
}

impl TrainObserver for () {}

/// Trains a new model with mini-batch Adam on already scaled samples.
pub fn train<T: Scalar>(
    config: ModelConfig,
    concepts: Vec<String>,
    preprocess: PreprocessConfig,
    scaler: ScalerStats,
    samples: &[Sample<T>],
) -> Result<Model<T>> {
    train_observed(config, concepts, preprocess, scaler, samples, &mut ())
}

pub fn train_observed<T: Scalar>(
    config: ModelConfig,
    concepts: Vec<String>,
    preprocess: PreprocessConfig,
    scaler: ScalerStats,
    samples: &[Sample<T>],
    observer: &mut dyn TrainObserver,
) -> Result<Model<T>> {
    let mut model = Model::new(config, concepts, preprocess)?;
    model.set_scaler(scaler);
    fit(&mut model, samples, observer)?;
    Ok(model)
}

/// Continues training `model` for `config.epochs` epochs.
pub fn fit<T: Scalar>(model: &mut Model<T>, samples: &[Sample<T>], observer: &mut dyn TrainObserver) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Input("no training samples".into()));
    }
    let k = model.config.k;
    if let Some(s) = samples.iter().find(|s| s.concepts.len() != k) {
        return Err(Error::Shape(format!(
            "sample from {} cycle {} has {} concept labels, model k = {}",
            s.unit_id,
            s.cycle,
            s.concepts.len(),
            k
        )));
    }
    let cfg = model.config.clone();
    let mut order_rng = seed::rng(cfg.seed, "train/order");
    let mut subst_rng = seed::rng(cfg.seed, "train/interventions");
    let lr = T::of(cfg.lr);
    let mut indices: Vec<usize> = (0..samples.len()).collect();
    let start = model.history.len();

    for epoch in start + 1..=start + cfg.epochs {
        indices.shuffle(&mut order_rng);
        let (mut sum, mut sum_mse, mut sum_bce) = (0.0, 0.0, 0.0);
        for chunk in indices.chunks(cfg.batch_size) {
            observer.on_batch(epoch, chunk);
            let rows: Vec<&Sample<T>> = chunk.iter().map(|&i| &samples[i]).collect();
            let batch = Batch::from_samples(&rows)?;
            let subst = if cfg.family == Family::Cem && cfg.randint_prob > 0.0 {
                let mask: Vec<bool> = (0..batch.len() * k).map(|_| subst_rng.gen_bool(cfg.randint_prob)).collect();
                observer.on_substitution(epoch, mask.iter().filter(|&&m| m).count());
                Some(Substitution { mask, values: batch.concepts.clone() })
            } else {
                observer.on_substitution(epoch, 0);
                None
            };
            let (loss, grads) = model.loss_and_gradients(&batch, subst.as_ref())?;
            if !loss.total.is_finite() {
                return Err(Error::Training(format!(
                    "{} loss became {} at epoch {epoch} (mse {}, bce {})",
                    cfg.family, loss.total, loss.mse, loss.bce
                )));
            }
            model.params.adam_step(&grads, lr, cfg.adam)?;
            let n = batch.len() as f64;
            sum += loss.total.f64() * n;
            sum_mse += loss.mse.f64() * n;
            sum_bce += loss.bce.f64() * n;
        }
        let n = samples.len() as f64;
        let stats = EpochStats { epoch, loss: sum / n, mse: sum_mse / n, bce: sum_bce / n };
        observer.on_epoch(&stats);
        model.history.push(stats);
    }
    Ok(())
}
