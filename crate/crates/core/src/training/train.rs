use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{metrics, ConfusionMatrix, Metrics};
use super::optim::{Optimizer, OptimizerKind};
use crate::error::{Error, Result};
use crate::model::{Cost, Dcmnet, Modality, ModelConfig};
use crate::numerics::Tape;
use crate::preprocessing::{
    augment, extract_patches, fit_pca, PatchPair, PcaModel, SceneCube, Split, DEFAULT_NOISE_SIGMA,
};
use crate::rng::{stream, Stream};
use crate::routing::RoutingTrace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Random flips plus relative Gaussian noise on every training sample.
    pub augment: bool,
    pub noise_sigma: f64,
    pub modality: Modality,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            augment: true,
            noise_sigma: DEFAULT_NOISE_SIGMA,
            modality: Modality::HL,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "invalid learning rate {}",
                self.learning_rate
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!(
                "invalid noise sigma {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

/// Patches for both splits, cut with a PCA fitted on the training pixels.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub pca: PcaModel,
    pub train: Vec<PatchPair>,
    pub test: Vec<PatchPair>,
}

impl PreparedData {
    pub fn new(cube: &SceneCube, cfg: &ModelConfig) -> Result<Self> {
        let enc = &cfg.encoder;
        if cube.bands() != enc.bands {
            return Err(Error::Data(format!(
                "scene has {} bands, model expects {}",
                cube.bands(),
                enc.bands
            )));
        }
        if cube.lidar_channels() != enc.lidar_channels {
            return Err(Error::Data(format!(
                "scene has {} LiDAR channels, model expects {}",
                cube.lidar_channels(),
                enc.lidar_channels
            )));
        }
        if cube.classes != cfg.classes {
            return Err(Error::Data(format!(
                "scene has {} classes, model expects {}",
                cube.classes, cfg.classes
            )));
        }
        let pca = fit_pca(cube, enc.components)?;
        let train = extract_patches(cube, &pca, enc.patch, Split::Train)?;
        let test = match extract_patches(cube, &pca, enc.patch, Split::Test) {
            Ok(t) => t,
            Err(Error::Data(_)) => Vec::new(),
            Err(e) => return Err(e),
        };
        Ok(Self { pca, train, test })
    }

    pub fn split(&self, split: Split) -> &[PatchPair] {
        match split {
            Split::Test => &self.test,
            _ => &self.train,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    /// Mean training loss of each epoch.
    pub loss_history: Vec<f64>,
    pub steps: u64,
}

/// Mini-batch training. The batch gradient is the mean of per-sample
/// gradients; sample order and augmentation draw from separate streams.
pub fn train(model: &mut Dcmnet, samples: &[PatchPair], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    model.config.modality = cfg.modality;
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate, &model.store);
    let mut order_rng = stream(cfg.seed, Stream::Shuffle);
    let mut aug_rng = stream(cfg.seed, Stream::Augment);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut loss_history = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            model.store.zero_grads();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let sample = if cfg.augment {
                    augment(&samples[i], &mut aug_rng, cfg.noise_sigma)
                } else {
                    samples[i].clone()
                };
                let (loss, grads, vars) = model.loss_and_grads(&sample)?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite {
                        op: "training loss",
                    });
                }
                epoch_loss += loss;
                model.store.accumulate_grads(&grads, &vars, scale);
            }
            optimizer.step(&mut model.store);
        }
        loss_history.push(epoch_loss / samples.len() as f64);
    }
    model.store.tensors_mut().for_each(|t| t.clear_grad());
    Ok(TrainOutcome {
        loss_history,
        steps: optimizer.steps(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub confusion_matrix: ConfusionMatrix,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvalReport,
    /// Label and gate trace of every sample, in input order.
    pub traces: Vec<(u16, RoutingTrace)>,
}

/// Scores `samples` in parallel; parameters are read-only.
pub fn evaluate(model: &Dcmnet, samples: &[PatchPair]) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::Data("evaluation split is empty".into()));
    }
    let predictions = samples
        .par_iter()
        .map(|s| model.predict(s).map(|p| (s.target(), p)))
        .collect::<Result<Vec<_>>>()?;
    let cm = ConfusionMatrix::from_pairs(
        model.config.classes,
        predictions.iter().map(|(t, p)| (*t, p.class)),
    )?;
    let report = EvalReport {
        samples: samples.len(),
        metrics: metrics(&cm)?,
        confusion_matrix: cm,
    };
    let traces = predictions
        .into_iter()
        .map(|(t, p)| (t as u16 + 1, p.trace))
        .collect();
    Ok(Evaluation { report, traces })
}

/// Mean cross-entropy over `samples` without augmentation.
pub fn mean_loss(model: &Dcmnet, samples: &[PatchPair]) -> Result<f64> {
    let losses = samples
        .par_iter()
        .map(|s| model.loss(s))
        .collect::<Result<Vec<_>>>()?;
    Ok(losses.iter().sum::<f64>() / samples.len().max(1) as f64)
}

/// `-log softmax(logits)[label]` for a one-based `label`.
pub fn cross_entropy(logits: &[f64], label: u16) -> Result<f64> {
    let classes = logits.len();
    if label == 0 || label as usize > classes {
        return Err(Error::LabelOutOfRange {
            label: label as usize,
            classes,
        });
    }
    let t = crate::numerics::Tensor::new(vec![classes], logits.to_vec())?;
    let mut tape = Tape::new();
    let x = tape.constant(t);
    let loss = tape.cross_entropy(x, label as usize - 1)?;
    Ok(tape.value(loss).data()[0])
}

pub fn cost(model: &Dcmnet) -> Cost {
    model.cost()
}
