//! Seeded mini-batch training with an Adam-style optimizer and
//! deterministic evaluation.

use log::{debug, info};
use rand::seq::SliceRandom;

use crate::checkpoint::Checkpoint;
use crate::dataset::{require_masks, Dataset, MaskSpec};
use crate::error::{Error, Result};
use crate::label::NUM_CLASSES;
use crate::manifest::Manifest;
use crate::metrics::{ConfusionMatrix, EvalReport};
use crate::model::{argmax, softmax_cross_entropy, FusionModel, Mode, ModelConfig};
use crate::preprocess::{augment, sample_augmentation, standardize, ChannelStats};
use crate::rng::{self, streams};
use crate::tensor::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Scale each sample's loss by inverse class frequency.
    pub class_weights: bool,
    /// Random flips and rotation on training samples.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 3e-4,
            weight_decay: 1e-4,
            seed: 0,
            class_weights: false,
            augment: true,
        }
    }
}

impl TrainConfig {
    /// `epochs = 0` is accepted and yields the initial parameters.
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "batch_size must be at least 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(
                "learning_rate must be positive".into(),
            ));
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return Err(Error::InvalidArgument("weight_decay must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    /// Mean per-sample loss of each epoch.
    pub epoch_loss: Vec<f64>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,mean_loss\n");
        for (i, l) in self.epoch_loss.iter().enumerate() {
            s.push_str(&format!("{},{l:.10}\n", i + 1));
        }
        s
    }
}

/// Adam with decoupled weight decay on matrix-shaped parameters.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(model: &FusionModel, learning_rate: f64, weight_decay: f64) -> Self {
        let sizes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
        Self {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&mut self, model: &mut FusionModel) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let lr = self.learning_rate;
        for ((p, m), v) in model
            .params_mut()
            .into_iter()
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let decay = if p.shape.len() >= 2 {
                self.weight_decay
            } else {
                0.0
            };
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p.value[i] -= lr * (mhat / (vhat.sqrt() + self.eps) + decay * p.value[i]);
            }
        }
    }
}

/// One training example in model-ready form.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub image: ImageTensor,
    pub mask: Option<ImageTensor>,
    pub target: usize,
}

/// Standardize images with `stats` and convert masks to tensors.
pub fn prepare(data: &Dataset, stats: &ChannelStats) -> Result<Vec<Prepared>> {
    data.samples
        .iter()
        .map(|s| {
            Ok(Prepared {
                image: standardize(&s.image, stats)?,
                mask: s.mask.as_ref().map(|m| m.to_tensor()),
                target: s.label.index(),
            })
        })
        .collect()
}

fn class_weights(samples: &[Prepared], enabled: bool) -> [f64; NUM_CLASSES] {
    if !enabled {
        return [1.0; NUM_CLASSES];
    }
    let mut counts = [0usize; NUM_CLASSES];
    for s in samples {
        counts[s.target] += 1;
    }
    let present = counts.iter().filter(|&&c| c > 0).count() as f64;
    let total = samples.len() as f64;
    let mut w = [0.0; NUM_CLASSES];
    for (wi, &c) in w.iter_mut().zip(&counts) {
        *wi = if c > 0 {
            total / (present * c as f64)
        } else {
            0.0
        };
    }
    w
}

/// Train on already-loaded samples. `stats` must come from the same
/// training samples.
pub fn train_prepared(
    tc: &TrainConfig,
    mc: &ModelConfig,
    samples: &[Prepared],
    stats: ChannelStats,
) -> Result<(Checkpoint, History)> {
    tc.validate()?;
    mc.validate()?;
    if mc.cnn_input().needs_mask() {
        if let Some(i) = samples.iter().position(|s| s.mask.is_none()) {
            return Err(Error::MissingMask(format!(
                "training sample {} has no mask",
                i + 1
            )));
        }
    }
    let mut model = FusionModel::new(*mc, tc.seed)?;
    let mut history = History::default();
    if tc.epochs == 0 || samples.is_empty() {
        return Ok((Checkpoint::new(model, stats, tc.seed, 0, *tc), history));
    }

    let weights = class_weights(samples, tc.class_weights);
    let mut opt = Adam::new(&model, tc.learning_rate, tc.weight_decay);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut step = 0usize;
    for epoch in 0..tc.epochs {
        let mut shuffle_rng = rng::stream(tc.seed, &[streams::SHUFFLE, epoch as u64]);
        order.sort_unstable();
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(tc.batch_size) {
            model.zero_grad();
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &i in batch {
                let s = &samples[i];
                let (image, mask) = if tc.augment {
                    let mut aug_rng =
                        rng::stream(tc.seed, &[streams::AUGMENT, epoch as u64, i as u64]);
                    let p = sample_augmentation(&mut aug_rng);
                    augment(&s.image, s.mask.as_ref(), &p)?
                } else {
                    (s.image.clone(), s.mask.clone())
                };
                let (out, cache) = model.forward_tensors(&image, mask.as_ref())?;
                let (loss, mut dlogits) =
                    softmax_cross_entropy(&out.logits, s.target, weights[s.target]);
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss { step });
                }
                batch_loss += loss;
                dlogits.iter_mut().for_each(|g| *g *= scale);
                model.backward(&cache, &dlogits);
            }
            opt.step(&mut model);
            step += 1;
            epoch_loss += batch_loss;
            debug!("step {step}: batch loss {:.5}", batch_loss * scale);
        }
        let mean = epoch_loss / samples.len() as f64;
        info!("epoch {}/{}: mean loss {mean:.5}", epoch + 1, tc.epochs);
        history.epoch_loss.push(mean);
    }
    Ok((Checkpoint::new(model, stats, tc.seed, step, *tc), history))
}

/// Load `train`, compute channel statistics on it, and train.
pub fn train(
    tc: &TrainConfig,
    mc: &ModelConfig,
    train: &Manifest,
    masks: &MaskSpec,
) -> Result<(Checkpoint, History)> {
    tc.validate()?;
    mc.validate()?;
    let needs_mask = mc.cnn_input().needs_mask();
    if needs_mask {
        require_masks(train)?;
    }
    if train.is_empty() {
        return Err(Error::EmptyInput("training manifest has no records".into()));
    }
    let data = Dataset::load(train, mc.vit.image_size, needs_mask.then_some(masks))?;
    let stats = ChannelStats::from_images(data.images())?;
    let samples = prepare(&data, &stats)?;
    train_prepared(tc, mc, &samples, stats)
}

/// Predictions for prepared samples: single pass, no augmentation.
pub fn predict(model: &FusionModel, samples: &[Prepared]) -> Result<Vec<usize>> {
    samples
        .iter()
        .map(|s| {
            let (out, _) = model.forward_tensors(&s.image, s.mask.as_ref())?;
            Ok(argmax(&out.logits))
        })
        .collect()
}

pub fn evaluate_prepared(ckpt: &Checkpoint, samples: &[Prepared]) -> Result<EvalReport> {
    let preds = predict(&ckpt.model, samples)?;
    let truth: Vec<usize> = samples.iter().map(|s| s.target).collect();
    let cm = ConfusionMatrix::from_indices(&truth, &preds)?;
    Ok(EvalReport::from_confusion(
        cm,
        Some(ckpt.model.mode()),
        Some(ckpt.seed),
    ))
}

/// Evaluate a checkpoint on `test` using the checkpoint's own channel
/// statistics.
pub fn evaluate(
    ckpt: &Checkpoint,
    test: &Manifest,
    mode: Mode,
    masks: &MaskSpec,
) -> Result<EvalReport> {
    if ckpt.model.mode() != mode {
        return Err(Error::Checkpoint(format!(
            "checkpoint was trained in {} mode, evaluation requested {mode}",
            ckpt.model.mode()
        )));
    }
    let needs_mask = ckpt.model.config.cnn_input().needs_mask();
    if needs_mask {
        require_masks(test)?;
    }
    let data = Dataset::load(
        test,
        ckpt.model.config.vit.image_size,
        needs_mask.then_some(masks),
    )?;
    let samples = prepare(&data, &ckpt.stats)?;
    evaluate_prepared(ckpt, &samples)
}
