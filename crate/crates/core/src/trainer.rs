//! Linear classifier head over pooled feature streams.
//!
//! Each sample's streams are pooled independently (mean or attention) and
//! concatenated; a single affine layer maps the result to eight logits.
//! Training uses mini-batch Adam with separate learning rates for the head
//! and the attention parameters, and NewBob annealing driven by dev
//! Macro-F1. The model with the best dev Macro-F1 is returned.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{uniform_stream_dims, PosteriorVector, SampleRecord};
use crate::error::{Error, Result};
use crate::evaluation::{confusion_matrix, macro_f1};
use crate::labels::{EmotionLabel, LabelSet, NUM_CLASSES};
use crate::losses::{posterior, LossKind};
use crate::optim::{adam_step, newbob_update, AdamState, NewBobConfig, NewBobState};
use crate::pooling::{attention_pool, attention_pool_backward, mean_pool, AttentionParams, PoolingKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub pooling: PoolingKind,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub learning_rate_head: f64,
    pub learning_rate_pooling: f64,
    /// `None` keeps both learning rates fixed.
    pub newbob: Option<NewBobConfig>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossKind::Nll,
            pooling: PoolingKind::Mean,
            batch_size: 16,
            max_epochs: 10,
            learning_rate_head: 1e-4,
            learning_rate_pooling: 1e-5,
            newbob: Some(NewBobConfig::default()),
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        for lr in [self.learning_rate_head, self.learning_rate_pooling] {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::InvalidConfig(format!("learning rate {lr} must be positive")));
            }
        }
        if let Some(nb) = &self.newbob {
            nb.validate()?;
        }
        Ok(())
    }

    /// SHA-256 of the config's JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub seed: u64,
    pub config_hash: String,
    pub config: Option<TrainConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHeadModel {
    pub label_set: LabelSet,
    pub pooling: PoolingKind,
    pub stream_dims: Vec<usize>,
    /// `NUM_CLASSES` rows of length `input_dim()`.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    /// One scoring vector per stream; empty for mean pooling.
    pub attention: Vec<AttentionParams>,
    pub metadata: ModelMetadata,
}

impl LinearHeadModel {
    pub fn input_dim(&self) -> usize {
        self.stream_dims.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        self.label_set.validate()?;
        let dtot = self.input_dim();
        if self.stream_dims.is_empty() || self.stream_dims.contains(&0) {
            return Err(Error::Malformed("model has an empty stream".into()));
        }
        if self.weights.len() != NUM_CLASSES || self.bias.len() != NUM_CLASSES {
            return Err(Error::DimensionMismatch {
                expected: NUM_CLASSES,
                got: self.weights.len().min(self.bias.len()),
            });
        }
        if let Some(row) = self.weights.iter().find(|r| r.len() != dtot) {
            return Err(Error::DimensionMismatch {
                expected: dtot,
                got: row.len(),
            });
        }
        match self.pooling {
            PoolingKind::Mean if !self.attention.is_empty() => {
                return Err(Error::Malformed(
                    "mean-pooling model carries attention parameters".into(),
                ))
            }
            PoolingKind::Attention => {
                let dims: Vec<usize> = self.attention.iter().map(|a| a.u.len()).collect();
                if dims != self.stream_dims {
                    return Err(Error::Malformed(format!(
                        "attention dims {dims:?} do not match streams {:?}",
                        self.stream_dims
                    )));
                }
            }
            _ => {}
        }
        let finite = self
            .weights
            .iter()
            .flatten()
            .chain(&self.bias)
            .chain(self.attention.iter().flat_map(|a| &a.u))
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFiniteInput);
        }
        Ok(())
    }

    fn check_sample(&self, sample: &SampleRecord) -> Result<()> {
        let dims = sample.stream_dims();
        if dims != self.stream_dims {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: dims.iter().sum(),
            });
        }
        Ok(())
    }

    /// Pooled, concatenated input vector of one sample.
    pub fn pooled_input(&self, sample: &SampleRecord) -> Result<Vec<f64>> {
        self.check_sample(sample)?;
        let mut x = Vec::with_capacity(self.input_dim());
        for (i, s) in sample.streams.iter().enumerate() {
            match self.pooling {
                PoolingKind::Mean => x.extend(mean_pool(s)),
                PoolingKind::Attention => x.extend(attention_pool(s, &self.attention[i])?.0),
            }
        }
        Ok(x)
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    fn head_params(&self) -> Vec<f64> {
        self.weights.iter().flatten().chain(&self.bias).copied().collect()
    }

    fn set_head_params(&mut self, flat: &[f64]) {
        let d = self.input_dim();
        for (c, row) in self.weights.iter_mut().enumerate() {
            row.copy_from_slice(&flat[c * d..(c + 1) * d]);
        }
        self.bias.copy_from_slice(&flat[NUM_CLASSES * d..]);
    }

    fn pooling_params(&self) -> Vec<f64> {
        self.attention.iter().flat_map(|a| a.u.iter().copied()).collect()
    }

    fn set_pooling_params(&mut self, flat: &[f64]) {
        let mut off = 0;
        for a in &mut self.attention {
            let n = a.u.len();
            a.u.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: LinearHeadModel = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// Uniform weights in `[-1/sqrt(Dtot), 1/sqrt(Dtot)]`, zero bias, and zero
/// attention vectors (so attention starts out as mean pooling).
pub fn init_model(stream_dims: &[usize], pooling: PoolingKind, seed: u64) -> Result<LinearHeadModel> {
    let dtot: usize = stream_dims.iter().sum();
    if stream_dims.is_empty() || stream_dims.contains(&0) {
        return Err(Error::InvalidConfig("every stream needs D >= 1".into()));
    }
    let bound = 1.0 / (dtot as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = (0..NUM_CLASSES)
        .map(|_| (0..dtot).map(|_| rng.gen_range(-bound..=bound)).collect())
        .collect();
    let attention = match pooling {
        PoolingKind::Mean => Vec::new(),
        PoolingKind::Attention => stream_dims.iter().map(|&d| AttentionParams::zeros(d)).collect(),
    };
    Ok(LinearHeadModel {
        label_set: LabelSet::canonical(),
        pooling,
        stream_dims: stream_dims.to_vec(),
        weights,
        bias: vec![0.0; NUM_CLASSES],
        attention,
        metadata: ModelMetadata {
            seed,
            config_hash: String::new(),
            config: None,
        },
    })
}

/// Gradient of the batch-mean objective, laid out like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradient {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub attention: Vec<Vec<f64>>,
}

impl ModelGradient {
    fn zeros(model: &LinearHeadModel) -> Self {
        ModelGradient {
            weights: vec![vec![0.0; model.input_dim()]; NUM_CLASSES],
            bias: vec![0.0; NUM_CLASSES],
            attention: model.attention.iter().map(|a| vec![0.0; a.u.len()]).collect(),
        }
    }

    fn head_flat(&self) -> Vec<f64> {
        self.weights.iter().flatten().chain(&self.bias).copied().collect()
    }

    fn pooling_flat(&self) -> Vec<f64> {
        self.attention.iter().flatten().copied().collect()
    }
}

fn target_index(sample: &SampleRecord) -> Result<usize> {
    sample
        .label
        .and_then(EmotionLabel::index)
        .ok_or_else(|| Error::LabelX(sample.sample_id.clone()))
}

/// Mean loss over `batch` and its gradient with respect to every model
/// parameter. `cached` optionally supplies precomputed pooled inputs (only
/// valid for mean pooling).
fn batch_objective(
    model: &LinearHeadModel,
    batch: &[&SampleRecord],
    cached: Option<&[&[f64]]>,
    loss: &LossKind,
) -> Result<(f64, ModelGradient)> {
    let mut grad = ModelGradient::zeros(model);
    let mut total = 0.0;
    let d = model.input_dim();
    for (n, sample) in batch.iter().enumerate() {
        let target = target_index(sample)?;
        let owned;
        let x: &[f64] = match cached {
            Some(c) => c[n],
            None => {
                owned = model.pooled_input(sample)?;
                &owned
            }
        };
        let logits = model.logits(x);
        let (l, dz) = loss.loss_and_grad(&logits, target)?;
        total += l;
        for ((row, b), &dzc) in grad.weights.iter_mut().zip(&mut grad.bias).zip(&dz) {
            for (g, v) in row.iter_mut().zip(x) {
                *g += dzc * v;
            }
            *b += dzc;
        }
        if model.pooling == PoolingKind::Attention {
            let mut dx = vec![0.0; d];
            for (row, &dzc) in model.weights.iter().zip(&dz) {
                for (g, w) in dx.iter_mut().zip(row) {
                    *g += dzc * w;
                }
            }
            let mut off = 0;
            for (i, s) in sample.streams.iter().enumerate() {
                let n = s.dim();
                let (_, gu) = attention_pool_backward(s, &model.attention[i], &dx[off..off + n])?;
                for (g, v) in grad.attention[i].iter_mut().zip(gu) {
                    *g += v;
                }
                off += n;
            }
        }
    }
    let scale = 1.0 / batch.len() as f64;
    grad.weights.iter_mut().flatten().for_each(|g| *g *= scale);
    grad.bias.iter_mut().for_each(|g| *g *= scale);
    grad.attention.iter_mut().flatten().for_each(|g| *g *= scale);
    Ok((total * scale, grad))
}

/// Mean loss of `model` over `samples` and its exact gradient.
pub fn objective_and_gradient(
    model: &LinearHeadModel,
    samples: &[SampleRecord],
    loss: &LossKind,
) -> Result<(f64, ModelGradient)> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for s in samples {
        model.check_sample(s)?;
    }
    let refs: Vec<&SampleRecord> = samples.iter().collect();
    batch_objective(model, &refs, None, loss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_macro_f1: f64,
    pub lr_head: f64,
    pub lr_pooling: f64,
}

/// Posterior for each sample, in input order.
pub fn predict(model: &LinearHeadModel, samples: &[SampleRecord]) -> Result<Vec<(String, PosteriorVector)>> {
    samples
        .iter()
        .map(|s| {
            let x = model.pooled_input(s)?;
            Ok((s.sample_id.clone(), posterior(&model.logits(&x))?))
        })
        .collect()
}

fn dataset_macro_f1(model: &LinearHeadModel, samples: &[SampleRecord]) -> Result<f64> {
    let refs: Vec<EmotionLabel> = samples
        .iter()
        .map(|s| s.label.unwrap_or(EmotionLabel::NoConsensus))
        .collect();
    let preds: Vec<EmotionLabel> = predict(model, samples)?.iter().map(|(_, p)| p.argmax()).collect();
    Ok(macro_f1(&confusion_matrix(&refs, &preds)?))
}

fn check_labeled(samples: &[SampleRecord]) -> Result<()> {
    if let Some(s) = samples.iter().find(|s| !s.label.is_some_and(EmotionLabel::is_class)) {
        return Err(Error::LabelX(s.sample_id.clone()));
    }
    Ok(())
}

/// Trains a head on `train`, selecting the epoch with the best Macro-F1 on
/// `dev`. An empty `dev` set falls back to scoring on `train`.
pub fn train(
    train: &[SampleRecord],
    dev: &[SampleRecord],
    config: &TrainConfig,
) -> Result<(LinearHeadModel, Vec<EpochRecord>)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_labeled(train)?;
    check_labeled(dev)?;
    let dims = uniform_stream_dims(train)?;
    if !dev.is_empty() {
        let dev_dims = uniform_stream_dims(dev)?;
        if dev_dims != dims {
            return Err(Error::DimensionMismatch {
                expected: dims.iter().sum(),
                got: dev_dims.iter().sum(),
            });
        }
    }
    let selection = if dev.is_empty() { train } else { dev };

    let mut model = init_model(&dims, config.pooling, config.seed)?;
    model.metadata = ModelMetadata {
        seed: config.seed,
        config_hash: config.hash(),
        config: Some(config.clone()),
    };
    let mut history = Vec::new();
    if config.max_epochs == 0 {
        return Ok((model, history));
    }

    let cache: Option<Vec<Vec<f64>>> = match config.pooling {
        PoolingKind::Mean => Some(train.iter().map(|s| model.pooled_input(s)).collect::<Result<_>>()?),
        PoolingKind::Attention => None,
    };

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);
    let mut head_state = AdamState::new(model.head_params().len());
    let mut pool_state = AdamState::new(model.pooling_params().len());
    let mut lr_head = config.learning_rate_head;
    let mut lr_pool = config.learning_rate_pooling;
    let mut schedulers = config
        .newbob
        .map(|nb| (NewBobState::new(nb, lr_head), NewBobState::new(nb, lr_pool)));

    let mut best = (model.clone(), f64::NEG_INFINITY);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&SampleRecord> = chunk.iter().map(|&i| &train[i]).collect();
            let cached: Option<Vec<&[f64]>> = cache.as_ref().map(|c| chunk.iter().map(|&i| c[i].as_slice()).collect());
            let (loss, grad) = batch_objective(&model, &batch, cached.as_deref(), &config.loss)?;
            loss_sum += loss * chunk.len() as f64;

            let mut head = model.head_params();
            adam_step(&mut head, &grad.head_flat(), &mut head_state, lr_head)?;
            model.set_head_params(&head);
            if model.pooling == PoolingKind::Attention {
                let mut pool = model.pooling_params();
                adam_step(&mut pool, &grad.pooling_flat(), &mut pool_state, lr_pool)?;
                model.set_pooling_params(&pool);
            }
        }

        let dev_f1 = dataset_macro_f1(&model, selection)?;
        history.push(EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / train.len() as f64,
            dev_macro_f1: dev_f1,
            lr_head,
            lr_pooling: lr_pool,
        });
        if dev_f1 > best.1 {
            best = (model.clone(), dev_f1);
        }
        if let Some((head_nb, pool_nb)) = schedulers.as_mut() {
            lr_head = newbob_update(head_nb, dev_f1);
            lr_pool = newbob_update(pool_nb, dev_f1);
            if head_nb.stop || pool_nb.stop {
                break;
            }
        }
    }
    Ok((best.0, history))
}
