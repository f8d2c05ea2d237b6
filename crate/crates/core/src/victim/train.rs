use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{batches, epoch_seed, Dataset, ImageBatch, Shape};
use crate::error::{BadgeError, Result};

use super::{Arch, VictimModel};

/// Rows per forward pass when measuring accuracy.
const EVAL_CHUNK: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// MLP hidden width.
    pub hidden: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 20, lr: 0.05, batch_size: 32, hidden: 64, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

impl VictimModel {
    /// He-initialized weights drawn from a seeded generator.
    pub fn initialized(arch: Arch, shape: Shape, n_classes: usize, hidden: usize, seed: u64) -> Result<Self> {
        let mut model = Self::new(arch, shape, n_classes, hidden)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = model.layers.len() - 1;
        for (i, layer) in model.layers.iter_mut().enumerate() {
            layer.init(&mut rng, if i == last { 1.0 } else { 2.0 });
        }
        Ok(model)
    }

    /// Fraction of rows whose top-1 prediction matches the label.
    pub fn accuracy(&self, split: &ImageBatch) -> Result<f64> {
        if split.is_empty() {
            return Err(BadgeError::UndefinedMetric("accuracy of an empty split".into()));
        }
        let dim = split.dim();
        let mut correct = 0usize;
        for (chunk, labels) in split.pixels().chunks(EVAL_CHUNK * dim).zip(split.labels().chunks(EVAL_CHUNK)) {
            correct += self.predict(chunk)?.iter().zip(labels).filter(|(p, y)| p == y).count();
        }
        Ok(correct as f64 / split.len() as f64)
    }
}

fn channel_stats(split: &ImageBatch) -> (Vec<f64>, Vec<f64>) {
    let shape = split.shape();
    let plane = shape.height * shape.width;
    let mut sum = vec![0.0; shape.channels];
    let mut sq = vec![0.0; shape.channels];
    for (i, chunk) in split.pixels().chunks_exact(plane).enumerate() {
        let c = i % shape.channels;
        for v in chunk {
            sum[c] += v;
            sq[c] += v * v;
        }
    }
    let count = (split.len() * plane) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
    let std = sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| {
            let var = (q / count - m * m).max(0.0);
            if var > 0.0 { var.sqrt() } else { 1.0 }
        })
        .collect();
    (mean, std)
}

/// Mini-batch SGD on softmax cross-entropy.
///
/// Normalization constants are fitted on the training split. Given the same
/// config and data the resulting weights are bit-identical.
pub fn train_sgd(arch: Arch, data: &Dataset, config: &TrainConfig) -> Result<(VictimModel, TrainReport)> {
    if data.train.is_empty() {
        return Err(BadgeError::Parameter("cannot train on an empty split".into()));
    }
    if !(config.lr > 0.0) || config.batch_size == 0 {
        return Err(BadgeError::Parameter("lr and batch_size must be positive".into()));
    }
    let mut model = VictimModel::initialized(arch, data.shape(), data.n_classes, config.hidden, config.seed)?;
    let (mean, std) = channel_stats(&data.train);
    model.set_normalization(mean, std)?;

    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let shuffle_seed = epoch_seed(config.seed, epoch);
        let mut total = 0.0;
        let mut seen = 0usize;
        for batch in batches(&data.train, config.batch_size, shuffle_seed)? {
            let (loss, grads) = model.loss_and_gradients(batch.pixels(), batch.labels())?;
            if !loss.is_finite() {
                return Err(BadgeError::Training { epoch, loss });
            }
            for (param, grad) in model.parameters_mut().into_iter().zip(&grads) {
                for (p, g) in param.iter_mut().zip(grad) {
                    *p -= config.lr * g;
                }
            }
            total += loss * batch.len() as f64;
            seen += batch.len();
        }
        epoch_losses.push(total / seen as f64);
    }

    let train_accuracy = model.accuracy(&data.train)?;
    let test_accuracy = if data.test.is_empty() { f64::NAN } else { model.accuracy(&data.test)? };
    Ok((model, TrainReport { epoch_losses, train_accuracy, test_accuracy }))
}
