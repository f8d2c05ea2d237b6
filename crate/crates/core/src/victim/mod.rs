//! Desk-scale victim classifiers and the black-box query oracle.
//!
//! Three architectures are available:
//!
//! * `linear`: one dense layer, `input_dim -> n_classes`.
//! * `mlp`: `input_dim -> hidden -> n_classes` with a ReLU in between.
//! * `cnn`: conv 3×3 (8 filters) → ReLU → 2×2 max-pool → conv 3×3
//!   (16 filters) → ReLU → 2×2 max-pool → dense to `n_classes`.
//!   Convolutions use stride 1 and no padding and pooling drops odd edges,
//!   so a 28×28 MNIST digit becomes 26×26×8, 13×13×8, 11×11×16, then
//!   5×5×16 = 400 features before the dense layer.
//!
//! Every model takes raw pixels in `[0, 255]` and applies its own
//! per-channel `(x - mean) / std` normalization first.

mod io;
mod layers;
mod oracle;
mod train;

use std::fmt;
use std::str::FromStr;

pub use io::{load_model, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use oracle::{decide, score, DecisionBatch, OracleMode, QueryOracle};
pub use train::{train_sgd, TrainConfig, TrainReport};

use layers::{Conv2d, Dense, Layer, MaxPool2};

use crate::data::Shape;
use crate::error::{BadgeError, Result};

pub const CNN_CONV1_FILTERS: usize = 8;
pub const CNN_CONV2_FILTERS: usize = 16;
pub const CNN_KERNEL: usize = 3;
/// Smallest image side that survives both conv/pool stages.
pub const CNN_MIN_SIDE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arch {
    Linear,
    Mlp,
    Cnn,
}

impl Arch {
    pub fn tag(self) -> u32 {
        match self {
            Arch::Linear => 0,
            Arch::Mlp => 1,
            Arch::Cnn => 2,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(Arch::Linear),
            1 => Some(Arch::Mlp),
            2 => Some(Arch::Cnn),
            _ => None,
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arch::Linear => "linear",
            Arch::Mlp => "mlp",
            Arch::Cnn => "cnn",
        })
    }
}

impl FromStr for Arch {
    type Err = BadgeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Arch::Linear),
            "mlp" => Ok(Arch::Mlp),
            "cnn" => Ok(Arch::Cnn),
            other => Err(BadgeError::Parameter(format!("unknown architecture '{other}'"))),
        }
    }
}

/// A classifier `[0,255]^input_dim -> R^n_classes` (logits).
#[derive(Debug, Clone, PartialEq)]
pub struct VictimModel {
    arch: Arch,
    shape: Shape,
    n_classes: usize,
    hidden: usize,
    norm_mean: Vec<f64>,
    norm_std: Vec<f64>,
    layers: Vec<Layer>,
}

impl VictimModel {
    /// A zero-weight model with identity normalization.
    ///
    /// `hidden` is the MLP hidden width and is ignored by the other
    /// architectures.
    pub fn new(arch: Arch, shape: Shape, n_classes: usize, hidden: usize) -> Result<Self> {
        if n_classes < 2 {
            return Err(BadgeError::Parameter("a classifier needs at least two classes".into()));
        }
        let dim = shape.dim();
        if dim == 0 {
            return Err(BadgeError::Dimension("empty input shape".into()));
        }
        let (hidden, layers) = match arch {
            Arch::Linear => (0, vec![Layer::Dense(Dense::zeros(dim, n_classes))]),
            Arch::Mlp => {
                if hidden == 0 {
                    return Err(BadgeError::Parameter("mlp hidden width must be positive".into()));
                }
                (
                    hidden,
                    vec![
                        Layer::Dense(Dense::zeros(dim, hidden)),
                        Layer::Relu,
                        Layer::Dense(Dense::zeros(hidden, n_classes)),
                    ],
                )
            }
            Arch::Cnn => {
                let Shape { channels, height, width } = shape;
                if height < CNN_MIN_SIDE || width < CNN_MIN_SIDE {
                    return Err(BadgeError::Dimension(format!(
                        "cnn needs images of at least {CNN_MIN_SIDE}x{CNN_MIN_SIDE}, got {height}x{width}"
                    )));
                }
                let c1 = Conv2d::zeros(channels, height, width, CNN_CONV1_FILTERS, CNN_KERNEL);
                let p1 = MaxPool2 { c: CNN_CONV1_FILTERS, h: c1.out_h(), w: c1.out_w() };
                let c2 = Conv2d::zeros(CNN_CONV1_FILTERS, p1.out_h(), p1.out_w(), CNN_CONV2_FILTERS, CNN_KERNEL);
                let p2 = MaxPool2 { c: CNN_CONV2_FILTERS, h: c2.out_h(), w: c2.out_w() };
                let flat = CNN_CONV2_FILTERS * p2.out_h() * p2.out_w();
                (
                    0,
                    vec![
                        Layer::Conv(c1),
                        Layer::Relu,
                        Layer::MaxPool(p1),
                        Layer::Conv(c2),
                        Layer::Relu,
                        Layer::MaxPool(p2),
                        Layer::Dense(Dense::zeros(flat, n_classes)),
                    ],
                )
            }
        };
        Ok(Self {
            arch,
            shape,
            n_classes,
            hidden,
            norm_mean: vec![0.0; shape.channels],
            norm_std: vec![1.0; shape.channels],
            layers,
        })
    }

    /// A linear model with explicit weights (`n_classes × dim`, row-major)
    /// and identity normalization.
    pub fn linear(shape: Shape, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        let n_classes = bias.len();
        if weight.len() != n_classes * shape.dim() {
            return Err(BadgeError::Dimension("weight does not match n_classes × dim".into()));
        }
        let mut model = Self::new(Arch::Linear, shape, n_classes, 0)?;
        let mut params = model.parameters_mut();
        *params[0] = weight;
        *params[1] = bias;
        Ok(model)
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn input_dim(&self) -> usize {
        self.shape.dim()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn normalization(&self) -> (&[f64], &[f64]) {
        (&self.norm_mean, &self.norm_std)
    }

    pub fn set_normalization(&mut self, mean: Vec<f64>, std: Vec<f64>) -> Result<()> {
        if mean.len() != self.shape.channels || std.len() != self.shape.channels {
            return Err(BadgeError::Dimension("one mean/std pair per channel expected".into()));
        }
        if std.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(BadgeError::Parameter("normalization std must be positive".into()));
        }
        self.norm_mean = mean;
        self.norm_std = std;
        Ok(())
    }

    /// Weight and bias tensors in layer order.
    pub fn parameters(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| l.params()).map(Vec::as_slice).collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    fn rows(&self, pixels: &[f64]) -> Result<usize> {
        let dim = self.input_dim();
        if pixels.len() % dim != 0 {
            return Err(BadgeError::Dimension(format!(
                "batch of {} values is not a multiple of input_dim {dim}",
                pixels.len()
            )));
        }
        Ok(pixels.len() / dim)
    }

    fn normalize(&self, pixels: &[f64]) -> Vec<f64> {
        let plane = self.shape.height * self.shape.width;
        pixels
            .chunks_exact(plane)
            .enumerate()
            .flat_map(|(i, chunk)| {
                let c = i % self.shape.channels;
                let (m, s) = (self.norm_mean[c], self.norm_std[c]);
                chunk.iter().map(move |v| (v - m) / s)
            })
            .collect()
    }

    /// Logits for a row-major batch of raw pixels, `rows × n_classes`.
    pub fn forward(&self, pixels: &[f64]) -> Result<Vec<f64>> {
        let n = self.rows(pixels)?;
        let mut act = self.normalize(pixels);
        for layer in &self.layers {
            act = layer.forward(&act, n);
        }
        Ok(act)
    }

    /// Mean softmax cross-entropy over the batch and its gradient with
    /// respect to every parameter tensor (same order as [`parameters`]).
    ///
    /// [`parameters`]: VictimModel::parameters
    pub fn loss_and_gradients(&self, pixels: &[f64], labels: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
        let n = self.rows(pixels)?;
        if labels.len() != n {
            return Err(BadgeError::Dimension("labels do not match batch rows".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.n_classes) {
            return Err(BadgeError::Parameter(format!("label {bad} out of range")));
        }
        let mut acts = vec![self.normalize(pixels)];
        for layer in &self.layers {
            let next = layer.forward(acts.last().expect("non-empty"), n);
            acts.push(next);
        }
        let logits = acts.last().expect("non-empty");
        let probs = score(logits, self.n_classes);

        let k = self.n_classes;
        let mut loss = 0.0;
        let mut delta = probs.rows().to_vec();
        for (i, &y) in labels.iter().enumerate() {
            let p = probs.rows()[i * k + y];
            // NaN falls through to the last arm and poisons the loss.
            loss -= if p > 0.0 { p.ln() } else if p == 0.0 { f64::MIN_POSITIVE.ln() } else { f64::NAN };
            delta[i * k + y] -= 1.0;
        }
        let scale = 1.0 / n as f64;
        delta.iter_mut().for_each(|d| *d *= scale);

        let mut grads: Vec<Vec<Vec<f64>>> =
            self.layers.iter().map(|l| l.params().iter().map(|p| vec![0.0; p.len()]).collect()).collect();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            delta = layer.backward(&acts[li], &delta, n, &mut grads[li]);
        }
        Ok((loss * scale, grads.into_iter().flatten().collect()))
    }

    /// Top-1 predictions.
    pub fn predict(&self, pixels: &[f64]) -> Result<Vec<usize>> {
        Ok(decide(&self.forward(pixels)?, self.n_classes).argmax())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_linear_model_passes_inputs_through() {
        let m = VictimModel::linear(Shape::flat(2), vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(m.forward(&[3.0, 1.0]).unwrap(), [3.0, 1.0]);
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        for arch in [Arch::Linear, Arch::Mlp, Arch::Cnn] {
            let m = VictimModel::new(arch, Shape::new(1, 10, 10), 3, 4).unwrap();
            let x: Vec<f64> = (0..200).map(|i| i as f64).collect();
            assert!(m.forward(&x).unwrap().iter().all(|&v| v == 0.0), "{arch}");
        }
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let m = VictimModel::new(Arch::Linear, Shape::flat(3), 2, 0).unwrap();
        assert!(matches!(m.forward(&[1.0, 2.0]), Err(BadgeError::Dimension(_))));
    }

    #[test]
    fn cnn_feature_geometry() {
        let m = VictimModel::new(Arch::Cnn, Shape::new(1, 28, 28), 10, 0).unwrap();
        let sizes: Vec<usize> = m.parameters().iter().map(|p| p.len()).collect();
        assert_eq!(sizes, [8 * 9, 8, 16 * 8 * 9, 16, 10 * 400, 10]);
    }

    fn random_model(arch: Arch, shape: Shape, seed: u64) -> VictimModel {
        let mut m = VictimModel::new(arch, shape, 3, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in &mut m.layers {
            l.init(&mut rng, 2.0);
        }
        for p in m.parameters_mut() {
            // Non-zero biases exercise the bias gradients.
            if p.len() <= 5 {
                p.iter_mut().enumerate().for_each(|(i, b)| *b = 0.1 * i as f64 - 0.1);
            }
        }
        m.set_normalization(vec![100.0; shape.channels], vec![60.0; shape.channels]).unwrap();
        m
    }

    /// Central finite differences on every parameter of a tiny instance.
    fn gradient_check(arch: Arch, shape: Shape) {
        let m = random_model(arch, shape, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..3 * shape.dim()).map(|_| rand::Rng::random_range(&mut rng, 0.0..255.0)).collect();
        let y = [0, 2, 1];
        let (_, grads) = m.loss_and_gradients(&x, &y).unwrap();
        let h = 1e-5;
        for (pi, g) in grads.iter().enumerate() {
            for j in 0..g.len() {
                let mut plus = m.clone();
                plus.parameters_mut()[pi][j] += h;
                let mut minus = m.clone();
                minus.parameters_mut()[pi][j] -= h;
                let fd = (plus.loss_and_gradients(&x, &y).unwrap().0 - minus.loss_and_gradients(&x, &y).unwrap().0)
                    / (2.0 * h);
                let rel = (fd - g[j]).abs() / fd.abs().max(g[j].abs()).max(1e-6);
                assert!(rel < 1e-4, "{arch} param {pi}[{j}]: analytic {} vs numeric {fd}", g[j]);
            }
        }
    }

    #[test]
    fn backprop_matches_finite_differences() {
        gradient_check(Arch::Linear, Shape::flat(4));
        gradient_check(Arch::Mlp, Shape::flat(4));
        gradient_check(Arch::Cnn, Shape::new(2, 11, 10));
    }
}
