//! Baseline model construction and minibatch SGD training.
//!
//! Architectures: the 20-50-500-10 MNIST classifier, the
//! 64-64-128-128-128-128-10 CIFAR classifier, and a micro FCN-style
//! segmentation net ending in a 1x1 score convolution plus bilinear
//! upsampling. Kernel sizes are 5x5 (MNIST) and 3x3 (CIFAR, toyfcn) with
//! 2x2 max pooling; the channel widths are the fixed part, the kernels are
//! project defaults.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{ClsSample, SegSample};
use crate::error::{GpError, Result};
use crate::layers::{Layer, LayerKind};
use crate::network::{backward_params, forward, softmax, Network};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchId {
    Mnist2050,
    Cifar10Deep,
    ToyFcn,
}

impl ArchId {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mnist" | "mnist_20_50_500_10" => Ok(ArchId::Mnist2050),
            "cifar" | "cifar_64x2_128x4_10" => Ok(ArchId::Cifar10Deep),
            "toyfcn" => Ok(ArchId::ToyFcn),
            other => Err(GpError::InvalidArgument(format!("unknown architecture `{other}`"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ArchId::Mnist2050 => "mnist_20_50_500_10",
            ArchId::Cifar10Deep => "cifar_64x2_128x4_10",
            ArchId::ToyFcn => "toyfcn",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub rng_seed: u64,
    pub arch: ArchId,
}

impl TrainConfig {
    pub fn defaults_for(arch: ArchId) -> Self {
        match arch {
            ArchId::Mnist2050 => TrainConfig {
                learning_rate: 0.01,
                momentum: 0.9,
                batch_size: 32,
                epochs: 3,
                rng_seed: 1,
                arch,
            },
            ArchId::Cifar10Deep => TrainConfig {
                learning_rate: 0.02,
                momentum: 0.9,
                batch_size: 32,
                epochs: 10,
                rng_seed: 1,
                arch,
            },
            ArchId::ToyFcn => TrainConfig {
                learning_rate: 0.05,
                momentum: 0.9,
                batch_size: 8,
                epochs: 14,
                rng_seed: 1,
                arch,
            },
        }
    }

    fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0
            || self.momentum < 0.0
            || self.batch_size == 0
            || self.epochs == 0
        {
            return Err(GpError::InvalidArgument(
                "hyperparameters must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Fan-in-scaled uniform init, seeded.
fn init_tensor(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = (1.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn conv(
    name: &str,
    c_in: usize,
    c_out: usize,
    k: usize,
    padding: usize,
    rng: &mut ChaCha8Rng,
) -> Layer {
    let fan_in = c_in * k * k;
    Layer::new(
        name,
        LayerKind::Conv2d {
            weights: init_tensor(&[c_out, c_in, k, k], fan_in, rng),
            bias: Tensor::zeros(&[c_out]),
            stride: 1,
            padding,
        },
    )
}

fn linear(name: &str, n_in: usize, n_out: usize, rng: &mut ChaCha8Rng) -> Layer {
    Layer::new(
        name,
        LayerKind::Linear {
            weights: init_tensor(&[n_out, n_in], n_in, rng),
            bias: Tensor::zeros(&[n_out]),
        },
    )
}

fn pool(name: &str) -> Layer {
    Layer::new(name, LayerKind::MaxPool2d { window: 2, stride: 2 })
}

fn relu(name: &str) -> Layer {
    Layer::new(name, LayerKind::Relu)
}

pub fn build_arch(arch: ArchId, init_seed: u64) -> Result<Network> {
    let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
    match arch {
        ArchId::Mnist2050 => Network::new(
            vec![
                conv("conv1", 1, 20, 5, 0, &mut rng),
                pool("pool1"),
                conv("conv2", 20, 50, 5, 0, &mut rng),
                pool("pool2"),
                Layer::new("flatten", LayerKind::Flatten),
                linear("fc1", 50 * 4 * 4, 500, &mut rng),
                relu("relu1"),
                linear("fc2", 500, 10, &mut rng),
            ],
            vec![1, 28, 28],
            10,
        ),
        ArchId::Cifar10Deep => Network::new(
            vec![
                conv("conv1", 3, 64, 3, 1, &mut rng),
                relu("relu1"),
                conv("conv2", 64, 64, 3, 1, &mut rng),
                relu("relu2"),
                pool("pool1"),
                conv("conv3", 64, 128, 3, 1, &mut rng),
                relu("relu3"),
                conv("conv4", 128, 128, 3, 1, &mut rng),
                relu("relu4"),
                pool("pool2"),
                conv("conv5", 128, 128, 3, 1, &mut rng),
                relu("relu5"),
                pool("pool3"),
                Layer::new("flatten", LayerKind::Flatten),
                linear("fc1", 128 * 4 * 4, 128, &mut rng),
                relu("relu6"),
                linear("fc2", 128, 10, &mut rng),
            ],
            vec![3, 32, 32],
            10,
        ),
        ArchId::ToyFcn => build_toyfcn(3, 64, 4, init_seed),
    }
}

/// Micro FCN: conv/pool feature stack, 1x1 score convolution over the class
/// channels, bilinear upsampling back to input size.
pub fn build_toyfcn(c_in: usize, size: usize, num_classes: usize, init_seed: u64) -> Result<Network> {
    let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
    Network::new(
        vec![
            conv("conv1", c_in, 16, 3, 1, &mut rng),
            relu("relu1"),
            pool("pool1"),
            conv("conv2", 16, 32, 3, 1, &mut rng),
            relu("relu2"),
            pool("pool2"),
            conv("conv3", 32, 32, 3, 1, &mut rng),
            relu("relu3"),
            conv("score", 32, num_classes, 1, 0, &mut rng),
            Layer::new(
                "upsample",
                LayerKind::BilinearUpsample {
                    out_h: size,
                    out_w: size,
                },
            ),
        ],
        vec![c_in, size, size],
        num_classes,
    )
}

/// What `train` consumes: classification pairs or dense-labeled images.
/// Images must already be normalized.
pub enum TrainSet<'a> {
    Classification(&'a [ClsSample]),
    Segmentation(&'a [SegSample]),
}

impl TrainSet<'_> {
    fn len(&self) -> usize {
        match self {
            TrainSet::Classification(s) => s.len(),
            TrainSet::Segmentation(s) => s.len(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Mean cross-entropy per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Cross-entropy loss and its gradient at the scores for one sample.
/// The gradient is averaged over positions (pixels) for dense labeling.
fn loss_and_grad(scores: &Tensor, target: &TargetLabels) -> Result<(f64, Tensor)> {
    let probs = softmax(scores)?;
    let mut grad = probs.clone();
    match target {
        TargetLabels::Single(label) => {
            let k = *label as usize;
            let p = probs.data()[k].max(1e-300);
            grad.data_mut()[k] -= 1.0;
            Ok((-p.ln(), grad))
        }
        TargetLabels::Dense(labels) => {
            let c = scores.shape()[0];
            let plane = labels.len();
            let mut loss = 0.0;
            for (p, &l) in labels.iter().enumerate() {
                let k = l as usize;
                if k >= c {
                    return Err(GpError::InvalidArgument(format!(
                        "label {l} out of range for {c} classes"
                    )));
                }
                loss += -(probs.data()[k * plane + p].max(1e-300)).ln();
                grad.data_mut()[k * plane + p] -= 1.0;
            }
            let scale = 1.0 / plane as f64;
            Ok((loss * scale, grad.scaled(scale)))
        }
    }
}

enum TargetLabels<'a> {
    Single(u32),
    Dense(&'a [u32]),
}

/// Minibatch SGD with momentum on softmax cross-entropy. Deterministic for a
/// fixed (seed, config, dataset): per-sample gradients are summed in sample
/// order and the shuffle comes from a seeded generator.
pub fn train(net: &mut Network, data: &TrainSet, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let n = data.len();
    if n == 0 {
        return Err(GpError::InvalidArgument("empty training set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut velocity: Vec<Option<(Tensor, Tensor)>> = net
        .layers()
        .iter()
        .map(|l| match &l.kind {
            LayerKind::Conv2d { weights, bias, .. } | LayerKind::Linear { weights, bias } => {
                Some((Tensor::zeros(weights.shape()), Tensor::zeros(bias.shape())))
            }
            _ => None,
        })
        .collect();

    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut batch_grads: Vec<Option<(Tensor, Tensor)>> = vec![None; net.layers().len()];
            for &i in batch {
                let (image, target) = match data {
                    TrainSet::Classification(s) => {
                        (&s[i].image, TargetLabels::Single(s[i].label))
                    }
                    TrainSet::Segmentation(s) => {
                        (&s[i].image, TargetLabels::Dense(&s[i].labels.labels))
                    }
                };
                let trace = forward(net, image)?;
                let (loss, grad) = loss_and_grad(trace.scores(), &target)?;
                epoch_loss += loss;
                let bundle = backward_params(net, &trace, &grad)?;
                for (acc, g) in batch_grads.iter_mut().zip(bundle.param_grads.unwrap()) {
                    match (acc.as_mut(), g) {
                        (None, Some(g)) => *acc = Some(g),
                        (Some((aw, ab)), Some((gw, gb))) => {
                            *aw = aw.add(&gw)?;
                            *ab = ab.add(&gb)?;
                        }
                        _ => {}
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            apply_update(net, &mut velocity, &batch_grads, scale, cfg)?;
        }
        let mean_loss = epoch_loss / n as f64;
        if !mean_loss.is_finite() {
            return Err(GpError::Diverged {
                epoch,
                loss: mean_loss,
            });
        }
        epoch_losses.push(mean_loss);
    }
    Ok(TrainReport { epoch_losses })
}

fn apply_update(
    net: &mut Network,
    velocity: &mut [Option<(Tensor, Tensor)>],
    batch_grads: &[Option<(Tensor, Tensor)>],
    scale: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    for (i, layer) in net.layers_mut().iter_mut().enumerate() {
        let (Some((vw, vb)), Some((gw, gb))) = (velocity[i].as_mut(), batch_grads[i].as_ref())
        else {
            continue;
        };
        match &mut layer.kind {
            LayerKind::Conv2d { weights, bias, .. } | LayerKind::Linear { weights, bias } => {
                for ((v, &g), w) in vw
                    .data_mut()
                    .iter_mut()
                    .zip(gw.data())
                    .zip(weights.data_mut())
                {
                    *v = cfg.momentum * *v - cfg.learning_rate * scale * g;
                    *w += *v;
                }
                for ((v, &g), b) in vb
                    .data_mut()
                    .iter_mut()
                    .zip(gb.data())
                    .zip(bias.data_mut())
                {
                    *v = cfg.momentum * *v - cfg.learning_rate * scale * g;
                    *b += *v;
                }
            }
            _ => unreachable!("velocity only allocated for parameterized layers"),
        }
    }
    Ok(())
}
