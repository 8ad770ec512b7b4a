//! Guided-perturbation refinement: pseudo-label construction, the
//! prediction-seeded softmax gradient, input (or intermediate activation)
//! perturbation, and the iterated three-step refinement loop.
//!
//! The backward pass is seeded at the pre-softmax scores with
//! `(l . y)(l - y)` per position, which for a one-hot `l = e_k` reduces to
//! `y_k (l - y)`. With this convention a positive epsilon is corrective and
//! a negative epsilon is adversarial.

use std::time::Instant;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{GpError, Result};
use crate::network::{
    backward_layers, forward, forward_layers, softmax, Network, Truncation,
};
use crate::tensor::{argmax_channel, argmax_vec, axpy, sign, LabelMap, Tensor};

/// Per-position probability vectors over classes: [C] or [C,H,W].
#[derive(Debug, Clone)]
pub struct LabelDistribution {
    probs: Tensor,
}

impl LabelDistribution {
    pub fn new(probs: Tensor) -> Result<Self> {
        let (c, plane) = class_layout(&probs)?;
        for p in 0..plane {
            let mut sum = 0.0;
            for ch in 0..c {
                let v = probs.data()[ch * plane + p];
                if v < 0.0 {
                    return Err(GpError::InvalidArgument(format!(
                        "negative probability {v} at position {p}"
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(GpError::InvalidArgument(format!(
                    "probabilities at position {p} sum to {sum}"
                )));
            }
        }
        Ok(LabelDistribution { probs })
    }

    pub fn from_scores(z: &Tensor) -> Result<Self> {
        Ok(LabelDistribution { probs: softmax(z)? })
    }

    pub fn probs(&self) -> &Tensor {
        &self.probs
    }

    pub fn num_classes(&self) -> usize {
        self.probs.shape()[0]
    }

    /// One-hot distribution over a dense label map.
    pub fn one_hot_map(labels: &LabelMap, num_classes: usize) -> Result<Self> {
        let plane = labels.len();
        let mut t = Tensor::zeros(&[num_classes, labels.height, labels.width]);
        for (p, &l) in labels.labels.iter().enumerate() {
            if l as usize >= num_classes {
                return Err(GpError::InvalidArgument(format!(
                    "label {l} out of range for {num_classes} classes"
                )));
            }
            t.data_mut()[l as usize * plane + p] = 1.0;
        }
        Ok(LabelDistribution { probs: t })
    }

    /// One-hot distribution over a single class, for classifier heads.
    pub fn one_hot_class(class: usize, num_classes: usize) -> Result<Self> {
        if class >= num_classes {
            return Err(GpError::InvalidArgument(format!(
                "class {class} out of range for {num_classes} classes"
            )));
        }
        let mut t = Tensor::zeros(&[num_classes]);
        t.data_mut()[class] = 1.0;
        Ok(LabelDistribution { probs: t })
    }
}

fn class_layout(t: &Tensor) -> Result<(usize, usize)> {
    match t.shape().len() {
        1 => Ok((t.shape()[0], 1)),
        3 => Ok((t.shape()[0], t.shape()[1] * t.shape()[2])),
        _ => Err(GpError::InvalidArgument(format!(
            "expected [C] or [C,H,W] distribution, got {:?}",
            t.shape()
        ))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbVariant {
    GpOnehot,
    RandomOnehot,
    UniformLabel,
    Top2Label,
    GroundTruthOracle,
}

impl PerturbVariant {
    pub const ALL: [PerturbVariant; 5] = [
        PerturbVariant::GpOnehot,
        PerturbVariant::RandomOnehot,
        PerturbVariant::UniformLabel,
        PerturbVariant::Top2Label,
        PerturbVariant::GroundTruthOracle,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gp_onehot" => Ok(PerturbVariant::GpOnehot),
            "random_onehot" => Ok(PerturbVariant::RandomOnehot),
            "uniform_label" => Ok(PerturbVariant::UniformLabel),
            "top2_label" => Ok(PerturbVariant::Top2Label),
            "ground_truth_oracle" => Ok(PerturbVariant::GroundTruthOracle),
            other => Err(GpError::InvalidArgument(format!(
                "unknown variant `{other}`"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            PerturbVariant::GpOnehot => "gp_onehot",
            PerturbVariant::RandomOnehot => "random_onehot",
            PerturbVariant::UniformLabel => "uniform_label",
            PerturbVariant::Top2Label => "top2_label",
            PerturbVariant::GroundTruthOracle => "ground_truth_oracle",
        }
    }
}

impl std::fmt::Display for PerturbVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct PerturbConfig {
    pub epsilon: f64,
    pub variant: PerturbVariant,
    pub iterations: usize,
    pub truncate_at: Truncation,
    pub rng_seed: u64,
}

impl PerturbConfig {
    pub fn new(epsilon: f64, variant: PerturbVariant) -> Self {
        PerturbConfig {
            epsilon,
            variant,
            iterations: 1,
            truncate_at: Truncation::Input,
            rng_seed: 0,
        }
    }

    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.iterations = iterations;
        self
    }

    pub fn with_truncation(mut self, t: Truncation) -> Self {
        self.truncate_at = t;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }
}

/// Wall time spent in each phase of a refinement, in seconds.
#[derive(Debug, Clone, Copy, Default)]
pub struct PhaseTimings {
    pub forward: f64,
    pub backward: f64,
    pub reforward: f64,
}

impl PhaseTimings {
    pub fn total(&self) -> f64 {
        self.forward + self.backward + self.reforward
    }
}

#[derive(Debug, Clone)]
pub struct RefinementReport {
    pub prediction_before: LabelMap,
    pub prediction_after: LabelMap,
    /// Prediction after each iteration; length == config.iterations.
    pub per_iteration: Vec<LabelMap>,
    pub timings: PhaseTimings,
    /// The last applied perturbation, eps * sign(grad), at the truncation
    /// activation.
    pub perturbation: Tensor,
}

/// Build the pseudo ground-truth distribution for one refinement step.
/// `random_onehot` draws one class per position in row-major order from `rng`.
pub fn make_pseudo_label(
    probs: &LabelDistribution,
    variant: PerturbVariant,
    rng: &mut ChaCha8Rng,
    ground_truth: Option<&LabelMap>,
) -> Result<LabelDistribution> {
    let (c, plane) = class_layout(probs.probs())?;
    let mut out = Tensor::zeros(probs.probs().shape());
    let pd = probs.probs().data();
    match variant {
        PerturbVariant::GpOnehot => {
            for p in 0..plane {
                let k = position_argmax(pd, c, plane, p);
                out.data_mut()[k * plane + p] = 1.0;
            }
        }
        PerturbVariant::RandomOnehot => {
            for p in 0..plane {
                let k = rng.gen_range(0..c);
                out.data_mut()[k * plane + p] = 1.0;
            }
        }
        PerturbVariant::UniformLabel => {
            out = Tensor::full(probs.probs().shape(), 1.0 / c as f64);
        }
        PerturbVariant::Top2Label => {
            if c < 2 {
                return Err(GpError::InvalidArgument(
                    "top2_label needs at least 2 classes".into(),
                ));
            }
            for p in 0..plane {
                let first = position_argmax(pd, c, plane, p);
                let mut second = usize::MAX;
                let mut second_v = f64::NEG_INFINITY;
                for ch in 0..c {
                    if ch == first {
                        continue;
                    }
                    let v = pd[ch * plane + p];
                    if v > second_v {
                        second_v = v;
                        second = ch;
                    }
                }
                out.data_mut()[first * plane + p] = 0.5;
                out.data_mut()[second * plane + p] = 0.5;
            }
        }
        PerturbVariant::GroundTruthOracle => {
            let gt = ground_truth.ok_or_else(|| {
                GpError::InvalidArgument(
                    "ground_truth_oracle variant requires ground truth labels".into(),
                )
            })?;
            if gt.len() != plane {
                return Err(GpError::InvalidArgument(format!(
                    "ground truth has {} positions, prediction has {plane}",
                    gt.len()
                )));
            }
            for (p, &l) in gt.labels.iter().enumerate() {
                if l as usize >= c {
                    return Err(GpError::InvalidArgument(format!(
                        "ground truth label {l} out of range for {c} classes"
                    )));
                }
                out.data_mut()[l as usize * plane + p] = 1.0;
            }
        }
    }
    Ok(LabelDistribution { probs: out })
}

fn position_argmax(data: &[f64], c: usize, plane: usize, p: usize) -> usize {
    let mut best = 0usize;
    let mut best_v = data[p];
    for ch in 1..c {
        let v = data[ch * plane + p];
        if v > best_v {
            best_v = v;
            best = ch;
        }
    }
    best
}

/// The seed injected at the pre-softmax scores: per position
/// `(l . y)(l - y)`. For one-hot `l = e_k` this is `y_k (l - y)`.
pub fn softmax_seed_gradient(y: &LabelDistribution, l: &LabelDistribution) -> Result<Tensor> {
    if y.probs().shape() != l.probs().shape() {
        return Err(GpError::shape(
            y.probs().shape(),
            l.probs().shape(),
            "seed gradient",
        ));
    }
    let (c, plane) = class_layout(y.probs())?;
    let yd = y.probs().data();
    let ld = l.probs().data();
    let mut out = Tensor::zeros(y.probs().shape());
    let od = out.data_mut();
    for p in 0..plane {
        let mut dot = 0.0;
        for ch in 0..c {
            dot += ld[ch * plane + p] * yd[ch * plane + p];
        }
        for ch in 0..c {
            let i = ch * plane + p;
            od[i] = dot * (ld[i] - yd[i]);
        }
    }
    Ok(out)
}

/// x + eps * sign(grad), elementwise.
pub fn perturb(x: &Tensor, input_grad: &Tensor, epsilon: f64) -> Result<Tensor> {
    axpy(epsilon, &sign(input_grad), x)
}

fn predict(scores: &Tensor) -> Result<LabelMap> {
    match scores.shape().len() {
        3 => argmax_channel(scores),
        1 => LabelMap::new(1, 1, vec![argmax_vec(scores.data()) as u32]),
        _ => Err(GpError::InvalidArgument(format!(
            "cannot predict from scores of shape {:?}",
            scores.shape()
        ))),
    }
}

/// The three-step refinement loop: forward, prediction-seeded backward to the
/// truncation point, perturb that activation, re-run the layers above it.
/// Iteration i+1 starts from the perturbed activation of iteration i and
/// rebuilds the pseudo-label from the newest prediction.
pub fn refine(
    net: &Network,
    x: &Tensor,
    cfg: &PerturbConfig,
    ground_truth: Option<&LabelMap>,
) -> Result<RefinementReport> {
    if cfg.iterations == 0 {
        return Err(GpError::InvalidArgument("iterations must be >= 1".into()));
    }
    if cfg.variant == PerturbVariant::GroundTruthOracle && ground_truth.is_none() {
        return Err(GpError::InvalidArgument(
            "ground_truth_oracle variant requires ground truth labels".into(),
        ));
    }
    let stop_idx = match &cfg.truncate_at {
        Truncation::Input => 0,
        Truncation::Layer(name) => net.layer_index(name)?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut timings = PhaseTimings::default();

    let t0 = Instant::now();
    let full = forward(net, x)?;
    timings.forward = t0.elapsed().as_secs_f64();
    let prediction_before = predict(full.scores())?;

    // Activations of the layers above the truncation point; acts[0] is the
    // activation that gets perturbed.
    let mut acts: Vec<Tensor> = (stop_idx..=full.num_layers())
        .map(|i| full.input_of(i).clone())
        .collect();
    let mut prediction = prediction_before.clone();
    let mut per_iteration = Vec::with_capacity(cfg.iterations);
    let mut perturbation = Tensor::zeros(acts[0].shape());

    for _ in 0..cfg.iterations {
        let t1 = Instant::now();
        let y = LabelDistribution::from_scores(acts.last().unwrap())?;
        let pseudo = make_pseudo_label(&y, cfg.variant, &mut rng, ground_truth)?;
        let seed = softmax_seed_gradient(&y, &pseudo)?;
        let grad = backward_layers(net, &acts, stop_idx, &seed)?;
        timings.backward += t1.elapsed().as_secs_f64();

        let t2 = Instant::now();
        perturbation = sign(&grad).scaled(cfg.epsilon);
        let perturbed = axpy(1.0, &perturbation, &acts[0])?;
        acts = forward_layers(net, stop_idx, &perturbed)?;
        timings.reforward += t2.elapsed().as_secs_f64();

        prediction = predict(acts.last().unwrap())?;
        per_iteration.push(prediction.clone());
    }

    Ok(RefinementReport {
        prediction_before,
        prediction_after: prediction,
        per_iteration,
        timings,
        perturbation,
    })
}

/// Pixels flipped wrong->right (corrected) and right->wrong (corrupted)
/// between two predictions, relative to ground truth.
pub fn flip_analysis(
    before: &LabelMap,
    after: &LabelMap,
    gt: &LabelMap,
) -> Result<(Vec<bool>, Vec<bool>)> {
    if before.len() != after.len() || before.len() != gt.len() {
        return Err(GpError::InvalidArgument(format!(
            "label map sizes differ: {} / {} / {}",
            before.len(),
            after.len(),
            gt.len()
        )));
    }
    let mut corrected = vec![false; gt.len()];
    let mut corrupted = vec![false; gt.len()];
    for i in 0..gt.len() {
        let was_right = before.labels[i] == gt.labels[i];
        let is_right = after.labels[i] == gt.labels[i];
        corrected[i] = !was_right && is_right;
        corrupted[i] = was_right && !is_right;
    }
    Ok((corrected, corrupted))
}
