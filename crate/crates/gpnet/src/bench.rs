//! Batch evaluation drivers shared by the CLI and the test suites:
//! segmentation evaluation with and without guided perturbation, epsilon
//! sweeps, label-variant ablations, truncation benchmarks, and k-NN
//! classification evaluation.

use crate::data::{normalize, ClsSample, SegSample};
use crate::error::Result;
use crate::gp::{flip_analysis, refine, PerturbConfig, PerturbVariant, PhaseTimings};
use crate::knn::{classify_with_gp, FeatureIndex, GpKnnConfig, GradientSite};
use crate::layers::LayerKind;
use crate::metrics::{accuracy, ConfusionMatrix};
use crate::network::{forward, Network, Truncation};
use crate::tensor::argmax_channel;

#[derive(Debug, Clone)]
pub struct SegEval {
    pub baseline_miou: f64,
    pub baseline_accuracy: f64,
    pub gp_miou: f64,
    pub gp_accuracy: f64,
    pub baseline_cm: ConfusionMatrix,
    pub gp_cm: ConfusionMatrix,
    pub corrected_pixels: u64,
    pub corrupted_pixels: u64,
    /// Summed over samples.
    pub timings: PhaseTimings,
    pub samples: usize,
}

/// Evaluate a segmentation model with guided perturbation on every sample.
/// Images are normalized with the model's stored channel means. With
/// epsilon = 0 the GP columns equal the baseline columns.
pub fn seg_eval(net: &Network, samples: &[SegSample], cfg: &PerturbConfig) -> Result<SegEval> {
    let n_cls = net.num_classes();
    let mut cm_before = ConfusionMatrix::new(n_cls);
    let mut cm_after = ConfusionMatrix::new(n_cls);
    let mut corrected = 0u64;
    let mut corrupted = 0u64;
    let mut timings = PhaseTimings::default();
    for sample in samples {
        let x = normalize(&sample.image, &net.channel_means)?;
        let report = refine(net, &x, cfg, Some(&sample.labels))?;
        cm_before.accumulate(&sample.labels, &report.prediction_before, None)?;
        cm_after.accumulate(&sample.labels, &report.prediction_after, None)?;
        let (c, w) = flip_analysis(
            &report.prediction_before,
            &report.prediction_after,
            &sample.labels,
        )?;
        corrected += c.iter().filter(|&&b| b).count() as u64;
        corrupted += w.iter().filter(|&&b| b).count() as u64;
        timings.forward += report.timings.forward;
        timings.backward += report.timings.backward;
        timings.reforward += report.timings.reforward;
    }
    Ok(SegEval {
        baseline_miou: cm_before.mean_iou()?,
        baseline_accuracy: cm_before.pixel_accuracy()?,
        gp_miou: cm_after.mean_iou()?,
        gp_accuracy: cm_after.pixel_accuracy()?,
        baseline_cm: cm_before,
        gp_cm: cm_after,
        corrected_pixels: corrected,
        corrupted_pixels: corrupted,
        timings,
        samples: samples.len(),
    })
}

/// Per-iteration mean IoU: index 0 is the baseline, index i the result after
/// i refinement iterations.
pub fn seg_eval_per_iteration(
    net: &Network,
    samples: &[SegSample],
    cfg: &PerturbConfig,
) -> Result<Vec<f64>> {
    let n_cls = net.num_classes();
    let mut cms = vec![ConfusionMatrix::new(n_cls); cfg.iterations + 1];
    for sample in samples {
        let x = normalize(&sample.image, &net.channel_means)?;
        let report = refine(net, &x, cfg, Some(&sample.labels))?;
        cms[0].accumulate(&sample.labels, &report.prediction_before, None)?;
        for (i, pred) in report.per_iteration.iter().enumerate() {
            cms[i + 1].accumulate(&sample.labels, pred, None)?;
        }
    }
    cms.iter().map(|cm| cm.mean_iou()).collect()
}

#[derive(Debug, Clone, Copy)]
pub struct SweepPoint {
    pub epsilon: f64,
    pub miou: f64,
    pub accuracy: f64,
}

pub fn sweep_epsilon(
    net: &Network,
    samples: &[SegSample],
    grid: &[f64],
    base_cfg: &PerturbConfig,
) -> Result<Vec<SweepPoint>> {
    grid.iter()
        .map(|&eps| {
            let cfg = PerturbConfig {
                epsilon: eps,
                ..base_cfg.clone()
            };
            let eval = seg_eval(net, samples, &cfg)?;
            Ok(SweepPoint {
                epsilon: eps,
                miou: eval.gp_miou,
                accuracy: eval.gp_accuracy,
            })
        })
        .collect()
}

/// Uniform grid over [lo, hi] with the given step, inclusive of both ends.
pub fn epsilon_grid(lo: f64, step: f64, hi: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| lo + i as f64 * step).collect()
}

#[derive(Debug, Clone)]
pub struct VariantResult {
    pub variant: PerturbVariant,
    pub best_epsilon: f64,
    pub best_miou: f64,
}

/// Best-over-grid mean IoU per label-distribution variant.
pub fn ablate_variants(
    net: &Network,
    samples: &[SegSample],
    variants: &[PerturbVariant],
    grid: &[f64],
    base_cfg: &PerturbConfig,
) -> Result<Vec<VariantResult>> {
    variants
        .iter()
        .map(|&variant| {
            let cfg = PerturbConfig {
                variant,
                ..base_cfg.clone()
            };
            let points = sweep_epsilon(net, samples, grid, &cfg)?;
            let best = points
                .iter()
                .max_by(|a, b| a.miou.partial_cmp(&b.miou).unwrap())
                .unwrap();
            Ok(VariantResult {
                variant,
                best_epsilon: best.epsilon,
                best_miou: best.miou,
            })
        })
        .collect()
}

/// Resolve a truncation point named on the command line. `INPUT` is the
/// network input; naming a pooling layer perturbs that pool's output, i.e.
/// re-enters at its successor.
pub fn resolve_truncation(net: &Network, name: &str) -> Result<Truncation> {
    let t = Truncation::parse(name);
    let Truncation::Layer(layer_name) = &t else {
        return Ok(t);
    };
    let idx = net.layer_index(layer_name)?;
    if matches!(net.layers()[idx].kind, LayerKind::MaxPool2d { .. }) {
        if let Some(next) = net.layer_after(layer_name)? {
            return Ok(Truncation::Layer(next.to_string()));
        }
    }
    Ok(t)
}

#[derive(Debug, Clone)]
pub struct TruncateRow {
    /// The truncation point as named by the caller.
    pub label: String,
    pub miou: f64,
    pub mean_seconds_per_image: f64,
}

pub fn truncate_bench(
    net: &Network,
    samples: &[SegSample],
    layer_names: &[String],
    base_cfg: &PerturbConfig,
) -> Result<Vec<TruncateRow>> {
    layer_names
        .iter()
        .map(|name| {
            let cfg = PerturbConfig {
                truncate_at: resolve_truncation(net, name)?,
                ..base_cfg.clone()
            };
            let eval = seg_eval(net, samples, &cfg)?;
            Ok(TruncateRow {
                label: name.clone(),
                miou: eval.gp_miou,
                mean_seconds_per_image: eval.timings.total() / eval.samples as f64,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct KnnEval {
    pub baseline_accuracy: f64,
    pub gp_accuracy: f64,
    /// Test samples flipped wrong -> right.
    pub corrected: u64,
    /// Test samples flipped right -> wrong.
    pub corrupted: u64,
    pub corrected_ids: Vec<String>,
    pub samples: usize,
}

/// Evaluate guided-perturbation k-NN classification over a test set.
/// Test images must already be normalized consistently with the index.
pub fn knn_eval(
    net: &Network,
    index: &FeatureIndex,
    test_set: &[ClsSample],
    k: usize,
    epsilon: f64,
    gradient_site: GradientSite,
) -> Result<KnnEval> {
    let cfg = GpKnnConfig {
        k,
        epsilon,
        feature_layer: index.feature_layer.clone(),
        gradient_site,
    };
    let mut before = Vec::with_capacity(test_set.len());
    let mut after = Vec::with_capacity(test_set.len());
    let mut gts = Vec::with_capacity(test_set.len());
    let mut corrected = 0u64;
    let mut corrupted = 0u64;
    let mut corrected_ids = Vec::new();
    for sample in test_set {
        let (_, report) = classify_with_gp(net, &sample.image, index, &cfg, None)?;
        let was_right = report.label_before == sample.label;
        let is_right = report.label_after == sample.label;
        if !was_right && is_right {
            corrected += 1;
            corrected_ids.push(sample.id.clone());
        }
        if was_right && !is_right {
            corrupted += 1;
        }
        before.push(report.label_before);
        after.push(report.label_after);
        gts.push(sample.label);
    }
    Ok(KnnEval {
        baseline_accuracy: accuracy(&before, &gts)?,
        gp_accuracy: accuracy(&after, &gts)?,
        corrected,
        corrupted,
        corrected_ids,
        samples: test_set.len(),
    })
}

/// Plain classifier accuracy over a normalized test set.
pub fn classifier_accuracy(net: &Network, test_set: &[ClsSample]) -> Result<f64> {
    let mut preds = Vec::with_capacity(test_set.len());
    let mut gts = Vec::with_capacity(test_set.len());
    for sample in test_set {
        let trace = forward(net, &sample.image)?;
        preds.push(crate::tensor::argmax_vec(trace.scores().data()) as u32);
        gts.push(sample.label);
    }
    accuracy(&preds, &gts)
}

/// Baseline segmentation confusion matrix without any refinement.
pub fn seg_baseline(net: &Network, samples: &[SegSample]) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(net.num_classes());
    for sample in samples {
        let x = normalize(&sample.image, &net.channel_means)?;
        let trace = forward(net, &x)?;
        let pred = argmax_channel(trace.scores())?;
        cm.accumulate(&sample.labels, &pred, None)?;
    }
    Ok(cm)
}
