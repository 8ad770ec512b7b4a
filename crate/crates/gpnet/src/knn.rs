//! Classification-task guided perturbation: retrieve nearest training
//! features, generate one sign-gradient per neighbor class, and perturb the
//! test image with their weighted average before re-classifying.

use crate::data::ClsSample;
use crate::error::{GpError, Result};
use crate::gp::{softmax_seed_gradient, LabelDistribution};
use crate::network::{backward_from_seed, forward, forward_from, Network, Truncation};
use crate::tensor::{argmax_vec, axpy, sign, Tensor};

#[derive(Debug, Clone)]
pub struct IndexEntry {
    pub feature: Tensor,
    pub label: u32,
    pub id: String,
}

/// Flat feature index over squared-Euclidean distance. Entry order matches
/// the training set the index was built from.
#[derive(Debug, Clone)]
pub struct FeatureIndex {
    pub entries: Vec<IndexEntry>,
    pub feature_layer: String,
}

#[derive(Debug, Clone, Copy)]
pub struct Neighbor {
    /// Position of the entry in the index (== training-set position).
    pub entry: usize,
    pub label: u32,
    pub distance: f64,
}

#[derive(Debug, Clone)]
pub struct NeighborSet {
    /// k entries, ascending by distance; ties break to the lower entry index.
    pub neighbors: Vec<Neighbor>,
    /// Non-negative, summing to 1. Equal weights by default.
    pub weights: Vec<f64>,
}

/// Flattened activation of `feature_layer` for one input.
pub fn extract_feature(net: &Network, x: &Tensor, feature_layer: &str) -> Result<Tensor> {
    let idx = net.layer_index(feature_layer)?;
    let trace = forward(net, x)?;
    let act = trace.output_of(idx);
    act.reshaped(&[act.len()])
}

pub fn build_index(
    net: &Network,
    training_set: &[ClsSample],
    feature_layer: &str,
) -> Result<FeatureIndex> {
    if training_set.is_empty() {
        return Err(GpError::InvalidArgument("empty training set".into()));
    }
    net.layer_index(feature_layer)?;
    let mut entries = Vec::with_capacity(training_set.len());
    for sample in training_set {
        entries.push(IndexEntry {
            feature: extract_feature(net, &sample.image, feature_layer)?,
            label: sample.label,
            id: sample.id.clone(),
        });
    }
    Ok(FeatureIndex {
        entries,
        feature_layer: feature_layer.to_string(),
    })
}

pub fn query(index: &FeatureIndex, feature: &Tensor, k: usize) -> Result<NeighborSet> {
    if k == 0 || k > index.entries.len() {
        return Err(GpError::InvalidArgument(format!(
            "k = {k} out of range for index of size {}",
            index.entries.len()
        )));
    }
    if feature.len() != index.entries[0].feature.len() {
        return Err(GpError::shape(
            index.entries[0].feature.shape(),
            feature.shape(),
            "query feature",
        ));
    }
    let mut scored: Vec<Neighbor> = index
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let d = e
                .feature
                .data()
                .iter()
                .zip(feature.data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            Neighbor {
                entry: i,
                label: e.label,
                distance: d,
            }
        })
        .collect();
    scored.sort_by(|a, b| a.distance.partial_cmp(&b.distance).unwrap());
    scored.truncate(k);
    Ok(NeighborSet {
        neighbors: scored,
        weights: vec![1.0 / k as f64; k],
    })
}

/// Where the per-neighbor gradient is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientSite {
    /// At the test image, with the neighbor's class as the label.
    #[default]
    TestImage,
    /// At the neighbor's own image, matching the formula literally. Needs the
    /// training images the index was built from.
    NeighborImage,
}

#[derive(Debug, Clone)]
pub struct GpKnnConfig {
    pub k: usize,
    pub epsilon: f64,
    pub feature_layer: String,
    pub gradient_site: GradientSite,
}

#[derive(Debug, Clone)]
pub struct ClassifyReport {
    pub label_before: u32,
    pub label_after: u32,
    pub neighbors: NeighborSet,
    /// Weighted sum of per-neighbor sign gradients; every element in [-1,1].
    pub perturbation_direction: Tensor,
}

/// Guided-perturbation classification. With `GradientSite::NeighborImage`,
/// `training_images` must be the set the index was built from, in the same
/// order.
pub fn classify_with_gp(
    net: &Network,
    x: &Tensor,
    index: &FeatureIndex,
    cfg: &GpKnnConfig,
    training_images: Option<&[ClsSample]>,
) -> Result<(u32, ClassifyReport)> {
    let trace = forward(net, x)?;
    let label_before = argmax_vec(trace.scores().data()) as u32;
    let num_classes = net.num_classes();

    let feat_idx = net.layer_index(&cfg.feature_layer)?;
    let feature = {
        let act = trace.output_of(feat_idx);
        act.reshaped(&[act.len()])?
    };
    let neighbors = query(index, &feature, cfg.k)?;

    let y_test = LabelDistribution::from_scores(trace.scores())?;
    let mut direction = Tensor::zeros(x.shape());
    for (n, &w) in neighbors.neighbors.iter().zip(&neighbors.weights) {
        let label = LabelDistribution::one_hot_class(n.label as usize, num_classes)?;
        let grad = match cfg.gradient_site {
            GradientSite::TestImage => {
                let seed = softmax_seed_gradient(&y_test, &label)?;
                backward_from_seed(net, &trace, &seed, &Truncation::Input)?.input_grad
            }
            GradientSite::NeighborImage => {
                let images = training_images.ok_or_else(|| {
                    GpError::InvalidArgument(
                        "NeighborImage gradient site requires the training images".into(),
                    )
                })?;
                let ntrace = forward(net, &images[n.entry].image)?;
                let y_n = LabelDistribution::from_scores(ntrace.scores())?;
                let seed = softmax_seed_gradient(&y_n, &label)?;
                backward_from_seed(net, &ntrace, &seed, &Truncation::Input)?.input_grad
            }
        };
        direction = axpy(w, &sign(&grad), &direction)?;
    }

    let perturbed = axpy(cfg.epsilon, &direction, x)?;
    let scores = forward_from(net, &net.layers()[0].name, &perturbed)?;
    let label_after = argmax_vec(scores.data()) as u32;

    Ok((
        label_after,
        ClassifyReport {
            label_before,
            label_after,
            neighbors,
            perturbation_direction: direction,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn index_from(vectors: Vec<Vec<f64>>) -> FeatureIndex {
        FeatureIndex {
            entries: vectors
                .into_iter()
                .enumerate()
                .map(|(i, v)| IndexEntry {
                    feature: Tensor::from_vec(v),
                    label: (i % 3) as u32,
                    id: format!("t{i}"),
                })
                .collect(),
            feature_layer: "fc1".into(),
        }
    }

    #[test]
    fn query_self_is_first_at_zero_distance() {
        let idx = index_from(vec![vec![1.0, 0.0], vec![0.0, 2.0], vec![3.0, 3.0]]);
        let ns = query(&idx, &Tensor::from_vec(vec![0.0, 2.0]), 2).unwrap();
        assert_eq!(ns.neighbors[0].entry, 1);
        assert_eq!(ns.neighbors[0].distance, 0.0);
    }

    #[test]
    fn query_k_equals_size_returns_all() {
        let idx = index_from(vec![vec![1.0], vec![2.0], vec![3.0]]);
        let ns = query(&idx, &Tensor::from_vec(vec![0.0]), 3).unwrap();
        assert_eq!(ns.neighbors.len(), 3);
        assert!((ns.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(query(&idx, &Tensor::from_vec(vec![0.0]), 4).is_err());
    }

    #[test]
    fn query_matches_bruteforce_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let vectors: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let idx = index_from(vectors.clone());
        for _ in 0..20 {
            let q: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let qt = Tensor::from_vec(q.clone());
            let ns = query(&idx, &qt, 3).unwrap();
            // full sort oracle
            let mut dists: Vec<(usize, f64)> = vectors
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    (
                        i,
                        v.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(),
                    )
                })
                .collect();
            dists.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
            for (n, (oi, od)) in ns.neighbors.iter().zip(&dists) {
                assert_eq!(n.entry, *oi);
                assert!((n.distance - od).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn weighted_sign_sum_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let signs: Vec<Tensor> = (0..4)
            .map(|_| {
                sign(&Tensor::from_vec(
                    (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                ))
            })
            .collect();
        let w = [0.4, 0.3, 0.2, 0.1];
        let mut total = Tensor::zeros(&[10]);
        for (s, &wi) in signs.iter().zip(&w) {
            total = axpy(wi, s, &total).unwrap();
        }
        for &v in total.data() {
            assert!((-1.0..=1.0).contains(&v));
        }
        // k = 1, w = 1: the sum is a plain sign tensor
        assert!(signs[0].data().iter().all(|&v| v == -1.0 || v == 0.0 || v == 1.0));
    }
}
