//! Guided-perturbation k-NN classification: retrieve the 3 nearest training
//! features for each test digit, perturb the test image with the averaged
//! sign-gradients seeded by the neighbor classes, and re-classify.
//!
//!     cargo run --release --example knn_classification

use gpnet::bench::knn_eval;
use gpnet::data::gen_digits;
use gpnet::data::ClsSample;
use gpnet::knn::{build_index, GradientSite};
use gpnet::tensor::Tensor;
use gpnet::trainer::{build_arch, train, ArchId, TrainConfig, TrainSet};

fn to_samples(images: &[Vec<u8>], labels: &[u8], mean: f64, prefix: &str) -> Vec<ClsSample> {
    images
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (img, &l))| ClsSample {
            image: Tensor::new(
                vec![1, 28, 28],
                img.iter().map(|&b| b as f64 / 255.0 - mean).collect(),
            )
            .unwrap(),
            label: l as u32,
            id: format!("{prefix}{i}"),
        })
        .collect()
}

fn main() -> gpnet::Result<()> {
    let (train_images, train_labels) = gen_digits(1, 3000);
    let (test_images, test_labels) = gen_digits(2, 500);
    let mean = train_images
        .iter()
        .flat_map(|img| img.iter().map(|&b| b as f64 / 255.0))
        .sum::<f64>()
        / (train_images.len() * 28 * 28) as f64;
    let train_set = to_samples(&train_images, &train_labels, mean, "train");
    let test_set = to_samples(&test_images, &test_labels, mean, "test");

    let mut net = build_arch(ArchId::Mnist2050, 1)?;
    net.channel_means = vec![mean];
    let cfg = TrainConfig {
        epochs: 2,
        ..TrainConfig::defaults_for(ArchId::Mnist2050)
    };
    println!("training on {} digits ...", train_set.len());
    train(&mut net, &TrainSet::Classification(&train_set), &cfg)?;

    println!("building feature index over fc1 ...");
    let index = build_index(&net, &train_set, "fc1")?;

    for eps in [0.0, 0.02, 0.05] {
        let eval = knn_eval(&net, &index, &test_set, 3, eps, GradientSite::TestImage)?;
        println!(
            "eps {eps:.2}: accuracy {:.4} -> {:.4}  ({} corrected, {} corrupted)",
            eval.baseline_accuracy, eval.gp_accuracy, eval.corrected, eval.corrupted
        );
        if !eval.corrected_ids.is_empty() {
            println!("  corrected test digits: {:?}", &eval.corrected_ids[..eval.corrected_ids.len().min(5)]);
        }
    }
    Ok(())
}
