//! Generate a seeded handwritten-digit corpus, train the 20-50-500-10
//! classifier on it, and save the model as a GPN1 file.
//!
//!     cargo run --release --example train_digits

use gpnet::bench::classifier_accuracy;
use gpnet::data::{gen_digits, write_idx_images, write_idx_labels};
use gpnet::model_io::save_model;
use gpnet::trainer::{build_arch, train, ArchId, TrainConfig, TrainSet};
use std::path::Path;

fn main() -> gpnet::Result<()> {
    let out = Path::new("target/digits");
    std::fs::create_dir_all(out)?;
    let (train_images, train_labels) = gen_digits(1, 4000);
    let (test_images, test_labels) = gen_digits(2, 1000);
    write_idx_images(&out.join("train-images.idx"), &train_images, 28, 28)?;
    write_idx_labels(&out.join("train-labels.idx"), &train_labels)?;

    let train_set = gpnet::data::load_mnist(
        &out.join("train-images.idx"),
        &out.join("train-labels.idx"),
    )?;
    let mean = {
        // load_mnist normalizes by the set's own mean; recover it for reuse
        let raw = gpnet::data::read_idx_images(&out.join("train-images.idx"))?;
        gpnet::data::channel_means(raw.iter())[0]
    };

    let mut net = build_arch(ArchId::Mnist2050, 1)?;
    net.channel_means = vec![mean];
    let cfg = TrainConfig {
        epochs: 2,
        ..TrainConfig::defaults_for(ArchId::Mnist2050)
    };
    println!("training on {} digits ...", train_set.len());
    let report = train(&mut net, &TrainSet::Classification(&train_set), &cfg)?;
    for (e, l) in report.epoch_losses.iter().enumerate() {
        println!("epoch {e}: loss {l:.4}");
    }

    write_idx_images(&out.join("test-images.idx"), &test_images, 28, 28)?;
    write_idx_labels(&out.join("test-labels.idx"), &test_labels)?;
    let test_set = gpnet::data::load_mnist_normalized(
        &out.join("test-images.idx"),
        &out.join("test-labels.idx"),
        mean,
    )?;
    println!("test accuracy: {:.4}", classifier_accuracy(&net, &test_set)?);

    let model_path = out.join("model.gpn");
    save_model(&model_path, &net, None)?;
    println!("saved {}", model_path.display());
    Ok(())
}
