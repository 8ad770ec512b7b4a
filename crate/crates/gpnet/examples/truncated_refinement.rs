//! Truncate the refinement at intermediate layers: the backward pass stops
//! early, the intermediate activation is perturbed, and only the layers
//! above it run again. Deeper truncation trades a little accuracy for speed.
//!
//!     cargo run --release --example truncated_refinement

use gpnet::bench::truncate_bench;
use gpnet::data::{channel_means, gen_synthetic_seg, normalize, SynthConfig};
use gpnet::gp::{PerturbConfig, PerturbVariant};
use gpnet::trainer::{build_arch, train, ArchId, TrainConfig, TrainSet};

fn main() -> gpnet::Result<()> {
    let mut train_set = gen_synthetic_seg(&SynthConfig {
        seed: 7,
        count: 200,
        ..SynthConfig::default()
    })?;
    let means = channel_means(train_set.iter().map(|s| &s.image));
    for s in &mut train_set {
        s.image = normalize(&s.image, &means)?;
    }
    let mut net = build_arch(ArchId::ToyFcn, 1)?;
    net.channel_means = means;
    println!("training ...");
    train(
        &mut net,
        &TrainSet::Segmentation(&train_set),
        &TrainConfig::defaults_for(ArchId::ToyFcn),
    )?;

    let val_set = gen_synthetic_seg(&SynthConfig {
        seed: 8,
        count: 50,
        sigma: 0.7,
        ..SynthConfig::default()
    })?;
    let layers = ["INPUT".to_string(), "pool1".to_string(), "pool2".to_string()];
    let cfg = PerturbConfig::new(0.05, PerturbVariant::GpOnehot);
    let rows = truncate_bench(&net, &val_set, &layers, &cfg)?;
    println!("{:<8} {:>8} {:>14}", "stop at", "mIoU", "sec/image");
    for r in &rows {
        println!("{:<8} {:>8.4} {:>14.4}", r.label, r.miou, r.mean_seconds_per_image);
    }
    Ok(())
}
