//! Compare pseudo-label strategies for seeding the perturbation gradient:
//! the network's own one-hot prediction, a ground-truth oracle, and the
//! degraded alternatives (top-2, uniform, random).
//!
//!     cargo run --release --example variant_ablation

use gpnet::bench::ablate_variants;
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
        count: 25,
        sigma: 0.7,
        ..SynthConfig::default()
    })?;
    let grid = [0.0, 0.02, 0.05, 0.1];
    let cfg = PerturbConfig::new(0.0, PerturbVariant::GpOnehot);
    let results = ablate_variants(&net, &val_set, &PerturbVariant::ALL, &grid, &cfg)?;
    println!("{:<22} {:>8} {:>10}", "variant", "best eps", "best mIoU");
    for r in &results {
        println!("{:<22} {:>8.2} {:>10.4}", r.variant.as_str(), r.best_epsilon, r.best_miou);
    }
    Ok(())
}
