//! Sweep the perturbation scale over a grid and print the mIoU curve:
//! positive epsilon is corrective, negative is adversarial.
//!
//!     cargo run --release --example epsilon_sweep

use gpnet::bench::{epsilon_grid, sweep_epsilon};
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
    let grid = epsilon_grid(-0.2, 0.05, 0.2);
    let cfg = PerturbConfig::new(0.0, PerturbVariant::GpOnehot);
    let points = sweep_epsilon(&net, &val_set, &grid, &cfg)?;
    println!("{:>8}  {:>8}  {:>8}", "epsilon", "mIoU", "pix acc");
    for p in &points {
        let marker = if p.epsilon == 0.0 { "  <- baseline" } else { "" };
        println!(
            "{:>8.2}  {:>8.4}  {:>8.4}{marker}",
            p.epsilon, p.miou, p.accuracy
        );
    }
    Ok(())
}
