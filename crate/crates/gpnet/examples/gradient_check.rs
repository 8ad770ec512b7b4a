//! Verify the backward pass against central finite differences on a small
//! random network.
//!
//!     cargo run --release --example gradient_check

use gpnet::network::{backward_from_seed, finite_difference_input_grad, forward, Truncation};
use gpnet::tensor::Tensor;
use gpnet::trainer::build_toyfcn;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> gpnet::Result<()> {
    let net = build_toyfcn(1, 16, 3, 42)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::new(
        vec![1, 16, 16],
        (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )?;
    let trace = forward(&net, &x)?;
    let n = trace.scores().len();
    let seed = Tensor::new(
        trace.scores().shape().to_vec(),
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )?;

    let analytic = backward_from_seed(&net, &trace, &seed, &Truncation::Input)?.input_grad;
    let numeric = finite_difference_input_grad(&net, &x, &seed, 1e-5)?;

    let max_abs_diff = analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    let rel = max_abs_diff / numeric.max_abs().max(1e-12);
    println!("max |analytic - numeric| = {max_abs_diff:.3e}");
    println!("relative error           = {rel:.3e}");
    assert!(rel <= 1e-4, "gradient check failed");
    println!("gradient check passed");
    Ok(())
}
