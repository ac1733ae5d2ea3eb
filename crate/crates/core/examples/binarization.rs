//! Tabulates the quadratic sign approximation, its derivative and the clip
//! baseline, then runs a few latent updates with the clamp.
//!
//!     cargo run --example binarization

use beexformer::binarize::{b2, b2_grad, bat_step, clip, clip_grad, sign};
use beexformer::compute::Tensor;
use beexformer::optim::Sgd;
use beexformer::params::{ParamKind, ParamStore};

fn main() -> beexformer::Result<()> {
    println!(
        "{:>6} {:>6} {:>8} {:>8} {:>8} {:>8}",
        "r", "sign", "b(r)", "b'(r)", "clip", "clip'"
    );
    for i in -6..=6 {
        let r = i as f64 * 0.25;
        println!(
            "{r:>6.2} {:>6} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            sign(r),
            b2(r),
            b2_grad(r),
            clip(r),
            clip_grad(r)
        );
    }

    let mut store = ParamStore::default();
    let id = store.add(
        "w",
        ParamKind::Latent,
        Tensor::row_vector(&[0.9, -0.2, 0.5]),
    );
    let mut opt = Sgd { lr: 0.5 };
    for step in 1..=3 {
        store.zero_grad();
        store.accumulate_grad(id, &Tensor::row_vector(&[-1.0, 1.0, 0.0]));
        bat_step(&mut store, &mut opt)?;
        println!("step {step}: latent {:?}", store.get(id).value.data());
    }
    Ok(())
}
