//! XNOR-popcount products against the float reference, with timings.
//!
//!     cargo run --release --example packed_kernel

use std::time::Instant;

use beexformer::compute::{packed_matmul, PackedMatrix, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_signs(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 })
        .collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

fn main() -> beexformer::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for &(n, k, m) in &[(7, 13, 5), (64, 64, 64), (32, 512, 512), (32, 768, 512)] {
        let a = random_signs(n, k, &mut rng);
        let b = random_signs(k, m, &mut rng);
        let t = Instant::now();
        let dense = a.matmul(&b)?;
        let t_dense = t.elapsed();
        let (pa, pb) = (PackedMatrix::pack(&a)?, PackedMatrix::pack(&b)?);
        let t = Instant::now();
        let packed = packed_matmul(&pa, &pb)?;
        let t_packed = t.elapsed();
        println!(
            "{n}x{k} · {k}x{m}: max diff {} | float {t_dense:.2?}, packed {t_packed:.2?} | {} bytes packed vs {} as f32",
            dense.max_abs_diff(&packed),
            pa.payload_bytes() + pb.payload_bytes(),
            4 * (a.numel() + b.numel())
        );
    }
    Ok(())
}
