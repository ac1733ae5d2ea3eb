//! Size ledger of the six-block architecture, checked against real
//! checkpoint files.
//!
//!     cargo run --release --example size_accounting -- [vocabulary size]

use beexformer::accounting::SizeLedger;
use beexformer::checkpoint::{measure_size, save_frozen, save_latent, Dtype};
use beexformer::frozen::FrozenModel;
use beexformer::model::{BeexModel, ModelConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> beexformer::Result<()> {
    let vocab: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(200);
    let config = ModelConfig {
        vocab_size: vocab,
        ..ModelConfig::default()
    };
    let ledger = SizeLedger::for_config(&config)?;
    println!("vocabulary {vocab}");
    println!("latent bytes  {}", ledger.latent_bytes());
    println!("frozen bytes  {}", ledger.frozen_bytes());
    println!(
        "ratio         {:.2}x (pure binary bound 32x)",
        ledger.ratio()
    );
    println!("binary weights {} bytes", ledger.binary_bits() / 8);
    for (group, bits) in ledger.full_precision_breakdown() {
        println!("  {group:<12} {} bytes", bits / 8);
    }

    let dir = tempfile::tempdir()?;
    let model = BeexModel::new(config, &mut ChaCha8Rng::seed_from_u64(0))?;
    let (latent, frozen) = (
        dir.path().join("latent.beex"),
        dir.path().join("frozen.beex"),
    );
    save_latent(&model, &latent, Dtype::F32)?;
    save_frozen(&FrozenModel::from_model(&model), &frozen)?;
    let (lb, fb) = (
        std::fs::metadata(&latent)?.len(),
        std::fs::metadata(&frozen)?.len(),
    );
    println!(
        "\nfiles: latent {lb} bytes, frozen {fb} bytes, ratio {:.2}x",
        lb as f64 / fb as f64
    );
    let (_, measured) = measure_size(&frozen)?;
    assert_eq!(measured, ledger);
    Ok(())
}
