//! Saves latent and frozen checkpoints, reloads them and compares logits.
//!
//!     cargo run --release --example checkpoint_round_trip

use beexformer::checkpoint::{load, load_header, save_frozen, save_latent, Checkpoint, Dtype};
use beexformer::embedding::TokenSequence;
use beexformer::frozen::{Activation, FrozenModel, Kernel};
use beexformer::model::{BeexModel, Encoder, LatentWeights, ModelConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> beexformer::Result<()> {
    let config = ModelConfig {
        vocab_size: 50,
        max_len: 12,
        embed_dim: 32,
        heads: 4,
        hidden_dim: 64,
        blocks: 3,
        ..ModelConfig::default()
    };
    let model = BeexModel::new(config, &mut ChaCha8Rng::seed_from_u64(5))?;
    let dir = tempfile::tempdir()?;
    let (lp, fp) = (
        dir.path().join("latent.beex"),
        dir.path().join("frozen.beex"),
    );
    save_latent(&model, &lp, Dtype::F64)?;
    save_frozen(&FrozenModel::from_model(&model), &fp)?;

    let header = load_header(&fp)?;
    println!(
        "{:?} checkpoint with {} tensors",
        header.kind,
        header.tensors.len()
    );
    for t in header.tensors.iter().take(6) {
        println!(
            "  {:<24} {:?} {:?} {} bytes",
            t.name, t.shape, t.encoding, t.nbytes
        );
    }

    let seq = TokenSequence {
        ids: vec![4, 9, 17, 3, 22, 0, 0, 0, 0, 0, 0, 0],
        len: 5,
    };
    let Checkpoint::Latent(reloaded) = load(&lp)? else {
        unreachable!("latent file")
    };
    let before = Encoder::new(&LatentWeights::new(&model)).exit_logits(&seq)?;
    let after = Encoder::new(&LatentWeights::new(&reloaded)).exit_logits(&seq)?;
    let frozen = load(&fp)?.into_frozen();
    let packed =
        Encoder::new(&frozen.weights(Kernel::Packed, Activation::Trained)).exit_logits(&seq)?;
    let dense =
        Encoder::new(&frozen.weights(Kernel::Dense, Activation::Trained)).exit_logits(&seq)?;
    for c in 0..3 {
        println!(
            "exit {}: latent Δ {:.1e}, packed vs dense Δ {:.1e}, frozen logits {:?}",
            c + 1,
            before[c].max_abs_diff(&after[c]),
            packed[c].max_abs_diff(&dense[c]),
            packed[c].data()
        );
    }
    Ok(())
}
