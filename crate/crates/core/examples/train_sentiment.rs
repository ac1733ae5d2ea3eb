//! Trains a two-block model on the keyword-sentiment corpus and prints the
//! dev accuracy per epoch.
//!
//!     cargo run --release --example train_sentiment -- [b2|clip]

use beexformer::data::{build_vocabulary, encode, keyword_sentiment, LabelSet};
use beexformer::model::{BeexModel, ModelConfig};
use beexformer::train::{train_with, TrainConfig, TrainEvent};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> beexformer::Result<()> {
    let binarizer = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "b2".into())
        .parse()?;
    let raw = keyword_sentiment(2500, 7);
    let vocab = build_vocabulary(&raw);
    let labels = LabelSet::infer(&raw);
    let train = encode("train", &raw[..2000], &vocab, &labels, 20)?;
    let dev = encode("dev", &raw[2000..], &vocab, &labels, 20)?;

    let config = ModelConfig {
        vocab_size: vocab.len(),
        max_len: 20,
        embed_dim: 16,
        heads: 2,
        hidden_dim: 48,
        blocks: 2,
        dropout: 0.1,
        binarizer,
        ..ModelConfig::default()
    };
    let model = BeexModel::new(config, &mut ChaCha8Rng::seed_from_u64(1))?;
    let start = std::time::Instant::now();
    let out = train_with(model, &train, &dev, &TrainConfig::default(), |e| {
        if let TrainEvent::Epoch(r) = e {
            println!(
                "epoch {:>2}  loss {:.4}  exits {:?}  dev acc {:.3}  lr {}",
                r.epoch,
                r.train_loss,
                r.exit_losses
                    .iter()
                    .map(|l| format!("{l:.3}"))
                    .collect::<Vec<_>>(),
                r.dev_metric,
                r.learning_rate
            );
        }
    })?;
    println!(
        "best dev accuracy {:.3} at epoch {} ({:.1?})",
        out.best_metric,
        out.best_epoch,
        start.elapsed()
    );
    Ok(())
}
