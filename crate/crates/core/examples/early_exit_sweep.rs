//! Trains a three-block model briefly, then sweeps the exit threshold and
//! prints accuracy, depth and FLOPs per δ with the exit histogram.
//!
//!     cargo run --release --example early_exit_sweep

use beexformer::data::{build_vocabulary, encode, keyword_sentiment, LabelSet};
use beexformer::frozen::{Activation, FrozenModel, Kernel};
use beexformer::metrics::Metric;
use beexformer::model::{BeexModel, ModelConfig};
use beexformer::report::{run_eval, sweep_delta};
use beexformer::train::{train, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> beexformer::Result<()> {
    let raw = keyword_sentiment(1500, 21);
    let vocab = build_vocabulary(&raw[..1000]);
    let labels = LabelSet::infer(&raw);
    let tr = encode("train", &raw[..1000], &vocab, &labels, 20)?;
    let dev = encode("dev", &raw[1000..1250], &vocab, &labels, 20)?;
    let test = encode("test", &raw[1250..], &vocab, &labels, 20)?;
    let config = ModelConfig {
        vocab_size: vocab.len(),
        max_len: 20,
        embed_dim: 16,
        heads: 2,
        hidden_dim: 32,
        blocks: 3,
        dropout: 0.1,
        ..ModelConfig::default()
    };
    let model = BeexModel::new(config, &mut ChaCha8Rng::seed_from_u64(2))?;
    let cfg = TrainConfig {
        epochs: 4,
        ..TrainConfig::default()
    };
    let out = train(model, &tr, &dev, &cfg)?;
    println!("dev accuracy after training: {:.3}", out.best_metric);

    let frozen = FrozenModel::from_model(&out.model);
    let w = frozen.weights(Kernel::Packed, Activation::Trained);
    let deltas = [0.0, 1e-4, 1e-2, 0.05, 0.1, 0.2, 0.4];
    println!(
        "{:>8} {:>9} {:>7} {:>11}",
        "delta", "accuracy", "depth", "reduction"
    );
    for r in sweep_delta(&w, &test, &deltas, Metric::Accuracy)? {
        println!(
            "{:>8} {:>9.3} {:>7.3} {:>10.2}%",
            r.delta, r.metric, r.mean_exit_depth, r.reduction_percent
        );
    }
    let ev = run_eval(&w, &test, Some(0.1), Metric::Accuracy)?;
    println!("exit histogram at δ = 0.1: {:?}", ev.report.exit_histogram);
    println!("parameters saved: {}", ev.report.params_saved);
    Ok(())
}
