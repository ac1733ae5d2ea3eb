//! Sentence-pair path: trains on the keyword-entailment corpus and reports
//! the early-exit evaluation of the frozen model. The subset rule needs
//! token matching across the separator; at this size the model only gets
//! modestly above chance (about 0.55–0.6 dev accuracy).
//!
//!     cargo run --release --example pair_entailment

use beexformer::data::{build_vocabulary, encode, pair_entailment, LabelSet};
use beexformer::frozen::{Activation, FrozenModel, Kernel};
use beexformer::metrics::Metric;
use beexformer::model::{BeexModel, ModelConfig};
use beexformer::report::run_eval;
use beexformer::train::{train_with, TrainConfig, TrainEvent};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> beexformer::Result<()> {
    let raw = pair_entailment(4000, 11);
    let vocab = build_vocabulary(&raw[..3000]);
    let labels = LabelSet::infer(&raw);
    let tr = encode("train", &raw[..3000], &vocab, &labels, 24)?;
    let dev = encode("dev", &raw[3000..3500], &vocab, &labels, 24)?;
    let test = encode("test", &raw[3500..], &vocab, &labels, 24)?;
    let config = ModelConfig {
        vocab_size: vocab.len(),
        max_len: 24,
        embed_dim: 16,
        heads: 2,
        hidden_dim: 48,
        blocks: 2,
        dropout: 0.0,
        ..ModelConfig::default()
    };
    let model = BeexModel::new(config, &mut ChaCha8Rng::seed_from_u64(1))?;
    let cfg = TrainConfig {
        epochs: 12,
        learning_rate: 0.003,
        early_stop_patience: 12,
        ..TrainConfig::default()
    };
    let out = train_with(model, &tr, &dev, &cfg, |e| {
        if let TrainEvent::Epoch(r) = e {
            println!(
                "epoch {:>2}  loss {:.4}  dev acc {:.3}",
                r.epoch, r.train_loss, r.dev_metric
            );
        }
    })?;
    let frozen = FrozenModel::from_model(&out.model);
    let w = frozen.weights(Kernel::Packed, Activation::Trained);
    let ev = run_eval(&w, &test, Some(cfg.delta), Metric::Accuracy)?;
    let r = &ev.report;
    println!(
        "test accuracy {:.3}, mean depth {:.2}, histogram {:?}, FLOPs reduction {:.2}%",
        r.metric, r.mean_exit_depth, r.exit_histogram, r.reduction_percent
    );
    Ok(())
}
