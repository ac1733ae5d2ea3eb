//! Compares tape gradients of the soft-routing loss with central finite
//! differences on a few latent weights of a small model.
//!
//!     cargo run --release --example gradient_check

use beexformer::compute::Graph;
use beexformer::data::{build_vocabulary, encode, keyword_sentiment, Example, LabelSet};
use beexformer::model::{BeexModel, ModelConfig, TapedModel};
use beexformer::train::{batch_loss, ExitTraining};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn loss(model: &BeexModel, batch: &[&Example]) -> f64 {
    let g = Graph::new();
    let tm = TapedModel::new(&g, model);
    let l = batch_loss(&tm, batch, None, ExitTraining::AllExits, true).unwrap();
    l.total.value().item()
}

fn main() -> beexformer::Result<()> {
    let raw = keyword_sentiment(6, 2);
    let vocab = build_vocabulary(&raw);
    let data = encode("gc", &raw, &vocab, &LabelSet::infer(&raw), 8)?;
    let batch: Vec<&Example> = data.examples.iter().collect();
    let config = ModelConfig {
        vocab_size: vocab.len(),
        max_len: 8,
        embed_dim: 8,
        heads: 2,
        hidden_dim: 8,
        blocks: 2,
        dropout: 0.0,
        ..ModelConfig::default()
    };
    let mut model = BeexModel::new(config, &mut ChaCha8Rng::seed_from_u64(3))?;

    let g = Graph::new();
    let tm = TapedModel::new(&g, &model);
    let l = batch_loss(&tm, &batch, None, ExitTraining::AllExits, true)?;
    let grads = g.backward(l.total)?;
    drop(tm);
    model.params.zero_grad();
    grads.accumulate_into(&mut model.params);

    let latents: Vec<_> = model
        .params
        .iter()
        .filter(|(_, p)| p.is_latent())
        .map(|(id, _)| id)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let h = 1e-5;
    println!(
        "{:<28} {:>14} {:>14} {:>10}",
        "entry", "analytic", "numeric", "rel err"
    );
    for _ in 0..10 {
        let id = latents[rng.gen_range(0..latents.len())];
        let i = rng.gen_range(0..model.params.get(id).value.numel());
        let analytic = model
            .params
            .get(id)
            .grad
            .as_ref()
            .map_or(0.0, |g| g.data()[i]);
        let w0 = model.params.get(id).value.data()[i];
        model.params.get_mut(id).value.data_mut()[i] = w0 + h;
        let up = loss(&model, &batch);
        model.params.get_mut(id).value.data_mut()[i] = w0 - h;
        let down = loss(&model, &batch);
        model.params.get_mut(id).value.data_mut()[i] = w0;
        let numeric = (up - down) / (2.0 * h);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12);
        let name = format!("{}[{i}]", model.params.get(id).name);
        println!("{name:<28} {analytic:>14.6e} {numeric:>14.6e} {rel:>10.2e}");
    }
    Ok(())
}
