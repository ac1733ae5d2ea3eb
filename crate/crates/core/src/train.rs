//! Soft-routing training: every exit head contributes a cross-entropy term
//! and the objective is their mean, so block `c` is trained by exits `c…C`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binarize::bat_step;
use crate::compute::{Gradients, Graph, Var};
use crate::data::{Dataset, Example};
use crate::embedding::TokenSequence;
use crate::error::{Error, Result};
use crate::metrics::Metric;
use crate::model::{BeexModel, Dropout, Encoder, LatentWeights, TapedModel};
use crate::optim::{Adam, Optimizer};

/// Which exits the objective averages over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitTraining {
    #[default]
    AllExits,
    /// Only the final exit (the no-early-exit baseline).
    FinalOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub min_learning_rate: f64,
    /// Epochs without dev improvement before the learning rate is decayed.
    pub plateau_patience: usize,
    pub decay: f64,
    pub early_stop_patience: usize,
    pub batch_size: usize,
    pub epochs: usize,
    /// Early-exit threshold used at evaluation time.
    pub delta: f64,
    pub seed: u64,
    pub metric: Metric,
    pub exits: ExitTraining,
    /// Samples per gradient chunk; chunks run in parallel and are summed
    /// in a fixed order, so results do not depend on the thread count.
    pub chunk_size: usize,
    /// Drop trailing padding before the forward pass. Outputs at real
    /// positions are unchanged by this, only work is saved.
    pub trim_padding: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            min_learning_rate: 1e-4,
            plateau_patience: 2,
            decay: 0.5,
            early_stop_patience: 5,
            batch_size: 32,
            epochs: 50,
            delta: 1e-4,
            seed: 0,
            metric: Metric::Accuracy,
            exits: ExitTraining::AllExits,
            chunk_size: 8,
            trim_padding: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.into()));
        if !(self.learning_rate > 0.0 && self.min_learning_rate > 0.0) {
            return fail("learning rates must be positive");
        }
        if self.min_learning_rate > self.learning_rate {
            return fail("min_learning_rate exceeds learning_rate");
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return fail("decay must lie in (0, 1]");
        }
        if self.batch_size == 0 || self.epochs == 0 || self.chunk_size == 0 {
            return fail("batch_size, epochs and chunk_size must be positive");
        }
        if self.plateau_patience == 0 || self.early_stop_patience == 0 {
            return fail("patience values must be positive");
        }
        if self.delta.is_nan() || self.delta < 0.0 {
            return fail("delta must be non-negative");
        }
        Ok(())
    }
}

/// Losses logged for one optimizer step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    /// `L′`.
    pub loss: f64,
    /// `L_i` for each trained exit.
    pub exit_losses: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    /// Mean `L′` over the epoch's steps.
    pub train_loss: f64,
    pub exit_losses: Vec<f64>,
    pub dev_metric: f64,
    pub learning_rate: f64,
}

pub enum TrainEvent<'a> {
    Step(&'a StepRecord),
    Epoch(&'a EpochReport),
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best dev metric.
    pub model: BeexModel,
    pub reports: Vec<EpochReport>,
    pub best_epoch: usize,
    pub best_metric: f64,
}

/// `L_i`: mean cross-entropy of one exit's logits over a batch.
pub fn per_exit_loss<'g>(g: &'g Graph, logits: &[Var<'g>], labels: &[usize]) -> Result<Var<'g>> {
    let ce = logits
        .iter()
        .zip(labels)
        .map(|(z, &y)| z.cross_entropy(y))
        .collect::<Result<Vec<_>>>()?;
    g.mean_of(&ce)
}

/// `L′ = (1/C) Σ_i L_i`.
pub fn soft_routing_loss<'g>(g: &'g Graph, per_exit: &[Var<'g>]) -> Result<Var<'g>> {
    g.mean_of(per_exit)
}

pub struct BatchLoss<'g> {
    pub per_exit: Vec<Var<'g>>,
    pub total: Var<'g>,
}

fn prepared(seq: &TokenSequence, trim: bool) -> std::borrow::Cow<'_, TokenSequence> {
    if trim {
        std::borrow::Cow::Owned(seq.trimmed())
    } else {
        std::borrow::Cow::Borrowed(seq)
    }
}

/// Builds the per-exit losses and `L′` for a batch on `tm`'s graph.
pub fn batch_loss<'g>(
    tm: &TapedModel<'g, '_>,
    batch: &[&Example],
    mut dropout: Option<&mut Dropout<'_>>,
    exits: ExitTraining,
    trim: bool,
) -> Result<BatchLoss<'g>> {
    let blocks = tm.blocks();
    let trained: Vec<usize> = match exits {
        ExitTraining::AllExits => (0..blocks).collect(),
        ExitTraining::FinalOnly => vec![blocks - 1],
    };
    let mut logits: Vec<Vec<Var<'g>>> = vec![Vec::with_capacity(batch.len()); trained.len()];
    for ex in batch {
        let seq = prepared(&ex.seq, trim);
        let mask = seq.pad_mask();
        let x = tm.embed(&seq)?;
        let hs = tm.backbone(x, &mask, dropout.as_deref_mut())?;
        for (slot, &c) in trained.iter().enumerate() {
            logits[slot].push(tm.exit_head(c, hs[c], &mask)?);
        }
    }
    let labels: Vec<usize> = batch.iter().map(|e| e.label).collect();
    let g = tm.graph();
    let per_exit = logits
        .iter()
        .map(|z| per_exit_loss(g, z, &labels))
        .collect::<Result<Vec<_>>>()?;
    let total = soft_routing_loss(g, &per_exit)?;
    Ok(BatchLoss { per_exit, total })
}

/// Final-exit predictions for every example, computed in parallel.
pub fn predict_final(model: &BeexModel, data: &Dataset, trim: bool) -> Result<Vec<usize>> {
    let w = LatentWeights::new(model);
    let enc = Encoder::new(&w);
    let last = model.config.blocks - 1;
    data.examples
        .par_iter()
        .map(|ex| {
            let seq = prepared(&ex.seq, trim);
            let x = enc.embed(&seq)?;
            let hs = enc.backbone(&x)?;
            Ok(enc.exit_head(last, &hs[last], &x.pad_mask)?.argmax())
        })
        .collect()
}

pub fn evaluate_final(
    model: &BeexModel,
    data: &Dataset,
    metric: Metric,
    trim: bool,
) -> Result<f64> {
    let preds = predict_final(model, data, trim)?;
    Ok(metric.compute(&preds, &data.labels(), model.config.num_classes))
}

struct ChunkResult {
    grads: Gradients,
    total: f64,
    per_exit: Vec<f64>,
}

fn chunk_rng(seed: u64, epoch: usize, step: usize, chunk: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 44) | ((step as u64) << 20) | chunk as u64);
    rng
}

/// Gradients of `L′` over one batch, accumulated into the model's store.
pub fn accumulate_batch(
    model: &mut BeexModel,
    batch: &[&Example],
    cfg: &TrainConfig,
    epoch: usize,
    step: usize,
) -> Result<StepRecord> {
    let n = batch.len() as f64;
    let shared: &BeexModel = model;
    let results = batch
        .par_chunks(cfg.chunk_size)
        .enumerate()
        .map(|(ci, chunk)| {
            let g = Graph::new();
            let tm = TapedModel::new(&g, shared);
            let mut rng = chunk_rng(cfg.seed, epoch, step, ci);
            let mut dropout = Dropout {
                p: shared.config.dropout,
                rng: &mut rng,
            };
            let loss = batch_loss(&tm, chunk, Some(&mut dropout), cfg.exits, cfg.trim_padding)?;
            let w = chunk.len() as f64 / n;
            let root = loss.total.scale(w);
            Ok(ChunkResult {
                grads: g.backward(root)?,
                total: root.value().item(),
                per_exit: loss.per_exit.iter().map(|v| w * v.value().item()).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    model.params.zero_grad();
    let mut record = StepRecord {
        epoch,
        step,
        loss: 0.0,
        exit_losses: vec![0.0; results[0].per_exit.len()],
    };
    for r in &results {
        r.grads.accumulate_into(&mut model.params);
        record.loss += r.total;
        for (acc, v) in record.exit_losses.iter_mut().zip(&r.per_exit) {
            *acc += v;
        }
    }
    Ok(record)
}

pub fn train(
    model: BeexModel,
    train: &Dataset,
    dev: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with(model, train, dev, cfg, |_| {})
}

/// Adam over all parameters with plateau decay, early stopping and
/// best-dev retention. `observe` sees every step and epoch as it happens.
pub fn train_with(
    mut model: BeexModel,
    train: &Dataset,
    dev: &Dataset,
    cfg: &TrainConfig,
    mut observe: impl FnMut(TrainEvent<'_>),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || dev.is_empty() {
        return Err(Error::Config(
            "training needs non-empty train and dev splits".into(),
        ));
    }
    let mut opt = Adam::new(cfg.learning_rate);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle.set_stream(u64::MAX);
    let mut best = (model.clone(), f64::NEG_INFINITY, 0usize);
    let (mut stale, mut plateau) = (0, 0);
    let mut reports = Vec::new();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut sum_loss = 0.0;
        let mut sum_exit: Vec<f64> = Vec::new();
        let mut steps = 0;
        for (step, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Example> = idx.iter().map(|&i| &train.examples[i]).collect();
            let rec = accumulate_batch(&mut model, &batch, cfg, epoch, step)?;
            bat_step(&mut model.params, &mut opt)?;
            if !rec.loss.is_finite() {
                return Err(Error::Contract(format!(
                    "non-finite loss at epoch {epoch}, step {step}"
                )));
            }
            sum_loss += rec.loss;
            sum_exit.resize(rec.exit_losses.len(), 0.0);
            sum_exit
                .iter_mut()
                .zip(&rec.exit_losses)
                .for_each(|(a, v)| *a += v);
            steps += 1;
            observe(TrainEvent::Step(&rec));
        }
        let dev_metric = evaluate_final(&model, dev, cfg.metric, cfg.trim_padding)?;
        let report = EpochReport {
            epoch,
            train_loss: sum_loss / steps as f64,
            exit_losses: sum_exit.iter().map(|v| v / steps as f64).collect(),
            dev_metric,
            learning_rate: opt.learning_rate(),
        };
        observe(TrainEvent::Epoch(&report));
        reports.push(report);
        if dev_metric > best.1 {
            best = (model.clone(), dev_metric, epoch);
            stale = 0;
            plateau = 0;
        } else {
            stale += 1;
            plateau += 1;
            if plateau >= cfg.plateau_patience {
                opt.set_learning_rate((opt.learning_rate() * cfg.decay).max(cfg.min_learning_rate));
                plateau = 0;
            }
            if stale >= cfg.early_stop_patience {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        model: best.0,
        reports,
        best_epoch: best.2,
        best_metric: best.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_vocabulary, encode, keyword_sentiment, LabelSet};
    use crate::model::ModelConfig;

    fn tiny(vocab: usize) -> ModelConfig {
        ModelConfig {
            vocab_size: vocab,
            max_len: 20,
            embed_dim: 8,
            heads: 2,
            hidden_dim: 12,
            blocks: 2,
            dropout: 0.0,
            ..ModelConfig::default()
        }
    }

    fn splits(n: usize) -> (Dataset, Dataset) {
        let raw = keyword_sentiment(n, 1);
        let vocab = build_vocabulary(&raw);
        let labels = LabelSet::infer(&raw);
        let (a, b) = raw.split_at(n * 3 / 4);
        (
            encode("train", a, &vocab, &labels, 20).unwrap(),
            encode("dev", b, &vocab, &labels, 20).unwrap(),
        )
    }

    fn model(vocab: usize) -> BeexModel {
        BeexModel::new(tiny(vocab), &mut ChaCha8Rng::seed_from_u64(3)).unwrap()
    }

    #[test]
    fn uniform_logits_give_ln2() {
        let g = Graph::new();
        let z = [g.constant(crate::compute::Tensor::row_vector(&[0.3, 0.3])); 2];
        let l = per_exit_loss(&g, &z, &[0, 1]).unwrap();
        assert!((l.value().item() - 2f64.ln()).abs() < 1e-15);
        let confident = [g.constant(crate::compute::Tensor::row_vector(&[40.0, -40.0]))];
        assert!(per_exit_loss(&g, &confident, &[0]).unwrap().value().item() < 1e-30);
        assert!(matches!(
            per_exit_loss(&g, &z, &[0, 2]),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn soft_routing_is_the_mean_of_exit_losses() {
        let (tr, _) = splits(40);
        let m = model(200);
        let g = Graph::new();
        let tm = TapedModel::new(&g, &m);
        let batch: Vec<&Example> = tr.examples.iter().take(5).collect();
        let loss = batch_loss(&tm, &batch, None, ExitTraining::AllExits, true).unwrap();
        let mean = loss.per_exit.iter().map(|v| v.value().item()).sum::<f64>() / 2.0;
        assert!((loss.total.value().item() - mean).abs() < 1e-12);
        // one-sample batches average to the two-sample batch
        let single = |i: usize| {
            let g = Graph::new();
            let tm = TapedModel::new(&g, &m);
            batch_loss(&tm, &batch[i..i + 1], None, ExitTraining::AllExits, true)
                .unwrap()
                .per_exit[0]
                .value()
                .item()
        };
        let pair = batch_loss(&tm, &batch[..2], None, ExitTraining::AllExits, true).unwrap();
        assert!((pair.per_exit[0].value().item() - (single(0) + single(1)) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn trimming_does_not_change_losses() {
        let (tr, _) = splits(20);
        let m = model(200);
        let batch: Vec<&Example> = tr.examples.iter().take(4).collect();
        let value = |trim| {
            let g = Graph::new();
            let tm = TapedModel::new(&g, &m);
            batch_loss(&tm, &batch, None, ExitTraining::AllExits, trim)
                .unwrap()
                .total
                .value()
                .item()
        };
        assert!((value(true) - value(false)).abs() < 1e-12);
    }

    #[test]
    fn step_record_identity_and_determinism() {
        let (tr, dev) = splits(120);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 16,
            chunk_size: 5,
            ..TrainConfig::default()
        };
        let mut steps = Vec::new();
        let a = train_with(model(200), &tr, &dev, &cfg, |e| {
            if let TrainEvent::Step(s) = e {
                steps.push(s.clone());
            }
        })
        .unwrap();
        assert!(!steps.is_empty());
        for s in &steps {
            let mean = s.exit_losses.iter().sum::<f64>() / s.exit_losses.len() as f64;
            assert!((s.loss - mean).abs() <= 1e-9);
            assert!(s.loss.is_finite());
        }
        let b = train(model(200), &tr, &dev, &cfg).unwrap();
        assert_eq!(a.reports, b.reports);
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn dropout_runs_are_seed_deterministic() {
        let (tr, dev) = splits(60);
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let mk = || {
            let cfgm = ModelConfig {
                dropout: 0.3,
                ..tiny(200)
            };
            BeexModel::new(cfgm, &mut ChaCha8Rng::seed_from_u64(3)).unwrap()
        };
        let a = train(mk(), &tr, &dev, &cfg).unwrap();
        let b = train(mk(), &tr, &dev, &cfg).unwrap();
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn final_only_trains_one_exit() {
        let (tr, dev) = splits(40);
        let cfg = TrainConfig {
            epochs: 1,
            exits: ExitTraining::FinalOnly,
            ..TrainConfig::default()
        };
        let out = train(model(200), &tr, &dev, &cfg).unwrap();
        assert_eq!(out.reports[0].exit_losses.len(), 1);
        // the first exit head never receives gradient, so Adam leaves it untouched
        let fresh = model(200);
        let id = fresh.layout.exits[0].w1;
        assert_eq!(out.model.params.get(id).value, fresh.params.get(id).value);
    }

    #[test]
    fn empty_splits_are_config_errors() {
        let (tr, _) = splits(8);
        let empty = Dataset {
            name: "e".into(),
            num_classes: 2,
            examples: vec![],
        };
        let cfg = TrainConfig::default();
        assert!(matches!(
            train(model(200), &empty, &tr, &cfg),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            train(
                model(200),
                &tr,
                &tr,
                &TrainConfig {
                    min_learning_rate: 1.0,
                    ..cfg
                }
            ),
            Err(Error::Config(_))
        ));
    }
}
