//! Entropy-based early exit.
//!
//! After every block the exit head produces class logits and their entropy.
//! Inference stops at the first block whose fractional entropy reduction
//! `(S_prev − S_curr) / S_prev` falls below `δ`, starting from `S_0 = ln m`.
//! Without any such block the final exit is used.

use serde::{Deserialize, Serialize};

use crate::accounting::{count_flops, Depth};
use crate::compute::{argmax, Tensor};
use crate::embedding::TokenSequence;
use crate::error::{Error, Result};
use crate::model::{Encoder, WeightSource};

/// Entropies at or below this are treated as already minimal.
pub const MIN_ENTROPY: f64 = 1e-12;

fn check_classes(logits: &[f64]) {
    debug_assert!(logits.len() >= 2, "entropy needs at least two classes");
}

/// Shannon entropy of `softmax(logits)` in the max-shifted log-sum-exp form
/// `S = ln Σ e^{z_j − M} − Σ z'_j e^{z'_j} / Σ e^{z'_j}` with `z' = z − M`.
pub fn entropy(logits: &[f64]) -> f64 {
    check_classes(logits);
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut denom = 0.0;
    let mut weighted = 0.0;
    for &z in logits {
        let s = z - max;
        let e = s.exp();
        denom += e;
        weighted += s * e;
    }
    (denom.ln() - weighted / denom).max(0.0)
}

/// `−Σ p ln p`, with `0 ln 0 = 0`. Reference form for [`entropy`].
pub fn entropy_direct(logits: &[f64]) -> f64 {
    check_classes(logits);
    let mut p = logits.to_vec();
    let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    p.iter_mut().for_each(|v| *v = (*v - max).exp());
    let z: f64 = p.iter().sum();
    -p.iter()
        .map(|&e| e / z)
        .filter(|&q| q > 0.0)
        .map(|q| q * q.ln())
        .sum::<f64>()
}

/// `(S_prev − S_curr) / S_prev`.
pub fn fractional_reduction(s_prev: f64, s_curr: f64) -> f64 {
    (s_prev - s_curr) / s_prev
}

pub fn exit_decision(s_prev: f64, s_curr: f64, delta: f64) -> bool {
    s_prev <= MIN_ENTROPY || fractional_reduction(s_prev, s_curr) < delta
}

/// 1-based exit block for a full entropy profile `S(z_1) … S(z_C)` over
/// `m` classes. Equivalent to running [`infer_with_exit`] step by step.
pub fn exit_index(entropies: &[f64], num_classes: usize, delta: f64) -> usize {
    let mut prev = (num_classes as f64).ln();
    for (c, &s) in entropies.iter().enumerate() {
        if exit_decision(prev, s, delta) {
            return c + 1;
        }
        prev = s;
    }
    entropies.len()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExitTrace {
    /// `S(z_c)` for every executed block.
    pub entropies: Vec<f64>,
    /// Fractional reduction against the previous entropy, per executed block.
    pub reductions: Vec<f64>,
    /// 1-based block at which inference stopped.
    pub exit_index: usize,
    pub logits: Vec<f64>,
    /// Nominal FLOPs spent, including every evaluated exit head.
    pub flops: u64,
}

impl ExitTrace {
    pub fn prediction(&self) -> usize {
        argmax(&self.logits)
    }

    pub fn probabilities(&self) -> Vec<f64> {
        Tensor::row_vector(&self.logits)
            .softmax_rows(None)
            .into_data()
    }
}

/// Runs blocks one at a time, evaluating the exit head after each, and
/// stops as soon as [`exit_decision`] fires.
pub fn infer_with_exit<W: WeightSource + ?Sized>(
    enc: &Encoder<'_, W>,
    seq: &TokenSequence,
    delta: f64,
) -> Result<(usize, ExitTrace)> {
    let cfg = enc.weights().config();
    let x = enc.embed(seq)?;
    let mut prev = (cfg.num_classes as f64).ln();
    let mut h = x.values;
    let mut entropies = Vec::new();
    let mut reductions = Vec::new();
    for c in 0..cfg.blocks {
        h = enc.block(c, &h, &x.pad_mask)?;
        let logits = exit_head_forward(enc, c, &h, &x.pad_mask)?;
        let s = entropy(logits.data());
        entropies.push(s);
        reductions.push(fractional_reduction(prev, s));
        if c + 1 == cfg.blocks || exit_decision(prev, s, delta) {
            let trace = ExitTrace {
                entropies,
                reductions,
                exit_index: c + 1,
                flops: count_flops(cfg, seq.len, Depth::Exit(c + 1)).nominal(),
                logits: logits.into_data(),
            };
            return Ok((trace.prediction(), trace));
        }
        prev = s;
    }
    unreachable!("validated configs have at least one block")
}

/// Full depth with only the final head evaluated.
pub fn infer_full_depth<W: WeightSource + ?Sized>(
    enc: &Encoder<'_, W>,
    seq: &TokenSequence,
) -> Result<(usize, Vec<f64>)> {
    let cfg = enc.weights().config();
    let x = enc.embed(seq)?;
    let hs = enc.backbone(&x)?;
    let last = cfg.blocks - 1;
    let logits = enc.exit_head(last, &hs[last], &x.pad_mask)?.into_data();
    Ok((argmax(&logits), logits))
}

/// `Φ_c(h_c)`; an all-padding input is a contract error.
pub fn exit_head_forward<W: WeightSource + ?Sized>(
    enc: &Encoder<'_, W>,
    c: usize,
    h: &Tensor,
    pad_mask: &[bool],
) -> Result<Tensor> {
    if pad_mask.iter().all(|&p| p) {
        return Err(Error::Contract(
            "exit head applied to an all-padding sequence".into(),
        ));
    }
    enc.exit_head(c, h, pad_mask)
}
