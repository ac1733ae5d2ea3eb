//! FLOPs and model-size bookkeeping.
//!
//! Convention: a multiply-add is 2 FLOPs; softmax, sigmoid, tanh and the
//! positional sin/cos cost 5 FLOPs per element; layer norm costs 5 per
//! element; every other elementwise op (add, product, binarization, bias,
//! pooling) costs 1. Products of a binarized activation with a binary
//! weight are tallied separately; the adjusted count weights them by 1/64
//! (64 lanes per XNOR-popcount word). Attention scores and the
//! attention-weighted values are real-valued and always count in full.

use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::model::{ModelConfig, ParamCounts};
use crate::params::ParamKind;

pub const FLOPS_CONVENTION: &str = "mul-add=2; softmax/sigmoid/tanh/sin/cos=5 per element; \
layer-norm=5 per element; other elementwise=1; adjusted = dense + binary/64";

/// How far the cascade runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Depth {
    /// Blocks `1..=c`, with the exit head evaluated after each of them.
    Exit(usize),
    /// All blocks and only the final head (no early exit).
    Full,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCount {
    /// FLOPs of binary-activation × binary-weight products.
    pub binary: u64,
    /// Everything else.
    pub dense: u64,
}

impl OpCount {
    pub fn nominal(&self) -> u64 {
        self.binary + self.dense
    }

    pub fn adjusted(&self) -> f64 {
        self.dense as f64 + self.binary as f64 / 64.0
    }

    fn times(self, k: u64) -> OpCount {
        OpCount {
            binary: self.binary * k,
            dense: self.dense * k,
        }
    }
}

impl Add for OpCount {
    type Output = OpCount;

    fn add(self, o: OpCount) -> OpCount {
        OpCount {
            binary: self.binary + o.binary,
            dense: self.dense + o.dense,
        }
    }
}

impl AddAssign for OpCount {
    fn add_assign(&mut self, o: OpCount) {
        *self = *self + o;
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsLedger {
    pub embedding: OpCount,
    /// Multi-head attention, residual and first norm, over executed blocks.
    pub attention: OpCount,
    /// SLFN, residual and second norm, over executed blocks.
    pub slfn: OpCount,
    pub exit_heads: OpCount,
}

impl FlopsLedger {
    pub fn total(&self) -> OpCount {
        self.embedding + self.attention + self.slfn + self.exit_heads
    }

    pub fn nominal(&self) -> u64 {
        self.total().nominal()
    }

    pub fn adjusted(&self) -> f64 {
        self.total().adjusted()
    }

    pub fn backbone(&self) -> OpCount {
        self.attention + self.slfn
    }
}

impl Add for FlopsLedger {
    type Output = FlopsLedger;

    fn add(self, o: FlopsLedger) -> FlopsLedger {
        FlopsLedger {
            embedding: self.embedding + o.embedding,
            attention: self.attention + o.attention,
            slfn: self.slfn + o.slfn,
            exit_heads: self.exit_heads + o.exit_heads,
        }
    }
}

impl AddAssign for FlopsLedger {
    fn add_assign(&mut self, o: FlopsLedger) {
        *self = *self + o;
    }
}

impl std::iter::Sum for FlopsLedger {
    fn sum<I: Iterator<Item = FlopsLedger>>(iter: I) -> FlopsLedger {
        iter.fold(FlopsLedger::default(), Add::add)
    }
}

struct Dims {
    l: u64,
    d: u64,
    h: u64,
    dh: u64,
    e: u64,
    m: u64,
}

impl Dims {
    fn new(config: &ModelConfig, len: usize) -> Dims {
        Dims {
            l: len as u64,
            d: config.model_dim() as u64,
            h: config.heads as u64,
            dh: config.hidden_dim as u64,
            e: config.exit_hidden() as u64,
            m: config.num_classes as u64,
        }
    }
}

pub fn embedding_flops(config: &ModelConfig, len: usize) -> OpCount {
    OpCount {
        binary: 0,
        dense: 5 * len as u64 * config.embed_dim as u64,
    }
}

pub fn attention_flops(config: &ModelConfig, len: usize) -> OpCount {
    let Dims { l, d, h, .. } = Dims::new(config, len);
    OpCount {
        // Q, K, V for all heads, then W_o
        binary: 3 * 2 * l * d * d + 2 * l * d * d,
        dense: l * d            // b(x)
            + 2 * l * l * d     // Q Kᵀ
            + h * l * l         // scaling
            + 5 * h * l * l     // softmax
            + 2 * l * l * d     // P V
            + l * d             // b(concat)
            + l * d             // residual
            + 5 * l * d, // norm
    }
}

pub fn slfn_flops(config: &ModelConfig, len: usize) -> OpCount {
    if !config.use_slfn {
        return OpCount::default();
    }
    let Dims { l, d, dh, .. } = Dims::new(config, len);
    let recurrent = if config.uses_sh_gate() { 3 } else { 2 };
    // per step: b(h), two adds, σ, tanh, b(Sg), b(Tg), product, sum
    let mut step = dh + 2 * dh + 5 * dh + 5 * dh + 2 * dh + dh + dh;
    if config.uses_sh_gate() {
        // σ, b(Sh), product
        step += 5 * dh + dh + dh;
    }
    OpCount {
        binary: 2 * 2 * l * d * dh + recurrent * 2 * l * dh * dh + 2 * l * dh * d,
        dense: l * d + l * step + l * dh + l * d + 5 * l * d,
    }
}

/// One exit head, including the softmax/entropy over its `m` logits.
pub fn exit_head_flops(config: &ModelConfig, len: usize) -> OpCount {
    let Dims { l, d, e, m, .. } = Dims::new(config, len);
    OpCount {
        binary: 2 * d * e + 2 * e * m,
        dense: l * d + d + e + 5 * e + e + m + 5 * m,
    }
}

/// Closed-form count for one sequence of `len` real tokens.
pub fn count_flops(config: &ModelConfig, len: usize, depth: Depth) -> FlopsLedger {
    let (blocks, heads) = match depth {
        Depth::Exit(c) => (c as u64, c as u64),
        Depth::Full => (config.blocks as u64, 1),
    };
    FlopsLedger {
        embedding: embedding_flops(config, len),
        attention: attention_flops(config, len).times(blocks),
        slfn: slfn_flops(config, len).times(blocks),
        exit_heads: exit_head_flops(config, len).times(heads),
    }
}

/// `(WEE − EE) / WEE` in percent.
pub fn reduction_percent(with_ee: u64, without_ee: u64) -> f64 {
    if without_ee == 0 {
        return 0.0;
    }
    100.0 * (without_ee as f64 - with_ee as f64) / without_ee as f64
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeEntry {
    pub name: String,
    pub kind: ParamKind,
    pub numel: u64,
    /// Bits in a full-precision checkpoint: 32 per parameter.
    pub latent_bits: u64,
    /// Bits in a frozen checkpoint: 1 per binarized weight, 32 otherwise.
    pub frozen_bits: u64,
}

impl SizeEntry {
    pub fn new(name: &str, kind: ParamKind, numel: u64) -> Self {
        SizeEntry {
            name: name.to_string(),
            kind,
            numel,
            latent_bits: 32 * numel,
            frozen_bits: match kind {
                ParamKind::Latent => numel,
                ParamKind::FullPrecision => 32 * numel,
            },
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeLedger {
    pub entries: Vec<SizeEntry>,
}

impl SizeLedger {
    pub fn for_config(config: &ModelConfig) -> crate::Result<Self> {
        let mut entries = Vec::new();
        crate::model::Layout::declare(config, |spec| {
            let numel = (spec.shape[0] * spec.shape[1]) as u64;
            entries.push(SizeEntry::new(spec.name, spec.kind, numel));
            Ok(crate::params::ParamId(entries.len() - 1))
        })?;
        Ok(SizeLedger { entries })
    }

    pub fn latent_bytes(&self) -> u64 {
        self.entries.iter().map(|e| e.latent_bits).sum::<u64>() / 8
    }

    pub fn frozen_bytes(&self) -> u64 {
        self.entries
            .iter()
            .map(|e| e.frozen_bits)
            .sum::<u64>()
            .div_ceil(8)
    }

    pub fn ratio(&self) -> f64 {
        self.latent_bytes() as f64 / self.frozen_bytes() as f64
    }

    /// Frozen bits spent on full-precision parameters, grouped by role.
    pub fn full_precision_breakdown(&self) -> Vec<(&'static str, u64)> {
        let mut groups = [("embedding", 0u64), ("norms", 0), ("exit biases", 0)];
        for e in self
            .entries
            .iter()
            .filter(|e| e.kind == ParamKind::FullPrecision)
        {
            let slot = if e.name == "embedding" {
                0
            } else if e.name.contains(".norm") {
                1
            } else {
                2
            };
            groups[slot].1 += e.frozen_bits;
        }
        groups.to_vec()
    }

    pub fn binary_bits(&self) -> u64 {
        self.entries
            .iter()
            .filter(|e| e.kind == ParamKind::Latent)
            .map(|e| e.frozen_bits)
            .sum()
    }
}

/// Parameters in blocks a sample skipped by exiting at `exit_index`.
pub fn params_saved(counts: &ParamCounts, exit_index: usize) -> u64 {
    (counts.blocks.saturating_sub(exit_index) * counts.block_total()) as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            vocab_size: 50,
            embed_dim: 16,
            heads: 2,
            hidden_dim: 48,
            blocks: 6,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn final_exit_costs_extra_heads_only() {
        let c = cfg();
        for len in [1, 7, 20] {
            let ee = count_flops(&c, len, Depth::Exit(6));
            let wee = count_flops(&c, len, Depth::Full);
            let head = exit_head_flops(&c, len);
            assert_eq!(ee.nominal(), wee.nominal() + 5 * head.nominal());
            assert_eq!(ee.backbone(), wee.backbone());
        }
    }

    #[test]
    fn backbone_is_proportional_to_depth() {
        let c = cfg();
        let one = count_flops(&c, 10, Depth::Exit(1)).backbone().nominal();
        let all = count_flops(&c, 10, Depth::Full).backbone().nominal();
        assert_eq!(6 * one, all);
    }

    #[test]
    fn half_exit_at_three_of_six() {
        // 2 samples, one exits at 3, one at 6, both of length 10
        let c = cfg();
        let ee = count_flops(&c, 10, Depth::Exit(3)) + count_flops(&c, 10, Depth::Exit(6));
        let wee = count_flops(&c, 10, Depth::Full) + count_flops(&c, 10, Depth::Full);
        let block = (attention_flops(&c, 10) + slfn_flops(&c, 10)).nominal();
        // the early sample saves half its backbone, a quarter of the total backbone
        assert_eq!(
            wee.backbone().nominal() - ee.backbone().nominal(),
            3 * block
        );
        assert_eq!(4 * 3 * block, wee.backbone().nominal());
    }

    #[test]
    fn hand_computed_attention() {
        let c = ModelConfig {
            embed_dim: 2,
            heads: 2,
            hidden_dim: 3,
            blocks: 1,
            use_slfn: false,
            ..ModelConfig::default()
        };
        // D = 4, H = 2, L = 3
        let a = attention_flops(&c, 3);
        assert_eq!(a.binary, 8 * 3 * 16);
        assert_eq!(a.dense, 12 + 72 + 18 + 90 + 72 + 12 + 12 + 60);
        assert_eq!(slfn_flops(&c, 3), OpCount::default());
    }

    #[test]
    fn nominal_dominates_adjusted_and_grows_with_length() {
        let c = cfg();
        let mut prev = 0;
        for len in 1..30 {
            let l = count_flops(&c, len, Depth::Full);
            assert!(l.nominal() as f64 >= l.adjusted());
            assert!(l.nominal() > prev);
            prev = l.nominal();
        }
    }

    #[test]
    fn pure_binary_ratio_is_32() {
        let l = SizeLedger {
            entries: vec![SizeEntry::new("w", ParamKind::Latent, 64 * 100)],
        };
        assert_eq!(l.ratio(), 32.0);
    }

    #[test]
    fn ratio_drops_with_full_precision_share() {
        let l = SizeLedger::for_config(&ModelConfig::default()).unwrap();
        let r = l.ratio();
        assert!((16.0..=32.0).contains(&r), "{r}");
        let fp: u64 = l.full_precision_breakdown().iter().map(|g| g.1).sum();
        assert_eq!(
            fp + l.binary_bits(),
            l.entries.iter().map(|e| e.frozen_bits).sum::<u64>()
        );
    }

    #[test]
    fn reduction_and_saved_params() {
        assert_eq!(reduction_percent(50, 100), 50.0);
        assert_eq!(reduction_percent(100, 100), 0.0);
        let counts = ParamCounts::of(&cfg()).unwrap();
        assert_eq!(params_saved(&counts, 6), 0);
        assert_eq!(params_saved(&counts, 2), 4 * counts.block_total() as u64);
    }
}
