//! The binarized encoder: configuration, parameter layout, and the two
//! forward implementations (taped for training, tensor-only for inference).

mod infer;
mod taped;

pub use infer::{Encoder, LatentWeights, WeightSource};
pub use taped::{Dropout, TapedModel};

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binarize::Binarizer;
use crate::compute::Tensor;
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamKind, ParamStore};

/// Hidden-state update used by the selective learn-forget network.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlfnRule {
    /// `h = b(Sg) + b(Sg) ⊙ b(Tg)`; the `Sh` gate is not used.
    #[default]
    Literal,
    /// `h = b(Sh) ⊙ b(h_prev) + b(Sg) ⊙ b(Tg)`.
    Corrected,
}

impl FromStr for SlfnRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(SlfnRule::Literal),
            "corrected" => Ok(SlfnRule::Corrected),
            other => Err(Error::Config(format!("unknown SLFN rule `{other}`"))),
        }
    }
}

impl fmt::Display for SlfnRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SlfnRule::Literal => "literal",
            SlfnRule::Corrected => "corrected",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// `|V|`; the embedding table has two extra rows (padding, unknown).
    pub vocab_size: usize,
    pub max_len: usize,
    /// `D′`. The model width is `D = 2D′`.
    pub embed_dim: usize,
    pub heads: usize,
    /// `D_h`, the SLFN hidden width.
    pub hidden_dim: usize,
    pub blocks: usize,
    pub num_classes: usize,
    pub dropout: f64,
    pub binarizer: Binarizer,
    pub slfn_rule: SlfnRule,
    /// Reuse `U_sg` inside the `Sh` gate instead of a separate `U_sh`.
    pub share_sh_weight: bool,
    /// `false` drops the SLFN sub-layer (attention-only blocks).
    pub use_slfn: bool,
    /// Multiply every binary product by `1/√fan_in`, keeping
    /// pre-activations O(1) instead of O(fan_in).
    pub fan_in_scale: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 200,
            max_len: 32,
            embed_dim: 256,
            heads: 4,
            hidden_dim: 768,
            blocks: 6,
            num_classes: 2,
            dropout: 0.3,
            binarizer: Binarizer::SecondOrder,
            slfn_rule: SlfnRule::Literal,
            share_sh_weight: false,
            use_slfn: true,
            fan_in_scale: true,
        }
    }
}

impl ModelConfig {
    /// `D`.
    pub fn model_dim(&self) -> usize {
        2 * self.embed_dim
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim() / self.heads
    }

    /// Width of the first exit-head layer.
    pub fn exit_hidden(&self) -> usize {
        (self.model_dim() / 4).max(1)
    }

    pub fn table_rows(&self) -> usize {
        self.vocab_size + 2
    }

    /// Whether the `Sh` gate is computed at all.
    pub fn uses_sh_gate(&self) -> bool {
        self.slfn_rule == SlfnRule::Corrected
    }

    /// Factor applied to a binary product with inner dimension `fan_in`.
    pub fn product_scale(&self, fan_in: usize) -> f64 {
        if self.fan_in_scale {
            1.0 / (fan_in as f64).sqrt()
        } else {
            1.0
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.embed_dim < 2 {
            return fail(format!("embed_dim must be ≥ 2, got {}", self.embed_dim));
        }
        if self.heads == 0 || !self.model_dim().is_multiple_of(self.heads) {
            return fail(format!(
                "heads ({}) must divide the model width {}",
                self.heads,
                self.model_dim()
            ));
        }
        if self.blocks == 0 {
            return fail("at least one block is required".into());
        }
        if self.num_classes < 2 {
            return fail("at least two classes are required".into());
        }
        if self.max_len == 0 || self.hidden_dim == 0 {
            return fail("max_len and hidden_dim must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeadIds {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SlfnIds {
    pub w_sg: ParamId,
    pub u_sg: ParamId,
    pub w_tg: ParamId,
    pub u_tg: ParamId,
    /// Present only when the `Sh` gate runs with its own weight.
    pub u_sh: Option<ParamId>,
    /// `D_h → D` map back to the residual width.
    pub w_proj: ParamId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NormIds {
    pub gain: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockIds {
    pub heads: Vec<HeadIds>,
    pub w_o: ParamId,
    pub norm1: NormIds,
    pub slfn: Option<(SlfnIds, NormIds)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExitIds {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub embedding: ParamId,
    pub blocks: Vec<BlockIds>,
    pub exits: Vec<ExitIds>,
}

/// One parameter slot as declared by [`Layout::declare`].
pub struct ParamSpec<'a> {
    pub name: &'a str,
    pub kind: ParamKind,
    pub shape: [usize; 2],
    pub init: Init,
}

#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// Uniform in `[−0.5, 0.5]`, keeping `b′ ≥ 1` at the start.
    Latent,
    /// Uniform in `[−1, 1]` with a zero padding row.
    Embedding,
    Zeros,
    Ones,
}

impl Layout {
    /// Walks every parameter slot of `config` in a fixed order, asking
    /// `slot` for its id. Used both to allocate fresh models and to rebind
    /// loaded checkpoints by name.
    pub fn declare(
        config: &ModelConfig,
        mut slot: impl FnMut(ParamSpec<'_>) -> Result<ParamId>,
    ) -> Result<Layout> {
        config.validate()?;
        let d = config.model_dim();
        let dh = config.hidden_dim;
        let mut add = |name: String, kind, shape, init| {
            slot(ParamSpec {
                name: &name,
                kind,
                shape,
                init,
            })
        };
        use ParamKind::{FullPrecision as Fp, Latent};

        let embedding = add(
            "embedding".into(),
            Fp,
            [config.table_rows(), config.embed_dim],
            Init::Embedding,
        )?;
        let mut blocks = Vec::with_capacity(config.blocks);
        for c in 0..config.blocks {
            let p = format!("blocks.{c}");
            let mut heads = Vec::with_capacity(config.heads);
            for s in 0..config.heads {
                let hd = config.head_dim();
                heads.push(HeadIds {
                    w_q: add(
                        format!("{p}.attn.heads.{s}.w_q"),
                        Latent,
                        [d, hd],
                        Init::Latent,
                    )?,
                    w_k: add(
                        format!("{p}.attn.heads.{s}.w_k"),
                        Latent,
                        [d, hd],
                        Init::Latent,
                    )?,
                    w_v: add(
                        format!("{p}.attn.heads.{s}.w_v"),
                        Latent,
                        [d, hd],
                        Init::Latent,
                    )?,
                });
            }
            let w_o = add(format!("{p}.attn.w_o"), Latent, [d, d], Init::Latent)?;
            let norm1 = NormIds {
                gain: add(format!("{p}.norm1.gain"), Fp, [1, d], Init::Ones)?,
                bias: add(format!("{p}.norm1.bias"), Fp, [1, d], Init::Zeros)?,
            };
            let slfn = if config.use_slfn {
                let w_sg = add(format!("{p}.slfn.w_sg"), Latent, [d, dh], Init::Latent)?;
                let u_sg = add(format!("{p}.slfn.u_sg"), Latent, [dh, dh], Init::Latent)?;
                let w_tg = add(format!("{p}.slfn.w_tg"), Latent, [d, dh], Init::Latent)?;
                let u_tg = add(format!("{p}.slfn.u_tg"), Latent, [dh, dh], Init::Latent)?;
                let u_sh = if config.uses_sh_gate() && !config.share_sh_weight {
                    Some(add(
                        format!("{p}.slfn.u_sh"),
                        Latent,
                        [dh, dh],
                        Init::Latent,
                    )?)
                } else {
                    None
                };
                let w_proj = add(format!("{p}.slfn.w_proj"), Latent, [dh, d], Init::Latent)?;
                let norm2 = NormIds {
                    gain: add(format!("{p}.norm2.gain"), Fp, [1, d], Init::Ones)?,
                    bias: add(format!("{p}.norm2.bias"), Fp, [1, d], Init::Zeros)?,
                };
                Some((
                    SlfnIds {
                        w_sg,
                        u_sg,
                        w_tg,
                        u_tg,
                        u_sh,
                        w_proj,
                    },
                    norm2,
                ))
            } else {
                None
            };
            blocks.push(BlockIds {
                heads,
                w_o,
                norm1,
                slfn,
            });
        }
        let eh = config.exit_hidden();
        let m = config.num_classes;
        let mut exits = Vec::with_capacity(config.blocks);
        for c in 0..config.blocks {
            let p = format!("exits.{c}");
            exits.push(ExitIds {
                w1: add(format!("{p}.w1"), Latent, [d, eh], Init::Latent)?,
                b1: add(format!("{p}.b1"), Fp, [1, eh], Init::Zeros)?,
                w2: add(format!("{p}.w2"), Latent, [eh, m], Init::Latent)?,
                b2: add(format!("{p}.b2"), Fp, [1, m], Init::Zeros)?,
            });
        }
        Ok(Layout {
            embedding,
            blocks,
            exits,
        })
    }

    pub fn block_params(&self, c: usize) -> Vec<ParamId> {
        let b = &self.blocks[c];
        let mut ids: Vec<ParamId> = b.heads.iter().flat_map(|h| [h.w_q, h.w_k, h.w_v]).collect();
        ids.extend([b.w_o, b.norm1.gain, b.norm1.bias]);
        if let Some((s, n)) = &b.slfn {
            ids.extend([s.w_sg, s.u_sg, s.w_tg, s.u_tg, s.w_proj, n.gain, n.bias]);
            ids.extend(s.u_sh);
        }
        ids
    }

    pub fn exit_params(&self, c: usize) -> Vec<ParamId> {
        let e = &self.exits[c];
        vec![e.w1, e.b1, e.w2, e.b2]
    }
}

fn init_tensor(shape: [usize; 2], init: Init, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape[0] * shape[1];
    let data: Vec<f64> = match init {
        Init::Latent => (0..n).map(|_| rng.gen_range(-0.5..=0.5)).collect(),
        Init::Embedding => (0..n)
            .map(|i| {
                if i < shape[1] {
                    0.0
                } else {
                    rng.gen_range(-1.0..=1.0)
                }
            })
            .collect(),
        Init::Zeros => vec![0.0; n],
        Init::Ones => vec![1.0; n],
    };
    Tensor::new(shape.to_vec(), data).expect("shape product")
}

/// Trainable model: latent weights plus full-precision embeddings, norms and biases.
#[derive(Clone, Debug, PartialEq)]
pub struct BeexModel {
    pub config: ModelConfig,
    pub layout: Layout,
    pub params: ParamStore,
}

impl BeexModel {
    pub fn new(config: ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut params = ParamStore::default();
        let layout = Layout::declare(&config, |spec| {
            Ok(params.add(
                spec.name,
                spec.kind,
                init_tensor(spec.shape, spec.init, rng),
            ))
        })?;
        Ok(BeexModel {
            config,
            layout,
            params,
        })
    }

    /// Rebinds an existing store (e.g. from a checkpoint) by parameter name.
    pub fn from_store(config: ModelConfig, store: ParamStore) -> Result<Self> {
        let layout = Layout::declare(&config, |spec| {
            let id = store
                .find(spec.name)
                .ok_or_else(|| Error::Format(format!("missing tensor `{}`", spec.name)))?;
            let p = store.get(id);
            if p.value.shape() != spec.shape || p.kind != spec.kind {
                return Err(Error::Format(format!(
                    "tensor `{}` has shape {:?}/{:?}, expected {:?}/{:?}",
                    spec.name,
                    p.value.shape(),
                    p.kind,
                    spec.shape,
                    spec.kind
                )));
            }
            Ok(id)
        })?;
        Ok(BeexModel {
            config,
            layout,
            params: store,
        })
    }

    fn count(&self, ids: &[ParamId]) -> usize {
        ids.iter()
            .map(|&id| self.params.get(id).value.numel())
            .sum()
    }

    pub fn block_param_count(&self, c: usize) -> usize {
        self.count(&self.layout.block_params(c))
    }

    pub fn exit_param_count(&self, c: usize) -> usize {
        self.count(&self.layout.exit_params(c))
    }
}

/// Parameter counts per component, computed from the config alone.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub embedding: usize,
    /// `(latent, full_precision)` for one block.
    pub block: (usize, usize),
    /// `(latent, full_precision)` for one exit head.
    pub exit: (usize, usize),
    pub blocks: usize,
}

impl ParamCounts {
    pub fn of(config: &ModelConfig) -> Result<Self> {
        let mut per: Vec<(String, ParamKind, usize)> = Vec::new();
        Layout::declare(config, |spec| {
            per.push((
                spec.name.to_string(),
                spec.kind,
                spec.shape[0] * spec.shape[1],
            ));
            Ok(ParamId(per.len() - 1))
        })?;
        let tally = |prefix: &str| {
            per.iter().filter(|(n, _, _)| n.starts_with(prefix)).fold(
                (0, 0),
                |(l, f), (_, k, n)| match k {
                    ParamKind::Latent => (l + n, f),
                    ParamKind::FullPrecision => (l, f + n),
                },
            )
        };
        Ok(ParamCounts {
            embedding: tally("embedding").1,
            block: tally("blocks.0."),
            exit: tally("exits.0."),
            blocks: config.blocks,
        })
    }

    pub fn block_total(&self) -> usize {
        self.block.0 + self.block.1
    }

    pub fn exit_total(&self) -> usize {
        self.exit.0 + self.exit.1
    }

    pub fn latent_total(&self) -> usize {
        self.blocks * (self.block.0 + self.exit.0)
    }

    pub fn full_precision_total(&self) -> usize {
        self.embedding + self.blocks * (self.block.1 + self.exit.1)
    }
}
