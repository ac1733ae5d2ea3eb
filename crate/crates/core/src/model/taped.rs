//! Training-mode forward pass recorded on a [`Graph`].

use std::cell::RefCell;
use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::compute::{Graph, Tensor, Var};
use crate::embedding::{position_encoding, TokenSequence};
use crate::error::Result;
use crate::model::{BeexModel, HeadIds, SlfnIds};
use crate::params::ParamId;

/// Inverted dropout: kept entries are scaled by `1 / (1 − p)`.
pub struct Dropout<'r> {
    pub p: f64,
    pub rng: &'r mut ChaCha8Rng,
}

impl Dropout<'_> {
    pub fn apply<'g>(&mut self, x: Var<'g>) -> Result<Var<'g>> {
        if self.p == 0.0 {
            return Ok(x);
        }
        let v = x.value();
        let keep = 1.0 / (1.0 - self.p);
        let mask: Vec<f64> = (0..v.numel())
            .map(|_| {
                if self.rng.gen::<f64>() < self.p {
                    0.0
                } else {
                    keep
                }
            })
            .collect();
        x.mul_const(Tensor::new(v.shape().to_vec(), mask)?)
    }
}

/// Binds a model's parameters to one graph. Each parameter (and each
/// binarized weight) enters the tape once, however often it is used.
pub struct TapedModel<'g, 'm> {
    g: &'g Graph,
    model: &'m BeexModel,
    raw: RefCell<HashMap<ParamId, Var<'g>>>,
    binarized: RefCell<HashMap<ParamId, Var<'g>>>,
}

impl<'g, 'm> TapedModel<'g, 'm> {
    pub fn new(g: &'g Graph, model: &'m BeexModel) -> Self {
        TapedModel {
            g,
            model,
            raw: RefCell::default(),
            binarized: RefCell::default(),
        }
    }

    pub fn graph(&self) -> &'g Graph {
        self.g
    }

    pub fn model(&self) -> &'m BeexModel {
        self.model
    }

    pub fn blocks(&self) -> usize {
        self.model.config.blocks
    }

    pub fn param(&self, id: ParamId) -> Var<'g> {
        *self
            .raw
            .borrow_mut()
            .entry(id)
            .or_insert_with(|| self.g.param(&self.model.params, id))
    }

    /// `b(W)` for a latent weight.
    pub fn weight(&self, id: ParamId) -> Var<'g> {
        if let Some(v) = self.binarized.borrow().get(&id) {
            return *v;
        }
        let v = self.param(id).binarize(self.model.config.binarizer);
        self.binarized.borrow_mut().insert(id, v);
        v
    }

    /// `xb · b(W)`, scaled when the config asks for fan-in scaling.
    pub fn linear(&self, xb: Var<'g>, id: ParamId) -> Result<Var<'g>> {
        let y = xb.matmul(self.weight(id))?;
        let s = self.model.config.product_scale(xb.value().cols());
        Ok(if s == 1.0 { y } else { y.scale(s) })
    }

    fn act(&self, x: Var<'g>) -> Var<'g> {
        x.binarize(self.model.config.binarizer)
    }

    /// `S = S^e ‖ S^p` for one sequence.
    pub fn embed(&self, seq: &TokenSequence) -> Result<Var<'g>> {
        let table = self.param(self.model.layout.embedding);
        let tokens = self.g.gather(table, &seq.ids)?;
        let pos = self.g.constant(position_encoding(
            seq.ids.len(),
            self.model.config.embed_dim,
        )?);
        self.g.concat_cols(&[tokens, pos])
    }

    /// One head over an already binarized input `xb`; pad columns are masked.
    pub fn self_attention_head(
        &self,
        xb: Var<'g>,
        head: &HeadIds,
        pad_mask: &[bool],
        dropout: Option<&mut Dropout<'_>>,
    ) -> Result<Var<'g>> {
        let q = self.linear(xb, head.w_q)?;
        let k = self.linear(xb, head.w_k)?;
        let v = self.linear(xb, head.w_v)?;
        let scale = 1.0 / (self.model.config.model_dim() as f64).sqrt();
        let mut probs = q
            .matmul(k.transpose())?
            .scale(scale)
            .softmax_rows(Some(pad_mask));
        if let Some(d) = dropout {
            probs = d.apply(probs)?;
        }
        probs.matmul(v)
    }

    pub fn multi_head_attention(
        &self,
        c: usize,
        x: Var<'g>,
        pad_mask: &[bool],
        mut dropout: Option<&mut Dropout<'_>>,
    ) -> Result<Var<'g>> {
        let block = &self.model.layout.blocks[c];
        let xb = self.act(x);
        let mut heads = Vec::with_capacity(block.heads.len());
        for head in &block.heads {
            heads.push(self.self_attention_head(xb, head, pad_mask, dropout.as_deref_mut())?);
        }
        let cat = self.g.concat_cols(&heads)?;
        self.linear(self.act(cat), block.w_o)
    }

    /// One recurrence step. `xg` and `xt` are the input contributions
    /// `b(x_i)·b(W_sg)` and `b(x_i)·b(W_tg)` for this position.
    pub fn slfn_step(
        &self,
        xg: Var<'g>,
        xt: Var<'g>,
        h_prev: Var<'g>,
        ids: &SlfnIds,
    ) -> Result<Var<'g>> {
        let cfg = &self.model.config;
        let hb = self.act(h_prev);
        let sg = xg.add(self.linear(hb, ids.u_sg)?)?.sigmoid();
        let tg = xt.add(self.linear(hb, ids.u_tg)?)?.tanh();
        let sg_b = self.act(sg);
        let learn = sg_b.mul(self.act(tg))?;
        if cfg.uses_sh_gate() {
            let u_sh = ids.u_sh.unwrap_or(ids.u_sg);
            let sh = self.linear(hb, u_sh)?.sigmoid();
            self.act(sh).mul(hb)?.add(learn)
        } else {
            sg_b.add(learn)
        }
    }

    /// Runs the recurrence over every row of `u` from `h_0 = 0` and maps the
    /// stacked hidden states back to width `D`.
    pub fn slfn(
        &self,
        u: Var<'g>,
        ids: &SlfnIds,
        dropout: Option<&mut Dropout<'_>>,
    ) -> Result<Var<'g>> {
        let ub = self.act(u);
        let xg_all = self.linear(ub, ids.w_sg)?;
        let xt_all = self.linear(ub, ids.w_tg)?;
        let mut h = self
            .g
            .constant(Tensor::zeros(&[1, self.model.config.hidden_dim]));
        let rows = u.value().rows();
        let mut states = Vec::with_capacity(rows);
        for i in 0..rows {
            h = self.slfn_step(xg_all.row(i), xt_all.row(i), h, ids)?;
            states.push(h);
        }
        let hs = self.g.stack_rows(&states)?;
        let mut out = self.linear(self.act(hs), ids.w_proj)?;
        if let Some(d) = dropout {
            out = d.apply(out)?;
        }
        Ok(out)
    }

    /// `u = LN(h + MHA(h))`, then `LN(u + SLFN(u))` when the SLFN is enabled.
    pub fn block(
        &self,
        c: usize,
        h_prev: Var<'g>,
        pad_mask: &[bool],
        mut dropout: Option<&mut Dropout<'_>>,
    ) -> Result<Var<'g>> {
        let ids = &self.model.layout.blocks[c];
        let att = self.multi_head_attention(c, h_prev, pad_mask, dropout.as_deref_mut())?;
        let u = h_prev
            .add(att)?
            .layer_norm(self.param(ids.norm1.gain), self.param(ids.norm1.bias))?;
        match &ids.slfn {
            Some((slfn, norm2)) => {
                let s = self.slfn(u, slfn, dropout)?;
                u.add(s)?
                    .layer_norm(self.param(norm2.gain), self.param(norm2.bias))
            }
            None => Ok(u),
        }
    }

    /// Every intermediate hidden `h_1 … h_C`.
    pub fn backbone(
        &self,
        x: Var<'g>,
        pad_mask: &[bool],
        mut dropout: Option<&mut Dropout<'_>>,
    ) -> Result<Vec<Var<'g>>> {
        let mut h = x;
        let mut out = Vec::with_capacity(self.model.config.blocks);
        for c in 0..self.model.config.blocks {
            h = self.block(c, h, pad_mask, dropout.as_deref_mut())?;
            out.push(h);
        }
        Ok(out)
    }

    /// Mean-pool the non-pad rows, then two binarized layers with tanh between.
    pub fn exit_head(&self, c: usize, h: Var<'g>, pad_mask: &[bool]) -> Result<Var<'g>> {
        let ids = &self.model.layout.exits[c];
        let pooled = h.mean_rows(Some(pad_mask))?;
        let z = self
            .linear(self.act(pooled), ids.w1)?
            .add_row(self.param(ids.b1))?
            .tanh();
        self.linear(self.act(z), ids.w2)?
            .add_row(self.param(ids.b2))
    }

    /// Logits at every exit, with all blocks executed.
    pub fn exit_logits(
        &self,
        seq: &TokenSequence,
        dropout: Option<&mut Dropout<'_>>,
    ) -> Result<Vec<Var<'g>>> {
        let mask = seq.pad_mask();
        let x = self.embed(seq)?;
        let hs = self.backbone(x, &mask, dropout)?;
        hs.iter()
            .enumerate()
            .map(|(c, &h)| self.exit_head(c, h, &mask))
            .collect()
    }
}
