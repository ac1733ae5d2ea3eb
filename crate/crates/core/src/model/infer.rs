//! Gradient-free forward pass, generic over where the binary weights come from.

use crate::compute::Tensor;
use crate::embedding::{embed, EmbeddedSequence, TokenSequence};
use crate::error::Result;
use crate::model::{BeexModel, HeadIds, Layout, ModelConfig, SlfnIds};
use crate::params::ParamId;

/// Supplies the weights an [`Encoder`] runs on.
pub trait WeightSource: Sync {
    fn config(&self) -> &ModelConfig;

    fn layout(&self) -> &Layout;

    /// `xb · Ŵ`, where `Ŵ` is the binary form of the latent weight `id`.
    fn bilinear(&self, xb: &Tensor, id: ParamId) -> Result<Tensor>;

    /// A full-precision parameter: embedding table, norm gain/bias, exit bias.
    fn full(&self, id: ParamId) -> &Tensor;

    /// Binarization applied to activations before every binary product.
    fn activate(&self, x: &Tensor) -> Tensor {
        self.config().binarizer.apply_tensor(x)
    }
}

/// `b(W)` of a trainable model, computed once.
pub struct LatentWeights<'m> {
    model: &'m BeexModel,
    binarized: Vec<Option<Tensor>>,
}

impl<'m> LatentWeights<'m> {
    pub fn new(model: &'m BeexModel) -> Self {
        let b = model.config.binarizer;
        let binarized = model
            .params
            .iter()
            .map(|(_, p)| p.is_latent().then(|| b.apply_tensor(&p.value)))
            .collect();
        LatentWeights { model, binarized }
    }
}

impl WeightSource for LatentWeights<'_> {
    fn config(&self) -> &ModelConfig {
        &self.model.config
    }

    fn layout(&self) -> &Layout {
        &self.model.layout
    }

    fn bilinear(&self, xb: &Tensor, id: ParamId) -> Result<Tensor> {
        let w = self.binarized[id.index()]
            .as_ref()
            .unwrap_or(&self.model.params.get(id).value);
        xb.matmul(w)
    }

    fn full(&self, id: ParamId) -> &Tensor {
        &self.model.params.get(id).value
    }
}

/// The encoder forward on plain tensors.
pub struct Encoder<'w, W: WeightSource + ?Sized> {
    w: &'w W,
}

impl<'w, W: WeightSource + ?Sized> Encoder<'w, W> {
    pub fn new(w: &'w W) -> Self {
        Encoder { w }
    }

    pub fn weights(&self) -> &'w W {
        self.w
    }

    /// `xb · Ŵ`, scaled when the config asks for fan-in scaling.
    pub fn linear(&self, xb: &Tensor, id: ParamId) -> Result<Tensor> {
        let y = self.w.bilinear(xb, id)?;
        let s = self.w.config().product_scale(xb.cols());
        Ok(if s == 1.0 { y } else { y.scale(s) })
    }

    pub fn embed(&self, seq: &TokenSequence) -> Result<EmbeddedSequence> {
        embed(seq, self.w.full(self.w.layout().embedding))
    }

    pub fn self_attention_head(
        &self,
        xb: &Tensor,
        head: &HeadIds,
        pad_mask: &[bool],
    ) -> Result<Tensor> {
        let q = self.linear(xb, head.w_q)?;
        let k = self.linear(xb, head.w_k)?;
        let v = self.linear(xb, head.w_v)?;
        let scale = 1.0 / (self.w.config().model_dim() as f64).sqrt();
        q.matmul(&k.transpose())?
            .scale(scale)
            .softmax_rows(Some(pad_mask))
            .matmul(&v)
    }

    pub fn multi_head_attention(&self, c: usize, x: &Tensor, pad_mask: &[bool]) -> Result<Tensor> {
        let block = &self.w.layout().blocks[c];
        let xb = self.w.activate(x);
        let heads = block
            .heads
            .iter()
            .map(|h| self.self_attention_head(&xb, h, pad_mask))
            .collect::<Result<Vec<_>>>()?;
        let cat = Tensor::concat_cols(&heads.iter().collect::<Vec<_>>())?;
        self.linear(&self.w.activate(&cat), block.w_o)
    }

    /// One recurrence step; `xg`, `xt` are this position's input contributions.
    pub fn slfn_step(
        &self,
        xg: &Tensor,
        xt: &Tensor,
        h_prev: &Tensor,
        ids: &SlfnIds,
    ) -> Result<Tensor> {
        let hb = self.w.activate(h_prev);
        let sg = xg.add(&self.linear(&hb, ids.u_sg)?)?.sigmoid();
        let tg = xt.add(&self.linear(&hb, ids.u_tg)?)?.tanh();
        let sg_b = self.w.activate(&sg);
        let learn = sg_b.mul(&self.w.activate(&tg))?;
        if self.w.config().uses_sh_gate() {
            let sh = self.linear(&hb, ids.u_sh.unwrap_or(ids.u_sg))?.sigmoid();
            self.w.activate(&sh).mul(&hb)?.add(&learn)
        } else {
            sg_b.add(&learn)
        }
    }

    pub fn slfn(&self, u: &Tensor, ids: &SlfnIds) -> Result<Tensor> {
        let ub = self.w.activate(u);
        let xg = self.linear(&ub, ids.w_sg)?;
        let xt = self.linear(&ub, ids.w_tg)?;
        let mut h = Tensor::zeros(&[1, self.w.config().hidden_dim]);
        let mut states = Vec::with_capacity(u.rows());
        for i in 0..u.rows() {
            h = self.slfn_step(
                &Tensor::row_vector(xg.row(i)),
                &Tensor::row_vector(xt.row(i)),
                &h,
                ids,
            )?;
            states.push(h.clone());
        }
        let hs = Tensor::stack_rows(&states.iter().collect::<Vec<_>>())?;
        self.linear(&self.w.activate(&hs), ids.w_proj)
    }

    pub fn block(&self, c: usize, x: &Tensor, pad_mask: &[bool]) -> Result<Tensor> {
        let ids = &self.w.layout().blocks[c];
        let att = self.multi_head_attention(c, x, pad_mask)?;
        let u = x
            .add(&att)?
            .layer_norm(self.w.full(ids.norm1.gain), self.w.full(ids.norm1.bias))?;
        match &ids.slfn {
            Some((slfn, norm2)) => u
                .add(&self.slfn(&u, slfn)?)?
                .layer_norm(self.w.full(norm2.gain), self.w.full(norm2.bias)),
            None => Ok(u),
        }
    }

    /// `1 × m` logits of exit head `c`.
    pub fn exit_head(&self, c: usize, h: &Tensor, pad_mask: &[bool]) -> Result<Tensor> {
        let ids = &self.w.layout().exits[c];
        let pooled = h.mean_rows(Some(pad_mask))?;
        let z = self
            .linear(&self.w.activate(&pooled), ids.w1)?
            .add_row(self.w.full(ids.b1))?
            .tanh();
        self.linear(&self.w.activate(&z), ids.w2)?
            .add_row(self.w.full(ids.b2))
    }

    /// Hidden states after every block.
    pub fn backbone(&self, x: &EmbeddedSequence) -> Result<Vec<Tensor>> {
        let mut h = x.values.clone();
        let mut out = Vec::with_capacity(self.w.config().blocks);
        for c in 0..self.w.config().blocks {
            h = self.block(c, &h, &x.pad_mask)?;
            out.push(h.clone());
        }
        Ok(out)
    }

    /// Logits at every exit, all blocks executed.
    pub fn exit_logits(&self, seq: &TokenSequence) -> Result<Vec<Tensor>> {
        let x = self.embed(seq)?;
        self.backbone(&x)?
            .iter()
            .enumerate()
            .map(|(c, h)| self.exit_head(c, h, &x.pad_mask))
            .collect()
    }
}
