//! Frozen inference model: every latent weight fixed to `sign(W)` and
//! bit-packed; embeddings, norms and biases stay full precision.

use std::collections::HashMap;
use std::sync::OnceLock;

use crate::binarize::sign_tensor;
use crate::compute::{packed_matmul_t, signed_matmul_t, PackedMatrix, Tensor};
use crate::error::{Error, Result};
use crate::model::{BeexModel, Layout, ModelConfig, WeightSource};
use crate::params::{ParamId, ParamKind};

#[derive(Clone, Debug, PartialEq)]
pub enum FrozenTensor {
    /// `sign(W)` stored transposed (`out × in`), one bit per weight.
    Binary(PackedMatrix),
    Full(Tensor),
}

impl FrozenTensor {
    pub fn kind(&self) -> ParamKind {
        match self {
            FrozenTensor::Binary(_) => ParamKind::Latent,
            FrozenTensor::Full(_) => ParamKind::FullPrecision,
        }
    }

    /// Logical `[in, out]` shape of the weight.
    pub fn shape(&self) -> [usize; 2] {
        match self {
            FrozenTensor::Binary(p) => [p.cols(), p.rows()],
            FrozenTensor::Full(t) => [t.rows(), t.cols()],
        }
    }
}

/// Which arithmetic the binary products use.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kernel {
    /// Bit-packed weights: signed accumulation, or XNOR-popcount when the
    /// activations are `±1` as well.
    Packed,
    /// Unpacked `±1` weights through the ordinary float matmul.
    Dense,
}

/// How activations are binarized at inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    /// The same `b(·)` used in training, so frozen outputs track the latent model.
    Trained,
    /// `sign(·)`: every binary product is `±1 × ±1`.
    Sign,
}

#[derive(Debug)]
pub struct FrozenModel {
    pub config: ModelConfig,
    pub layout: Layout,
    names: Vec<String>,
    tensors: Vec<FrozenTensor>,
    dense: Vec<OnceLock<Tensor>>,
}

impl PartialEq for FrozenModel {
    fn eq(&self, o: &Self) -> bool {
        self.config == o.config && self.names == o.names && self.tensors == o.tensors
    }
}

impl FrozenModel {
    pub fn from_model(model: &BeexModel) -> Self {
        let entries = model
            .params
            .iter()
            .map(|(_, p)| {
                let t = if p.is_latent() {
                    FrozenTensor::Binary(PackedMatrix::pack_signs(&p.value.transpose()))
                } else {
                    FrozenTensor::Full(p.value.clone())
                };
                (p.name.clone(), t)
            })
            .collect();
        FrozenModel::from_parts(model.config.clone(), entries).expect("layout of a valid model")
    }

    /// Binds named tensors to the layout of `config`; used by the loader.
    pub fn from_parts(config: ModelConfig, entries: Vec<(String, FrozenTensor)>) -> Result<Self> {
        let index: HashMap<&str, usize> = entries
            .iter()
            .enumerate()
            .map(|(i, (n, _))| (n.as_str(), i))
            .collect();
        let layout = Layout::declare(&config, |spec| {
            let i = *index
                .get(spec.name)
                .ok_or_else(|| Error::Format(format!("missing tensor `{}`", spec.name)))?;
            let t = &entries[i].1;
            if t.shape() != spec.shape || t.kind() != spec.kind {
                return Err(Error::Format(format!(
                    "tensor `{}` is {:?}/{:?}, expected {:?}/{:?}",
                    spec.name,
                    t.shape(),
                    t.kind(),
                    spec.shape,
                    spec.kind
                )));
            }
            Ok(ParamId(i))
        })?;
        let (names, tensors): (Vec<_>, Vec<_>) = entries.into_iter().unzip();
        let dense = tensors.iter().map(|_| OnceLock::new()).collect();
        Ok(FrozenModel {
            config,
            layout,
            names,
            tensors,
            dense,
        })
    }

    pub fn tensors(&self) -> impl Iterator<Item = (&str, &FrozenTensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn weights(&self, kernel: Kernel, activation: Activation) -> FrozenWeights<'_> {
        FrozenWeights {
            model: self,
            kernel,
            activation,
        }
    }

    fn dense_weight(&self, id: ParamId) -> &Tensor {
        self.dense[id.index()].get_or_init(|| match &self.tensors[id.index()] {
            FrozenTensor::Binary(p) => p.unpack().transpose(),
            FrozenTensor::Full(t) => t.clone(),
        })
    }
}

/// A [`FrozenModel`] viewed through one kernel/activation choice.
pub struct FrozenWeights<'m> {
    model: &'m FrozenModel,
    kernel: Kernel,
    activation: Activation,
}

impl WeightSource for FrozenWeights<'_> {
    fn config(&self) -> &ModelConfig {
        &self.model.config
    }

    fn layout(&self) -> &Layout {
        &self.model.layout
    }

    fn bilinear(&self, xb: &Tensor, id: ParamId) -> Result<Tensor> {
        match (
            &self.model.tensors[id.index()],
            self.kernel,
            self.activation,
        ) {
            (FrozenTensor::Binary(wt), Kernel::Packed, Activation::Sign) => {
                packed_matmul_t(&PackedMatrix::pack(xb)?, wt)
            }
            (FrozenTensor::Binary(wt), Kernel::Packed, Activation::Trained) => {
                signed_matmul_t(xb, wt)
            }
            (FrozenTensor::Binary(_), Kernel::Dense, _) => xb.matmul(self.model.dense_weight(id)),
            (FrozenTensor::Full(w), _, _) => xb.matmul(w),
        }
    }

    fn full(&self, id: ParamId) -> &Tensor {
        match &self.model.tensors[id.index()] {
            FrozenTensor::Full(t) => t,
            FrozenTensor::Binary(_) => self.model.dense_weight(id),
        }
    }

    fn activate(&self, x: &Tensor) -> Tensor {
        match self.activation {
            Activation::Trained => self.model.config.binarizer.apply_tensor(x),
            Activation::Sign => sign_tensor(x),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::TokenSequence;
    use crate::model::{Encoder, LatentWeights};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(seed: u64) -> BeexModel {
        let cfg = ModelConfig {
            vocab_size: 20,
            max_len: 8,
            embed_dim: 40,
            heads: 4,
            hidden_dim: 70,
            blocks: 2,
            dropout: 0.0,
            ..ModelConfig::default()
        };
        BeexModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn seq() -> TokenSequence {
        TokenSequence {
            ids: vec![4, 9, 21, 1, 3, 0, 0, 0],
            len: 5,
        }
    }

    #[test]
    fn packed_and_dense_kernels_agree() {
        let frozen = FrozenModel::from_model(&model(1));
        for act in [Activation::Trained, Activation::Sign] {
            let p = frozen.weights(Kernel::Packed, act);
            let d = frozen.weights(Kernel::Dense, act);
            let lp = Encoder::new(&p).exit_logits(&seq()).unwrap();
            let ld = Encoder::new(&d).exit_logits(&seq()).unwrap();
            for (a, b) in lp.iter().zip(&ld) {
                assert!(a.max_abs_diff(b) <= 1e-9);
                assert_eq!(a.argmax(), b.argmax());
            }
        }
    }

    #[test]
    fn saturated_latents_freeze_to_the_same_model() {
        // with every latent at ±1, b(W) = sign(W): the frozen model is the trained one
        let mut m = model(2);
        for p in m.params.iter_mut().filter(|p| p.is_latent()) {
            p.value = sign_tensor(&p.value);
        }
        let latent = LatentWeights::new(&m);
        let frozen = FrozenModel::from_model(&m);
        let fw = frozen.weights(Kernel::Packed, Activation::Trained);
        let a = Encoder::new(&latent).exit_logits(&seq()).unwrap();
        let b = Encoder::new(&fw).exit_logits(&seq()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!(x.max_abs_diff(y) <= 1e-9);
        }
    }

    #[test]
    fn frozen_weights_are_signs() {
        let m = model(3);
        let frozen = FrozenModel::from_model(&m);
        let id = m.layout.blocks[0].w_o;
        let fw = frozen.weights(Kernel::Dense, Activation::Trained);
        let eye = Tensor::new(
            vec![80, 80],
            (0..6400)
                .map(|i| if i / 80 == i % 80 { 1.0 } else { 0.0 })
                .collect(),
        )
        .unwrap();
        assert_eq!(
            fw.bilinear(&eye, id).unwrap(),
            sign_tensor(&m.params.get(id).value)
        );
    }
}
