//! Trainable parameter storage.

use serde::{Deserialize, Serialize};

use crate::compute::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    /// Real-valued shadow weight; the network only ever sees its binarization.
    Latent,
    /// Embeddings, norm gains/biases and layer biases.
    FullPrecision,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor,
    /// Allocated on the first accumulation.
    pub grad: Option<Tensor>,
}

impl Parameter {
    pub fn is_latent(&self) -> bool {
        self.kind == ParamKind::Latent
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    grads_ready: bool,
}

impl ParamStore {
    pub fn add(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor) -> ParamId {
        self.params.push(Parameter {
            name: name.into(),
            kind,
            value,
            grad: None,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn accumulate_grad(&mut self, id: ParamId, g: &Tensor) {
        let p = &mut self.params[id.0];
        match &mut p.grad {
            Some(acc) => acc
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g.clone()),
        }
        self.grads_ready = true;
    }

    pub(crate) fn mark_grads_ready(&mut self) {
        self.grads_ready = true;
    }

    /// True once a backward pass has been folded in since the last reset.
    pub fn grads_ready(&self) -> bool {
        self.grads_ready
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            if let Some(g) = &mut p.grad {
                g.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        self.grads_ready = false;
    }

    /// Parameter count split into `(latent, full_precision)`.
    pub fn counts(&self) -> (usize, usize) {
        self.params.iter().fold((0, 0), |(l, f), p| match p.kind {
            ParamKind::Latent => (l + p.value.numel(), f),
            ParamKind::FullPrecision => (l, f + p.value.numel()),
        })
    }
}
