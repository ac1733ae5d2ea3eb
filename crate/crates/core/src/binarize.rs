//! Binarization-aware training primitives.
//!
//! Forward passes see `b(W)` and `b(A)`, where `b` is the piecewise quadratic
//! approximation of `sign`; the optimizer updates the real-valued latent `W`.
//! The derivative `b'(r) = 2(1 − |r|)` is applied by the tape at every
//! binarization site, so the gradient reaching a latent already carries its
//! `b'(W)` factor. After training, weights are frozen to `sign(W)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::compute::{PackedMatrix, Tensor};
use crate::error::{Error, Result};
use crate::optim::Optimizer;
use crate::params::{ParamId, ParamKind, ParamStore};

/// Latents are kept inside `[−1 + ε, 1 − ε]` so `b'` never reaches zero.
pub const LATENT_EPS: f64 = 1e-3;

pub fn sign(r: f64) -> f64 {
    if r < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Second-order approximation of `sign`.
pub fn b2(r: f64) -> f64 {
    if r < -1.0 {
        -1.0
    } else if r < 0.0 {
        2.0 * r + r * r
    } else if r < 1.0 {
        2.0 * r - r * r
    } else {
        1.0
    }
}

pub fn b2_grad(r: f64) -> f64 {
    if (-1.0..1.0).contains(&r) {
        2.0 * (1.0 - r.abs())
    } else {
        0.0
    }
}

pub fn clip(r: f64) -> f64 {
    r.clamp(-1.0, 1.0)
}

pub fn clip_grad(r: f64) -> f64 {
    if r > -1.0 && r < 1.0 {
        1.0
    } else {
        0.0
    }
}

pub fn sign_tensor(r: &Tensor) -> Tensor {
    r.map(sign)
}

pub fn binarize(r: &Tensor) -> Tensor {
    r.map(b2)
}

pub fn binarize_grad(r: &Tensor) -> Tensor {
    r.map(b2_grad)
}

pub fn clip_binarize(r: &Tensor) -> Tensor {
    r.map(clip)
}

/// Differentiable stand-in for `sign` used during training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Binarizer {
    #[default]
    #[serde(rename = "b2")]
    SecondOrder,
    #[serde(rename = "clip")]
    Clip,
}

impl Binarizer {
    pub fn apply(self, r: f64) -> f64 {
        match self {
            Binarizer::SecondOrder => b2(r),
            Binarizer::Clip => clip(r),
        }
    }

    pub fn derivative(self, r: f64) -> f64 {
        match self {
            Binarizer::SecondOrder => b2_grad(r),
            Binarizer::Clip => clip_grad(r),
        }
    }

    pub fn apply_tensor(self, r: &Tensor) -> Tensor {
        r.map(|v| self.apply(v))
    }
}

impl FromStr for Binarizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "b2" => Ok(Binarizer::SecondOrder),
            "clip" => Ok(Binarizer::Clip),
            other => Err(Error::Config(format!("unknown binarizer `{other}`"))),
        }
    }
}

impl fmt::Display for Binarizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Binarizer::SecondOrder => "b2",
            Binarizer::Clip => "clip",
        })
    }
}

pub fn clamp_latents(store: &mut ParamStore) {
    let hi = 1.0 - LATENT_EPS;
    for p in store.iter_mut().filter(|p| p.kind == ParamKind::Latent) {
        p.value
            .data_mut()
            .iter_mut()
            .for_each(|w| *w = w.clamp(-hi, hi));
    }
}

/// One optimizer update over every parameter followed by the latent clamp.
pub fn bat_step(store: &mut ParamStore, optimizer: &mut dyn Optimizer) -> Result<()> {
    if !store.grads_ready() {
        return Err(Error::Contract(
            "bat_step called before any backward pass".into(),
        ));
    }
    optimizer.step(store);
    clamp_latents(store);
    Ok(())
}

/// A latent weight fixed to `sign(W)` and bit-packed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrozenParameter {
    pub name: String,
    pub shape: Vec<usize>,
    pub packed: PackedMatrix,
}

impl FrozenParameter {
    pub fn from_latent(name: &str, latent: &Tensor) -> Self {
        FrozenParameter {
            name: name.to_string(),
            shape: latent.shape().to_vec(),
            packed: PackedMatrix::pack_signs(latent),
        }
    }

    pub fn unpack(&self) -> Tensor {
        Tensor::new(self.shape.clone(), self.packed.unpack().into_data())
            .expect("packed shape agrees with header")
    }
}

/// Freezes every latent parameter of the store, in store order.
pub fn freeze(store: &ParamStore) -> Vec<(ParamId, FrozenParameter)> {
    store
        .iter()
        .filter(|(_, p)| p.is_latent())
        .map(|(id, p)| (id, FrozenParameter::from_latent(&p.name, &p.value)))
        .collect()
}
