//! Minimal CPU neural-network stack: conv / deconv / batch-norm / linear
//! layers with explicit backward passes, spectral normalization, adaptive
//! moment optimizers and the losses used by the training loops.
//!
//! Layers cache activations on a stack, so a network can run several
//! forward passes before the matching (LIFO) backward passes; gradients
//! accumulate until `zero_grad`.

pub mod conv;
pub mod init;
pub mod layers;
pub mod loss;
pub mod norm;
pub mod optim;


use crate::scalar::Scalar;
use ndarray::Array4;

pub use conv::{Conv2d, ConvTranspose2d};
pub use layers::{GlobalAvgPool, LeakyRelu, Linear, MaxPool2d, Relu, Tanh};
pub use norm::{BatchNorm2d, SpectralNorm};
pub use optim::{cosine_lr, Adam, AdamW, SgdMomentum};

/// Forward-pass mode.
///
/// `Frozen` is used when a network participates in another network's
/// training step: batch statistics are used but no internal state
/// (batch-norm running averages, spectral-norm power-iteration vectors)
/// is updated, so the network's full state stays bit-identical.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Frozen,
    Eval,
}

/// Mutable view of one trainable parameter tensor and its gradient.
pub struct ParamMut<'a, S> {
    pub name: String,
    pub value: &'a mut [S],
    pub grad: &'a mut [S],
}

/// Read-only view of one state array (trainable or not).
pub struct StateView<'a, S> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [S],
}

/// Mutable view of one state array, for checkpoint restore.
pub struct StateMut<'a, S> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut [S],
}

pub trait Layer<S: Scalar>: Send {
    /// Training-path forward; pushes a cache for the matching `backward`.
    fn forward(&mut self, x: Array4<S>, mode: Mode) -> Array4<S>;

    /// Inference forward: eval semantics, no cache, no state mutation.
    fn infer(&self, x: Array4<S>) -> Array4<S>;

    /// Pop the most recent cache, accumulate parameter gradients, return
    /// the gradient with respect to the layer input.
    fn backward(&mut self, gy: Array4<S>) -> Array4<S>;

    fn params_mut(&mut self) -> Vec<ParamMut<'_, S>> {
        Vec::new()
    }

    fn state(&self) -> Vec<StateView<'_, S>> {
        Vec::new()
    }

    fn state_mut(&mut self) -> Vec<StateMut<'_, S>> {
        Vec::new()
    }

    fn zero_grad(&mut self) {}

    fn clear_caches(&mut self) {}
}

/// A named sequence of layers.
pub struct Net<S: Scalar> {
    layers: Vec<(String, Box<dyn Layer<S>>)>,
}

impl<S: Scalar> Default for Net<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Net<S> {
    pub fn new() -> Self {
        Self { layers: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, layer: impl Layer<S> + 'static) {
        self.layers.push((name.into(), Box::new(layer)));
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layer_names(&self) -> impl Iterator<Item = &str> {
        self.layers.iter().map(|(n, _)| n.as_str())
    }

    pub fn forward(&mut self, mut x: Array4<S>, mode: Mode) -> Array4<S> {
        for (_, layer) in self.layers.iter_mut() {
            x = layer.forward(x, mode);
        }
        x
    }

    pub fn backward(&mut self, mut gy: Array4<S>) -> Array4<S> {
        for (_, layer) in self.layers.iter_mut().rev() {
            gy = layer.backward(gy);
        }
        gy
    }

    pub fn infer(&self, mut x: Array4<S>) -> Array4<S> {
        for (_, layer) in self.layers.iter() {
            x = layer.infer(x);
        }
        x
    }

    /// Inference through the last layer whose name starts with `prefix`.
    /// Returns `None` if no layer name matches.
    pub fn infer_prefix(&self, mut x: Array4<S>, prefix: &str) -> Option<Array4<S>> {
        let last = self
            .layers
            .iter()
            .rposition(|(n, _)| n.starts_with(prefix))?;
        for (_, layer) in self.layers.iter().take(last + 1) {
            x = layer.infer(x);
        }
        Some(x)
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_, S>> {
        let mut out = Vec::new();
        for (name, layer) in self.layers.iter_mut() {
            for mut p in layer.params_mut() {
                p.name = format!("{name}.{}", p.name);
                out.push(p);
            }
        }
        out
    }

    pub fn state(&self) -> Vec<StateView<'_, S>> {
        let mut out = Vec::new();
        for (name, layer) in self.layers.iter() {
            for mut s in layer.state() {
                s.name = format!("{name}.{}", s.name);
                out.push(s);
            }
        }
        out
    }

    pub fn state_mut(&mut self) -> Vec<StateMut<'_, S>> {
        let mut out = Vec::new();
        for (name, layer) in self.layers.iter_mut() {
            for mut s in layer.state_mut() {
                s.name = format!("{name}.{}", s.name);
                out.push(s);
            }
        }
        out
    }

    pub fn zero_grad(&mut self) {
        for (_, layer) in self.layers.iter_mut() {
            layer.zero_grad();
        }
    }

    pub fn clear_caches(&mut self) {
        for (_, layer) in self.layers.iter_mut() {
            layer.clear_caches();
        }
    }

    /// FNV-1a hash over the bit patterns of every state array; detects any
    /// parameter or internal-state mutation.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for s in self.state() {
            for &v in s.data {
                let bits = v.to_f64_().to_bits();
                for byte in bits.to_le_bytes() {
                    h ^= byte as u64;
                    h = h.wrapping_mul(0x1000_0000_01b3);
                }
            }
        }
        h
    }
}
