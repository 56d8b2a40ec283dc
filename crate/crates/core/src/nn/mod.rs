//! Hand-written layers with explicit backward passes.
//!
//! Every layer owns its parameters together with their gradient buffers.
//! `forward` borrows the layer immutably and returns a cache, `backward`
//! consumes that cache, accumulates into the gradient buffers and returns
//! the gradient with respect to the layer input.

mod attention;
mod conv;
mod linear;
mod norm;
mod optim;

pub use attention::{Attention, AttentionCache};
pub use conv::{Conv3d, Conv3dCache, ConvStack, ConvStackCache, ConvStackSpec};
pub use linear::{Linear, LinearCache, Lora};
pub use norm::{LayerNorm, LayerNormCache};
pub use optim::{Adam, AdamConfig};

use sha2::{Digest, Sha256};

use crate::rng::Rng;

/// A learnable tensor and its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Param {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Param {
            shape: shape.to_vec(),
            value: vec![0.0; n],
            grad: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], v: f64) -> Self {
        let mut p = Param::zeros(shape);
        p.value.fill(v);
        p
    }

    /// Normal initialization with the given standard deviation.
    pub fn normal(shape: &[usize], std: f64, rng: &mut Rng) -> Self {
        let mut p = Param::zeros(shape);
        crate::rng::fill_normal(rng, &mut p.value);
        for v in &mut p.value {
            *v *= std;
        }
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Anything that owns named parameters.
pub trait Module {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param));

    fn zero_grad(&mut self) {
        self.visit_mut("", &mut |_, p| p.zero_grad());
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, p| n += p.len());
        n
    }

    /// Names of all parameters, in visiting order.
    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit("", &mut |name, _| names.push(name.to_string()));
        names
    }

    /// SHA-256 over the names and exact values of the parameters selected
    /// by `select`.
    fn param_hash(&self, select: &dyn Fn(&str) -> bool) -> String {
        let mut hasher = Sha256::new();
        self.visit("", &mut |name, p| {
            if select(name) {
                hasher.update(name.as_bytes());
                for v in &p.value {
                    hasher.update(v.to_le_bytes());
                }
            }
        });
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Pointwise activation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    Silu,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let inner = GELU_C * (x + 0.044715 * x * x * x);
                0.5 * x * (1.0 + inner.tanh())
            }
            Activation::Silu => x / (1.0 + (-x).exp()),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let inner = GELU_C * (x + 0.044715 * x * x * x);
                let th = inner.tanh();
                let dinner = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
                0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * dinner
            }
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            }
        }
    }

    pub fn forward(self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|&v| self.apply(v)).collect()
    }

    /// `dy ⊙ f'(x)`.
    pub fn backward(self, x: &[f64], dy: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(dy)
            .map(|(&v, &g)| g * self.derivative(v))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activation_derivatives_match_finite_differences() {
        for act in [Activation::Gelu, Activation::Silu] {
            for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
                let h = 1e-6;
                let fd = (act.apply(x + h) - act.apply(x - h)) / (2.0 * h);
                assert!((fd - act.derivative(x)).abs() < 1e-8, "{act:?} at {x}");
            }
        }
    }
}
