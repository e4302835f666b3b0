//! Minimal dense-layer substrate with hand-written backward passes.
//!
//! Shapes follow the row-batch convention: inputs are `(rows, features)`,
//! weights `(in, out)`. Gradient containers mirror the parameter structs;
//! backward methods accumulate into them so batches can share one buffer.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Silu,
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Silu => x / (1.0 + (-x).exp()),
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative as a function of the pre-activation.
    pub fn grad(&self, x: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    /// Fan-in-scaled Gaussian init, zero bias.
    pub fn init(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Linear {
        let scale = 1.0 / (fan_in as f64).sqrt();
        Linear {
            w: Array2::from_shape_fn((fan_in, fan_out), |_| {
                rng.sample::<f64, _>(StandardNormal) * scale
            }),
            b: Array1::zeros(fan_out),
        }
    }

    pub fn zeros_like(&self) -> Linear {
        Linear {
            w: Array2::zeros(self.w.raw_dim()),
            b: Array1::zeros(self.b.raw_dim()),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }

    /// Accumulate parameter gradients and return the input gradient.
    pub fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>, grads: &mut Linear) -> Array2<f64> {
        grads.w += &x.t().dot(dy);
        grads.b += &dy.sum_axis(ndarray::Axis(0));
        dy.dot(&self.w.t())
    }
}

/// Two-layer perceptron: linear, activation, linear.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub l1: Linear,
    pub l2: Linear,
    pub act: Activation,
}

#[derive(Debug)]
pub struct MlpCache {
    pub x: Array2<f64>,
    pub z1: Array2<f64>,
    pub a1: Array2<f64>,
}

impl Mlp {
    pub fn init(rng: &mut impl Rng, d_in: usize, d_hidden: usize, d_out: usize, act: Activation) -> Mlp {
        Mlp {
            l1: Linear::init(rng, d_in, d_hidden),
            l2: Linear::init(rng, d_hidden, d_out),
            act,
        }
    }

    pub fn zeros_like(&self) -> Mlp {
        Mlp {
            l1: self.l1.zeros_like(),
            l2: self.l2.zeros_like(),
            act: self.act,
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let z1 = self.l1.forward(x);
        let a1 = z1.mapv(|v| self.act.apply(v));
        self.l2.forward(&a1)
    }

    pub fn forward_cached(&self, x: Array2<f64>) -> (Array2<f64>, MlpCache) {
        let z1 = self.l1.forward(&x);
        let a1 = z1.mapv(|v| self.act.apply(v));
        let y = self.l2.forward(&a1);
        (y, MlpCache { x, z1, a1 })
    }

    pub fn backward(&self, cache: &MlpCache, dy: &Array2<f64>, grads: &mut Mlp) -> Array2<f64> {
        let da1 = self.l2.backward(&cache.a1, dy, &mut grads.l2);
        let dz1 = &da1 * &cache.z1.mapv(|v| self.act.grad(v));
        self.l1.backward(&cache.x, &dz1, &mut grads.l1)
    }
}
