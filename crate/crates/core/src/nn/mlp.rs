//! Fully-connected networks with a hand-written backward pass.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// tanh-form smooth gelu
    Gelu,
    Identity,
}

/// Layer widths of an MLP.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, output_dim: usize) -> Self {
        MlpSpec { input_dim, hidden_dims, output_dim, activation: Activation::Gelu }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.iter().any(|&d| d == 0) {
            return Err(Error::validation("mlp dims must all be >= 1"));
        }
        Ok(())
    }

    /// Layer (in, out) pairs.
    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::new();
        let mut prev = self.input_dim;
        for &h in &self.hidden_dims {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.output_dim));
        dims
    }
}

impl Default for MlpSpec {
    fn default() -> Self {
        MlpSpec {
            input_dim: 1,
            hidden_dims: vec![512, 512, 512],
            output_dim: 1,
            activation: Activation::Gelu,
        }
    }
}

/// One linear layer; weight is stored (in, out) row-major so `x . w` is a
/// plain gemm.
#[derive(Clone, Debug)]
pub struct Linear<T: Real> {
    pub w: Tensor<T>,
    pub b: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct Mlp<T: Real> {
    pub spec: MlpSpec,
    pub layers: Vec<Linear<T>>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

fn gelu<T: Real>(x: T) -> T {
    let xf = x.to_f64();
    let u = GELU_C * (xf + GELU_A * xf * xf * xf);
    T::from_f64(0.5 * xf * (1.0 + u.tanh()))
}

fn gelu_grad<T: Real>(x: T) -> T {
    let xf = x.to_f64();
    let u = GELU_C * (xf + GELU_A * xf * xf * xf);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * GELU_A * xf * xf);
    T::from_f64(0.5 * (1.0 + t) + 0.5 * xf * (1.0 - t * t) * du)
}

/// Per-layer activations cached by the forward pass for backprop.
pub struct MlpCache<T: Real> {
    /// Input plus post-activation output of every hidden layer.
    inputs: Vec<Tensor<T>>,
    /// Pre-activation values of every hidden layer.
    pre_acts: Vec<Tensor<T>>,
}

/// Gradients of a scalar loss with respect to an MLP's parameters and input.
#[derive(Clone, Debug)]
pub struct MlpGrads<T: Real> {
    pub w: Vec<Tensor<T>>,
    pub b: Vec<Vec<T>>,
    pub input: Tensor<T>,
}

impl<T: Real> MlpGrads<T> {
    pub fn zeros_like(mlp: &Mlp<T>, batch: usize) -> Self {
        MlpGrads {
            w: mlp.layers.iter().map(|l| Tensor::zeros(l.w.rows, l.w.cols)).collect(),
            b: mlp.layers.iter().map(|l| vec![T::ZERO; l.b.len()]).collect(),
            input: Tensor::zeros(batch, mlp.spec.input_dim),
        }
    }

    /// Accumulates another gradient set (same shapes).
    pub fn add_assign(&mut self, other: &MlpGrads<T>) {
        for (a, b) in self.w.iter_mut().zip(&other.w) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x = x.add(*y);
            }
        }
        for (a, b) in self.b.iter_mut().zip(&other.b) {
            for (x, y) in a.iter_mut().zip(b) {
                *x = x.add(*y);
            }
        }
    }
}

impl<T: Real> Mlp<T> {
    /// He-style init scaled for the gelu nonlinearity; optionally zeroes the
    /// final layer (useful for residual-style heads that should start as the
    /// identity of their skip path).
    pub fn init(spec: MlpSpec, rng: &mut ChaCha8Rng, zero_final: bool) -> Result<Self> {
        spec.validate()?;
        let dims = spec.layer_dims();
        let n_layers = dims.len();
        let layers = dims
            .into_iter()
            .enumerate()
            .map(|(i, (fan_in, fan_out))| {
                let scale = (2.0 / fan_in as f64).sqrt();
                let last = i + 1 == n_layers;
                let w_data: Vec<T> = (0..fan_in * fan_out)
                    .map(|_| {
                        if last && zero_final {
                            T::ZERO
                        } else {
                            let z: f64 = rng.sample(StandardNormal);
                            T::from_f64(z * scale)
                        }
                    })
                    .collect();
                Linear {
                    w: Tensor::from_vec(fan_in, fan_out, w_data).unwrap(),
                    b: vec![T::ZERO; fan_out],
                }
            })
            .collect();
        Ok(Mlp { spec, layers })
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Forward pass retaining the activation cache for [`Mlp::backward`].
    pub fn forward_cached(&self, x: &Tensor<T>) -> Result<(Tensor<T>, MlpCache<T>)> {
        if x.cols != self.spec.input_dim {
            return Err(Error::dim(format!(
                "mlp input dim {} != spec {}",
                x.cols, self.spec.input_dim
            )));
        }
        let mut inputs = vec![x.clone()];
        let mut pre_acts = Vec::new();
        let mut cur = x.clone();
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = cur.matmul(&layer.w)?;
            for r in 0..z.rows {
                let row = z.row_mut(r);
                for (v, b) in row.iter_mut().zip(&layer.b) {
                    *v = v.add(*b);
                }
            }
            if i + 1 < n && self.spec.activation == Activation::Gelu {
                pre_acts.push(z.clone());
                for v in z.data.iter_mut() {
                    *v = gelu(*v);
                }
            }
            if i + 1 < n {
                inputs.push(z.clone());
            }
            cur = z;
        }
        Ok((cur, MlpCache { inputs, pre_acts }))
    }

    /// Forward without cache (inference path).
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_cached(x)?.0)
    }

    /// Backpropagates `d_out` (dL/d output) through the cached forward pass,
    /// producing parameter gradients and the input gradient.
    pub fn backward(&self, cache: &MlpCache<T>, d_out: &Tensor<T>) -> Result<MlpGrads<T>> {
        let n = self.layers.len();
        let mut d_w = vec![Tensor::zeros(0, 0); n];
        let mut d_b = vec![Vec::new(); n];
        let mut delta = d_out.clone();
        for i in (0..n).rev() {
            // delta is dL/dz_i where z_i is this layer's (post-activation) output
            let input = &cache.inputs[i];
            d_w[i] = input.t_matmul(&delta)?;
            let mut db = vec![T::ZERO; self.layers[i].b.len()];
            for r in 0..delta.rows {
                for (acc, v) in db.iter_mut().zip(delta.row(r)) {
                    *acc = acc.add(*v);
                }
            }
            d_b[i] = db;
            let mut d_in = delta.matmul_t(&self.layers[i].w)?;
            if i > 0 && self.spec.activation == Activation::Gelu {
                let pre = &cache.pre_acts[i - 1];
                for (v, p) in d_in.data.iter_mut().zip(&pre.data) {
                    *v = v.mul(gelu_grad(*p));
                }
            }
            delta = d_in;
        }
        Ok(MlpGrads { w: d_w, b: d_b, input: delta })
    }

    /// Flat views over parameters in layer order (w then b per layer), used
    /// by the optimizer and checkpointing.
    pub fn params_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.w.data);
            out.extend_from_slice(&l.b);
        }
        out
    }

    pub fn load_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::dim(format!(
                "flat parameter vector has {} entries, model needs {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut at = 0;
        for l in self.layers.iter_mut() {
            let wn = l.w.data.len();
            l.w.data.copy_from_slice(&flat[at..at + wn]);
            at += wn;
            let bn = l.b.len();
            l.b.copy_from_slice(&flat[at..at + bn]);
            at += bn;
        }
        Ok(())
    }

    pub fn grads_flat(grads: &MlpGrads<T>) -> Vec<T> {
        let mut out = Vec::new();
        for (w, b) in grads.w.iter().zip(&grads.b) {
            out.extend_from_slice(&w.data);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn cast<U: Real>(&self) -> Mlp<U> {
        Mlp {
            spec: self.spec.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Linear {
                    w: l.w.cast(),
                    b: l.b.iter().map(|x| U::from_f64(x.to_f64())).collect(),
                })
                .collect(),
        }
    }
}
