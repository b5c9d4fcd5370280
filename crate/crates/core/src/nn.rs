//! Dense networks with hand-written backpropagation, and AdamW.
//!
//! Parameters live in one flat vector; each layer's weight matrix
//! `(fan_in, fan_out)` and bias are contiguous views into it. Hidden layers
//! apply the activation, the output layer is linear.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative given pre-activation `z`.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - z.tanh().powi(2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    dims: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
}

/// Intermediate values kept by [`Mlp::forward_cached`].
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input to each layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Array2<f64>>,
}

impl Mlp {
    /// `dims = [input, hidden..., output]`.
    pub fn new(dims: &[usize], activation: Activation, rng: &mut Rng) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output widths");
        let n_params = Self::param_count(dims);
        let mut params = Vec::with_capacity(n_params);
        let last = dims.len() - 2;
        for (l, w) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let gain = if l < last && activation == Activation::Relu {
                2.0
            } else {
                1.0
            };
            let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("finite std");
            params.extend((0..fan_in * fan_out).map(|_| normal.sample(rng)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Self {
            dims: dims.to_vec(),
            activation,
            params,
        }
    }

    pub fn from_params(dims: &[usize], activation: Activation, params: Vec<f64>) -> Option<Self> {
        (dims.len() >= 2 && params.len() == Self::param_count(dims)).then(|| Self {
            dims: dims.to_vec(),
            activation,
            params,
        })
    }

    pub fn param_count(dims: &[usize]) -> usize {
        dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn offsets(&self, layer: usize) -> (usize, usize, usize) {
        let mut off = 0;
        for w in self.dims.windows(2).take(layer) {
            off += w[0] * w[1] + w[1];
        }
        let (fan_in, fan_out) = (self.dims[layer], self.dims[layer + 1]);
        (off, off + fan_in * fan_out, off + fan_in * fan_out + fan_out)
    }

    pub fn weight(&self, layer: usize) -> ArrayView2<'_, f64> {
        let (w0, b0, _) = self.offsets(layer);
        ArrayView2::from_shape((self.dims[layer], self.dims[layer + 1]), &self.params[w0..b0])
            .expect("weight view")
    }

    pub fn bias(&self, layer: usize) -> ArrayView1<'_, f64> {
        let (_, b0, end) = self.offsets(layer);
        ArrayView1::from(&self.params[b0..end])
    }

    /// `(name, shape, values)` for every parameter array.
    pub fn named_params(&self, prefix: &str) -> Vec<(String, Vec<usize>, &[f64])> {
        (0..self.n_layers())
            .flat_map(|l| {
                let (w0, b0, end) = self.offsets(l);
                [
                    (
                        format!("{prefix}.layer{l}.weight"),
                        vec![self.dims[l], self.dims[l + 1]],
                        &self.params[w0..b0],
                    ),
                    (
                        format!("{prefix}.layer{l}.bias"),
                        vec![self.dims[l + 1]],
                        &self.params[b0..end],
                    ),
                ]
            })
            .collect()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut h = x.to_owned();
        let last = self.n_layers() - 1;
        for l in 0..self.n_layers() {
            let mut z = h.dot(&self.weight(l));
            z += &self.bias(l);
            if l < last {
                let act = self.activation;
                z.mapv_inplace(|v| act.apply(v));
            }
            h = z;
        }
        h
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> (Array2<f64>, MlpCache) {
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(self.n_layers()),
            pre: Vec::with_capacity(self.n_layers() - 1),
        };
        let mut h = x.to_owned();
        let last = self.n_layers() - 1;
        for l in 0..self.n_layers() {
            let mut z = h.dot(&self.weight(l));
            z += &self.bias(l);
            cache.inputs.push(h);
            if l < last {
                let act = self.activation;
                let a = z.mapv(|v| act.apply(v));
                cache.pre.push(z);
                h = a;
            } else {
                h = z;
            }
        }
        (h, cache)
    }

    /// Gradient of a scalar objective with respect to the flat parameters and
    /// to the input, given its gradient `d_out` with respect to the output.
    pub fn backward(&self, cache: &MlpCache, d_out: ArrayView2<f64>) -> (Vec<f64>, Array2<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        let mut delta = d_out.to_owned();
        for l in (0..self.n_layers()).rev() {
            if l < self.n_layers() - 1 {
                let act = self.activation;
                ndarray::Zip::from(&mut delta)
                    .and(&cache.pre[l])
                    .for_each(|d, &z| *d *= act.derivative(z));
            }
            let (w0, b0, end) = self.offsets(l);
            let gw = cache.inputs[l].t().dot(&delta);
            for (g, v) in grad[w0..b0].iter_mut().zip(gw.iter()) {
                *g = *v;
            }
            let gb = delta.sum_axis(Axis(0));
            for (g, v) in grad[b0..end].iter_mut().zip(gb.iter()) {
                *g = *v;
            }
            delta = delta.dot(&self.weight(l).t());
        }
        (grad, delta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-6,
        }
    }
}

/// Adaptive moment estimation with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamW {
    pub fn new(n_params: usize, lr: f64, config: AdamWConfig) -> Self {
        Self {
            config,
            lr,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let AdamWConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        let lr = self.lr;
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *p *= 1.0 - lr * weight_decay;
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
    }
}
