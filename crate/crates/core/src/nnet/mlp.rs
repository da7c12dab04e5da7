//! Fully connected network with a hand-written backward pass.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn grad(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

/// Layer widths `[input, hidden.., output]`; the activation sits between
/// layers, never after the last one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, activation: Activation, seed: u64) -> Result<Self> {
        if widths.len() < 2 {
            return invalid("an MLP needs at least one layer (two widths)");
        }
        if widths.contains(&0) {
            return invalid(format!("layer widths must be positive: {widths:?}"));
        }
        Ok(Self {
            widths,
            activation,
            seed,
        })
    }

    /// Glorot-uniform weights from the spec's seed, zero biases.
    pub fn init(&self) -> Mlp {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        self.init_with(&mut rng)
    }

    pub fn init_with(&self, rng: &mut ChaCha8Rng) -> Mlp {
        let layers = self
            .widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weights = (0..fan_in * fan_out)
                    .map(|_| rng.gen_range(-limit..=limit))
                    .collect();
                Dense {
                    w: Tensor::new(vec![fan_out, fan_in], weights).expect("shape"),
                    b: Tensor::zeros(&[fan_out]),
                }
            })
            .collect();
        Mlp {
            layers,
            activation: self.activation,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `[out, in]`
    pub w: Tensor,
    /// `[out]`
    pub b: Tensor,
}

impl Dense {
    pub fn fan_in(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn fan_out(&self) -> usize {
        self.w.shape()[0]
    }

    fn forward(&self, x: &Tensor) -> Tensor {
        let (rows, fin, fout) = (x.rows(), self.fan_in(), self.fan_out());
        let mut out = Tensor::zeros(&[rows, fout]);
        let w = self.w.data();
        let b = self.b.data();
        for r in 0..rows {
            let xr = x.row(r);
            let yr = out.row_mut(r);
            for o in 0..fout {
                let wo = &w[o * fin..(o + 1) * fin];
                yr[o] = b[o] + dot(wo, xr);
            }
        }
        out
    }

    /// Accumulates parameter gradients into `grad` and returns the input
    /// gradient.
    fn backward(&self, x: &Tensor, gy: &Tensor, grad: &mut Dense, need_input: bool) -> Option<Tensor> {
        let (rows, fin, fout) = (x.rows(), self.fan_in(), self.fan_out());
        let w = self.w.data();
        let mut gx = need_input.then(|| Tensor::zeros(&[rows, fin]));
        for r in 0..rows {
            let xr = x.row(r);
            let gr = gy.row(r);
            {
                let gw = grad.w.data_mut();
                for o in 0..fout {
                    if gr[o] != 0.0 {
                        axpy(gr[o], xr, &mut gw[o * fin..(o + 1) * fin]);
                    }
                }
            }
            let gb = grad.b.data_mut();
            for o in 0..fout {
                gb[o] += gr[o];
            }
            if let Some(gx) = gx.as_mut() {
                let gxr = gx.row_mut(r);
                for o in 0..fout {
                    if gr[o] != 0.0 {
                        axpy(gr[o], &w[o * fin..(o + 1) * fin], gxr);
                    }
                }
            }
        }
        gx
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub activation: Activation,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input of every layer; `inputs[0]` is the network input and the last
    /// entry is the penultimate feature map.
    pub inputs: Vec<Tensor>,
    /// Pre-activations of every hidden layer.
    pub pre: Vec<Tensor>,
}

impl MlpCache {
    pub fn penultimate(&self) -> &Tensor {
        self.inputs.last().expect("non-empty cache")
    }
}

impl Mlp {
    pub fn in_width(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn out_width(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    /// A zero-valued network of the same shape, used as a gradient buffer.
    pub fn zeros_like(&self) -> Mlp {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    w: Tensor::zeros_like(&l.w),
                    b: Tensor::zeros_like(&l.b),
                })
                .collect(),
            activation: self.activation,
        }
    }

    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, MlpCache)> {
        if input.shape().len() != 2 || input.cols() != self.in_width() {
            return invalid(format!(
                "MLP expects [batch, {}] input, got {:?}",
                self.in_width(),
                input.shape()
            ));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len() - 1);
        let mut x = input.clone();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&x);
            inputs.push(x);
            if l == last {
                x = z;
            } else {
                let mut a = z.clone();
                a.data_mut()
                    .iter_mut()
                    .for_each(|v| *v = self.activation.apply(*v));
                pre.push(z);
                x = a;
            }
        }
        Ok((x, MlpCache { inputs, pre }))
    }

    /// Backward pass. `penultimate_grad`, when given, is an extra gradient on
    /// the penultimate features (the input of the last layer). Returns the
    /// parameter gradients and the input gradient.
    pub fn backward(
        &self,
        cache: &MlpCache,
        grad_out: &Tensor,
        penultimate_grad: Option<&Tensor>,
    ) -> Result<(Mlp, Tensor)> {
        let mut grads = self.zeros_like();
        let gx = self.backward_into(cache, grad_out, penultimate_grad, &mut grads, true)?;
        Ok((grads, gx.expect("input gradient requested")))
    }

    /// As [`Mlp::backward`] but accumulating into an existing buffer.
    pub fn backward_into(
        &self,
        cache: &MlpCache,
        grad_out: &Tensor,
        penultimate_grad: Option<&Tensor>,
        grads: &mut Mlp,
        need_input: bool,
    ) -> Result<Option<Tensor>> {
        let n = self.layers.len();
        if cache.inputs.len() != n || cache.pre.len() != n - 1 {
            return invalid("cache does not belong to this network");
        }
        let rows = cache.inputs[0].rows();
        if grad_out.shape() != [rows, self.out_width()] {
            return invalid(format!(
                "output gradient shape {:?}, expected [{rows}, {}]",
                grad_out.shape(),
                self.out_width()
            ));
        }
        if let Some(pg) = penultimate_grad {
            if pg.shape() != cache.penultimate().shape() {
                return invalid("penultimate gradient shape mismatch");
            }
        }
        let mut g = grad_out.clone();
        for l in (0..n).rev() {
            let want_input = l > 0 || need_input;
            let gin = self.layers[l].backward(&cache.inputs[l], &g, &mut grads.layers[l], want_input);
            if l == 0 {
                return Ok(gin);
            }
            let mut gin = gin.expect("requested");
            if l == n - 1 {
                if let Some(pg) = penultimate_grad {
                    gin.add_assign(pg);
                }
            }
            // through the activation of hidden layer l-1
            let z = cache.pre[l - 1].data();
            let a = cache.inputs[l].data();
            for (i, gv) in gin.data_mut().iter_mut().enumerate() {
                *gv *= self.activation.grad(z[i], a[i]);
            }
            g = gin;
        }
        unreachable!("loop returns at layer 0")
    }

    pub fn add_assign(&mut self, other: &Mlp) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.w.add_assign(&b.w);
            a.b.add_assign(&b.b);
        }
    }

    pub fn named_tensors(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("{prefix}/layer{i}/w"), &l.w));
            out.push((format!("{prefix}/layer{i}/b"), &l.b));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.w, &mut l.b])
            .collect()
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.w, &l.b]).collect()
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}
