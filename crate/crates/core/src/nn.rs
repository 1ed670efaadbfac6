//! Small dense-network toolkit with hand-written reverse mode.
//!
//! Layers store their weights as `out x in` matrices and accumulate
//! gradients in place; optimizers walk the layers in a fixed order so that a
//! model's parameter vector has a stable flat layout.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(self, x: &mut Array2<f64>) {
        match self {
            Activation::Tanh => x.mapv_inplace(f64::tanh),
            Activation::Relu => x.mapv_inplace(|v| v.max(0.0)),
        }
    }

    /// Multiplies `grad` by the derivative, expressed through the activation output.
    pub fn backprop(self, out: &Array2<f64>, grad: &mut Array2<f64>) {
        match self {
            Activation::Tanh => Zip::from(grad).and(out).for_each(|g, &a| *g *= 1.0 - a * a),
            Activation::Relu => Zip::from(grad).and(out).for_each(|g, &a| {
                if a <= 0.0 {
                    *g = 0.0
                }
            }),
        }
    }
}

/// Affine layer `y = x W^T + b` with an optional connectivity mask.
/// Equality ignores the gradient buffers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub mask: Option<Array2<f64>>,
    #[serde(skip)]
    pub grad_weight: Array2<f64>,
    #[serde(skip)]
    pub grad_bias: Array1<f64>,
}

impl PartialEq for Linear {
    fn eq(&self, other: &Self) -> bool {
        self.weight == other.weight && self.bias == other.bias && self.mask == other.mask
    }
}

impl Linear {
    /// Uniform `(-1/sqrt(in), 1/sqrt(in))` initialization.
    pub fn new<R: Rng + ?Sized>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (n_in.max(1) as f64).sqrt();
        let weight = Array2::from_shape_fn((n_out, n_in), |_| rng.random_range(-bound..bound));
        let bias = Array1::from_shape_fn(n_out, |_| rng.random_range(-bound..bound));
        Linear {
            grad_weight: Array2::zeros((n_out, n_in)),
            grad_bias: Array1::zeros(n_out),
            weight,
            bias,
            mask: None,
        }
    }

    pub fn masked<R: Rng + ?Sized>(mask: Array2<f64>, rng: &mut R) -> Self {
        let (n_out, n_in) = mask.dim();
        let mut layer = Linear::new(n_in, n_out, rng);
        layer.weight *= &mask;
        layer.mask = Some(mask);
        layer
    }

    pub fn n_in(&self) -> usize {
        self.weight.ncols()
    }

    pub fn n_out(&self) -> usize {
        self.weight.nrows()
    }

    pub fn n_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight.t());
        y += &self.bias;
        y
    }

    /// Accumulates parameter gradients for upstream `gout` and returns `dL/dx`
    /// when `input_grad` is set.
    pub fn backward(&mut self, x: &ArrayView2<f64>, gout: &ArrayView2<f64>, input_grad: bool) -> Option<Array2<f64>> {
        self.ensure_grads();
        let mut gw = gout.t().dot(x);
        if let Some(m) = &self.mask {
            gw *= m;
        }
        self.grad_weight += &gw;
        self.grad_bias += &gout.sum_axis(Axis(0));
        input_grad.then(|| gout.dot(&self.weight))
    }

    pub fn ensure_grads(&mut self) {
        if self.grad_weight.dim() != self.weight.dim() {
            self.grad_weight = Array2::zeros(self.weight.dim());
        }
        if self.grad_bias.len() != self.bias.len() {
            self.grad_bias = Array1::zeros(self.bias.len());
        }
    }

    pub fn zero_grad(&mut self) {
        self.ensure_grads();
        self.grad_weight.fill(0.0);
        self.grad_bias.fill(0.0);
    }

    /// Visits `(parameter, gradient)` pairs, weights first (row major), then biases.
    pub fn visit(&mut self, f: &mut dyn FnMut(&mut f64, f64)) {
        self.ensure_grads();
        Zip::from(&mut self.weight).and(&self.grad_weight).for_each(|p, &g| f(p, g));
        Zip::from(&mut self.bias).and(&self.grad_bias).for_each(|p, &g| f(p, g));
    }
}

/// Anything exposing its layers in a fixed order.
pub trait Layered {
    fn layers_mut(&mut self) -> Vec<&mut Linear>;

    fn zero_grad(&mut self) {
        self.layers_mut().into_iter().for_each(Linear::zero_grad);
    }

    fn n_params(&mut self) -> usize {
        self.layers_mut().iter().map(|l| l.n_params()).sum()
    }

    fn grad_norm(&mut self) -> f64 {
        let mut s = 0.0;
        for l in self.layers_mut() {
            l.visit(&mut |_, g| s += g * g);
        }
        s.sqrt()
    }

    fn scale_grads(&mut self, factor: f64) {
        for l in self.layers_mut() {
            l.ensure_grads();
            l.grad_weight *= factor;
            l.grad_bias *= factor;
        }
    }
}

/// Fully connected network; the activation follows every layer but the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

/// Layer inputs recorded during a forward pass.
pub struct MlpTape {
    inputs: Vec<Array2<f64>>,
}

impl Mlp {
    /// `sizes = [in, hidden..., out]`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], activation: Activation, rng: &mut R) -> Self {
        let layers = sizes.windows(2).map(|w| Linear::new(w[0], w[1], rng)).collect();
        Mlp { layers, activation }
    }

    pub fn n_in(&self) -> usize {
        self.layers[0].n_in()
    }

    pub fn n_out(&self) -> usize {
        self.layers.last().unwrap().n_out()
    }

    pub fn forward(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(&h.view());
            if i < last {
                self.activation.apply(&mut h);
            }
        }
        h
    }

    pub fn forward_tape(&self, x: &ArrayView2<f64>) -> (Array2<f64>, MlpTape) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut next = l.forward(&h.view());
            if i < last {
                self.activation.apply(&mut next);
            }
            inputs.push(h);
            h = next;
        }
        (h, MlpTape { inputs })
    }

    pub fn backward(&mut self, tape: &MlpTape, gout: Array2<f64>, input_grad: bool) -> Option<Array2<f64>> {
        let mut g = gout;
        let n = self.layers.len();
        for i in (0..n).rev() {
            let need = i > 0 || input_grad;
            let gin = self.layers[i].backward(&tape.inputs[i].view(), &g.view(), need);
            match gin {
                Some(mut gi) => {
                    if i > 0 {
                        self.activation.backprop(&tape.inputs[i], &mut gi);
                    }
                    g = gi;
                }
                None => return None,
            }
        }
        Some(g)
    }
}

impl Layered for Mlp {
    fn layers_mut(&mut self) -> Vec<&mut Linear> {
        self.layers.iter_mut().collect()
    }
}

/// Adam with optional global gradient-norm clipping.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: None, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn with_clip(mut self, max_norm: f64) -> Self {
        self.clip_norm = Some(max_norm);
        self
    }

    pub fn step<M: Layered + ?Sized>(&mut self, model: &mut M) {
        if let Some(c) = self.clip_norm {
            let norm = model.grad_norm();
            if norm > c {
                model.scale_grads(c / (norm + 1e-6));
            }
        }
        let total = model.n_params();
        if self.m.len() != total {
            self.m = vec![0.0; total];
            self.v = vec![0.0; total];
            self.step = 0;
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let (m, v) = (&mut self.m, &mut self.v);
        let mut i = 0;
        for layer in model.layers_mut() {
            layer.visit(&mut |p, g| {
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                if mhat != 0.0 {
                    *p -= lr * mhat / (vhat.sqrt() + eps);
                }
                i += 1;
            });
        }
    }
}
