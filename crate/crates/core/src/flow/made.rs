//! Masked autoregressive conditioner with a context input.
//!
//! Input dimension `i` has degree `i + 1`, hidden units cycle through
//! degrees `0..D`, and the spline parameters of dimension `d` read only hidden
//! units of degree `<= d`. Degree-0 units see the context alone, so the first
//! dimension is still conditioned on the observation.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{Activation, Layered, Linear};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Made {
    pub dim: usize,
    pub raw_per_dim: usize,
    pub input: Linear,
    pub context: Linear,
    pub hidden: Linear,
    pub output: Linear,
}

/// Activations kept for the backward pass.
pub struct MadeTape {
    pub h1: Array2<f64>,
    pub h2: Array2<f64>,
}

pub fn hidden_degrees(dim: usize, hidden: usize) -> Vec<usize> {
    (0..hidden).map(|j| j % dim.max(1)).collect()
}

impl Made {
    /// Builds the conditioner; the output layer starts at zero weights with
    /// `output_bias` so every spline begins as the same map.
    pub fn new<R: Rng + ?Sized>(
        dim: usize,
        context_dim: usize,
        hidden: usize,
        raw_per_dim: usize,
        output_bias: &[f64],
        rng: &mut R,
    ) -> Self {
        let deg = hidden_degrees(dim, hidden);
        let m1 = Array2::from_shape_fn((hidden, dim), |(j, i)| if i < deg[j] { 1.0 } else { 0.0 });
        let m2 = Array2::from_shape_fn((hidden, hidden), |(j2, j1)| if deg[j1] <= deg[j2] { 1.0 } else { 0.0 });
        let m3 = Array2::from_shape_fn((dim * raw_per_dim, hidden), |(o, j)| {
            if deg[j] <= o / raw_per_dim {
                1.0
            } else {
                0.0
            }
        });
        let input = Linear::masked(m1, rng);
        let context = Linear::new(context_dim, hidden, rng);
        let hidden_layer = Linear::masked(m2, rng);
        let mut output = Linear::masked(m3, rng);
        output.weight.fill(0.0);
        for d in 0..dim {
            output.bias.slice_mut(s![d * raw_per_dim..(d + 1) * raw_per_dim]).assign(&ndarray::aview1(output_bias));
        }
        Made { dim, raw_per_dim, input, context, hidden: hidden_layer, output }
    }

    pub fn context_dim(&self) -> usize {
        self.context.n_in()
    }

    /// Context contribution to the first hidden pre-activation.
    pub fn context_term(&self, ctx: &ArrayView2<f64>) -> Array2<f64> {
        self.context.forward(ctx)
    }

    fn hidden_states(&self, a: &ArrayView2<f64>, ctx_term: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let mut h1 = self.input.forward(a);
        h1 += ctx_term;
        Activation::Tanh.apply(&mut h1);
        let mut h2 = self.hidden.forward(&h1.view());
        Activation::Tanh.apply(&mut h2);
        (h1, h2)
    }

    /// Raw spline parameters for all dimensions, `N x (D * P)`.
    pub fn forward(&self, a: &ArrayView2<f64>, ctx_term: &Array2<f64>) -> (Array2<f64>, MadeTape) {
        let (h1, h2) = self.hidden_states(a, ctx_term);
        let raw = self.output.forward(&h2.view());
        (raw, MadeTape { h1, h2 })
    }

    /// Raw parameters of dimension `d` only, `N x P`. Evaluates just the
    /// hidden units of degree `<= d`, the only ones dimension `d` reads.
    pub fn forward_dim(&self, a: &ArrayView2<f64>, ctx_term: &Array2<f64>, d: usize) -> Array2<f64> {
        let deg = hidden_degrees(self.dim, self.hidden.bias.len());
        let idx: Vec<usize> = (0..deg.len()).filter(|&j| deg[j] <= d).collect();
        let mut h1 = a.dot(&self.input.weight.select(Axis(0), &idx).t());
        h1 += &ctx_term.select(Axis(1), &idx);
        h1 += &self.input.bias.select(Axis(0), &idx);
        Activation::Tanh.apply(&mut h1);
        let w2 = self.hidden.weight.select(Axis(0), &idx).select(Axis(1), &idx);
        let mut h2 = h1.dot(&w2.t());
        h2 += &self.hidden.bias.select(Axis(0), &idx);
        Activation::Tanh.apply(&mut h2);
        let rows = d * self.raw_per_dim..(d + 1) * self.raw_per_dim;
        let w3 = self.output.weight.slice(s![rows.clone(), ..]).select(Axis(1), &idx);
        let mut out = h2.dot(&w3.t());
        out += &self.output.bias.slice(s![rows]);
        out
    }

    /// Accumulates parameter gradients; returns `(dL/da, dL/dctx)`.
    pub fn backward(
        &mut self,
        a: &ArrayView2<f64>,
        ctx: &ArrayView2<f64>,
        tape: &MadeTape,
        g_raw: &ArrayView2<f64>,
        ctx_grad: bool,
    ) -> (Array2<f64>, Option<Array2<f64>>) {
        let mut g2 = self.output.backward(&tape.h2.view(), g_raw, true).unwrap();
        Activation::Tanh.backprop(&tape.h2, &mut g2);
        let mut g1 = self.hidden.backward(&tape.h1.view(), &g2.view(), true).unwrap();
        Activation::Tanh.backprop(&tape.h1, &mut g1);
        let ga = self.input.backward(a, &g1.view(), true).unwrap();
        let gc = self.context.backward(ctx, &g1.view(), ctx_grad);
        (ga, gc)
    }
}

impl Layered for Made {
    fn layers_mut(&mut self) -> Vec<&mut Linear> {
        vec![&mut self.input, &mut self.context, &mut self.hidden, &mut self.output]
    }
}
