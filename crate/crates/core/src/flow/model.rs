//! Conditional masked autoregressive flow with rational-quadratic splines.
//!
//! Density direction: `theta -> u` (parameter map) `-> a_0`, then for each
//! transform `y_t = spline(a_t; made_t(a_t, ctx))` and `a_{t+1} = rev(y_t)`;
//! the final `z = rev(y_{T-1})` is scored under a standard normal.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::made::{Made, MadeTape};
use super::spline::{spline_forward, spline_forward_backward, spline_inverse, SplineConfig, SplineParams};
use super::FlowArchitecture;
use crate::impedance::PriorSpec;
use crate::nn::{Activation, Layered, Linear, Mlp, MlpTape};
use crate::{rng, Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Bijection between the parameter space and the flow's unbounded space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ParamMap {
    /// Interval `(lower, upper)` to `(0, 1)` then logit.
    Logit { lower: Vec<f64>, upper: Vec<f64> },
    /// Unbounded parameters, `u = (theta - shift) / scale`.
    Affine { shift: Vec<f64>, scale: Vec<f64> },
}

impl ParamMap {
    pub fn from_prior(prior: &PriorSpec<f64>) -> Self {
        let b = prior.component_bounds();
        ParamMap::Logit { lower: b.iter().map(|b| b.lower).collect(), upper: b.iter().map(|b| b.upper).collect() }
    }

    pub fn dim(&self) -> usize {
        match self {
            ParamMap::Logit { lower, .. } => lower.len(),
            ParamMap::Affine { shift, .. } => shift.len(),
        }
    }

    /// `u` and `log |du/dtheta|`; `None` outside the support.
    pub fn forward(&self, theta: &[f64], u: &mut [f64]) -> Option<f64> {
        let mut lj = 0.0;
        match self {
            ParamMap::Logit { lower, upper } => {
                for i in 0..theta.len() {
                    let w = upper[i] - lower[i];
                    let s = (theta[i] - lower[i]) / w;
                    if !(s > 0.0 && s < 1.0) {
                        return None;
                    }
                    u[i] = s.ln() - (-s).ln_1p();
                    lj -= w.ln() + s.ln() + (-s).ln_1p();
                }
            }
            ParamMap::Affine { shift, scale } => {
                for i in 0..theta.len() {
                    if !theta[i].is_finite() {
                        return None;
                    }
                    u[i] = (theta[i] - shift[i]) / scale[i];
                    lj -= scale[i].ln();
                }
            }
        }
        Some(lj)
    }

    pub fn inverse(&self, u: &[f64], theta: &mut [f64]) {
        match self {
            ParamMap::Logit { lower, upper } => {
                for i in 0..u.len() {
                    let s = if u[i] >= 0.0 { 1.0 / (1.0 + (-u[i]).exp()) } else { u[i].exp() / (1.0 + u[i].exp()) };
                    theta[i] = (lower[i] + (upper[i] - lower[i]) * s).clamp(lower[i], upper[i]);
                }
            }
            ParamMap::Affine { shift, scale } => {
                for i in 0..u.len() {
                    theta[i] = shift[i] + scale[i] * u[i];
                }
            }
        }
    }
}

/// Per-dimension z-scoring of the conditioning data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(xs: &ArrayView2<f64>) -> Result<Self> {
        if xs.nrows() < 2 {
            return Err(Error::Validation("standardization needs at least two rows".into()));
        }
        let mean = xs.mean_axis(Axis(0)).unwrap();
        let std = xs.std_axis(Axis(0), 0.0);
        if let Some(i) = std.iter().position(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::Validation(format!("data dimension {i} is constant; cannot standardize")));
        }
        Ok(Standardizer { mean: mean.to_vec(), std: std.to_vec() })
    }

    pub fn apply(&self, xs: &ArrayView2<f64>) -> Array2<f64> {
        let mut out = xs.to_owned();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowModel {
    pub version: u32,
    pub architecture: FlowArchitecture,
    pub spline: SplineConfig,
    pub param_map: ParamMap,
    pub standardizer: Standardizer,
    pub embedding: Option<Mlp>,
    pub transforms: Vec<Made>,
}

/// Forward-pass record for gradient computation.
pub struct FlowTape {
    ctx: Array2<f64>,
    emb_tape: Option<MlpTape>,
    inputs: Vec<Array2<f64>>,
    raws: Vec<Array2<f64>>,
    made: Vec<MadeTape>,
    z: Array2<f64>,
}

fn reverse_cols(a: &Array2<f64>) -> Array2<f64> {
    let m = a.ncols();
    Array2::from_shape_fn(a.dim(), |(i, j)| a[(i, m - 1 - j)])
}

impl FlowModel {
    pub fn new(architecture: FlowArchitecture, param_map: ParamMap, standardizer: Standardizer, seed: u64) -> Result<Self> {
        architecture.validate()?;
        let spline = architecture.spline_config();
        spline.validate()?;
        let dim = param_map.dim();
        let x_dim = standardizer.mean.len();
        if dim == 0 || x_dim == 0 {
            return Err(Error::Validation("flow needs non-empty parameter and data dimensions".into()));
        }
        let mut rng = rng::seeded(seed);
        let (embedding, ctx_dim) = if architecture.use_embedding {
            let mut sizes = vec![x_dim];
            sizes.extend(&architecture.embedding_hidden);
            sizes.push(architecture.embedding_features);
            (Some(Mlp::new(&sizes, Activation::Tanh, &mut rng)), architecture.embedding_features)
        } else {
            (None, x_dim)
        };
        let bias = spline.identity_raw();
        let transforms = (0..architecture.transforms)
            .map(|_| Made::new(dim, ctx_dim, architecture.hidden_features, spline.raw_len(), &bias, &mut rng))
            .collect();
        Ok(FlowModel {
            version: CHECKPOINT_VERSION,
            architecture,
            spline,
            param_map,
            standardizer,
            embedding,
            transforms,
        })
    }

    pub fn theta_dim(&self) -> usize {
        self.param_map.dim()
    }

    pub fn data_dim(&self) -> usize {
        self.standardizer.mean.len()
    }

    fn check_data(&self, xs: &ArrayView2<f64>) -> Result<()> {
        if xs.ncols() != self.data_dim() {
            return Err(Error::Validation(format!(
                "observation has {} entries, model expects {}",
                xs.ncols(),
                self.data_dim()
            )));
        }
        Ok(())
    }

    /// Context features fed to the conditioners (standardized, then embedded).
    pub fn embed(&self, xs: &ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_data(xs)?;
        let std = self.standardizer.apply(xs);
        Ok(match &self.embedding {
            Some(e) => e.forward(&std.view()),
            None => std,
        })
    }

    /// Maps parameters to the unbounded space; rows outside the support
    /// get `None` as their log-Jacobian.
    fn to_unbounded(&self, thetas: &ArrayView2<f64>) -> (Array2<f64>, Vec<Option<f64>>) {
        let mut u = Array2::zeros(thetas.dim());
        let mut lj = Vec::with_capacity(thetas.nrows());
        for (t, mut ur) in thetas.rows().into_iter().zip(u.rows_mut()) {
            let t = t.to_vec();
            let mut buf = vec![0.0; t.len()];
            let r = self.param_map.forward(&t, &mut buf);
            if r.is_some() {
                ur.assign(&Array1::from(buf));
            }
            lj.push(r);
        }
        (u, lj)
    }

    /// Transforms unbounded `u` to base space given context; returns `z`
    /// and per-row accumulated log-determinants.
    fn transform(&self, u: Array2<f64>, ctx: &Array2<f64>, mut tape: Option<&mut FlowTape>) -> (Array2<f64>, Vec<f64>) {
        let n = u.nrows();
        let dim = self.theta_dim();
        let p = self.spline.raw_len();
        let mut ld = vec![0.0; n];
        let mut a = u;
        for made in &self.transforms {
            let ct = made.context_term(&ctx.view());
            let (raw, mt) = made.forward(&a.view(), &ct);
            let mut y = Array2::zeros((n, dim));
            for i in 0..n {
                for d in 0..dim {
                    let r = raw.slice(s![i, d * p..(d + 1) * p]);
                    let sp = SplineParams::from_raw(r.as_slice().unwrap(), &self.spline);
                    let (v, l) = spline_forward(a[(i, d)], &sp);
                    y[(i, d)] = v;
                    ld[i] += l;
                }
            }
            let next = reverse_cols(&y);
            if let Some(t) = tape.as_deref_mut() {
                t.inputs.push(a);
                t.raws.push(raw);
                t.made.push(mt);
            }
            a = next;
        }
        (a, ld)
    }

    /// `log q(theta | x)` per row; `-inf` outside the support.
    pub fn log_prob_batch(&self, thetas: &ArrayView2<f64>, xs: &ArrayView2<f64>) -> Result<Vec<f64>> {
        if thetas.ncols() != self.theta_dim() || thetas.nrows() != xs.nrows() {
            return Err(Error::Validation("theta/data batch shape mismatch".into()));
        }
        let ctx = self.embed(xs)?;
        let (u, lj) = self.to_unbounded(thetas);
        let (z, ld) = self.transform(u, &ctx, None);
        Ok((0..z.nrows())
            .map(|i| match lj[i] {
                None => f64::NEG_INFINITY,
                Some(j) => base_log_prob(z.row(i).as_slice().unwrap()) + ld[i] + j,
            })
            .collect())
    }

    /// `log q(theta | x)` of a single pair; support violation is an error.
    pub fn log_prob(&self, theta: &[f64], x: &[f64]) -> Result<f64> {
        let t = ArrayView2::from_shape((1, theta.len()), theta).map_err(|e| Error::Validation(e.to_string()))?;
        let xv = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::Validation(e.to_string()))?;
        let lp = self.log_prob_batch(&t, &xv)?[0];
        if lp == f64::NEG_INFINITY {
            return Err(Error::Support(format!("theta {theta:?} outside the prior support")));
        }
        Ok(lp)
    }

    /// Mean negative log-probability, i.e. the training loss.
    pub fn loss(&self, thetas: &ArrayView2<f64>, xs: &ArrayView2<f64>) -> Result<f64> {
        let lp = self.log_prob_batch(thetas, xs)?;
        Ok(-lp.iter().sum::<f64>() / lp.len() as f64)
    }

    /// Loss of the batch and accumulated gradients of `scale * loss` in
    /// every layer (gradients are not zeroed first).
    pub fn accumulate_gradients(&mut self, thetas: &ArrayView2<f64>, xs: &ArrayView2<f64>, scale: f64) -> Result<f64> {
        self.check_data(xs)?;
        let n = thetas.nrows();
        let (u, lj) = self.to_unbounded(thetas);
        if let Some(i) = lj.iter().position(Option::is_none) {
            return Err(Error::Support(format!("training row {i} outside the prior support")));
        }
        let std = self.standardizer.apply(xs);
        let (ctx, emb_tape) = match &self.embedding {
            Some(e) => {
                let (c, t) = e.forward_tape(&std.view());
                (c, Some(t))
            }
            None => (std, None),
        };
        let mut tape = FlowTape { ctx, emb_tape, inputs: vec![], raws: vec![], made: vec![], z: Array2::zeros((0, 0)) };
        let ctx = std::mem::take(&mut tape.ctx);
        let (z, ld) = self.transform(u, &ctx, Some(&mut tape));
        tape.ctx = ctx;
        let mut total = 0.0;
        for i in 0..n {
            total -= base_log_prob(z.row(i).as_slice().unwrap()) + ld[i] + lj[i].unwrap();
        }
        let loss = total / n as f64;
        tape.z = z;
        self.backward(&tape, scale / n as f64);
        Ok(loss)
    }

    fn backward(&mut self, tape: &FlowTape, w: f64) {
        let dim = self.theta_dim();
        let p = self.spline.raw_len();
        let spline = self.spline;
        // dL/dz of -log N(z), per row weight w
        let mut g_next = tape.z.mapv(|v| v * w);
        let mut g_ctx = Array2::<f64>::zeros(tape.ctx.dim());
        let need_ctx = self.embedding.is_some();
        for t in (0..self.transforms.len()).rev() {
            let gy = reverse_cols(&g_next);
            let a = &tape.inputs[t];
            let raw = &tape.raws[t];
            let n = a.nrows();
            let mut g_raw = Array2::zeros(raw.dim());
            let mut g_a = Array2::zeros(a.dim());
            for i in 0..n {
                for d in 0..dim {
                    let r = raw.slice(s![i, d * p..(d + 1) * p]);
                    let mut gr = g_raw.slice_mut(s![i, d * p..(d + 1) * p]);
                    let (_, _, gx) = spline_forward_backward(
                        a[(i, d)],
                        r.as_slice().unwrap(),
                        &spline,
                        gy[(i, d)],
                        -w,
                        gr.as_slice_mut().unwrap(),
                    );
                    g_a[(i, d)] = gx;
                }
            }
            let (ga, gc) =
                self.transforms[t].backward(&a.view(), &tape.ctx.view(), &tape.made[t], &g_raw.view(), need_ctx);
            g_a += &ga;
            if let Some(gc) = gc {
                g_ctx += &gc;
            }
            g_next = g_a;
        }
        if let (Some(e), Some(et)) = (self.embedding.as_mut(), tape.emb_tape.as_ref()) {
            e.backward(et, g_ctx, false);
        }
    }

    /// Draws `n` parameter vectors (rows) conditioned on a single observation.
    pub fn sample(&self, x: &[f64], n: usize, seed: u64) -> Result<Array2<f64>> {
        let xv = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::Validation(e.to_string()))?;
        let ctx1 = self.embed(&xv)?;
        let dim = self.theta_dim();
        let mut out = Array2::zeros((n, dim));
        let mut rng = rng::seeded(seed);
        let z = Array2::from_shape_fn((n, dim), |_| StandardNormal.sample(&mut rng));
        const CHUNK: usize = 2048;
        let mut start = 0;
        while start < n {
            let end = (start + CHUNK).min(n);
            let zc = z.slice(s![start..end, ..]).to_owned();
            let ctx = ctx1.broadcast((end - start, ctx1.ncols())).unwrap().to_owned();
            let u = self.inverse_transform(zc, &ctx);
            for (i, row) in u.rows().into_iter().enumerate() {
                let mut theta = vec![0.0; dim];
                self.param_map.inverse(row.as_slice().unwrap(), &mut theta);
                out.row_mut(start + i).assign(&Array1::from(theta));
            }
            start = end;
        }
        Ok(out)
    }

    /// Draws one sample per observation row (used for calibration sets).
    pub fn sample_each(&self, xs: &ArrayView2<f64>, seed: u64) -> Result<Array2<f64>> {
        let ctx = self.embed(xs)?;
        let dim = self.theta_dim();
        let mut rng = rng::seeded(seed);
        let z = Array2::from_shape_fn((xs.nrows(), dim), |_| StandardNormal.sample(&mut rng));
        let u = self.inverse_transform(z, &ctx);
        let mut out = Array2::zeros(u.dim());
        for (row, mut o) in u.rows().into_iter().zip(out.rows_mut()) {
            let mut theta = vec![0.0; dim];
            self.param_map.inverse(row.as_slice().unwrap(), &mut theta);
            o.assign(&Array1::from(theta));
        }
        Ok(out)
    }

    /// Maps base samples back to the unbounded parameter space.
    pub fn inverse_transform(&self, z: Array2<f64>, ctx: &Array2<f64>) -> Array2<f64> {
        let (n, dim) = z.dim();
        let mut y = reverse_cols(&z);
        for (t, made) in self.transforms.iter().enumerate().rev() {
            let ct = made.context_term(&ctx.view());
            let mut a = Array2::zeros((n, dim));
            for d in 0..dim {
                let raw = made.forward_dim(&a.view(), &ct, d);
                for i in 0..n {
                    let sp = SplineParams::from_raw(raw.row(i).as_slice().unwrap(), &self.spline);
                    a[(i, d)] = spline_inverse(y[(i, d)], &sp).0;
                }
            }
            y = if t > 0 { reverse_cols(&a) } else { a };
        }
        y
    }

    /// Forward transform of unbounded points to base space (no Jacobian).
    pub fn forward_transform(&self, u: Array2<f64>, ctx: &Array2<f64>) -> (Array2<f64>, Vec<f64>) {
        self.transform(u, ctx, None)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: FlowModel = serde_json::from_str(s)?;
        if m.version != CHECKPOINT_VERSION {
            return Err(Error::Artifact(format!("checkpoint version {} unsupported", m.version)));
        }
        Ok(m)
    }
}

impl Layered for FlowModel {
    fn layers_mut(&mut self) -> Vec<&mut Linear> {
        let mut out: Vec<&mut Linear> = Vec::new();
        if let Some(e) = self.embedding.as_mut() {
            out.extend(e.layers.iter_mut());
        }
        for t in &mut self.transforms {
            out.extend(t.layers_mut());
        }
        out
    }
}

pub fn base_log_prob(z: &[f64]) -> f64 {
    -0.5 * z.iter().map(|v| v * v).sum::<f64>() - 0.5 * LN_2PI * z.len() as f64
}

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_layer: usize,
    pub worst_index: usize,
    pub n_checked: usize,
    pub masked_nonzero: usize,
}

/// Compares reverse-mode gradients of the loss with central differences
/// (step `h`) for every free parameter. The relative error divides by the
/// larger gradient magnitude, floored at `1e-6`. Masked-out weights are not free; their analytic gradient must be
/// exactly zero and any violation is counted in `masked_nonzero`.
pub fn grad_check(model: &FlowModel, thetas: &ArrayView2<f64>, xs: &ArrayView2<f64>, h: f64) -> Result<GradCheckReport> {
    let mut m = model.clone();
    m.zero_grad();
    m.accumulate_gradients(thetas, xs, 1.0)?;
    let mut analytic: Vec<Vec<(f64, bool)>> = Vec::new();
    for l in m.layers_mut() {
        let mut g: Vec<(f64, bool)> = match &l.mask {
            Some(mask) => l.grad_weight.iter().zip(mask.iter()).map(|(&g, &mk)| (g, mk != 0.0)).collect(),
            None => l.grad_weight.iter().map(|&g| (g, true)).collect(),
        };
        g.extend(l.grad_bias.iter().map(|&v| (v, true)));
        analytic.push(g);
    }
    let mut report =
        GradCheckReport { max_rel_error: 0.0, worst_layer: 0, worst_index: 0, n_checked: 0, masked_nonzero: 0 };
    for (li, layer) in analytic.iter().enumerate() {
        for (pi, &(a, free)) in layer.iter().enumerate() {
            if !free {
                if a != 0.0 {
                    report.masked_nonzero += 1;
                }
                continue;
            }
            let eval = |delta: f64| -> Result<f64> {
                let mut p = model.clone();
                nudge(&mut p, li, pi, delta);
                p.loss(thetas, xs)
            };
            let fd = (eval(h)? - eval(-h)?) / (2.0 * h);
            let diff = (a - fd).abs();
            let rel = diff / a.abs().max(fd.abs()).max(1e-6);
            report.n_checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_layer = li;
                report.worst_index = pi;
            }
        }
    }
    Ok(report)
}

fn nudge(model: &mut FlowModel, layer: usize, index: usize, delta: f64) {
    let l = model.layers_mut().swap_remove(layer);
    let nw = l.weight.len();
    if index < nw {
        let c = l.weight.ncols();
        l.weight[(index / c, index % c)] += delta;
    } else {
        l.bias[index - nw] += delta;
    }
}
