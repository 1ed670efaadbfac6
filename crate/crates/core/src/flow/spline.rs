//! Monotone rational-quadratic splines on `[-T, T]` with identity tails.
//!
//! Raw (unconstrained) parameters of one dimension are laid out as
//! `[widths (B), heights (B), interior derivatives (B - 1)]`. Widths and
//! heights go through a softmax with a minimum bin size, interior knot
//! derivatives through `min_d + softplus(.)`; the two boundary derivatives
//! are fixed to 1 so the map is C1 across `+-T`.

use std::ops::{Add, Div, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::{Error, Real, Result};

pub const DEFAULT_BINS: usize = 11;
pub const DEFAULT_TAIL_BOUND: f64 = 5.0;
pub const MIN_BIN_WIDTH: f64 = 1e-3;
pub const MIN_BIN_HEIGHT: f64 = 1e-3;
pub const MIN_DERIVATIVE: f64 = 1e-3;

/// Shape of the spline family: bin count, tail bound and minimum sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplineConfig {
    pub bins: usize,
    pub tail_bound: f64,
    pub min_width: f64,
    pub min_height: f64,
    pub min_derivative: f64,
}

impl Default for SplineConfig {
    fn default() -> Self {
        SplineConfig {
            bins: DEFAULT_BINS,
            tail_bound: DEFAULT_TAIL_BOUND,
            min_width: MIN_BIN_WIDTH,
            min_height: MIN_BIN_HEIGHT,
            min_derivative: MIN_DERIVATIVE,
        }
    }
}

impl SplineConfig {
    /// Number of raw parameters per dimension, `3B - 1`.
    pub fn raw_len(&self) -> usize {
        3 * self.bins - 1
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.bins as f64;
        if self.bins < 2 {
            return Err(Error::Validation(format!("spline needs at least 2 bins, got {}", self.bins)));
        }
        if !(self.tail_bound > 0.0) || !self.tail_bound.is_finite() {
            return Err(Error::Validation(format!("tail bound must be positive, got {}", self.tail_bound)));
        }
        if !(self.min_width > 0.0 && self.min_width * b < 1.0) || !(self.min_height > 0.0 && self.min_height * b < 1.0) {
            return Err(Error::Validation("minimum bin width/height must be in (0, 1/B)".into()));
        }
        if !(self.min_derivative > 0.0) {
            return Err(Error::Validation("minimum derivative must be positive".into()));
        }
        Ok(())
    }

    /// Raw derivative value mapping to a knot derivative of exactly 1.
    pub fn identity_derivative_raw(&self) -> f64 {
        ((1.0 - self.min_derivative).exp() - 1.0).ln()
    }

    /// Raw parameters of the identity map.
    pub fn identity_raw(&self) -> Vec<f64> {
        let mut raw = vec![0.0; self.raw_len()];
        raw[2 * self.bins..].fill(self.identity_derivative_raw());
        raw
    }
}

/// Constrained spline of one dimension: bin widths and heights (each summing
/// to `2T`) and the `B + 1` knot derivatives including the unit boundary ones.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineParams<T> {
    pub widths: Vec<T>,
    pub heights: Vec<T>,
    pub derivatives: Vec<T>,
    pub tail_bound: T,
}

fn softmax<T: Real>(u: &[T]) -> Vec<T> {
    let max = u.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = u.iter().map(|&v| (v - max).exp()).collect();
    let s = e.iter().copied().fold(T::zero(), |a, b| a + b);
    e.into_iter().map(|v| v / s).collect()
}

fn softplus<T: Real>(u: T) -> T {
    if u > T::lit(30.0) {
        u
    } else {
        u.exp().ln_1p()
    }
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

impl<T: Real> SplineParams<T> {
    /// Applies the softmax/softplus constraints to raw parameters.
    pub fn from_raw(raw: &[T], cfg: &SplineConfig) -> Self {
        let b = cfg.bins;
        assert_eq!(raw.len(), cfg.raw_len(), "raw spline parameter length");
        let two_t = T::lit(2.0 * cfg.tail_bound);
        let scale = |sm: Vec<T>, min: f64| -> Vec<T> {
            let keep = T::lit(1.0 - min * b as f64);
            sm.into_iter().map(|s| (T::lit(min) + keep * s) * two_t).collect()
        };
        let widths = scale(softmax(&raw[..b]), cfg.min_width);
        let heights = scale(softmax(&raw[b..2 * b]), cfg.min_height);
        let mut derivatives = Vec::with_capacity(b + 1);
        derivatives.push(T::one());
        derivatives.extend(raw[2 * b..].iter().map(|&u| T::lit(cfg.min_derivative) + softplus(u)));
        derivatives.push(T::one());
        SplineParams { widths, heights, derivatives, tail_bound: T::lit(cfg.tail_bound) }
    }

    pub fn identity(cfg: &SplineConfig) -> Self {
        let raw: Vec<T> = cfg.identity_raw().into_iter().map(T::lit).collect();
        Self::from_raw(&raw, cfg)
    }

    pub fn bins(&self) -> usize {
        self.widths.len()
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.widths.len();
        if self.heights.len() != b || self.derivatives.len() != b + 1 || b == 0 {
            return Err(Error::Validation("inconsistent spline parameter lengths".into()));
        }
        let pos = |v: &[T]| v.iter().all(|&x| x > T::zero() && x.is_finite());
        if !pos(&self.widths) || !pos(&self.heights) || !pos(&self.derivatives) {
            return Err(Error::Validation("spline widths, heights and derivatives must be positive".into()));
        }
        let two_t = T::lit(2.0) * self.tail_bound;
        let tol = T::lit(1e-9) * two_t;
        let sum = |v: &[T]| v.iter().copied().fold(T::zero(), |a, c| a + c);
        if (sum(&self.widths) - two_t).abs() > tol || (sum(&self.heights) - two_t).abs() > tol {
            return Err(Error::Validation("spline widths and heights must each sum to 2T".into()));
        }
        Ok(())
    }

    fn knots(sizes: &[T], t: T) -> Vec<T> {
        let mut k = Vec::with_capacity(sizes.len() + 1);
        let mut acc = -t;
        k.push(acc);
        for &s in &sizes[..sizes.len() - 1] {
            acc = acc + s;
            k.push(acc);
        }
        k.push(t);
        k
    }
}

fn find_bin<T: Real>(knots: &[T], v: T) -> usize {
    let b = knots.len() - 1;
    // last index with knots[k] <= v, clamped to a valid bin
    let k = knots.partition_point(|&kn| kn <= v);
    k.saturating_sub(1).min(b - 1)
}

/// Minimal arithmetic needed by the bin formulas, shared by plain floats
/// and the forward-mode dual number used for gradients.
trait BinNum: Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> {
    fn cst(v: f64) -> Self;
    fn ln(self) -> Self;
}

impl<T: Real> BinNum for T {
    fn cst(v: f64) -> Self {
        T::lit(v)
    }
    fn ln(self) -> Self {
        num_traits::Float::ln(self)
    }
}

/// `(y, log dy/dx)` inside bin `k` given `x, x_k, w_k, y_k, h_k, d_k, d_{k+1}`.
fn rq_bin<N: BinNum>(x: N, xk: N, wk: N, yk: N, hk: N, dk: N, dk1: N) -> (N, N) {
    let one = N::cst(1.0);
    let two = N::cst(2.0);
    let xi = (x - xk) / wk;
    let s = hk / wk;
    let om = one - xi;
    let t = xi * om;
    let num = hk * (s * xi * xi + dk * t);
    let den = s + (dk1 + dk - two * s) * t;
    let y = yk + num / den;
    let dnum = s * s * (dk1 * xi * xi + two * s * t + dk * om * om);
    (y, dnum.ln() - two * den.ln())
}

/// Forward map and `log |dy/dx|`; identity outside `[-T, T]`.
pub fn spline_forward<T: Real>(x: T, p: &SplineParams<T>) -> (T, T) {
    let t = p.tail_bound;
    if !(x >= -t && x <= t) {
        return (x, T::zero());
    }
    let xs = SplineParams::knots(&p.widths, t);
    let ys = SplineParams::knots(&p.heights, t);
    let k = find_bin(&xs, x);
    let (y, ld) = rq_bin(x, xs[k], xs[k + 1] - xs[k], ys[k], ys[k + 1] - ys[k], p.derivatives[k], p.derivatives[k + 1]);
    (y.max(-t).min(t), ld)
}

/// Inverse map and `log |dx/dy|` (the negated forward log-derivative).
pub fn spline_inverse<T: Real>(y: T, p: &SplineParams<T>) -> (T, T) {
    let t = p.tail_bound;
    if !(y >= -t && y <= t) {
        return (y, T::zero());
    }
    let xs = SplineParams::knots(&p.widths, t);
    let ys = SplineParams::knots(&p.heights, t);
    let k = find_bin(&ys, y);
    let (xk, wk, yk, hk) = (xs[k], xs[k + 1] - xs[k], ys[k], ys[k + 1] - ys[k]);
    let (dk, dk1) = (p.derivatives[k], p.derivatives[k + 1]);
    let two = T::lit(2.0);
    let s = hk / wk;
    let dy = y - yk;
    let c2 = dk1 + dk - two * s;
    let a = hk * (s - dk) + dy * c2;
    let b = hk * dk - dy * c2;
    let c = -s * dy;
    let disc = (b * b - T::lit(4.0) * a * c).max(T::zero());
    let xi = (two * c / (-b - disc.sqrt())).max(T::zero()).min(T::one());
    let x = xk + xi * wk;
    let (_, ld) = rq_bin(x, xk, wk, yk, hk, dk, dk1);
    (x.max(-t).min(t), -ld)
}

/// Value plus gradient with respect to the seven bin-local inputs.
#[derive(Debug, Clone, Copy)]
struct Dual7 {
    v: f64,
    g: [f64; 7],
}

impl Dual7 {
    fn var(v: f64, i: usize) -> Self {
        let mut g = [0.0; 7];
        g[i] = 1.0;
        Dual7 { v, g }
    }
    fn map_g(self, f: impl Fn(f64) -> f64) -> [f64; 7] {
        self.g.map(f)
    }
}

impl Add for Dual7 {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let mut g = self.g;
        g.iter_mut().zip(o.g).for_each(|(a, b)| *a += b);
        Dual7 { v: self.v + o.v, g }
    }
}

impl Sub for Dual7 {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        let mut g = self.g;
        g.iter_mut().zip(o.g).for_each(|(a, b)| *a -= b);
        Dual7 { v: self.v - o.v, g }
    }
}

impl Mul for Dual7 {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let mut g = [0.0; 7];
        for i in 0..7 {
            g[i] = self.g[i] * o.v + self.v * o.g[i];
        }
        Dual7 { v: self.v * o.v, g }
    }
}

impl Div for Dual7 {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.v;
        let v = self.v * inv;
        let mut g = [0.0; 7];
        for i in 0..7 {
            g[i] = (self.g[i] - v * o.g[i]) * inv;
        }
        Dual7 { v, g }
    }
}

impl BinNum for Dual7 {
    fn cst(v: f64) -> Self {
        Dual7 { v, g: [0.0; 7] }
    }
    fn ln(self) -> Self {
        let inv = 1.0 / self.v;
        Dual7 { v: self.v.ln(), g: self.map_g(|d| d * inv) }
    }
}

/// Forward pass on raw parameters that also backpropagates the upstream
/// gradients `gy = dL/dy` and `gl = dL/d(log dy/dx)`.
///
/// Returns `(y, log dy/dx, dL/dx)` and accumulates `dL/draw` into `g_raw`.
pub fn spline_forward_backward(
    x: f64,
    raw: &[f64],
    cfg: &SplineConfig,
    gy: f64,
    gl: f64,
    g_raw: &mut [f64],
) -> (f64, f64, f64) {
    let t = cfg.tail_bound;
    if !(x >= -t && x <= t) {
        return (x, 0.0, gy);
    }
    let b = cfg.bins;
    let sw = softmax(&raw[..b]);
    let sh = softmax(&raw[b..2 * b]);
    let p = SplineParams::from_raw(raw, cfg);
    let xs = SplineParams::knots(&p.widths, t);
    let ys = SplineParams::knots(&p.heights, t);
    let k = find_bin(&xs, x);
    let (y, ld) = rq_bin(
        Dual7::var(x, 0),
        Dual7::var(xs[k], 1),
        Dual7::var(xs[k + 1] - xs[k], 2),
        Dual7::var(ys[k], 3),
        Dual7::var(ys[k + 1] - ys[k], 4),
        Dual7::var(p.derivatives[k], 5),
        Dual7::var(p.derivatives[k + 1], 6),
    );
    let mut g = [0.0; 7];
    for i in 0..7 {
        g[i] = gy * y.g[i] + gl * ld.g[i];
    }
    let two_t = 2.0 * t;
    // knot k = -T + 2T sum_{j<k} w_j, bin size 2T w_k
    let size_grad = |g_knot: f64, g_size: f64, min: f64, sm: &[f64], out: &mut [f64]| {
        let keep = 1.0 - min * b as f64;
        let gs: Vec<f64> = (0..b)
            .map(|j| {
                let mut v = 0.0;
                if j < k {
                    v += g_knot;
                }
                if j == k {
                    v += g_size;
                }
                v * two_t * keep
            })
            .collect();
        let dot: f64 = gs.iter().zip(sm).map(|(a, s)| a * s).sum();
        for j in 0..b {
            out[j] += sm[j] * (gs[j] - dot);
        }
    };
    size_grad(g[1], g[2], cfg.min_width, &sw, &mut g_raw[..b]);
    size_grad(g[3], g[4], cfg.min_height, &sh, &mut g_raw[b..2 * b]);
    for (idx, gd) in [(k, g[5]), (k + 1, g[6])] {
        if idx >= 1 && idx < b {
            g_raw[2 * b + idx - 1] += gd * sigmoid(raw[2 * b + idx - 1]);
        }
    }
    (y.v.clamp(-t, t), ld.v, g[0])
}
