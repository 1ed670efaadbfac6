//! Local classifier two-sample test (L-C2ST) of a conditional posterior.
//!
//! A classifier separates joint pairs `(theta_i, x_i)` (class 0) from
//! `(theta~_i, x_i)` with `theta~_i` drawn from the estimator given `x_i`
//! (class 1). At an observation `x_o` the classifier is evaluated on
//! estimator samples; for a calibrated estimator its class-1 probability
//! `d` stays near 0.5. The statistic is the mean of `|d - 0.5|`; its null
//! distribution comes from classifiers trained on permuted labels.

use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::flow::FlowModel;
use crate::nn::{Activation, Adam, Layered, Mlp};
use crate::stats::quantile_sorted;
use crate::{rng, Error, Result};

/// Conditional sampler exposing the pieces L-C2ST needs.
pub trait PosteriorSampler {
    /// Features of the observations fed to the classifier.
    fn features(&self, xs: &ArrayView2<f64>) -> Result<Array2<f64>>;
    /// One draw per observation row.
    fn sample_each(&self, xs: &ArrayView2<f64>, seed: u64) -> Result<Array2<f64>>;
    /// `n` draws for a single observation.
    fn sample(&self, x: &[f64], n: usize, seed: u64) -> Result<Array2<f64>>;
}

impl PosteriorSampler for FlowModel {
    fn features(&self, xs: &ArrayView2<f64>) -> Result<Array2<f64>> {
        self.embed(xs)
    }
    fn sample_each(&self, xs: &ArrayView2<f64>, seed: u64) -> Result<Array2<f64>> {
        FlowModel::sample_each(self, xs, seed)
    }
    fn sample(&self, x: &[f64], n: usize, seed: u64) -> Result<Array2<f64>> {
        FlowModel::sample(self, x, n, seed)
    }
}

/// Wraps a sampler and shifts every draw by a fixed offset, reflected back
/// into `[lower, upper]`; used as a deliberately miscalibrated control.
pub struct ShiftedSampler<'a, S: ?Sized> {
    pub inner: &'a S,
    pub shift: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl<'a, S: PosteriorSampler + ?Sized> ShiftedSampler<'a, S> {
    /// Shift of `fraction` of each interval width `upper - lower`.
    pub fn by_fraction(inner: &'a S, lower: &[f64], upper: &[f64], fraction: f64) -> Self {
        let shift = lower.iter().zip(upper).map(|(l, u)| fraction * (u - l)).collect();
        ShiftedSampler { inner, shift, lower: lower.to_vec(), upper: upper.to_vec() }
    }

    fn apply(&self, mut s: Array2<f64>) -> Array2<f64> {
        for mut row in s.rows_mut() {
            for (i, v) in row.iter_mut().enumerate() {
                let mut y = *v + self.shift[i];
                if y > self.upper[i] {
                    y = 2.0 * self.upper[i] - y;
                }
                if y < self.lower[i] {
                    y = 2.0 * self.lower[i] - y;
                }
                *v = y.clamp(self.lower[i], self.upper[i]);
            }
        }
        s
    }
}

impl<S: PosteriorSampler + ?Sized> PosteriorSampler for ShiftedSampler<'_, S> {
    fn features(&self, xs: &ArrayView2<f64>) -> Result<Array2<f64>> {
        self.inner.features(xs)
    }
    fn sample_each(&self, xs: &ArrayView2<f64>, seed: u64) -> Result<Array2<f64>> {
        Ok(self.apply(self.inner.sample_each(xs, seed)?))
    }
    fn sample(&self, x: &[f64], n: usize, seed: u64) -> Result<Array2<f64>> {
        Ok(self.apply(self.inner.sample(x, n, seed)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig { hidden: 100, epochs: 60, batch_size: 100, learning_rate: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Lc2stConfig {
    pub n_cal: usize,
    pub n_null: usize,
    /// Estimator samples evaluated at each test observation.
    pub n_eval: usize,
    /// Level of the test; the band is the `1 - alpha` null quantile.
    pub alpha: f64,
    pub classifier: ClassifierConfig,
    pub seed: u64,
}

impl Default for Lc2stConfig {
    fn default() -> Self {
        Lc2stConfig {
            n_cal: 500,
            n_null: 100,
            n_eval: 2000,
            alpha: 0.05,
            classifier: ClassifierConfig::default(),
            seed: 0,
        }
    }
}

impl Lc2stConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_cal < 200 {
            return Err(Error::Validation(format!("n_cal must be >= 200, got {}", self.n_cal)));
        }
        if self.n_null < 100 {
            return Err(Error::Validation(format!("n_null must be >= 100, got {}", self.n_null)));
        }
        if self.n_eval == 0 || !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Validation("n_eval must be >= 1 and alpha in (0, 1)".into()));
        }
        if self.classifier.hidden == 0 || self.classifier.epochs == 0 || self.classifier.batch_size == 0 {
            return Err(Error::Validation("classifier sizes must be >= 1".into()));
        }
        Ok(())
    }
}

pub const CDF_GRID_POINTS: usize = 101;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub statistic: f64,
    pub null_statistics: Vec<f64>,
    /// `1 - alpha` quantile of the null statistics.
    pub threshold: f64,
    pub p_value: f64,
    pub passed: bool,
    pub grid: Vec<f64>,
    pub cdf: Vec<f64>,
    pub band_lower: Vec<f64>,
    pub band_upper: Vec<f64>,
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

struct Classifier {
    net: Mlp,
}

impl Classifier {
    fn train(features: &Array2<f64>, labels: &[f64], cfg: &ClassifierConfig, seed: u64) -> Result<Self> {
        let mut r = rng::seeded(seed);
        let mut net = Mlp::new(&[features.ncols(), cfg.hidden, cfg.hidden, 1], Activation::Relu, &mut r);
        let mut opt = Adam::new(cfg.learning_rate);
        let mut order: Vec<usize> = (0..features.nrows()).collect();
        for epoch in 0..cfg.epochs {
            order.shuffle(&mut r);
            for chunk in order.chunks(cfg.batch_size) {
                let x = features.select(Axis(0), chunk);
                net.zero_grad();
                let (logits, tape) = net.forward_tape(&x.view());
                let mut g = Array2::zeros(logits.dim());
                let mut loss = 0.0;
                for (k, &i) in chunk.iter().enumerate() {
                    let l = logits[(k, 0)];
                    let y = labels[i];
                    loss += l.max(0.0) - l * y + (-l.abs()).exp().ln_1p();
                    g[(k, 0)] = (sigmoid(l) - y) / chunk.len() as f64;
                }
                if !loss.is_finite() {
                    return Err(Error::Diagnostic(format!("classifier loss diverged in epoch {epoch}")));
                }
                net.backward(&tape, g, false);
                opt.step(&mut net);
            }
        }
        Ok(Classifier { net })
    }

    /// Class-1 probabilities, clamped away from 0 and 1.
    fn predict(&self, features: &Array2<f64>) -> Vec<f64> {
        self.net.forward(&features.view()).column(0).iter().map(|&l| sigmoid(l).clamp(1e-12, 1.0 - 1e-12)).collect()
    }
}

fn statistic(d: &[f64]) -> f64 {
    d.iter().map(|v| (v - 0.5).abs()).sum::<f64>() / d.len() as f64
}

fn cdf_on_grid(d: &[f64], grid: &[f64]) -> Vec<f64> {
    let mut s = d.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.iter().map(|&g| s.partition_point(|&v| v <= g) as f64 / s.len() as f64).collect()
}

/// Per-column mean and standard deviation of `a` applied to every set.
fn standardize_all(reference: &Array2<f64>, sets: &mut [&mut Array2<f64>]) {
    let mean = reference.mean_axis(Axis(0)).unwrap();
    let std = reference.std_axis(Axis(0), 0.0).mapv(|s| if s > 0.0 { s } else { 1.0 });
    for s in sets.iter_mut() {
        **s -= &mean;
        **s /= &std;
    }
}

/// L-C2ST from explicit feature sets: `class0`, `class1` (rows = samples)
/// and one evaluation set per test observation.
pub fn lc2st_from_sets(
    class0: &Array2<f64>,
    class1: &Array2<f64>,
    eval_sets: &[Array2<f64>],
    cfg: &Lc2stConfig,
) -> Result<Vec<CalibrationReport>> {
    if class0.ncols() != class1.ncols() || eval_sets.iter().any(|e| e.ncols() != class0.ncols()) {
        return Err(Error::Validation("classifier feature widths disagree".into()));
    }
    let mut pooled = concatenate(Axis(0), &[class0.view(), class1.view()]).map_err(|e| Error::Validation(e.to_string()))?;
    let mut evals: Vec<Array2<f64>> = eval_sets.to_vec();
    let reference = class0.clone();
    {
        let mut refs: Vec<&mut Array2<f64>> = vec![&mut pooled];
        refs.extend(evals.iter_mut());
        standardize_all(&reference, &mut refs);
    }
    let labels: Vec<f64> =
        std::iter::repeat_n(0.0, class0.nrows()).chain(std::iter::repeat_n(1.0, class1.nrows())).collect();
    let clf = Classifier::train(&pooled, &labels, &cfg.classifier, rng::stream_seed(cfg.seed, "clf", 0))?;
    let observed: Vec<Vec<f64>> = evals.iter().map(|e| clf.predict(e)).collect();

    let mut null_stats = vec![Vec::with_capacity(cfg.n_null); evals.len()];
    let mut null_cdfs = vec![Vec::with_capacity(cfg.n_null); evals.len()];
    let grid: Vec<f64> = (0..CDF_GRID_POINTS).map(|i| i as f64 / (CDF_GRID_POINTS - 1) as f64).collect();
    for k in 0..cfg.n_null {
        let mut perm = labels.clone();
        perm.shuffle(&mut rng::seeded(rng::stream_seed(cfg.seed, "perm", k as u64)));
        let c = Classifier::train(&pooled, &perm, &cfg.classifier, rng::stream_seed(cfg.seed, "null", k as u64))?;
        for (j, e) in evals.iter().enumerate() {
            let d = c.predict(e);
            null_stats[j].push(statistic(&d));
            null_cdfs[j].push(cdf_on_grid(&d, &grid));
        }
    }
    let mut reports = Vec::with_capacity(evals.len());
    for j in 0..evals.len() {
        let stat = statistic(&observed[j]);
        let mut sorted = null_stats[j].clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let threshold = quantile_sorted(&sorted, 1.0 - cfg.alpha);
        let exceed = sorted.iter().filter(|&&v| v >= stat).count();
        let p_value = (exceed + 1) as f64 / (sorted.len() + 1) as f64;
        let (mut lo, mut hi) = (Vec::with_capacity(grid.len()), Vec::with_capacity(grid.len()));
        for g in 0..grid.len() {
            let mut col: Vec<f64> = null_cdfs[j].iter().map(|c| c[g]).collect();
            col.sort_by(|a, b| a.partial_cmp(b).unwrap());
            lo.push(quantile_sorted(&col, cfg.alpha / 2.0));
            hi.push(quantile_sorted(&col, 1.0 - cfg.alpha / 2.0));
        }
        reports.push(CalibrationReport {
            statistic: stat,
            null_statistics: null_stats[j].clone(),
            threshold,
            p_value,
            passed: stat <= threshold,
            cdf: cdf_on_grid(&observed[j], &grid),
            grid: grid.clone(),
            band_lower: lo,
            band_upper: hi,
        });
    }
    Ok(reports)
}

/// Builds classifier features `(theta, features(x))` row-wise.
fn joint_features(thetas: &Array2<f64>, feats: &Array2<f64>) -> Array2<f64> {
    concatenate(Axis(1), &[thetas.view(), feats.view()]).expect("row counts agree")
}

/// Runs L-C2ST of `sampler` using calibration pairs `(cal_thetas, cal_xs)`
/// at each test observation.
pub fn lc2st<S: PosteriorSampler + ?Sized>(
    sampler: &S,
    cal_thetas: &Array2<f64>,
    cal_xs: &Array2<f64>,
    x_obs: &[Vec<f64>],
    cfg: &Lc2stConfig,
) -> Result<Vec<CalibrationReport>> {
    cfg.validate()?;
    if cal_thetas.nrows() != cal_xs.nrows() || cal_thetas.nrows() < 200 {
        return Err(Error::Validation("need at least 200 matching calibration pairs".into()));
    }
    let feats = sampler.features(&cal_xs.view())?;
    let tilde = sampler.sample_each(&cal_xs.view(), rng::stream_seed(cfg.seed, "cal", 0))?;
    let class0 = joint_features(cal_thetas, &feats);
    let class1 = joint_features(&tilde, &feats);
    let mut evals = Vec::with_capacity(x_obs.len());
    for (j, x) in x_obs.iter().enumerate() {
        let xv = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::Validation(e.to_string()))?;
        let f = sampler.features(&xv)?;
        let th = sampler.sample(x, cfg.n_eval, rng::stream_seed(cfg.seed, "eval", j as u64))?;
        let fb = f.broadcast((cfg.n_eval, f.ncols())).unwrap().to_owned();
        evals.push(joint_features(&th, &fb));
    }
    lc2st_from_sets(&class0, &class1, &evals, cfg)
}

/// Row vector helper.
pub fn row(v: &[f64]) -> Array2<f64> {
    Array1::from(v.to_vec()).insert_axis(Axis(0))
}
