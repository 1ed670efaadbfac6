//! Sample statistics: quantiles, highest-density intervals, moments.

use crate::{Error, Real, Result};

/// Linear-interpolation quantile (Hyndman-Fan type 7) of sorted data.
pub fn quantile_sorted<T: Real>(sorted: &[T], q: T) -> T {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q.max(T::zero()).min(T::one()) * T::from_usize(n - 1).unwrap();
    let lo = pos.floor().to_usize().unwrap().min(n - 1);
    let hi = (lo + 1).min(n - 1);
    let frac = pos - T::from_usize(lo).unwrap();
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn sort_finite<T: Real>(values: &mut [T]) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite sample".into()));
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(())
}

/// Narrowest interval holding `ceil(mass * n)` of the samples.
///
/// Among all contiguous windows of the sorted samples the narrowest one wins;
/// equal widths resolve to the smallest lower bound.
pub fn hdi<T: Real>(samples: &[T], mass: T) -> Result<(T, T)> {
    let mut sorted = samples.to_vec();
    sort_finite(&mut sorted)?;
    hdi_sorted(&sorted, mass)
}

pub fn hdi_sorted<T: Real>(sorted: &[T], mass: T) -> Result<(T, T)> {
    let n = sorted.len();
    if n < 100 {
        return Err(Error::Validation(format!("hdi needs at least 100 samples, got {n}")));
    }
    if !(mass > T::zero() && mass < T::one()) {
        return Err(Error::Validation(format!("hdi mass must lie in (0, 1), got {mass:?}")));
    }
    let window = (mass * T::from_usize(n).unwrap()).ceil().to_usize().unwrap().clamp(1, n);
    let mut best = 0;
    let mut best_width = sorted[window - 1] - sorted[0];
    for i in 1..=n - window {
        let width = sorted[i + window - 1] - sorted[i];
        if width < best_width {
            best_width = width;
            best = i;
        }
    }
    Ok((sorted[best], sorted[best + window - 1]))
}

pub fn mean<T: Real>(values: &[T]) -> T {
    let sum = values.iter().fold(T::zero(), |acc, &v| acc + v);
    sum / T::from_usize(values.len().max(1)).unwrap()
}

/// Unbiased sample variance.
pub fn variance<T: Real>(values: &[T]) -> T {
    let n = values.len();
    if n < 2 {
        return T::zero();
    }
    let m = mean(values);
    values.iter().fold(T::zero(), |acc, &v| acc + (v - m) * (v - m)) / T::from_usize(n - 1).unwrap()
}

/// Mean and 90%-style interval summary of a sample set.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Summary {
    pub fn from_samples(samples: &[f64], mass: f64) -> Result<Self> {
        let mut sorted = samples.to_vec();
        sort_finite(&mut sorted)?;
        let (lower, upper) = hdi_sorted(&sorted, mass)?;
        Ok(Summary {
            mean: mean(samples),
            median: quantile_sorted(&sorted, 0.5),
            lower,
            upper,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn gaussian_hdi() {
        let mut rng = crate::rng::seeded(3);
        let s: Vec<f64> = (0..1_000_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let (lo, hi) = hdi(&s, 0.9).unwrap();
        // Phi^-1(0.95) = 1.6448536...
        assert!((lo + 1.644_853_6).abs() < 0.02, "{lo}");
        assert!((hi - 1.644_853_6).abs() < 0.02, "{hi}");
    }

    #[test]
    fn identical_samples() {
        let s = vec![2.5f64; 200];
        assert_eq!(hdi(&s, 0.9).unwrap(), (2.5, 2.5));
    }

    #[test]
    fn uniform_hdi_width() {
        let mut rng = crate::rng::seeded(8);
        let s: Vec<f64> = (0..100_000).map(|_| rng.random::<f64>()).collect();
        let (lo, hi) = hdi(&s, 0.9).unwrap();
        assert!((hi - lo - 0.9).abs() < 0.01);
        assert!(lo < 0.1 + 0.01);
    }

    #[test]
    fn tie_rule_prefers_lowest_window() {
        let s: Vec<f64> = (0..100).map(|i| i as f64).collect();
        assert_eq!(hdi(&s, 0.5).unwrap(), (0.0, 49.0));
    }

    #[test]
    fn rejects_small_or_bad_mass() {
        assert!(hdi(&[1.0f64; 10], 0.9).is_err());
        assert!(hdi(&[1.0f64; 200], 1.0).is_err());
        assert!(hdi(&[1.0f64; 200], 0.0).is_err());
    }

    #[test]
    fn f32_hdi() {
        let s: Vec<f32> = (0..1000).map(|i| i as f32 / 1000.0).collect();
        let (lo, hi) = hdi(&s, 0.8f32).unwrap();
        assert!((hi - lo - 0.799).abs() < 1e-5);
    }

    #[test]
    fn quantiles() {
        let s = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&s, 0.5), 3.0);
        assert_eq!(quantile_sorted(&s, 0.25), 2.0);
        assert_eq!(quantile_sorted(&s, 0.1), 1.4);
    }

    proptest::proptest! {
        #[test]
        fn hdi_mass_containment(seed in 0u64..1_000_000, n in 100usize..2000, mass in 0.05f64..0.99) {
            let mut rng = crate::rng::seeded(seed);
            let s: Vec<f64> = (0..n).map(|_| rng.random::<f64>().powi(3)).collect();
            let (lo, hi) = hdi(&s, mass).unwrap();
            let inside = s.iter().filter(|&&v| v >= lo && v <= hi).count();
            proptest::prop_assert!(inside as f64 >= mass * n as f64);
            proptest::prop_assert!(((inside - 1) as f64) < mass * n as f64);
        }
    }
}
