//! Fractional damped-oscillator surface impedance model.
//!
//! A surface is described by four scalars and its
//! normalized impedance (divided by `rho0 * c`) is
//!
//! ```text
//! Z(w) = R + K / (i w) + G (i w)^gamma,    w = 2 pi f
//! ```
//!
//! with the principal branch `(i w)^gamma = w^gamma * exp(i gamma pi / 2)`.
//! Six surfaces are stacked into a 24-component [`ThetaVector`] in the order
//! `(R1, K1, G1, gamma1, ..., R6, K6, G6, gamma6)`. Wall mapping:
//! Z1 = `x = 0`, Z2 = `x = Lx`, Z3 = `y = 0`, Z4 = `y = Ly`, Z5 = `z = 0`,
//! Z6 = `z = Lz`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{rng, Complex, Error, Real, Result};

pub const N_SURFACES: usize = 6;
pub const PARAMS_PER_SURFACE: usize = 4;
pub const THETA_DIM: usize = N_SURFACES * PARAMS_PER_SURFACE;
pub const PARAM_NAMES: [&str; PARAMS_PER_SURFACE] = ["R", "K", "G", "gamma"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpedanceParams<T> {
    pub r: T,
    pub k: T,
    pub g: T,
    pub gamma: T,
}

impl<T: Real> ImpedanceParams<T> {
    pub fn new(r: T, k: T, g: T, gamma: T) -> Self {
        Self { r, k, g, gamma }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [self.r, self.k, self.g, self.gamma];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("non-finite impedance parameter in {self:?}")));
        }
        if self.r < T::zero() || self.k < T::zero() || self.g < T::zero() {
            return Err(Error::Validation(format!("R, K, G must be >= 0, got {self:?}")));
        }
        if self.gamma < -T::one() || self.gamma > T::one() {
            return Err(Error::Validation(format!("gamma must lie in [-1, 1], got {:?}", self.gamma)));
        }
        Ok(())
    }

    pub fn to_array(&self) -> [T; PARAMS_PER_SURFACE] {
        [self.r, self.k, self.g, self.gamma]
    }

    pub fn from_slice(v: &[T]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    /// Normalized impedance at `freq_hz`.
    pub fn eval(&self, freq_hz: T) -> Result<Complex<T>> {
        eval_impedance(self, freq_hz)
    }
}

/// Evaluates `R + K/(i w) + G (i w)^gamma` at `freq_hz`.
pub fn eval_impedance<T: Real>(params: &ImpedanceParams<T>, freq_hz: T) -> Result<Complex<T>> {
    if !freq_hz.is_finite() || freq_hz <= T::zero() {
        return Err(Error::Domain(format!("frequency must be finite and positive, got {freq_hz:?}")));
    }
    params.validate()?;
    Ok(eval_unchecked(params, freq_hz))
}

/// Same as [`eval_impedance`] without validation; for hot loops over
/// parameters that are already known to be in the prior support.
pub fn eval_unchecked<T: Real>(p: &ImpedanceParams<T>, freq_hz: T) -> Complex<T> {
    let omega = T::lit(2.0) * T::PI() * freq_hz;
    let half_pi_gamma = p.gamma * T::FRAC_PI_2();
    let mag = p.g * omega.powf(p.gamma);
    Complex::new(
        p.r + mag * half_pi_gamma.cos(),
        -p.k / omega + mag * half_pi_gamma.sin(),
    )
}

/// Six surface parameter sets flattened to 24 values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ThetaVector<T>(pub Vec<T>);

impl<T: Real> ThetaVector<T> {
    pub fn from_surfaces(surfaces: &[ImpedanceParams<T>; N_SURFACES]) -> Self {
        ThetaVector(surfaces.iter().flat_map(|s| s.to_array()).collect())
    }

    pub fn from_vec(values: Vec<T>) -> Result<Self> {
        if values.len() != THETA_DIM {
            return Err(Error::Validation(format!(
                "theta must have {THETA_DIM} components, got {}",
                values.len()
            )));
        }
        Ok(ThetaVector(values))
    }

    pub fn surfaces(&self) -> [ImpedanceParams<T>; N_SURFACES] {
        std::array::from_fn(|s| ImpedanceParams::from_slice(&self.0[s * 4..s * 4 + 4]))
    }

    pub fn surface(&self, s: usize) -> ImpedanceParams<T> {
        ImpedanceParams::from_slice(&self.0[s * 4..s * 4 + 4])
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    /// Normalized impedances of all six surfaces at one frequency.
    pub fn impedances(&self, freq_hz: T) -> [Complex<T>; N_SURFACES] {
        std::array::from_fn(|s| eval_unchecked(&self.surface(s), freq_hz))
    }
}

/// Closed interval of a uniform prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds<T> {
    pub lower: T,
    pub upper: T,
}

impl<T: Real> Bounds<T> {
    pub fn new(lower: T, upper: T) -> Self {
        Self { lower, upper }
    }

    pub fn width(&self) -> T {
        self.upper - self.lower
    }

    pub fn midpoint(&self) -> T {
        (self.lower + self.upper) / T::lit(2.0)
    }

    pub fn contains(&self, v: T) -> bool {
        v >= self.lower && v <= self.upper
    }
}

/// Uniform bounds for the four parameters of one surface group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupPrior<T> {
    pub r: Bounds<T>,
    pub k: Bounds<T>,
    pub g: Bounds<T>,
    pub gamma: Bounds<T>,
}

impl<T: Real> GroupPrior<T> {
    pub fn as_array(&self) -> [Bounds<T>; PARAMS_PER_SURFACE] {
        [self.r, self.k, self.g, self.gamma]
    }
}

/// Independent uniform priors; `walls_12` applies to Z1 and Z2,
/// `walls_3456` to Z3..Z6.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec<T> {
    pub walls_12: GroupPrior<T>,
    pub walls_3456: GroupPrior<T>,
}

impl<T: Real> PriorSpec<T> {
    /// Benchmark priors of the cuboid room.
    pub fn benchmark() -> Self {
        let b = |lo: f64, hi: f64| Bounds::new(T::lit(lo), T::lit(hi));
        PriorSpec {
            walls_12: GroupPrior {
                r: b(0.05, 0.50),
                k: b(0.10, 1.50),
                g: b(0.005, 0.10),
                gamma: b(-0.50, 0.00),
            },
            walls_3456: GroupPrior {
                r: b(0.10, 2.00),
                k: b(0.01, 1.00),
                g: b(0.01, 0.60),
                gamma: b(-0.70, -0.20),
            },
        }
    }

    /// `strict` demands lower < upper; degenerate point priors are allowed
    /// otherwise (used for propagation checks).
    pub fn validate_with(&self, strict: bool) -> Result<()> {
        for (gi, group) in [self.walls_12, self.walls_3456].iter().enumerate() {
            for (pi, b) in group.as_array().iter().enumerate() {
                let name = PARAM_NAMES[pi];
                if !b.lower.is_finite() || !b.upper.is_finite() {
                    return Err(Error::Validation(format!("prior group {gi} {name}: non-finite bound")));
                }
                let bad = if strict { b.lower >= b.upper } else { b.lower > b.upper };
                if bad {
                    return Err(Error::Validation(format!(
                        "prior group {gi} {name}: lower {:?} must be < upper {:?}",
                        b.lower, b.upper
                    )));
                }
                let probe = ImpedanceParams::new(T::zero(), T::zero(), T::zero(), T::zero());
                let mut v = probe.to_array();
                for bound in [b.lower, b.upper] {
                    v[pi] = bound;
                    ImpedanceParams::from_slice(&v).validate().map_err(|e| {
                        Error::Validation(format!("prior group {gi} {name}: {e}"))
                    })?;
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_with(true)
    }

    /// Per-component bounds in theta order.
    pub fn component_bounds(&self) -> Vec<Bounds<T>> {
        (0..N_SURFACES)
            .flat_map(|s| {
                let g = if s < 2 { self.walls_12 } else { self.walls_3456 };
                g.as_array()
            })
            .collect()
    }

    pub fn contains(&self, theta: &ThetaVector<T>) -> bool {
        theta.0.len() == THETA_DIM
            && self
                .component_bounds()
                .iter()
                .zip(&theta.0)
                .all(|(b, &v)| b.contains(v))
    }

    pub fn midpoint(&self) -> ThetaVector<T> {
        ThetaVector(self.component_bounds().iter().map(|b| b.midpoint()).collect())
    }
}

/// Draws one theta uniformly from the prior box.
pub fn sample_prior<T: Real>(prior: &PriorSpec<T>, seed: u64) -> Result<ThetaVector<T>> {
    prior.validate_with(false)?;
    let mut rng = rng::seeded(seed);
    Ok(sample_prior_with(prior, &mut rng))
}

pub fn sample_prior_with<T: Real, R: Rng + ?Sized>(prior: &PriorSpec<T>, rng: &mut R) -> ThetaVector<T> {
    ThetaVector(
        prior
            .component_bounds()
            .iter()
            .map(|b| {
                let u: f64 = rng.random();
                b.lower + T::lit(u) * b.width()
            })
            .collect(),
    )
}

/// Ground-truth benchmark surfaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSet<T> {
    pub surfaces: [ImpedanceParams<T>; N_SURFACES],
}

impl<T: Real> ReferenceSet<T> {
    pub fn benchmark() -> Self {
        let p = |r: f64, k: f64, g: f64, gamma: f64| {
            ImpedanceParams::new(T::lit(r), T::lit(k), T::lit(g), T::lit(gamma))
        };
        ReferenceSet {
            surfaces: [
                p(0.15, 0.85, 0.015, -0.20),
                p(0.25, 0.75, 0.020, -0.15),
                p(1.00, 0.40, 0.100, -0.50),
                p(0.70, 0.55, 0.100, -0.55),
                p(1.20, 0.40, 0.200, -0.50),
                p(0.80, 0.40, 0.400, -0.55),
            ],
        }
    }

    pub fn theta(&self) -> ThetaVector<T> {
        ThetaVector::from_surfaces(&self.surfaces)
    }

    pub fn validate(&self) -> Result<()> {
        self.surfaces.iter().try_for_each(|s| s.validate())
    }
}

pub const BAND_PERCENTILES: [f64; 5] = [5.0, 25.0, 50.0, 75.0, 95.0];

/// Percentile curves of `Re(Z)` and `Im(Z)` for one surface.
/// Indexing: `re[f][q]` with `q` over [`BAND_PERCENTILES`].
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceBands<T> {
    pub re: Vec<[T; 5]>,
    pub im: Vec<[T; 5]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorBands<T> {
    pub freqs: Vec<T>,
    pub surfaces: Vec<SurfaceBands<T>>,
}

/// Pushes `n_draws` prior samples through the impedance model and returns
/// 5/25/50/75/95 percentile curves per surface and frequency.
pub fn propagate_prior<T: Real>(
    prior: &PriorSpec<T>,
    freqs: &[T],
    n_draws: usize,
    seed: u64,
) -> Result<PriorBands<T>> {
    if freqs.is_empty() {
        return Err(Error::Validation("frequency list is empty".into()));
    }
    if n_draws < 1000 {
        return Err(Error::Validation(format!("n_draws must be >= 1000, got {n_draws}")));
    }
    if let Some(f) = freqs.iter().find(|f| !f.is_finite() || **f <= T::zero()) {
        return Err(Error::Domain(format!("frequency must be finite and positive, got {f:?}")));
    }
    prior.validate_with(false)?;
    let mut rng = rng::seeded(seed);
    let draws: Vec<ThetaVector<T>> = (0..n_draws).map(|_| sample_prior_with(prior, &mut rng)).collect();

    let mut surfaces = Vec::with_capacity(N_SURFACES);
    let mut re_buf = vec![T::zero(); n_draws];
    let mut im_buf = vec![T::zero(); n_draws];
    for s in 0..N_SURFACES {
        let mut re = Vec::with_capacity(freqs.len());
        let mut im = Vec::with_capacity(freqs.len());
        for &f in freqs {
            for (i, th) in draws.iter().enumerate() {
                let z = eval_unchecked(&th.surface(s), f);
                re_buf[i] = z.re;
                im_buf[i] = z.im;
            }
            re.push(percentiles(&mut re_buf));
            im.push(percentiles(&mut im_buf));
        }
        surfaces.push(SurfaceBands { re, im });
    }
    Ok(PriorBands { freqs: freqs.to_vec(), surfaces })
}

fn percentiles<T: Real>(buf: &mut [T]) -> [T; 5] {
    buf.sort_by(|a, b| a.partial_cmp(b).expect("finite impedance"));
    BAND_PERCENTILES.map(|p| crate::stats::quantile_sorted(buf, T::lit(p / 100.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(r: f64, k: f64, g: f64, gamma: f64) -> ImpedanceParams<f64> {
        ImpedanceParams::new(r, k, g, gamma)
    }

    #[test]
    fn resistive_only() {
        let z = eval_impedance(&p(0.5, 0.0, 0.0, 0.3), 100.0).unwrap();
        assert_eq!(z, Complex::new(0.5, 0.0));
    }

    #[test]
    fn gamma_zero_adds_g() {
        let z = eval_impedance(&p(0.1, 0.0, 0.2, 0.0), 100.0).unwrap();
        assert!((z.re - 0.3).abs() < 1e-15 && z.im.abs() < 1e-15);
    }

    #[test]
    fn reference_z1_at_63hz() {
        // 30-digit evaluation of the same expression (mpmath).
        let z = eval_impedance(&p(0.15, 0.85, 0.015, -0.20), 63.0).unwrap();
        assert!((z.re - 0.154_313_139_462_914_4).abs() < 1e-12, "{z}");
        assert!((z.im + 0.003_548_752_561_371_916).abs() < 1e-12, "{z}");
    }

    #[test]
    fn f32_matches_f64() {
        let z32 = eval_impedance(&ImpedanceParams::<f32>::new(0.15, 0.85, 0.015, -0.2), 63.0).unwrap();
        let z64 = eval_impedance(&p(0.15, 0.85, 0.015, -0.2), 63.0).unwrap();
        assert!((z32.re as f64 - z64.re).abs() < 1e-6);
        assert!((z32.im as f64 - z64.im).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(eval_impedance(&p(0.1, 0.1, 0.1, 0.0), 0.0), Err(Error::Domain(_))));
        assert!(matches!(eval_impedance(&p(0.1, 0.1, 0.1, 0.0), f64::NAN), Err(Error::Domain(_))));
        assert!(matches!(eval_impedance(&p(-0.1, 0.1, 0.1, 0.0), 10.0), Err(Error::Validation(_))));
        assert!(matches!(eval_impedance(&p(0.1, 0.1, 0.1, 1.5), 10.0), Err(Error::Validation(_))));
    }

    #[test]
    fn k_term_purity() {
        let mut last = f64::NEG_INFINITY;
        for f in [45.0, 63.0, 100.0, 250.0, 500.0] {
            let z = eval_impedance(&p(0.3, 0.7, 0.0, -0.4), f).unwrap();
            let omega = 2.0 * std::f64::consts::PI * f;
            assert_eq!(z.im, -0.7 / omega);
            assert!(z.im > last && z.im < 0.0);
            last = z.im;
        }
    }

    #[test]
    fn gamma_continuity_at_zero() {
        let z0 = eval_impedance(&p(0.2, 0.3, 0.4, 0.0), 140.0).unwrap();
        let mut prev = f64::INFINITY;
        for eps in [1e-2, 1e-4, 1e-6, 1e-8] {
            let d = (eval_impedance(&p(0.2, 0.3, 0.4, eps), 140.0).unwrap() - z0).norm();
            assert!(d < prev);
            prev = d;
        }
        assert!(prev < 1e-6);
    }

    #[test]
    fn benchmark_tables() {
        let prior = PriorSpec::<f64>::benchmark();
        prior.validate().unwrap();
        let b = prior.component_bounds();
        assert_eq!(b.len(), THETA_DIM);
        assert_eq!((b[0].lower, b[0].upper), (0.05, 0.50));
        assert_eq!((b[7].lower, b[7].upper), (-0.50, 0.00));
        assert_eq!((b[8].lower, b[8].upper), (0.10, 2.00));
        assert_eq!((b[23].lower, b[23].upper), (-0.70, -0.20));
        let reference = ReferenceSet::<f64>::benchmark();
        assert_eq!(reference.surfaces[5], p(0.80, 0.40, 0.400, -0.55));
        assert!(prior.contains(&reference.theta()));
    }

    #[test]
    fn prior_draws_within_bounds_and_deterministic() {
        let prior = PriorSpec::<f64>::benchmark();
        let mut rng = rng::seeded(11);
        for _ in 0..10_000 {
            assert!(prior.contains(&sample_prior_with(&prior, &mut rng)));
        }
        assert_eq!(sample_prior(&prior, 5).unwrap(), sample_prior(&prior, 5).unwrap());
        assert_ne!(sample_prior(&prior, 5).unwrap(), sample_prior(&prior, 6).unwrap());
    }

    #[test]
    fn prior_means_match_midpoints() {
        let prior = PriorSpec::<f64>::benchmark();
        let n = 100_000;
        let mut rng = rng::seeded(99);
        let mut sums = vec![0.0; THETA_DIM];
        for _ in 0..n {
            for (s, v) in sums.iter_mut().zip(sample_prior_with(&prior, &mut rng).0) {
                *s += v;
            }
        }
        for (b, s) in prior.component_bounds().iter().zip(sums) {
            // uniform: sd = width / sqrt(12)
            let se = b.width() / 12f64.sqrt() / (n as f64).sqrt();
            assert!((s / n as f64 - b.midpoint()).abs() < 3.0 * se);
        }
    }

    #[test]
    fn degenerate_prior_gives_point_bands() {
        let r = ReferenceSet::<f64>::benchmark();
        let point = |ps: &ImpedanceParams<f64>| GroupPrior {
            r: Bounds::new(ps.r, ps.r),
            k: Bounds::new(ps.k, ps.k),
            g: Bounds::new(ps.g, ps.g),
            gamma: Bounds::new(ps.gamma, ps.gamma),
        };
        let prior = PriorSpec { walls_12: point(&r.surfaces[0]), walls_3456: point(&r.surfaces[0]) };
        let bands = propagate_prior(&prior, &[125.0], 1000, 1).unwrap();
        let z = r.surfaces[0].eval(125.0).unwrap();
        for q in 0..5 {
            assert!((bands.surfaces[0].re[0][q] - z.re).abs() < 1e-15);
            assert!((bands.surfaces[4].im[0][q] - z.im).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_frequency_list_rejected() {
        let prior = PriorSpec::<f64>::benchmark();
        assert!(matches!(propagate_prior(&prior, &[], 1000, 1), Err(Error::Validation(_))));
        assert!(matches!(propagate_prior(&prior, &[100.0], 10, 1), Err(Error::Validation(_))));
    }

    #[test]
    fn flatten_round_trip() {
        let r = ReferenceSet::<f64>::benchmark();
        assert_eq!(ThetaVector::from_surfaces(&r.surfaces).surfaces(), r.surfaces);
    }

    proptest::proptest! {
        #[test]
        fn passive_over_prior_support(u in proptest::collection::vec(0.0f64..=1.0, 4), f in 45.0f64..500.0, wall in 0usize..6) {
            let prior = PriorSpec::<f64>::benchmark();
            let b = &prior.component_bounds()[wall * 4..wall * 4 + 4];
            let params = ImpedanceParams::new(
                b[0].lower + u[0] * b[0].width(),
                b[1].lower + u[1] * b[1].width(),
                b[2].lower + u[2] * b[2].width(),
                b[3].lower + u[3] * b[3].width(),
            );
            proptest::prop_assert!(eval_impedance(&params, f).unwrap().re >= 0.0);
        }
    }
}
