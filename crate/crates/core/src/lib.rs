//! In-situ estimation of frequency-dependent acoustic surface impedances.
//!
//! The crate couples a finite-element Helmholtz simulator of a cuboid room
//! with amortized neural posterior estimation:
//!
//! - [`impedance`]: fractional oscillator impedance model, priors and reference values
//! - [`geometry`]: structured hexahedral mesh and microphone placement
//! - [`fem`]: Robin-impedance Helmholtz solver, modal oracle, observation/noise model
//! - [`flow`]: conditional masked autoregressive spline flow and its training loop
//! - [`pipeline`]: dataset generation, posterior inference, HDIs, benchmark runs
//! - [`diagnostics`]: posterior predictive checks, L-C2ST, error metrics
//! - [`config`] / [`artifacts`]: run configuration, manifests and file formats
//!
//! Scalar-generic pieces (impedance evaluation, spline transforms, metrics,
//! interval estimates) are written against [`Real`]; the concrete `f64`
//! aliases below are what the rest of the pipeline uses.

pub mod artifacts;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod fem;
pub mod flow;
pub mod geometry;
pub mod impedance;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};

use std::fmt::Debug;

/// Floating point scalar used by the generic numerical kernels.
pub trait Real:
    num_traits::Float + num_traits::FloatConst + num_traits::FromPrimitive + Debug + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable")
    }
}

impl Real for f32 {}
impl Real for f64 {}

pub type Complex<T> = num_complex::Complex<T>;
pub type C64 = num_complex::Complex64;

pub type ImpedanceParams = impedance::ImpedanceParams<f64>;
pub type ImpedanceParamsF32 = impedance::ImpedanceParams<f32>;
pub type ThetaVector = impedance::ThetaVector<f64>;
pub type PriorSpec = impedance::PriorSpec<f64>;
pub type SplineParams = flow::spline::SplineParams<f64>;
