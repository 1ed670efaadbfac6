//! Observation vectors: simulated microphone pressures and additive noise.
//!
//! Layout of [`ObservationVector::data`] is frequency-major, then point,
//! then real before imaginary part:
//! `[Re p(f1,x1), Im p(f1,x1), Re p(f1,x2), ..., Im p(fN,xM)]`.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::solver::HelmholtzSolver;
use crate::geometry::{HexMesh, ObservationSet, RoomSpec};
use crate::impedance::ThetaVector;
use crate::{rng, Error, Result, C64};

/// Nominal sixth-octave band centres between 63 Hz and 500 Hz.
pub const SIXTH_OCTAVE_63_500: [f64; 19] = [
    63.0, 71.0, 80.0, 90.0, 100.0, 112.0, 125.0, 140.0, 160.0, 180.0, 200.0, 224.0, 250.0, 280.0, 315.0,
    355.0, 400.0, 450.0, 500.0,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationVector {
    pub data: Vec<f64>,
    pub freqs: Vec<f64>,
    pub n_points: usize,
    /// SNR of the added noise in dB, `None` for clean data.
    pub snr_db: Option<f64>,
}

impl ObservationVector {
    pub fn from_pressures(pressures: &[Vec<C64>], freqs: &[f64]) -> Self {
        let n_points = pressures.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(2 * n_points * freqs.len());
        for per_freq in pressures {
            for p in per_freq {
                data.push(p.re);
                data.push(p.im);
            }
        }
        ObservationVector { data, freqs: freqs.to_vec(), n_points, snr_db: None }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn index(&self, freq: usize, point: usize) -> usize {
        2 * (freq * self.n_points + point)
    }

    pub fn pressure(&self, freq: usize, point: usize) -> C64 {
        let i = self.index(freq, point);
        C64::new(self.data[i], self.data[i + 1])
    }

    /// Mean of `|p|^2` over points at frequency index `freq`.
    pub fn mean_power(&self, freq: usize) -> f64 {
        (0..self.n_points).map(|p| self.pressure(freq, p).norm_sqr()).sum::<f64>() / self.n_points as f64
    }
}

/// Adds zero-mean Gaussian noise independently to every real and imaginary
/// entry, with per-frequency standard deviation
/// `sigma(f) = sqrt(P(f) 10^(-snr/10) / 2)` and `P(f)` the point-averaged
/// power. `snr_db = +inf` returns the input unchanged.
pub fn add_noise(data: &ObservationVector, snr_db: f64, seed: u64) -> Result<ObservationVector> {
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(Error::Validation(format!("snr must be finite or +inf, got {snr_db}")));
    }
    let mut out = data.clone();
    if snr_db == f64::INFINITY {
        return Ok(out);
    }
    let mut rng = rng::seeded(seed);
    for f in 0..data.freqs.len() {
        let sigma = (data.mean_power(f) * 10f64.powf(-snr_db / 10.0) / 2.0).sqrt();
        let start = data.index(f, 0);
        for v in &mut out.data[start..start + 2 * data.n_points] {
            let e: f64 = StandardNormal.sample(&mut rng);
            *v += sigma * e;
        }
    }
    out.snr_db = Some(snr_db);
    Ok(out)
}

/// Forward model: impedance parameters to microphone pressures.
pub struct Simulator {
    pub solver: HelmholtzSolver,
    pub observations: ObservationSet,
    pub freqs: Vec<f64>,
    probes: Vec<[[(usize, f64); 2]; 3]>,
    calls: AtomicUsize,
}

impl Simulator {
    pub fn new(room: &RoomSpec, mesh: &HexMesh, observations: &ObservationSet, freqs: &[f64]) -> Result<Self> {
        if freqs.is_empty() {
            return Err(Error::Validation("frequency list is empty".into()));
        }
        if let Some(f) = freqs.iter().find(|f| !(**f > 0.0) || !f.is_finite()) {
            return Err(Error::Domain(format!("frequency must be positive, got {f}")));
        }
        let solver = HelmholtzSolver::new(room, mesh)?;
        let probes = solver.point_probes(&observations.points)?;
        Ok(Simulator {
            solver,
            observations: observations.clone(),
            freqs: freqs.to_vec(),
            probes,
            calls: AtomicUsize::new(0),
        })
    }

    /// Number of forward simulations performed so far.
    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn output_len(&self) -> usize {
        2 * self.observations.len() * self.freqs.len()
    }

    /// Clean pressures at the observation points for every frequency.
    pub fn simulate(&self, theta: &ThetaVector<f64>) -> Result<ObservationVector> {
        if theta.0.len() != crate::impedance::THETA_DIM {
            return Err(Error::Validation(format!("theta has {} components", theta.0.len())));
        }
        theta.surfaces().iter().try_for_each(|s| s.validate())?;
        self.calls.fetch_add(1, Ordering::Relaxed);
        let mut pressures = Vec::with_capacity(self.freqs.len());
        for &f in &self.freqs {
            let z = theta.impedances(f);
            let (values, _) = self.solver.solve_at_points(&z, f, &self.probes).map_err(|e| match e {
                Error::Solver { residual, reason, .. } => Error::Solver { freq_hz: f, residual, reason },
                other => other,
            })?;
            pressures.push(values);
        }
        Ok(ObservationVector::from_pressures(&pressures, &self.freqs))
    }

    /// Full nodal fields for every frequency.
    pub fn fields(&self, theta: &ThetaVector<f64>) -> Result<Vec<Vec<C64>>> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.freqs
            .iter()
            .map(|&f| Ok(self.solver.solve_frequency(&theta.impedances(f), f)?.pressure))
            .collect()
    }
}

/// Convenience wrapper building a [`Simulator`] for a single evaluation.
pub fn simulate_observation(
    theta: &ThetaVector<f64>,
    room: &RoomSpec,
    mesh: &HexMesh,
    obs: &ObservationSet,
    freqs: &[f64],
) -> Result<ObservationVector> {
    Simulator::new(room, mesh, obs, freqs)?.simulate(theta)
}
