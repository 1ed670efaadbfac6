//! Dataset generation, posterior inference and benchmark orchestration.

pub mod benchmark;

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::metrics::relative_l2;
use crate::fem::{add_noise, ObservationVector, Simulator};
use crate::flow::FlowModel;
use crate::impedance::{sample_prior, PriorSpec, ReferenceSet, ThetaVector, N_SURFACES, THETA_DIM};
use crate::stats::Summary;
use crate::{rng, Error, Result, C64};

pub use benchmark::{
    parameter_study, run_benchmark, BenchmarkContext, BenchmarkOutcome, StudyAxis, StudyPoint, StudyRow, StudyRunner,
};

/// Largest tolerated fraction of failed simulations.
pub const MAX_SKIP_FRACTION: f64 = 0.01;

/// Generation settings recorded alongside the simulated pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub requested: usize,
    pub seed: u64,
    pub mesh_divisions: [usize; 3],
    pub freqs: Vec<f64>,
    pub n_points: usize,
    pub observation_seed: u64,
    /// Generation index of every stored record.
    pub record_ids: Vec<usize>,
    pub skipped: Vec<usize>,
}

/// Prior draws and their clean simulated observations, one row per record.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingDataset {
    pub meta: DatasetMeta,
    pub thetas: Array2<f64>,
    pub data: Array2<f64>,
}

/// Seed of the prior draw of record `index`.
pub fn record_theta_seed(seed: u64, index: usize) -> u64 {
    rng::stream_seed(seed, "theta", index as u64)
}

/// Seed of the observation noise of record `index`.
pub fn record_noise_seed(seed: u64, index: usize) -> u64 {
    rng::stream_seed(seed, "noise", index as u64)
}

/// Simulates `n_sim` independent prior draws. Record `j` depends only on
/// `(seed, j)`, so a smaller dataset is a prefix of a larger one.
pub fn generate_training_set(sim: &Simulator, prior: &PriorSpec<f64>, n_sim: usize, seed: u64) -> Result<TrainingDataset> {
    prior.validate()?;
    if n_sim == 0 {
        return Err(Error::Validation("n_sim must be >= 1".into()));
    }
    let results: Vec<(usize, Result<(ThetaVector<f64>, ObservationVector)>)> = (0..n_sim)
        .into_par_iter()
        .map(|j| {
            let r = sample_prior(prior, record_theta_seed(seed, j)).and_then(|theta| {
                let obs = sim.simulate(&theta)?;
                Ok((theta, obs))
            });
            (j, r)
        })
        .collect();
    let mut skipped = Vec::new();
    let mut ok = Vec::with_capacity(n_sim);
    for (j, r) in results {
        match r {
            Ok(pair) => ok.push((j, pair)),
            Err(e) => {
                log::warn!("record {j} skipped: {e}");
                skipped.push(j);
            }
        }
    }
    if skipped.len() as f64 > MAX_SKIP_FRACTION * n_sim as f64 {
        return Err(Error::Solver {
            freq_hz: f64::NAN,
            residual: f64::NAN,
            reason: format!("{} of {n_sim} simulations failed (limit 1%)", skipped.len()),
        });
    }
    let d = sim.output_len();
    let mut thetas = Array2::zeros((ok.len(), THETA_DIM));
    let mut data = Array2::zeros((ok.len(), d));
    let mut record_ids = Vec::with_capacity(ok.len());
    for (row, (j, (theta, obs))) in ok.into_iter().enumerate() {
        thetas.row_mut(row).assign(&ndarray::aview1(theta.as_slice()));
        data.row_mut(row).assign(&ndarray::aview1(&obs.data));
        record_ids.push(j);
    }
    Ok(TrainingDataset {
        meta: DatasetMeta {
            requested: n_sim,
            seed,
            mesh_divisions: sim.solver.mesh.divisions,
            freqs: sim.freqs.clone(),
            n_points: sim.observations.len(),
            observation_seed: sim.observations.seed,
            record_ids,
            skipped,
        },
        thetas,
        data,
    })
}

impl TrainingDataset {
    pub fn len(&self) -> usize {
        self.thetas.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn theta(&self, i: usize) -> ThetaVector<f64> {
        ThetaVector(self.thetas.row(i).to_vec())
    }

    pub fn observation(&self, i: usize) -> ObservationVector {
        ObservationVector {
            data: self.data.row(i).to_vec(),
            freqs: self.meta.freqs.clone(),
            n_points: self.meta.n_points,
            snr_db: None,
        }
    }

    /// First `n` records.
    pub fn prefix(&self, n: usize) -> Result<TrainingDataset> {
        if n > self.len() || n == 0 {
            return Err(Error::Validation(format!("cannot take {n} of {} records", self.len())));
        }
        let mut meta = self.meta.clone();
        let last_id = self.meta.record_ids[n - 1];
        meta.requested = last_id + 1;
        meta.record_ids.truncate(n);
        meta.skipped.retain(|&j| j < last_id);
        Ok(TrainingDataset {
            meta,
            thetas: self.thetas.slice(ndarray::s![..n, ..]).to_owned(),
            data: self.data.slice(ndarray::s![..n, ..]).to_owned(),
        })
    }

    /// Observations with independent noise per record at `snr_db`.
    pub fn noisy_data(&self, snr_db: f64, seed: u64) -> Result<Array2<f64>> {
        let rows: Vec<Result<Vec<f64>>> = (0..self.len())
            .into_par_iter()
            .map(|i| Ok(add_noise(&self.observation(i), snr_db, record_noise_seed(seed, self.meta.record_ids[i]))?.data))
            .collect();
        let mut out = Array2::zeros(self.data.dim());
        for (i, r) in rows.into_iter().enumerate() {
            out.row_mut(i).assign(&ndarray::aview1(&r?));
        }
        Ok(out)
    }

    pub fn validate(&self, prior: &PriorSpec<f64>) -> Result<()> {
        if self.thetas.nrows() != self.data.nrows() || self.meta.record_ids.len() != self.len() {
            return Err(Error::Validation("dataset row counts disagree".into()));
        }
        if self.data.ncols() != 2 * self.meta.n_points * self.meta.freqs.len() {
            return Err(Error::Validation("dataset data width does not match points x frequencies".into()));
        }
        for (i, row) in self.thetas.rows().into_iter().enumerate() {
            if !prior.contains(&ThetaVector(row.to_vec())) {
                return Err(Error::Support(format!("record {i} outside the prior")));
            }
        }
        Ok(())
    }
}

/// Mean and HDI of the real and imaginary impedance at one frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpedanceStats {
    pub freq: f64,
    pub re: Summary,
    pub im: Summary,
}

/// Posterior samples for one observation and their impedance statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorEnsemble {
    pub samples: Array2<f64>,
    pub freqs: Vec<f64>,
    pub hdi_mass: f64,
    /// `surfaces[s][f]`
    pub surfaces: Vec<Vec<ImpedanceStats>>,
}

impl PosteriorEnsemble {
    /// Computes the per-surface, per-frequency statistics of the samples.
    pub fn from_samples(samples: Array2<f64>, freqs: &[f64], hdi_mass: f64) -> Result<Self> {
        if samples.ncols() != THETA_DIM {
            return Err(Error::Validation(format!("posterior samples have {} columns", samples.ncols())));
        }
        let jobs: Vec<(usize, usize)> = (0..N_SURFACES).flat_map(|s| (0..freqs.len()).map(move |f| (s, f))).collect();
        let stats: Vec<Result<ImpedanceStats>> = jobs
            .par_iter()
            .map(|&(s, f)| {
                let z = surface_impedances(&samples, s, freqs[f]);
                let re: Vec<f64> = z.iter().map(|v| v.re).collect();
                let im: Vec<f64> = z.iter().map(|v| v.im).collect();
                Ok(ImpedanceStats {
                    freq: freqs[f],
                    re: Summary::from_samples(&re, hdi_mass)?,
                    im: Summary::from_samples(&im, hdi_mass)?,
                })
            })
            .collect();
        let mut surfaces = vec![Vec::with_capacity(freqs.len()); N_SURFACES];
        for ((s, _), st) in jobs.into_iter().zip(stats) {
            surfaces[s].push(st?);
        }
        Ok(PosteriorEnsemble { samples, freqs: freqs.to_vec(), hdi_mass, surfaces })
    }

    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn theta(&self, i: usize) -> ThetaVector<f64> {
        ThetaVector(self.samples.row(i).to_vec())
    }

    pub fn mean_theta(&self) -> ThetaVector<f64> {
        ThetaVector(self.samples.mean_axis(Axis(0)).unwrap().to_vec())
    }
}

/// Impedance of surface `s` at `freq` for every sample row.
pub fn surface_impedances(samples: &Array2<f64>, s: usize, freq: f64) -> Vec<C64> {
    samples
        .rows()
        .into_iter()
        .map(|row| {
            let p = crate::impedance::ImpedanceParams::from_slice(&row.as_slice().unwrap()[4 * s..4 * s + 4]);
            crate::impedance::eval_unchecked(&p, freq)
        })
        .collect()
}

/// Draws `n_samples` posterior samples for `obs` and summarizes them.
pub fn infer_posterior(
    model: &FlowModel,
    obs: &ObservationVector,
    n_samples: usize,
    seed: u64,
    freqs: &[f64],
    hdi_mass: f64,
) -> Result<PosteriorEnsemble> {
    if obs.len() != model.data_dim() {
        return Err(Error::Validation(format!(
            "observation has {} entries, model expects {}",
            obs.len(),
            model.data_dim()
        )));
    }
    let samples = model.sample(&obs.data, n_samples, seed)?;
    PosteriorEnsemble::from_samples(samples, freqs, hdi_mass)
}

/// Relative impedance error of one surface, over posterior samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceError {
    /// Surface number, 1 to 6.
    pub surface: usize,
    /// Mean over samples of the per-sample error.
    pub mean: f64,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
    /// Error of the posterior-mean impedance curve.
    pub of_mean: f64,
}

/// Per-sample errors `eps[s][i]` of every surface against the reference.
pub fn per_sample_errors(samples: &ArrayView2<f64>, reference: &ReferenceSet<f64>, freqs: &[f64]) -> Result<Vec<Vec<f64>>> {
    let refs: Vec<Vec<C64>> = (0..N_SURFACES)
        .map(|s| freqs.iter().map(|&f| reference.surfaces[s].eval(f)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    (0..N_SURFACES)
        .map(|s| {
            samples
                .rows()
                .into_iter()
                .collect::<Vec<_>>()
                .par_iter()
                .map(|row| {
                    let p = crate::impedance::ImpedanceParams::from_slice(&row.as_slice().unwrap()[4 * s..4 * s + 4]);
                    let est: Vec<C64> = freqs.iter().map(|&f| crate::impedance::eval_unchecked(&p, f)).collect();
                    relative_l2(&est, &refs[s], freqs)
                })
                .collect()
        })
        .collect()
}

/// Error summary of every surface of an ensemble.
pub fn surface_errors(ensemble: &PosteriorEnsemble, reference: &ReferenceSet<f64>) -> Result<Vec<SurfaceError>> {
    let eps = per_sample_errors(&ensemble.samples.view(), reference, &ensemble.freqs)?;
    eps.iter()
        .enumerate()
        .map(|(s, e)| {
            let summary = Summary::from_samples(e, ensemble.hdi_mass)?;
            let mean_curve: Vec<C64> = ensemble.surfaces[s].iter().map(|st| C64::new(st.re.mean, st.im.mean)).collect();
            let ref_curve: Vec<C64> =
                ensemble.freqs.iter().map(|&f| reference.surfaces[s].eval(f)).collect::<Result<_>>()?;
            Ok(SurfaceError {
                surface: s + 1,
                mean: summary.mean,
                median: summary.median,
                lower: summary.lower,
                upper: summary.upper,
                of_mean: relative_l2(&mean_curve, &ref_curve, &ensemble.freqs)?,
            })
        })
        .collect()
}

/// Mean over surfaces of the per-sample error, summarized over samples.
pub fn aggregate_error(ensemble: &PosteriorEnsemble, reference: &ReferenceSet<f64>) -> Result<Summary> {
    let eps = per_sample_errors(&ensemble.samples.view(), reference, &ensemble.freqs)?;
    let n = ensemble.len();
    let agg: Vec<f64> = (0..n).map(|i| eps.iter().map(|e| e[i]).sum::<f64>() / N_SURFACES as f64).collect();
    Summary::from_samples(&agg, ensemble.hdi_mass)
}
