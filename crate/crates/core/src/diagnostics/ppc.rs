//! Posterior predictive checks on validation nodes of the training mesh.

use rand::seq::index::sample as sample_indices;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{mac, spl_of_magnitude};
use crate::fem::HelmholtzSolver;
use crate::geometry::{distance, HexMesh, ObservationSet, RoomSpec};
use crate::impedance::ThetaVector;
use crate::pipeline::MAX_SKIP_FRACTION;
use crate::stats::Summary;
use crate::{rng, Error, Result, C64};

pub const SPL_AVERAGING: &str =
    "spl = SPL(mean over validation nodes of |p|) per predictive sample; re/im = mean over nodes of Re p / Im p";

/// Mesh nodes used for validation: nodes at least `exclusion` away from the
/// source and from every microphone, capped at `cap` randomly chosen ones
/// (returned in ascending node order).
pub fn validation_nodes(
    mesh: &HexMesh,
    room: &RoomSpec,
    observations: &ObservationSet,
    exclusion: f64,
    cap: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let candidates: Vec<usize> = (0..mesh.n_nodes())
        .filter(|&n| {
            let x = &mesh.nodes[n];
            distance(x, &room.source_position) >= exclusion
                && observations.points.iter().all(|p| distance(x, p) > 1e-9)
        })
        .collect();
    if candidates.is_empty() {
        return Err(Error::Validation("no validation nodes left after exclusions".into()));
    }
    if candidates.len() <= cap {
        return Ok(candidates);
    }
    let mut picked: Vec<usize> =
        sample_indices(&mut rng::seeded(seed), candidates.len(), cap).into_iter().map(|i| candidates[i]).collect();
    picked.sort_unstable();
    Ok(picked)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpcRow {
    pub freq: f64,
    pub re: Summary,
    pub im: Summary,
    pub spl: Summary,
    pub mac: Summary,
    pub ref_re: f64,
    pub ref_im: f64,
    pub ref_spl: f64,
}

impl PpcRow {
    pub fn re_inside(&self) -> bool {
        self.re.lower <= self.ref_re && self.ref_re <= self.re.upper
    }

    pub fn im_inside(&self) -> bool {
        self.im.lower <= self.ref_im && self.ref_im <= self.im.upper
    }

    pub fn spl_inside(&self) -> bool {
        self.spl.lower <= self.ref_spl && self.ref_spl <= self.spl.upper
    }

    /// Reference inside all three predictive intervals.
    pub fn reference_inside(&self) -> bool {
        self.re_inside() && self.im_inside() && self.spl_inside()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PPCReport {
    pub rows: Vec<PpcRow>,
    pub n_ppc: usize,
    pub n_validation: usize,
    pub skipped: usize,
    pub hdi_mass: f64,
    pub averaging: String,
}

impl PPCReport {
    /// Fraction of frequencies whose reference lies inside all predictive HDIs.
    pub fn coverage(&self) -> f64 {
        self.rows.iter().filter(|r| r.reference_inside()).count() as f64 / self.rows.len() as f64
    }

    pub fn min_mean_mac(&self) -> f64 {
        self.rows.iter().map(|r| r.mac.mean).fold(f64::INFINITY, f64::min)
    }
}

/// Point averages of one field over the validation nodes.
fn averages(values: &[C64]) -> (f64, f64, f64) {
    let n = values.len() as f64;
    let re = values.iter().map(|v| v.re).sum::<f64>() / n;
    let im = values.iter().map(|v| v.im).sum::<f64>() / n;
    let mag = values.iter().map(|v| v.norm()).sum::<f64>() / n;
    (re, im, spl_of_magnitude(mag))
}

/// Simulates `thetas` on the solver's mesh and compares the predicted fields
/// at `nodes` with `reference[f][node]`.
pub fn posterior_predictive_check(
    thetas: &[ThetaVector<f64>],
    solver: &HelmholtzSolver,
    nodes: &[usize],
    reference: &[Vec<C64>],
    freqs: &[f64],
    hdi_mass: f64,
) -> Result<PPCReport> {
    if thetas.is_empty() || nodes.is_empty() {
        return Err(Error::Validation("posterior predictive check needs samples and validation nodes".into()));
    }
    if reference.len() != freqs.len() || reference.iter().any(|r| r.len() != nodes.len()) {
        return Err(Error::Validation("reference fields do not match frequencies x validation nodes".into()));
    }
    // per sample: per frequency (re, im, spl, mac)
    let sims: Vec<Option<Vec<[f64; 4]>>> = thetas
        .par_iter()
        .enumerate()
        .map(|(i, theta)| {
            let mut out = Vec::with_capacity(freqs.len());
            for (fi, &f) in freqs.iter().enumerate() {
                let field = match solver.solve_frequency(&theta.impedances(f), f) {
                    Ok(s) => s,
                    Err(e) => {
                        log::warn!("predictive sample {i} skipped: {e}");
                        return None;
                    }
                };
                let vals: Vec<C64> = nodes.iter().map(|&n| field.pressure[n]).collect();
                let (re, im, s) = averages(&vals);
                let m = mac(&reference[fi], &vals).unwrap_or(0.0);
                out.push([re, im, s, m]);
            }
            Some(out)
        })
        .collect();
    let skipped = sims.iter().filter(|s| s.is_none()).count();
    if skipped as f64 > MAX_SKIP_FRACTION * thetas.len() as f64 {
        return Err(Error::Diagnostic(format!("{skipped} of {} predictive simulations failed", thetas.len())));
    }
    let good: Vec<&Vec<[f64; 4]>> = sims.iter().flatten().collect();
    let mut rows = Vec::with_capacity(freqs.len());
    for (fi, &f) in freqs.iter().enumerate() {
        let col = |k: usize| -> Vec<f64> { good.iter().map(|s| s[fi][k]).collect() };
        let (ref_re, ref_im, ref_spl) = averages(&reference[fi]);
        rows.push(PpcRow {
            freq: f,
            re: Summary::from_samples(&col(0), hdi_mass)?,
            im: Summary::from_samples(&col(1), hdi_mass)?,
            spl: Summary::from_samples(&col(2), hdi_mass)?,
            mac: Summary::from_samples(&col(3), hdi_mass)?,
            ref_re,
            ref_im,
            ref_spl,
        });
    }
    Ok(PPCReport {
        rows,
        n_ppc: good.len(),
        n_validation: nodes.len(),
        skipped,
        hdi_mass,
        averaging: SPL_AVERAGING.to_string(),
    })
}
