//! End-to-end benchmark: generate, train, infer, diagnose, and write every
//! artifact; plus the one-axis parameter study.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::{
    aggregate_error, generate_training_set, infer_posterior, surface_errors, PosteriorEnsemble, SurfaceError,
    TrainingDataset,
};
use crate::artifacts::{self as art, FileEntry, Manifest};
use crate::config::RunConfig;
pub use crate::config::StudyAxis;
use crate::diagnostics::ppc::{posterior_predictive_check, validation_nodes, PPCReport};
use crate::diagnostics::{lc2st, CalibrationReport, ShiftedSampler};
use crate::fem::{add_noise, HelmholtzSolver, ObservationVector, Simulator};
use crate::flow::{train, FlowModel, ParamMap, TrainConfig, TrainLog};
use crate::geometry::{select_observation_points, HexMesh, ObservationSet};
use crate::impedance::{sample_prior, THETA_DIM};
use crate::stats::Summary;
use crate::{rng, Error, Result, C64};

/// Clean and noisy reference observation simulated on the fine mesh with
/// the reference impedances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceObservation {
    pub clean: ObservationVector,
    pub noisy: ObservationVector,
}

/// Meshes, microphones and the training-mesh simulator of one configuration.
pub struct BenchmarkContext {
    pub config: RunConfig,
    pub train_mesh: HexMesh,
    pub fine_mesh: HexMesh,
    pub observations: ObservationSet,
    pub simulator: Simulator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOutcome {
    pub reports: Vec<CalibrationReport>,
    /// Same test with the deliberately shifted sampler.
    pub corrupted: Vec<CalibrationReport>,
}

impl CalibrationOutcome {
    pub fn n_passed(&self) -> usize {
        self.reports.iter().filter(|r| r.passed).count()
    }

    pub fn corrupted_detected(&self) -> bool {
        self.corrupted.iter().all(|r| !r.passed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacRow {
    pub freq: f64,
    pub mac: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub surfaces: Vec<SurfaceError>,
    pub aggregate: Summary,
    pub mac: Vec<MacRow>,
}

/// In-memory results of a full benchmark run.
pub struct BenchmarkOutcome {
    pub dataset_len: usize,
    pub train_log: TrainLog,
    pub model: FlowModel,
    pub ensemble: PosteriorEnsemble,
    pub ppc: PPCReport,
    pub calibration: CalibrationOutcome,
    pub metrics: MetricsReport,
}

/// Training settings usable for `n` records: the batch shrinks so that the
/// dataset holds at least ten batches.
pub fn train_config_for(cfg: &TrainConfig, n: usize) -> TrainConfig {
    let mut c = cfg.clone();
    if n < 10 * c.batch_size {
        c.batch_size = (n / 10).max(1);
    }
    c
}

impl BenchmarkContext {
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let room = &config.room;
        let train_mesh = HexMesh::build(room, config.mesh.train_epw, config.mesh.f_max)?;
        let fine_mesh = train_mesh.refined(config.mesh.refinement)?;
        let o = &config.observations;
        let observations = select_observation_points(room, o.n, o.min_dist, o.margin, o.seed)?;
        let simulator = Simulator::new(room, &train_mesh, &observations, &config.frequencies)?;
        Ok(BenchmarkContext { config: config.clone(), train_mesh, fine_mesh, observations, simulator })
    }

    pub fn reference_observation(&self) -> Result<ReferenceObservation> {
        self.reference_observation_at(self.config.noise.snr_db)
    }

    pub fn reference_observation_at(&self, snr_db: f64) -> Result<ReferenceObservation> {
        let c = &self.config;
        let fine = Simulator::new(&c.room, &self.fine_mesh, &self.observations, &c.frequencies)?;
        let clean = fine.simulate(&c.reference.theta())?;
        let noisy = add_noise(&clean, snr_db, rng::stream_seed(c.noise.seed, "reference", 0))?;
        Ok(ReferenceObservation { clean, noisy })
    }

    pub fn generate(&self) -> Result<TrainingDataset> {
        generate_training_set(&self.simulator, &self.config.prior, self.config.dataset.n_sim, self.config.dataset.seed)
    }

    /// Trains on the dataset with observation noise at the configured SNR.
    pub fn train(&self, dataset: &TrainingDataset) -> Result<(FlowModel, TrainLog)> {
        self.train_at(dataset, self.config.noise.snr_db, &self.config.train)
    }

    pub fn train_at(&self, dataset: &TrainingDataset, snr_db: f64, cfg: &TrainConfig) -> Result<(FlowModel, TrainLog)> {
        dataset.validate(&self.config.prior)?;
        let xs = dataset.noisy_data(snr_db, self.config.noise.seed)?;
        train(&self.config.flow, ParamMap::from_prior(&self.config.prior), &dataset.thetas.view(), &xs.view(), cfg)
    }

    pub fn infer(&self, model: &FlowModel, obs: &ObservationVector) -> Result<PosteriorEnsemble> {
        let p = &self.config.posterior;
        infer_posterior(model, obs, p.n_samples, p.seed, &self.config.frequencies, p.hdi_mass)
    }

    /// Reference field of the fine mesh at the validation nodes, `[f][node]`.
    pub fn reference_field(&self, nodes: &[usize]) -> Result<Vec<Vec<C64>>> {
        let c = &self.config;
        let solver = HelmholtzSolver::new(&c.room, &self.fine_mesh)?;
        let points: Vec<_> = nodes.iter().map(|&n| self.train_mesh.nodes[n]).collect();
        let theta = c.reference.theta();
        c.frequencies
            .iter()
            .map(|&f| solver.interpolate(&solver.solve_frequency(&theta.impedances(f), f)?, &points))
            .collect()
    }

    /// Posterior predictive check with the first `n_ppc` posterior samples.
    pub fn ppc(&self, samples: &Array2<f64>) -> Result<PPCReport> {
        let d = &self.config.diagnostics;
        if samples.nrows() < d.n_ppc {
            return Err(Error::Validation(format!("{} posterior samples, need {}", samples.nrows(), d.n_ppc)));
        }
        let nodes = validation_nodes(
            &self.train_mesh,
            &self.config.room,
            &self.observations,
            d.source_exclusion,
            d.validation_cap,
            rng::stream_seed(d.seed, "validation", 0),
        )?;
        let reference = self.reference_field(&nodes)?;
        let thetas: Vec<_> = (0..d.n_ppc).map(|i| crate::impedance::ThetaVector(samples.row(i).to_vec())).collect();
        posterior_predictive_check(
            &thetas,
            &self.simulator.solver,
            &nodes,
            &reference,
            &self.config.frequencies,
            self.config.posterior.hdi_mass,
        )
    }

    /// Noisy prior-simulator pairs drawn from the stream `tag`.
    pub fn simulated_pairs(&self, n: usize, tag: &str) -> Result<(Array2<f64>, Array2<f64>)> {
        let c = &self.config;
        let seed = c.diagnostics.seed;
        let mut thetas = Array2::zeros((n, THETA_DIM));
        let mut xs = Array2::zeros((n, self.simulator.output_len()));
        let rows: Vec<Result<(Vec<f64>, Vec<f64>)>> = {
            use rayon::prelude::*;
            (0..n)
                .into_par_iter()
                .map(|i| {
                    let theta = sample_prior(&c.prior, rng::stream_seed(seed, &format!("{tag}_theta"), i as u64))?;
                    let clean = self.simulator.simulate(&theta)?;
                    let noisy =
                        add_noise(&clean, c.noise.snr_db, rng::stream_seed(seed, &format!("{tag}_noise"), i as u64))?;
                    Ok((theta.0, noisy.data))
                })
                .collect()
        };
        for (i, r) in rows.into_iter().enumerate() {
            let (t, x) = r?;
            thetas.row_mut(i).assign(&ndarray::aview1(&t));
            xs.row_mut(i).assign(&ndarray::aview1(&x));
        }
        Ok((thetas, xs))
    }

    /// L-C2ST at `n_test_obs` random prior-simulator observations, for the
    /// model and for a copy whose samples are shifted.
    pub fn calibration(&self, model: &FlowModel) -> Result<CalibrationOutcome> {
        let d = &self.config.diagnostics;
        let (cal_t, cal_x) = self.simulated_pairs(d.lc2st.n_cal, "cal")?;
        let (_, test_x) = self.simulated_pairs(d.n_test_obs, "test")?;
        let x_obs: Vec<Vec<f64>> = test_x.axis_iter(Axis(0)).map(|r| r.to_vec()).collect();
        let reports = lc2st(model, &cal_t, &cal_x, &x_obs, &d.lc2st)?;
        let bounds = self.config.prior.component_bounds();
        let lower: Vec<f64> = bounds.iter().map(|b| b.lower).collect();
        let upper: Vec<f64> = bounds.iter().map(|b| b.upper).collect();
        let shifted = ShiftedSampler::by_fraction(model, &lower, &upper, d.corruption_shift);
        let corrupted = lc2st(&shifted, &cal_t, &cal_x, &x_obs, &d.lc2st)?;
        Ok(CalibrationOutcome { reports, corrupted })
    }

    pub fn metrics(&self, ensemble: &PosteriorEnsemble, ppc: &PPCReport) -> Result<MetricsReport> {
        Ok(MetricsReport {
            surfaces: surface_errors(ensemble, &self.config.reference)?,
            aggregate: aggregate_error(ensemble, &self.config.reference)?,
            mac: ppc.rows.iter().map(|r| MacRow { freq: r.freq, mac: r.mac }).collect(),
        })
    }
}

/// Pipeline commands writing artifacts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Generate,
    Train,
    Infer,
    Ppc,
    C2st,
    Metrics,
    Study,
    RunAll,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::Train => "train",
            Stage::Infer => "infer",
            Stage::Ppc => "ppc",
            Stage::C2st => "c2st",
            Stage::Metrics => "metrics",
            Stage::Study => "study",
            Stage::RunAll => "run-all",
        }
    }
}

/// Hash of the configuration sections the outputs of `stage` depend on.
pub fn fingerprint(cfg: &RunConfig, stage: Stage) -> Result<String> {
    fn j<T: Serialize>(x: &T) -> serde_json::Value {
        serde_json::to_value(x).expect("config sections serialize")
    }
    let mut v = BTreeMap::new();
    let mut put = |k: &str, val: serde_json::Value| {
        v.insert(k.to_string(), val);
    };
    put("room", j(&cfg.room));
    put("mesh", j(&cfg.mesh));
    put("frequencies", j(&cfg.frequencies));
    put("observations", j(&cfg.observations));
    put("prior", j(&cfg.prior));
    put("reference", j(&cfg.reference));
    put("noise", j(&cfg.noise));
    put("dataset", j(&cfg.dataset));
    if stage != Stage::Generate {
        put("flow", j(&cfg.flow));
        put("train", j(&cfg.train));
    }
    if matches!(stage, Stage::Infer | Stage::Ppc | Stage::Metrics | Stage::RunAll | Stage::Study) {
        put("posterior", j(&cfg.posterior));
    }
    if matches!(stage, Stage::Ppc | Stage::C2st | Stage::Metrics | Stage::RunAll | Stage::Study) {
        put("diagnostics", j(&cfg.diagnostics));
    }
    if matches!(stage, Stage::Study | Stage::RunAll) {
        put("study", j(&cfg.study));
    }
    Ok(art::sha256_bytes(serde_json::to_string(&v)?.as_bytes()))
}

fn finish(out: &Path, cfg: &RunConfig, stage: Stage, inputs: Vec<FileEntry>, outputs: Vec<FileEntry>) -> Result<()> {
    let manifest = Manifest {
        format_version: art::MANIFEST_FORMAT_VERSION,
        command: stage.name().to_string(),
        fingerprint: fingerprint(cfg, stage)?,
        seeds: cfg.seeds().into_iter().map(|(k, s)| (k.to_string(), s)).collect(),
        config: cfg.clone(),
        inputs,
        outputs,
    };
    art::write_manifest(out, &manifest)?;
    log::info!("{}: wrote {} files and {}", stage.name(), manifest.outputs.len(), art::manifest_path(out, stage.name()).display());
    Ok(())
}

fn posterior_csv(samples: &Array2<f64>) -> String {
    let cols = art::theta_columns();
    let header: Vec<&str> = cols.iter().map(String::as_str).collect();
    let rows: Vec<Vec<f64>> = samples.axis_iter(Axis(0)).map(|r| r.to_vec()).collect();
    art::csv_string(&header, &rows)
}

pub const BAND_COLUMNS: [&str; 7] = ["freq_hz", "re_mean", "re_hdi_lo", "re_hdi_hi", "im_mean", "im_hdi_lo", "im_hdi_hi"];
pub const PPC_COLUMNS: [&str; 16] = [
    "freq_hz", "re_mean", "re_hdi_lo", "re_hdi_hi", "re_ref", "im_mean", "im_hdi_lo", "im_hdi_hi", "im_ref",
    "spl_mean", "spl_hdi_lo", "spl_hdi_hi", "spl_ref", "mac_mean", "mac_hdi_lo", "mac_hdi_hi",
];
pub const CALIBRATION_COLUMNS: [&str; 4] = ["probability", "cdf", "null_lo", "null_hi"];
pub const METRICS_COLUMNS: [&str; 6] = ["surface", "eps2_mean", "eps2_hdi_lo", "eps2_hdi_hi", "eps2_median", "eps2_of_mean"];
pub const MAC_COLUMNS: [&str; 4] = ["freq_hz", "mac_mean", "mac_hdi_lo", "mac_hdi_hi"];
pub const TRAIN_LOG_COLUMNS: [&str; 3] = ["epoch", "train_loss", "val_loss"];
pub const STUDY_COLUMNS: [&str; 12] = [
    "value", "eps2_mean", "eps2_median", "eps2_hdi_lo", "eps2_hdi_hi", "eps2_s1", "eps2_s2", "eps2_s3", "eps2_s4",
    "eps2_s5", "eps2_s6", "failed",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PosteriorSummary {
    n_samples: usize,
    hdi_mass: f64,
    in_support: usize,
    freqs: Vec<f64>,
    surfaces: Vec<Vec<super::ImpedanceStats>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PpcSummary {
    coverage: f64,
    min_mean_mac: f64,
    report: PPCReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CalibrationSummary {
    n_passed: usize,
    n_obs: usize,
    corrupted_detected: bool,
    statistics: Vec<f64>,
    thresholds: Vec<f64>,
    corrupted_statistics: Vec<f64>,
    corrupted_thresholds: Vec<f64>,
}

fn stage_generate(ctx: &BenchmarkContext, out: &Path) -> Result<TrainingDataset> {
    let ds = ctx.generate()?;
    let reference = ctx.reference_observation()?;
    let points: Vec<Vec<f64>> = ctx.observations.points.iter().map(|p| p.to_vec()).collect();
    let outputs = vec![
        art::write_file(out, art::DATASET_FILE, &art::dataset_to_bytes(&ds)?)?,
        art::write_file(out, art::OBSERVATIONS_FILE, art::csv_string(&["x", "y", "z"], &points).as_bytes())?,
        art::write_json(out, art::REFERENCE_OBS_FILE, &reference)?,
    ];
    finish(out, &ctx.config, Stage::Generate, vec![], outputs)?;
    Ok(ds)
}

fn stage_train(ctx: &BenchmarkContext, out: &Path, ds: Option<TrainingDataset>) -> Result<(FlowModel, TrainLog)> {
    let fp = fingerprint(&ctx.config, Stage::Generate)?;
    let inputs = art::verify_inputs(out, "generate", &fp, &[art::DATASET_FILE])?;
    let ds = match ds {
        Some(d) => d,
        None => art::read_dataset(&out.join(art::DATASET_FILE))?,
    };
    let (model, log) = ctx.train(&ds)?;
    let rows: Vec<Vec<f64>> = log.epochs.iter().map(|e| vec![e.epoch as f64, e.train_loss, e.val_loss]).collect();
    let outputs = vec![
        art::write_file(out, art::MODEL_FILE, model.to_json()?.as_bytes())?,
        art::write_file(out, art::TRAIN_LOG_FILE, art::csv_string(&TRAIN_LOG_COLUMNS, &rows).as_bytes())?,
        art::write_json(out, "train_log.json", &log)?,
    ];
    finish(out, &ctx.config, Stage::Train, inputs, outputs)?;
    Ok((model, log))
}

fn load_model(out: &Path) -> Result<FlowModel> {
    FlowModel::from_json(&std::fs::read_to_string(out.join(art::MODEL_FILE))?)
}

fn stage_infer(ctx: &BenchmarkContext, out: &Path, model: Option<&FlowModel>) -> Result<PosteriorEnsemble> {
    let mut inputs = art::verify_inputs(out, "generate", &fingerprint(&ctx.config, Stage::Generate)?, &[
        art::REFERENCE_OBS_FILE,
    ])?;
    inputs.extend(art::verify_inputs(out, "train", &fingerprint(&ctx.config, Stage::Train)?, &[art::MODEL_FILE])?);
    let loaded;
    let model = match model {
        Some(m) => m,
        None => {
            loaded = load_model(out)?;
            &loaded
        }
    };
    let reference: ReferenceObservation = art::read_json(&out.join(art::REFERENCE_OBS_FILE))?;
    let ens = ctx.infer(model, &reference.noisy)?;
    let in_support = ens.samples.axis_iter(Axis(0)).filter(|r| ctx.config.prior.contains(&crate::impedance::ThetaVector(r.to_vec()))).count();
    let mut outputs = vec![art::write_file(out, art::POSTERIOR_FILE, posterior_csv(&ens.samples).as_bytes())?];
    for (s, stats) in ens.surfaces.iter().enumerate() {
        let rows: Vec<Vec<f64>> = stats
            .iter()
            .map(|st| vec![st.freq, st.re.mean, st.re.lower, st.re.upper, st.im.mean, st.im.lower, st.im.upper])
            .collect();
        outputs.push(art::write_file(out, &art::impedance_band_file(s), art::csv_string(&BAND_COLUMNS, &rows).as_bytes())?);
    }
    let summary = PosteriorSummary {
        n_samples: ens.len(),
        hdi_mass: ens.hdi_mass,
        in_support,
        freqs: ens.freqs.clone(),
        surfaces: ens.surfaces.clone(),
    };
    outputs.push(art::write_json(out, art::POSTERIOR_SUMMARY_FILE, &summary)?);
    finish(out, &ctx.config, Stage::Infer, inputs, outputs)?;
    Ok(ens)
}

fn load_posterior(ctx: &BenchmarkContext, out: &Path) -> Result<PosteriorEnsemble> {
    let (header, rows) = art::read_csv(&out.join(art::POSTERIOR_FILE))?;
    if header.len() != THETA_DIM {
        return Err(Error::Artifact(format!("{} has {} columns", art::POSTERIOR_FILE, header.len())));
    }
    let mut samples = Array2::zeros((rows.len(), THETA_DIM));
    for (i, r) in rows.iter().enumerate() {
        samples.row_mut(i).assign(&ndarray::aview1(r));
    }
    PosteriorEnsemble::from_samples(samples, &ctx.config.frequencies, ctx.config.posterior.hdi_mass)
}

fn stage_ppc(ctx: &BenchmarkContext, out: &Path, samples: Option<&Array2<f64>>) -> Result<PPCReport> {
    let inputs = art::verify_inputs(out, "infer", &fingerprint(&ctx.config, Stage::Infer)?, &[art::POSTERIOR_FILE])?;
    let loaded;
    let samples = match samples {
        Some(s) => s,
        None => {
            loaded = load_posterior(ctx, out)?.samples;
            &loaded
        }
    };
    let report = ctx.ppc(samples)?;
    let rows: Vec<Vec<f64>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.freq, r.re.mean, r.re.lower, r.re.upper, r.ref_re, r.im.mean, r.im.lower, r.im.upper, r.ref_im,
                r.spl.mean, r.spl.lower, r.spl.upper, r.ref_spl, r.mac.mean, r.mac.lower, r.mac.upper,
            ]
        })
        .collect();
    let summary = PpcSummary { coverage: report.coverage(), min_mean_mac: report.min_mean_mac(), report: report.clone() };
    let outputs = vec![
        art::write_file(out, art::PPC_FILE, art::csv_string(&PPC_COLUMNS, &rows).as_bytes())?,
        art::write_json(out, art::PPC_SUMMARY_FILE, &summary)?,
    ];
    finish(out, &ctx.config, Stage::Ppc, inputs, outputs)?;
    Ok(report)
}

fn stage_c2st(ctx: &BenchmarkContext, out: &Path, model: Option<&FlowModel>) -> Result<CalibrationOutcome> {
    let inputs = art::verify_inputs(out, "train", &fingerprint(&ctx.config, Stage::Train)?, &[art::MODEL_FILE])?;
    let loaded;
    let model = match model {
        Some(m) => m,
        None => {
            loaded = load_model(out)?;
            &loaded
        }
    };
    let outcome = ctx.calibration(model)?;
    let mut outputs = Vec::new();
    for (corrupted, reports) in [(false, &outcome.reports), (true, &outcome.corrupted)] {
        for (j, r) in reports.iter().enumerate() {
            let rows: Vec<Vec<f64>> =
                (0..r.grid.len()).map(|g| vec![r.grid[g], r.cdf[g], r.band_lower[g], r.band_upper[g]]).collect();
            outputs.push(art::write_file(
                out,
                &art::calibration_file(j, corrupted),
                art::csv_string(&CALIBRATION_COLUMNS, &rows).as_bytes(),
            )?);
        }
    }
    let summary = CalibrationSummary {
        n_passed: outcome.n_passed(),
        n_obs: outcome.reports.len(),
        corrupted_detected: outcome.corrupted_detected(),
        statistics: outcome.reports.iter().map(|r| r.statistic).collect(),
        thresholds: outcome.reports.iter().map(|r| r.threshold).collect(),
        corrupted_statistics: outcome.corrupted.iter().map(|r| r.statistic).collect(),
        corrupted_thresholds: outcome.corrupted.iter().map(|r| r.threshold).collect(),
    };
    outputs.push(art::write_json(out, art::CALIBRATION_SUMMARY_FILE, &summary)?);
    finish(out, &ctx.config, Stage::C2st, inputs, outputs)?;
    Ok(outcome)
}

fn stage_metrics(
    ctx: &BenchmarkContext,
    out: &Path,
    ensemble: Option<&PosteriorEnsemble>,
    ppc: Option<&PPCReport>,
) -> Result<MetricsReport> {
    let mut inputs =
        art::verify_inputs(out, "infer", &fingerprint(&ctx.config, Stage::Infer)?, &[art::POSTERIOR_FILE])?;
    inputs.extend(art::verify_inputs(out, "ppc", &fingerprint(&ctx.config, Stage::Ppc)?, &[art::PPC_SUMMARY_FILE])?);
    let (loaded_e, loaded_p);
    let ensemble = match ensemble {
        Some(e) => e,
        None => {
            loaded_e = load_posterior(ctx, out)?;
            &loaded_e
        }
    };
    let ppc = match ppc {
        Some(p) => p,
        None => {
            let s: PpcSummary = art::read_json(&out.join(art::PPC_SUMMARY_FILE))?;
            loaded_p = s.report;
            &loaded_p
        }
    };
    let m = ctx.metrics(ensemble, ppc)?;
    let rows: Vec<Vec<f64>> = m
        .surfaces
        .iter()
        .map(|s| vec![s.surface as f64, s.mean, s.lower, s.upper, s.median, s.of_mean])
        .collect();
    let mac_rows: Vec<Vec<f64>> = m.mac.iter().map(|r| vec![r.freq, r.mac.mean, r.mac.lower, r.mac.upper]).collect();
    let outputs = vec![
        art::write_file(out, art::METRICS_FILE, art::csv_string(&METRICS_COLUMNS, &rows).as_bytes())?,
        art::write_file(out, art::MAC_FILE, art::csv_string(&MAC_COLUMNS, &mac_rows).as_bytes())?,
        art::write_json(out, art::METRICS_SUMMARY_FILE, &m)?,
    ];
    finish(out, &ctx.config, Stage::Metrics, inputs, outputs)?;
    Ok(m)
}

fn stage_study(cfg: &RunConfig, out: &Path) -> Result<Vec<StudyRow>> {
    let rows = parameter_study(cfg, cfg.study.axis, &cfg.study.values)?;
    let table: Vec<Vec<f64>> = rows.iter().map(StudyRow::csv_row).collect();
    let outputs = vec![
        art::write_file(out, art::STUDY_FILE, art::csv_string(&STUDY_COLUMNS, &table).as_bytes())?,
        art::write_json(out, "study.json", &rows)?,
    ];
    finish(out, cfg, Stage::Study, vec![], outputs)?;
    Ok(rows)
}

/// Runs one command against the artifact directory `out`.
pub fn run_stage(stage: Stage, cfg: &RunConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    let wrap = |r: Result<()>| r.map_err(|e| e.in_stage(stage.name()));
    match stage {
        Stage::Study => wrap(stage_study(cfg, out).map(|_| ())),
        Stage::RunAll => run_benchmark(cfg, out).map(|_| ()),
        _ => {
            let ctx = BenchmarkContext::new(cfg).map_err(|e| e.in_stage(stage.name()))?;
            wrap(match stage {
                Stage::Generate => stage_generate(&ctx, out).map(|_| ()),
                Stage::Train => stage_train(&ctx, out, None).map(|_| ()),
                Stage::Infer => stage_infer(&ctx, out, None).map(|_| ()),
                Stage::Ppc => stage_ppc(&ctx, out, None).map(|_| ()),
                Stage::C2st => stage_c2st(&ctx, out, None).map(|_| ()),
                Stage::Metrics => stage_metrics(&ctx, out, None, None).map(|_| ()),
                Stage::Study | Stage::RunAll => unreachable!(),
            })
        }
    }
}

/// Full benchmark: every stage in order, each writing its artifacts and
/// manifest; a failure names the stage and leaves earlier outputs in place.
pub fn run_benchmark(cfg: &RunConfig, out: &Path) -> Result<BenchmarkOutcome> {
    let ctx = BenchmarkContext::new(cfg).map_err(|e| e.in_stage("setup"))?;
    let ds = stage_generate(&ctx, out).map_err(|e| e.in_stage("generate"))?;
    let dataset_len = ds.len();
    let (model, train_log) = stage_train(&ctx, out, Some(ds)).map_err(|e| e.in_stage("train"))?;
    let ensemble = stage_infer(&ctx, out, Some(&model)).map_err(|e| e.in_stage("infer"))?;
    let ppc = stage_ppc(&ctx, out, Some(&ensemble.samples)).map_err(|e| e.in_stage("ppc"))?;
    let calibration = stage_c2st(&ctx, out, Some(&model)).map_err(|e| e.in_stage("c2st"))?;
    let metrics = stage_metrics(&ctx, out, Some(&ensemble), Some(&ppc)).map_err(|e| e.in_stage("metrics"))?;
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    for s in ["generate", "train", "infer", "ppc", "c2st", "metrics"] {
        let m = art::read_manifest(out, s)?;
        inputs.extend(m.inputs);
        outputs.extend(m.outputs);
    }
    inputs.retain(|e| !outputs.contains(e));
    finish(out, cfg, Stage::RunAll, inputs, outputs)?;
    Ok(BenchmarkOutcome { dataset_len, train_log, model, ensemble, ppc, calibration, metrics })
}

/// One value of a parameter study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub axis: StudyAxis,
    pub value: f64,
    /// Aggregate error over surfaces, summarized over posterior samples.
    pub error: Option<Summary>,
    /// Mean error per surface.
    pub surface_means: Vec<f64>,
    pub failure: Option<String>,
}

impl StudyRow {
    fn csv_row(&self) -> Vec<f64> {
        let mut r = vec![self.value];
        match &self.error {
            Some(e) => r.extend([e.mean, e.median, e.lower, e.upper]),
            None => r.extend([f64::NAN; 4]),
        }
        if self.surface_means.len() == 6 {
            r.extend(&self.surface_means);
        } else {
            r.extend([f64::NAN; 6]);
        }
        r.push(if self.failure.is_some() { 1.0 } else { 0.0 });
        r
    }
}

/// Trained model and posterior for one `(n_pos, n_sim, snr)` setting.
pub struct StudyPoint {
    pub model: FlowModel,
    pub log: TrainLog,
    pub ensemble: PosteriorEnsemble,
    pub reference: ReferenceObservation,
    pub surfaces: Vec<SurfaceError>,
    pub error: Summary,
}

type PointKey = (usize, usize, u64);

/// Memoizing runner for study settings. Datasets are generated once per
/// microphone count at the largest requested size and shared through
/// prefixes, which equal separately generated sets record by record.
pub struct StudyRunner {
    base: RunConfig,
    contexts: BTreeMap<usize, BenchmarkContext>,
    datasets: BTreeMap<usize, TrainingDataset>,
    points: BTreeMap<PointKey, StudyPoint>,
    /// Largest dataset size to generate up front per microphone count.
    pub max_n_sim: usize,
}

impl StudyRunner {
    pub fn new(base: &RunConfig) -> Result<Self> {
        base.validate()?;
        Ok(StudyRunner {
            base: base.clone(),
            contexts: BTreeMap::new(),
            datasets: BTreeMap::new(),
            points: BTreeMap::new(),
            max_n_sim: base.dataset.n_sim,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.base
    }

    pub fn context(&mut self, n_pos: usize) -> Result<&BenchmarkContext> {
        if !self.contexts.contains_key(&n_pos) {
            let mut cfg = self.base.clone();
            cfg.observations.n = n_pos;
            self.contexts.insert(n_pos, BenchmarkContext::new(&cfg)?);
        }
        Ok(&self.contexts[&n_pos])
    }

    fn dataset(&mut self, n_pos: usize, n_sim: usize) -> Result<TrainingDataset> {
        let need = n_sim.max(self.max_n_sim);
        let have = self.datasets.get(&n_pos).map_or(0, |d| d.meta.requested);
        if have < need {
            let seed = self.base.dataset.seed;
            let prior = self.base.prior.clone();
            let ctx = self.context(n_pos)?;
            let ds = generate_training_set(&ctx.simulator, &prior, need, seed)?;
            self.datasets.insert(n_pos, ds);
        }
        let ds = &self.datasets[&n_pos];
        let n = ds.meta.record_ids.iter().take_while(|&&j| j < n_sim).count();
        ds.prefix(n)
    }

    /// Trains and infers at one setting, reusing earlier results.
    pub fn point(&mut self, n_pos: usize, n_sim: usize, snr_db: f64) -> Result<&StudyPoint> {
        let key = (n_pos, n_sim, snr_db.to_bits());
        if !self.points.contains_key(&key) {
            let ds = self.dataset(n_pos, n_sim)?;
            let train_cfg = train_config_for(&self.base.train, ds.len());
            if train_cfg.batch_size != self.base.train.batch_size {
                log::warn!("n_sim = {n_sim}: batch size reduced to {}", train_cfg.batch_size);
            }
            let ctx = self.context(n_pos)?;
            let (model, log) = ctx.train_at(&ds, snr_db, &train_cfg)?;
            let reference = ctx.reference_observation_at(snr_db)?;
            let ensemble = ctx.infer(&model, &reference.noisy)?;
            let surfaces = surface_errors(&ensemble, &ctx.config.reference)?;
            let error = aggregate_error(&ensemble, &ctx.config.reference)?;
            self.points.insert(key, StudyPoint { model, log, ensemble, reference, surfaces, error });
        }
        Ok(&self.points[&key])
    }

    /// [`StudyRunner::point`] together with the context it was computed in.
    pub fn point_with_context(&mut self, n_pos: usize, n_sim: usize, snr_db: f64) -> Result<(&BenchmarkContext, &StudyPoint)> {
        self.point(n_pos, n_sim, snr_db)?;
        Ok((&self.contexts[&n_pos], &self.points[&(n_pos, n_sim, snr_db.to_bits())]))
    }

    /// One row per value along `axis`, all other settings from the base
    /// configuration. Failures are recorded in the row.
    pub fn run(&mut self, axis: StudyAxis, values: &[f64]) -> Result<Vec<StudyRow>> {
        if values.len() < 2 {
            return Err(Error::Validation("a parameter study needs at least 2 values".into()));
        }
        if axis == StudyAxis::NSim {
            self.max_n_sim = self.max_n_sim.max(values.iter().fold(0.0f64, |a, &b| a.max(b)) as usize);
        }
        let (n_pos, n_sim, snr) = (self.base.observations.n, self.base.dataset.n_sim, self.base.noise.snr_db);
        let mut rows = Vec::with_capacity(values.len());
        for &v in values {
            let r = match axis {
                StudyAxis::NPos => self.point(v as usize, n_sim, snr),
                StudyAxis::NSim => self.point(n_pos, v as usize, snr),
                StudyAxis::Snr => self.point(n_pos, n_sim, v),
            };
            rows.push(match r {
                Ok(p) => StudyRow {
                    axis,
                    value: v,
                    error: Some(p.error),
                    surface_means: p.surfaces.iter().map(|s| s.mean).collect(),
                    failure: None,
                },
                Err(e) => {
                    log::error!("study {} = {v} failed: {e}", axis.name());
                    StudyRow { axis, value: v, error: None, surface_means: vec![], failure: Some(e.to_string()) }
                }
            });
        }
        Ok(rows)
    }
}

pub fn parameter_study(cfg: &RunConfig, axis: StudyAxis, values: &[f64]) -> Result<Vec<StudyRow>> {
    StudyRunner::new(cfg)?.run(axis, values)
}
