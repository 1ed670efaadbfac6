//! Run configuration: a single TOML file whose defaults reproduce the cuboid
//! room benchmark. Unknown keys are rejected, missing keys take defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diagnostics::Lc2stConfig;
use crate::fem::SIXTH_OCTAVE_63_500;
use crate::flow::{FlowArchitecture, TrainConfig};
use crate::geometry::RoomSpec;
use crate::impedance::{PriorSpec, ReferenceSet};
use crate::{rng, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshConfig {
    /// Elements per wavelength of the training mesh at `f_max`.
    pub train_epw: f64,
    pub f_max: f64,
    /// Integer subdivision of the training mesh used for reference data.
    pub refinement: usize,
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig { train_epw: 10.0, f_max: 500.0, refinement: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservationConfig {
    pub n: usize,
    pub min_dist: f64,
    pub margin: f64,
    pub seed: u64,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        ObservationConfig { n: 26, min_dist: 0.3, margin: 0.1, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub snr_db: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig { snr_db: 30.0, seed: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_sim: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig { n_sim: 4000, seed: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PosteriorConfig {
    pub n_samples: usize,
    pub hdi_mass: f64,
    pub seed: u64,
}

impl Default for PosteriorConfig {
    fn default() -> Self {
        PosteriorConfig { n_samples: 100_000, hdi_mass: 0.9, seed: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    pub n_ppc: usize,
    pub validation_cap: usize,
    /// Validation nodes closer than this to the source are dropped, m.
    pub source_exclusion: f64,
    /// Number of random prior-simulator observations tested by L-C2ST.
    pub n_test_obs: usize,
    /// Prior-width fraction by which the corrupted control is shifted.
    pub corruption_shift: f64,
    pub seed: u64,
    pub lc2st: Lc2stConfig,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            n_ppc: 1000,
            validation_cap: 3000,
            source_exclusion: 0.1,
            n_test_obs: 3,
            corruption_shift: 0.25,
            seed: 6,
            lc2st: Lc2stConfig { seed: 7, ..Lc2stConfig::default() },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyAxis {
    NPos,
    NSim,
    Snr,
}

impl StudyAxis {
    pub fn name(self) -> &'static str {
        match self {
            StudyAxis::NPos => "n_pos",
            StudyAxis::NSim => "n_sim",
            StudyAxis::Snr => "snr",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub axis: StudyAxis,
    pub values: Vec<f64>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig { axis: StudyAxis::Snr, values: vec![10.0, 20.0, 30.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: String,
    pub room: RoomSpec,
    pub mesh: MeshConfig,
    pub frequencies: Vec<f64>,
    pub observations: ObservationConfig,
    pub prior: PriorSpec<f64>,
    pub reference: ReferenceSet<f64>,
    pub noise: NoiseConfig,
    pub dataset: DatasetConfig,
    pub flow: FlowArchitecture,
    pub train: TrainConfig,
    pub posterior: PosteriorConfig,
    pub diagnostics: DiagnosticsConfig,
    pub study: StudyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            output_dir: "out".into(),
            room: RoomSpec::default(),
            mesh: MeshConfig::default(),
            frequencies: SIXTH_OCTAVE_63_500.to_vec(),
            observations: ObservationConfig::default(),
            prior: PriorSpec::benchmark(),
            reference: ReferenceSet::benchmark(),
            noise: NoiseConfig::default(),
            dataset: DatasetConfig::default(),
            flow: FlowArchitecture::default(),
            train: TrainConfig { seed: 4, ..TrainConfig::default() },
            posterior: PosteriorConfig::default(),
            diagnostics: DiagnosticsConfig::default(),
            study: StudyConfig::default(),
        }
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Validation(msg()))
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.room.validate()?;
        let m = &self.mesh;
        check(m.train_epw > 0.0 && m.train_epw.is_finite(), || {
            format!("mesh.train_epw must be positive, got {}", m.train_epw)
        })?;
        check(m.f_max > 0.0 && m.f_max.is_finite(), || format!("mesh.f_max must be positive, got {}", m.f_max))?;
        check(m.refinement >= 2, || format!("mesh.refinement must be >= 2, got {}", m.refinement))?;
        check(!self.frequencies.is_empty(), || "frequencies must not be empty".into())?;
        check(self.frequencies.iter().all(|f| *f > 0.0 && f.is_finite()), || "frequencies must be positive".into())?;
        check(self.frequencies.windows(2).all(|w| w[0] < w[1]), || "frequencies must be strictly increasing".into())?;
        let o = &self.observations;
        check(o.n >= 1, || "observations.n must be >= 1".into())?;
        check(o.min_dist >= 0.0, || format!("observations.min_dist must be >= 0, got {}", o.min_dist))?;
        check(o.margin >= 0.0, || format!("observations.margin must be >= 0, got {}", o.margin))?;
        self.prior.validate()?;
        self.reference.validate()?;
        check(!self.noise.snr_db.is_nan() && self.noise.snr_db != f64::NEG_INFINITY, || {
            format!("noise.snr_db must be finite or +inf, got {}", self.noise.snr_db)
        })?;
        check(self.dataset.n_sim >= 1, || "dataset.n_sim must be >= 1".into())?;
        self.flow.validate()?;
        self.train.validate()?;
        let p = &self.posterior;
        check(p.n_samples >= 100, || format!("posterior.n_samples must be >= 100, got {}", p.n_samples))?;
        check(p.hdi_mass > 0.0 && p.hdi_mass < 1.0, || {
            format!("posterior.hdi_mass must lie in (0, 1), got {}", p.hdi_mass)
        })?;
        let d = &self.diagnostics;
        check(d.n_ppc >= 100, || format!("diagnostics.n_ppc must be >= 100, got {}", d.n_ppc))?;
        check(d.n_ppc <= p.n_samples, || "diagnostics.n_ppc must not exceed posterior.n_samples".into())?;
        check(d.validation_cap >= 1, || "diagnostics.validation_cap must be >= 1".into())?;
        check(d.source_exclusion >= 0.0, || "diagnostics.source_exclusion must be >= 0".into())?;
        check(d.n_test_obs >= 1, || "diagnostics.n_test_obs must be >= 1".into())?;
        check(d.corruption_shift > 0.0 && d.corruption_shift < 1.0, || {
            "diagnostics.corruption_shift must lie in (0, 1)".into()
        })?;
        d.lc2st.validate()?;
        check(self.study.values.len() >= 2, || "study.values needs at least 2 entries".into())?;
        for v in &self.study.values {
            let ok = match self.study.axis {
                StudyAxis::NPos | StudyAxis::NSim => *v >= 1.0 && v.fract() == 0.0,
                StudyAxis::Snr => !v.is_nan() && *v != f64::NEG_INFINITY,
            };
            check(ok, || format!("study value {v} is invalid for axis {}", self.study.axis.name()))?;
        }
        Ok(())
    }

    /// Replaces every seed by a distinct stream derived from `seed`.
    pub fn apply_seed_override(&mut self, seed: u64) {
        let s = |tag: &str| rng::stream_seed(seed, tag, 0);
        self.observations.seed = s("observations");
        self.noise.seed = s("noise");
        self.dataset.seed = s("dataset");
        self.train.seed = s("train");
        self.posterior.seed = s("posterior");
        self.diagnostics.seed = s("diagnostics");
        self.diagnostics.lc2st.seed = s("lc2st");
    }

    /// All seeds by name.
    pub fn seeds(&self) -> Vec<(&'static str, u64)> {
        vec![
            ("observations", self.observations.seed),
            ("noise", self.noise.seed),
            ("dataset", self.dataset.seed),
            ("train", self.train.seed),
            ("posterior", self.posterior.seed),
            ("diagnostics", self.diagnostics.seed),
            ("lc2st", self.diagnostics.lc2st.seed),
        ]
    }
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    RunConfig::from_toml_str(&text)
}
