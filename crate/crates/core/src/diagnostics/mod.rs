//! Posterior diagnostics and error metrics.

pub mod lc2st;
pub mod metrics;
pub mod ppc;

pub use lc2st::{lc2st, lc2st_from_sets, CalibrationReport, ClassifierConfig, Lc2stConfig, PosteriorSampler, ShiftedSampler};
pub use metrics::{mac, relative_l2, spl};
pub use ppc::{posterior_predictive_check, validation_nodes, PPCReport, PpcRow};
