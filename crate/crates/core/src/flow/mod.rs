//! Conditional normalizing flow used as the neural posterior estimator.

pub mod made;
pub mod model;
pub mod spline;
pub mod train;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use model::{base_log_prob, grad_check, FlowModel, GradCheckReport, ParamMap, Standardizer};
pub use spline::{spline_forward, spline_inverse, SplineConfig, SplineParams};
pub use train::{train, EpochRecord, TrainConfig, TrainLog};

/// Network shape of the flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowArchitecture {
    pub transforms: usize,
    pub hidden_features: usize,
    pub bins: usize,
    pub tail_bound: f64,
    pub use_embedding: bool,
    pub embedding_hidden: Vec<usize>,
    pub embedding_features: usize,
}

impl Default for FlowArchitecture {
    fn default() -> Self {
        FlowArchitecture {
            transforms: 9,
            hidden_features: 71,
            bins: spline::DEFAULT_BINS,
            tail_bound: spline::DEFAULT_TAIL_BOUND,
            use_embedding: true,
            embedding_hidden: vec![256, 256],
            embedding_features: 128,
        }
    }
}

impl FlowArchitecture {
    pub fn spline_config(&self) -> SplineConfig {
        SplineConfig { bins: self.bins, tail_bound: self.tail_bound, ..SplineConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.transforms == 0 {
            return Err(Error::Validation("flow.transforms must be >= 1".into()));
        }
        if self.hidden_features == 0 {
            return Err(Error::Validation("flow.hidden_features must be >= 1".into()));
        }
        if self.use_embedding && (self.embedding_features == 0 || self.embedding_hidden.contains(&0)) {
            return Err(Error::Validation("flow embedding layer sizes must be >= 1".into()));
        }
        self.spline_config().validate()
    }
}
