#![allow(dead_code)]

use impedance_sbi::config::{MeshConfig, RunConfig, StudyAxis, StudyConfig};
use impedance_sbi::diagnostics::ClassifierConfig;
use impedance_sbi::flow::{FlowArchitecture, TrainConfig};

/// Coarse, fast configuration exercising every stage.
pub fn tiny_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.mesh = MeshConfig { train_epw: 6.0, f_max: 200.0, refinement: 2 };
    c.frequencies = vec![63.0, 100.0, 160.0];
    c.observations.n = 6;
    c.dataset.n_sim = 300;
    c.flow = FlowArchitecture {
        transforms: 2,
        hidden_features: 16,
        bins: 6,
        tail_bound: 5.0,
        use_embedding: true,
        embedding_hidden: vec![16],
        embedding_features: 8,
    };
    c.train = TrainConfig { batch_size: 30, max_epochs: 4, patience: 2, seed: 4, ..TrainConfig::default() };
    c.posterior.n_samples = 400;
    c.diagnostics.n_ppc = 120;
    c.diagnostics.validation_cap = 60;
    c.diagnostics.n_test_obs = 2;
    c.diagnostics.lc2st.n_cal = 200;
    c.diagnostics.lc2st.n_eval = 200;
    c.diagnostics.lc2st.classifier = ClassifierConfig { hidden: 12, epochs: 3, batch_size: 50, learning_rate: 1e-3 };
    c.study = StudyConfig { axis: StudyAxis::Snr, values: vec![20.0, 30.0] };
    c.validate().unwrap();
    c
}
