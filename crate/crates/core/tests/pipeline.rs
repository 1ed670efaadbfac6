mod common;

use common::tiny_config;
use impedance_sbi::artifacts::{self, read_manifest};
use impedance_sbi::impedance::ThetaVector;
use impedance_sbi::pipeline::benchmark::{run_stage, Stage};
use impedance_sbi::pipeline::{
    generate_training_set, infer_posterior, parameter_study, run_benchmark, BenchmarkContext, PosteriorEnsemble,
    StudyAxis,
};
use impedance_sbi::Error;

#[test]
fn generation_is_deterministic_prefix_consistent_and_regenerable() {
    let cfg = tiny_config();
    let ctx = BenchmarkContext::new(&cfg).unwrap();
    let a = generate_training_set(&ctx.simulator, &cfg.prior, 12, 9).unwrap();
    let b = generate_training_set(&ctx.simulator, &cfg.prior, 12, 9).unwrap();
    assert_eq!(a, b);
    let small = generate_training_set(&ctx.simulator, &cfg.prior, 5, 9).unwrap();
    assert_eq!(a.prefix(5).unwrap().thetas, small.thetas);
    assert_eq!(a.prefix(5).unwrap().data, small.data);
    a.validate(&cfg.prior).unwrap();
    for i in [0, 7, 11] {
        let again = ctx.simulator.simulate(&a.theta(i)).unwrap();
        assert_eq!(again.data, a.observation(i).data);
    }
    let bytes = artifacts::dataset_to_bytes(&a).unwrap();
    let dir = tempfile::tempdir().unwrap();
    artifacts::write_file(dir.path(), "d.bin", &bytes).unwrap();
    assert_eq!(artifacts::read_dataset(&dir.path().join("d.bin")).unwrap(), a);
}

#[test]
fn inference_is_amortized_and_stays_in_support() {
    let cfg = tiny_config();
    let ctx = BenchmarkContext::new(&cfg).unwrap();
    let ds = ctx.generate().unwrap();
    let (model, _) = ctx.train(&ds).unwrap();
    let calls = ctx.simulator.call_count();
    let r = ctx.reference_observation().unwrap();
    let e1 = infer_posterior(&model, &r.noisy, 500, 1, &cfg.frequencies, 0.9).unwrap();
    let e2 = infer_posterior(&model, &ds.observation(3), 500, 2, &cfg.frequencies, 0.9).unwrap();
    assert_eq!(ctx.simulator.call_count(), calls);
    for e in [&e1, &e2] {
        for row in e.samples.rows() {
            assert!(cfg.prior.contains(&ThetaVector(row.to_vec())));
        }
        for s in &e.surfaces {
            for st in s {
                assert!(st.re.lower <= st.re.median && st.re.median <= st.re.upper);
                assert!(st.im.lower <= st.im.median && st.im.median <= st.im.upper);
            }
        }
    }
    let recomputed = PosteriorEnsemble::from_samples(e1.samples.clone(), &cfg.frequencies, 0.9).unwrap();
    assert_eq!(recomputed, e1);
    let wrong = impedance_sbi::fem::ObservationVector { data: vec![0.0; 5], freqs: vec![63.0], n_points: 1, snr_db: None };
    assert!(matches!(infer_posterior(&model, &wrong, 10, 1, &cfg.frequencies, 0.9), Err(Error::Validation(_))));
}

#[test]
fn benchmark_bundle_is_byte_identical_across_runs() {
    let cfg = tiny_config();
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let out = run_benchmark(&cfg, d1.path()).unwrap();
    run_benchmark(&cfg, d2.path()).unwrap();
    let m1 = read_manifest(d1.path(), "run-all").unwrap();
    let m2 = read_manifest(d2.path(), "run-all").unwrap();
    assert!(m1.outputs.len() >= 20);
    assert_eq!(m1.outputs, m2.outputs);
    for e in &m1.outputs {
        assert_eq!(artifacts::sha256_file(&d1.path().join(&e.path)).unwrap(), e.sha256, "{}", e.path);
    }
    assert_eq!(out.ensemble.len(), cfg.posterior.n_samples);
    assert_eq!(out.ppc.rows.len(), cfg.frequencies.len());
    assert_eq!(out.metrics.surfaces.len(), 6);
    let (header, rows) = artifacts::read_csv(&d1.path().join(artifacts::POSTERIOR_FILE)).unwrap();
    assert_eq!(header.len(), 24);
    assert_eq!(rows.len(), cfg.posterior.n_samples);
    let (header, rows) = artifacts::read_csv(&d1.path().join(artifacts::impedance_band_file(0))).unwrap();
    assert_eq!(header.len(), 7);
    assert_eq!(rows.len(), cfg.frequencies.len());
}

#[test]
fn staged_commands_guard_against_stale_and_missing_inputs() {
    let cfg = tiny_config();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let e = run_stage(Stage::Train, &cfg, out).unwrap_err();
    assert!(e.to_string().contains("`generate`"), "{e}");

    run_stage(Stage::Generate, &cfg, out).unwrap();
    run_stage(Stage::Train, &cfg, out).unwrap();
    let first = artifacts::sha256_file(&out.join(artifacts::MODEL_FILE)).unwrap();
    run_stage(Stage::Train, &cfg, out).unwrap();
    assert_eq!(artifacts::sha256_file(&out.join(artifacts::MODEL_FILE)).unwrap(), first);
    let train_manifest = read_manifest(out, "train").unwrap();
    assert_eq!(train_manifest.inputs[0].path, artifacts::DATASET_FILE);

    let mut changed = cfg.clone();
    changed.dataset.n_sim = 310;
    let e = run_stage(Stage::Train, &changed, out).unwrap_err();
    assert!(e.to_string().contains("different settings"), "{e}");

    let path = out.join(artifacts::DATASET_FILE);
    let mut bytes = std::fs::read(&path).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    std::fs::write(&path, bytes).unwrap();
    let e = run_stage(Stage::Train, &cfg, out).unwrap_err();
    assert!(e.to_string().contains("stale"), "{e}");
}

#[test]
fn study_rows_are_reproducible() {
    let cfg = tiny_config();
    let rows = parameter_study(&cfg, StudyAxis::Snr, &[25.0, 25.0]).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].error, rows[1].error);
    assert!(rows[0].failure.is_none());
    assert_eq!(rows[0].surface_means.len(), 6);
    assert!(parameter_study(&cfg, StudyAxis::Snr, &[25.0]).is_err());
    let sim_rows = parameter_study(&cfg, StudyAxis::NSim, &[200.0, 300.0]).unwrap();
    assert!(sim_rows.iter().all(|r| r.failure.is_none()));
}
