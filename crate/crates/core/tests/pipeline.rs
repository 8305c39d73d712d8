//! Library-level end-to-end checks across modules.

use qlpv::acquisition::{select_input, Aggregation};
use qlpv::data::BoxSet;
use qlpv::harness::{bootstrap, evaluate, run_active_learning, AcquisitionTag, ExperimentConfig, Session};
use qlpv::plants::store::{load_dataset, save_dataset};
use qlpv::plants::Plant;
use qlpv::QlpvModel;

fn small() -> ExperimentConfig {
    ExperimentConfig {
        n_x: 2,
        n_p: 2,
        horizon: 6,
        n_initial: 4,
        n_max: 6,
        pool_size: 15,
        test_size: 30,
        reg_base: 5,
        adam_iters: 50,
        adam_step: 1e-2,
        bfgs_max_iters: 100,
        pilot_size: 20,
        substeps: 400,
        ..ExperimentConfig::default()
    }
}

#[test]
fn saved_artifacts_reload_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small();
    let boot = bootstrap(&cfg, 1).unwrap();
    save_dataset(dir.path(), &boot.test, "oscillator", 1, Some(&boot.plant.scaler)).unwrap();
    let (test, manifest) = load_dataset(dir.path()).unwrap();
    assert_eq!(test, boot.test);
    assert_eq!(manifest.scaler.as_ref(), Some(&boot.plant.scaler));

    let out = run_active_learning(&cfg, 1).unwrap();
    let path = dir.path().join("model.txt");
    out.model.save(&path).unwrap();
    let back = QlpvModel::load(&path).unwrap();
    assert_eq!(back.theta(), out.model.theta());
    assert_eq!(evaluate(&back, &test).unwrap(), evaluate(&out.model, &boot.test).unwrap());
}

#[test]
fn dataset_grows_by_one_per_iteration() {
    let cfg = small();
    let out = run_active_learning(&cfg, 0).unwrap();
    let sizes: Vec<usize> = out.log.records.iter().map(|r| r.n).collect();
    assert_eq!(sizes, (cfg.n_initial..=cfg.n_max).collect::<Vec<_>>());
    assert_eq!(out.data.len(), cfg.n_max);
    let chosen: Vec<usize> = out.log.records.iter().filter_map(|r| r.chosen).collect();
    let mut unique = chosen.clone();
    unique.sort_unstable();
    unique.dedup();
    assert_eq!(unique.len(), chosen.len());
}

#[test]
fn selections_respect_the_predicted_output_box() {
    let cfg = ExperimentConfig { acquisition: AcquisitionTag::Qlpv, ..small() };
    let boot = bootstrap(&cfg, 2).unwrap();
    let mut s = Session::new(&cfg, 2, boot);
    s.train().unwrap();
    let sel = s.select().unwrap();
    let u = &s.pool.entries[sel.index];
    let y = qlpv::predict(&s.model, u).unwrap();
    assert!(s.boot.plant.output_box().contains_seq(&y));
    // a box nothing fits into leaves no feasible candidate
    let tight = BoxSet { lower: vec![0.5; 2], upper: vec![0.6; 2] };
    let kind = cfg.acquisition_kind(AcquisitionTag::Qlpv, 0).unwrap();
    assert!(select_input(&s.pool, &kind, &s.model, &s.data, &tight, Aggregation::Sum).is_err());
}
