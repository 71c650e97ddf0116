use std::path::Path;
use std::process::Command;

use osscal::cli::{execute, load_fit, CommandKind, RunArgs, RunStatus, RunStore};
use osscal::design::DesignMatrix;
use osscal::sim::{toy_model, SimResult};

const BIN: &str = env!("CARGO_BIN_EXE_osscal");

fn osscal(store: &Path, args: &[&str]) -> i32 {
    Command::new(BIN)
        .args(args)
        .arg("--store")
        .arg(store)
        .output()
        .expect("binary runs")
        .status
        .code()
        .unwrap()
}

fn small_fit(store: &Path) -> RunArgs {
    RunArgs::new(store).with("n_field", 5).with("n_per_site", 20).with("restarts", 2)
}

#[test]
fn simulate_through_toy_adapter_matches_in_process_model() {
    let tmp = tempfile::tempdir().unwrap();
    let store = tmp.path();
    assert_eq!(osscal(store, &["design", "n=25", "d=3", "seed=4"]), 0);
    let adapter = serde_json::json!({
        "command": format!("'{BIN}' toy-adapter"),
        "workdir": store.join("work"),
        "timeout_seconds": 30.0,
    });
    std::fs::write(store.join("adapter.json"), adapter.to_string()).unwrap();
    assert_eq!(osscal(store, &["simulate", "simulator=adapter.json"]), 0);

    let design = DesignMatrix::read_csv(std::fs::File::open(store.join("design/design.csv")).unwrap()).unwrap();
    let res = SimResult::read_csv(std::fs::File::open(store.join("simulate/responses.csv")).unwrap()).unwrap();
    assert_eq!(res.n_requested, 25);
    for (r, v) in design.rows().zip(&res.values) {
        let want = toy_model(r[0], r[1], r[2]).unwrap();
        assert_eq!(v.map(f64::to_bits), want.map(f64::to_bits));
    }
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let store = tmp.path();
    assert_eq!(osscal(store, &["design", "no_such_key=1"]), 2);
    assert_eq!(osscal(store, &["calibrate-opt"]), 3);
    assert_eq!(osscal(store, &["design", "n=5", "d=3"]), 0);
    let adapter = serde_json::json!({ "command": "false", "workdir": store.join("w"), "timeout_seconds": 10.0 });
    std::fs::write(store.join("bad.json"), adapter.to_string()).unwrap();
    assert_eq!(osscal(store, &["simulate", "simulator=bad.json"]), 5);
    let failed = RunStore::new(store).read_manifest("simulate").unwrap();
    assert_eq!(failed.status, RunStatus::Failed);
    assert!(store.join("simulate/FAILED").exists());
    assert_eq!(osscal(store, &["bogus-command"]), 2);
}

#[test]
fn identical_rerun_is_detected() {
    let tmp = tempfile::tempdir().unwrap();
    let args = RunArgs::new(tmp.path()).with("n", 8);
    let first = execute(CommandKind::Design, &args).unwrap();
    assert_eq!(first.status, RunStatus::Complete);
    assert!(first.manifest.all_artifacts_exist(&first.dir));
    let second = execute(CommandKind::Design, &args).unwrap();
    assert_eq!(second.status, RunStatus::UpToDate);
    let mut forced = args.clone();
    forced.force = true;
    assert_eq!(execute(CommandKind::Design, &forced).unwrap().status, RunStatus::Complete);
    let changed = execute(CommandKind::Design, &args.clone().with("n", 9)).unwrap();
    assert_eq!(changed.status, RunStatus::Complete);
    assert_ne!(changed.manifest.config_hash, first.manifest.config_hash);
}

#[test]
fn fit_persists_the_bank_it_built() {
    let tmp = tempfile::tempdir().unwrap();
    execute(CommandKind::Fit, &small_fit(tmp.path())).unwrap();
    let bank = load_fit(&RunStore::new(tmp.path()), "fit").unwrap();
    assert_eq!(bank.len(), 5);

    let toy = osscal::pipeline::ToyConfig {
        n_field: 5,
        n_per_site: 20,
        onsite_restarts: 2,
        ..Default::default()
    };
    let field = osscal::sim::gen_field(5, toy.noise_sd, toy.field_seed()).unwrap();
    let direct = osscal::oss::build_bank(&field, &osscal::sim::ToySimulator::default(), &toy.bank_config()).unwrap();
    for (a, b) in bank.sites.iter().zip(&direct.sites) {
        assert_eq!(a.gp.inputs.as_slice(), b.gp.inputs.as_slice());
        assert_eq!(a.gp.outputs, b.gp.outputs);
        assert_eq!(a.gp.record(), b.gp.record());
    }
}

#[test]
fn one_sample_chain_predicts_like_its_point() {
    let tmp = tempfile::tempdir().unwrap();
    let store = tmp.path();
    execute(CommandKind::Fit, &small_fit(store)).unwrap();
    execute(
        CommandKind::CalibrateOpt,
        &RunArgs::new(store).with("restarts", 3).with("bias_restarts", 2),
    )
    .unwrap();
    let map: osscal::pipeline::MapRecord =
        serde_json::from_reader(std::fs::File::open(store.join("calibrate-opt/map.json")).unwrap()).unwrap();
    let chain = osscal::calib::PosteriorChain {
        samples: vec![map.u_map.clone()],
        logpost: vec![0.0],
        accepted: vec![vec![false; 2]],
        accept_counts: vec![0; 2],
        sigma: vec![0.1; 2],
        u_init: map.u_map.clone(),
        seed: 0,
    };
    chain.write_csv(std::fs::File::create(store.join("one.csv")).unwrap()).unwrap();

    execute(CommandKind::Predict, &RunArgs::new(store).with("name", "point")).unwrap();
    execute(
        CommandKind::Predict,
        &RunArgs::new(store).with("name", "chain").with("chain", "one.csv"),
    )
    .unwrap();
    let a = std::fs::read(store.join("point/predictions.csv")).unwrap();
    let b = std::fs::read(store.join("chain/predictions.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn point_loo_writes_coverage() {
    let tmp = tempfile::tempdir().unwrap();
    let store = tmp.path();
    execute(CommandKind::Fit, &small_fit(store)).unwrap();
    execute(
        CommandKind::CalibrateOpt,
        &RunArgs::new(store).with("restarts", 3).with("bias_restarts", 2),
    )
    .unwrap();
    execute(
        CommandKind::Loo,
        &RunArgs::new(store)
            .with("mode", "point")
            .with("map", "calibrate-opt/map.json")
            .with("bias_restarts", 2),
    )
    .unwrap();
    let cov: osscal::cli::CoverageReport =
        serde_json::from_reader(std::fs::File::open(store.join("loo/coverage.json")).unwrap()).unwrap();
    assert_eq!(cov.n_sites, 5);
    assert!((0.0..=1.0).contains(&cov.coverage));
    assert!(cov.loo_rmse.is_finite() && cov.in_sample_rmse.is_finite());
}
