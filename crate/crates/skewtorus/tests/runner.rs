//! End-to-end runner checks: orchestration, artifact determinism, and
//! the manifest contract, all at deliberately small experiment sizes.

use skewtorus::config::RunConfig;
use skewtorus::runner::{run, RunStatus};
use std::collections::BTreeMap;
use std::path::Path;

fn small_config(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    // N = 100 keeps the contraction-set proxies well populated, so the
    // hypothesis-filtered batteries do not spin on rejections.
    cfg.map.n = 100;
    cfg.experiments.seeds = 4;
    cfg.experiments.t = 2_000;
    cfg.experiments.orbit_len = 1_500;
    cfg.experiments.samples = 300;
    cfg.experiments.k_max = 1;
    cfg.run.master_seed = 11;
    cfg.run.out_dir = out.to_string_lossy().into_owned();
    cfg.run.threads = 1;
    cfg
}

/// Artifact name -> bytes for one finished run.
fn artifact_bytes(manifest: &skewtorus::runner::RunManifest) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for rec in &manifest.experiments {
        for name in &rec.artifacts {
            let bytes = std::fs::read(Path::new(&manifest.run_dir).join(name)).unwrap();
            assert!(!bytes.is_empty(), "{name} is empty");
            out.insert(format!("{}/{}", rec.name, name), bytes);
        }
    }
    out
}

#[test]
fn full_run_executes_every_experiment() {
    let tmp = tempdir("full");
    let cfg = small_config(&tmp);
    let manifest = run(&cfg).unwrap();
    assert_eq!(manifest.experiments.len(), 7);
    for rec in &manifest.experiments {
        assert_ne!(
            rec.status,
            RunStatus::Error,
            "{} errored: {}",
            rec.name,
            rec.detail
        );
        assert!(!rec.artifacts.is_empty(), "{} wrote nothing", rec.name);
    }
    // Echoed scales follow the closed forms.
    let nf = 100.0f64;
    assert_eq!(manifest.scale_echo.theta1, nf.powf(-0.4));
    assert_eq!(manifest.scale_echo.theta2, nf.powf(-0.6));
    assert_eq!(
        manifest.scale_echo.eta,
        5.0 / (std::f64::consts::PI * nf.powf(0.1))
    );
    let dir = Path::new(&manifest.run_dir);
    assert!(dir.join("manifest.json").is_file());
    assert!(dir.join("config.toml").is_file());
    std::fs::remove_dir_all(&tmp).ok();
}

#[test]
fn reruns_reproduce_artifact_bytes() {
    let tmp = tempdir("rerun");
    let cfg = small_config(&tmp);
    let mut quick = cfg.clone();
    quick.experiments.run = vec!["exponents".into(), "ergodicity".into(), "ucurve".into()];
    let a = run(&quick).unwrap();
    let b = run(&quick).unwrap();
    assert_ne!(a.run_dir, b.run_dir, "run directories must not collide");
    let bytes_a = artifact_bytes(&a);
    let bytes_b = artifact_bytes(&b);
    assert_eq!(bytes_a.len(), bytes_b.len());
    for (name, data) in &bytes_a {
        assert_eq!(Some(data), bytes_b.get(name).as_deref(), "{name} differs");
    }
    // The same artifacts under a parallel scheduler, merged by index.
    let mut wide = quick.clone();
    wide.run.threads = 8;
    let c = run(&wide).unwrap();
    let bytes_c = artifact_bytes(&c);
    for (name, data) in &bytes_a {
        assert_eq!(
            Some(data),
            bytes_c.get(name).as_deref(),
            "{name} depends on thread count"
        );
    }
    std::fs::remove_dir_all(&tmp).ok();
}

#[test]
fn empty_selection_yields_empty_manifest() {
    let tmp = tempdir("empty");
    let mut cfg = small_config(&tmp);
    cfg.experiments.run = vec![];
    let manifest = run(&cfg).unwrap();
    assert!(manifest.experiments.is_empty());
    assert!(manifest.passed);
    assert_eq!(manifest.error_count, 0);
    std::fs::remove_dir_all(&tmp).ok();
}

#[test]
fn invalid_configs_are_rejected_before_any_io() {
    let tmp = tempdir("invalid");
    let mut cfg = small_config(&tmp);
    cfg.experiments.seeds = 1;
    assert!(run(&cfg).is_err());
    let mut cfg = small_config(&tmp);
    cfg.map.base = [1, 0, 0, 1];
    assert!(run(&cfg).is_err());
    assert!(
        std::fs::read_dir(&tmp).map(|d| d.count()).unwrap_or(0) == 0,
        "rejected configs must not leave run directories"
    );
    std::fs::remove_dir_all(&tmp).ok();
}

fn tempdir(tag: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!(
        "skewtorus-runner-{tag}-{}",
        std::process::id()
    ));
    std::fs::remove_dir_all(&dir).ok();
    dir
}
