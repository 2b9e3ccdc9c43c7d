use std::path::{Path, PathBuf};
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_ancillary-bench");

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

/// The acceptance config shrunk to a few short episodes.
fn small_config(dir: &Path) -> PathBuf {
    let text = std::fs::read_to_string(configs().join("acceptance.toml"))
        .unwrap()
        .replace("horizons = [250, 500, 1000]", "horizons = [40, 80, 160]")
        .replace("seeds = { count = 4 }", "seeds = { count = 2 }")
        .replace("record_episodes = false", "record_episodes = true");
    let p = dir.join("small.toml");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn shipped_configs_validate() {
    for entry in std::fs::read_dir(configs()).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "toml") {
            let out = Command::new(BIN).arg("validate").arg(&p).output().unwrap();
            assert!(out.status.success(), "{}: {}", p.display(), String::from_utf8_lossy(&out.stderr));
        }
    }
}

#[test]
fn invalid_config_exits_with_1_and_names_fields() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(configs().join("acceptance.toml"))
        .unwrap()
        .replace("radius_scale = 0.03", "radius_scale = -1.0")
        .replace("theta_bar = 0.5", "theta_bar = 0.1");
    let p = dir.path().join("bad.toml");
    std::fs::write(&p, text).unwrap();
    for cmd in ["validate", "run"] {
        let out = Command::new(BIN).arg(cmd).arg(&p).output().unwrap();
        assert_eq!(out.status.code(), Some(1));
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains("settings.radius_scale") && err.contains("instance"), "{err}");
    }
    let out = Command::new(BIN).args(["validate", "/no/such/config.toml"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn run_writes_outputs_and_slope_reads_them() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let out_dir = dir.path().join("out");
    let out = Command::new(BIN)
        .arg("run")
        .arg(&config)
        .arg("--out")
        .arg(&out_dir)
        .args(["--workers", "2", "--plots"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["aggregate.csv", "summary.json", "regret.svg", "episodes/alg3_T160_seed1.csv"] {
        assert!(out_dir.join(f).is_file(), "missing {f}");
    }
    let episode = std::fs::read_to_string(out_dir.join("episodes/alg1_T40_seed0.csv")).unwrap();
    assert!(episode.starts_with("t,strategy,p_f,p_a,p_b,d_f,d_a,d_b,exp_regret,strategy_regret,n_focal,good_event\n"));
    assert_eq!(episode.lines().count(), 41);

    let out = Command::new(BIN).arg("slope").arg(out_dir.join("aggregate.csv")).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for policy in ["alg1", "alg2", "alg3", "greedy"] {
        let line = text.lines().find(|l| l.starts_with(policy)).unwrap();
        let slope: f64 = line.split_whitespace().nth(1).unwrap().parse().unwrap();
        assert!(slope.is_finite());
    }
}

#[test]
fn accept_runs_a_selection() {
    let out = Command::new(BIN).args(["accept", "--only", "1,2", "--workers", "1"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().all(|l| l.contains("PASS")));
}
