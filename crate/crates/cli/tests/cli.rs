use std::process::Command;

fn zrp() -> Command {
    Command::new(env!("CARGO_BIN_EXE_zrp"))
}

fn temp_dir(tag: &str) -> std::path::PathBuf {
    std::env::temp_dir().join(format!("zrp-cli-{tag}-{}", std::process::id()))
}

#[test]
fn oracle_preset_passes_and_writes_csv() {
    let dir = temp_dir("oracle");
    let out = zrp().args(["oracle", "--out-dir"]).arg(&dir).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("PASS tv_bound"));
    assert!(dir.join("oracle_criteria.csv").exists());
    assert!(dir.join("oracle_caps.csv").exists());
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn failing_criterion_sets_exit_code() {
    // A zero L1 tolerance cannot be met.
    let dir = temp_dir("fail");
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("cfg.toml");
    std::fs::write(
        &cfg,
        "[model]\nn = 20\nalpha = 1.0\n[numerics]\nsizes = [20]\nreplicas = 2\ntimes = [0.01]\ncells = [20]\nl1_tolerance = 0.0\ninitial = { kind = \"constant\", value = 0.5 }\n",
    )
    .unwrap();
    let out = zrp().args(["hydrodynamic", "--config"]).arg(&cfg).arg("--out-dir").arg(&dir).output().unwrap();
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stdout));
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn bad_config_is_an_error() {
    let dir = temp_dir("bad");
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("cfg.toml");
    std::fs::write(&cfg, "[model]\nn = 20\nalpha = 1.0\nkappa = 1\n").unwrap();
    let out = zrp().args(["oracle", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("kappa"));
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn simulate_and_pde_solve_write_outputs() {
    let dir = temp_dir("sim");
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("cfg.toml");
    std::fs::write(
        &cfg,
        "[model]\nn = 10\nalpha = 1.0\n[numerics]\nreplicas = 2\nhorizon = 0.02\ntimes = [0.01]\ncells = [10]\n",
    )
    .unwrap();
    let out = zrp().args(["simulate", "--config"]).arg(&cfg).arg("--out-dir").arg(&dir).output().unwrap();
    assert!(out.status.success());
    let csv = std::fs::read_to_string(dir.join("trajectories.csv")).unwrap();
    assert!(csv.starts_with("replica,t,x,eta"));
    // 2 replicas x 3 snapshot times x 9 sites.
    assert_eq!(csv.lines().count(), 1 + 2 * 3 * 9);
    let out = zrp()
        .args(["simulate", "--format", "json", "--seed", "5", "--config"])
        .arg(&cfg)
        .arg("--out-dir")
        .arg(&dir)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.join("trajectories.json").exists());
    let out = zrp().args(["pde-solve", "--config"]).arg(&cfg).arg("--out-dir").arg(&dir).output().unwrap();
    assert!(out.status.success());
    let pde = std::fs::read_to_string(dir.join("pde_solution.csv")).unwrap();
    assert!(pde.starts_with("t,u,rho"));
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn preset_prints_toml() {
    let out = zrp().args(["preset", "hydrostatic"]).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("experiment = \"hydrostatic\""));
}
