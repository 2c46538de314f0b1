use std::path::Path;
use std::process::{Command, Output};

fn quadfeat(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quadfeat")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn verify_passes_and_lists_checks() {
    let dir = tempfile::tempdir().unwrap();
    let o = quadfeat(&["verify", "--out", "v"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).lines().all(|l| l.starts_with("PASS ")));
    let csv = std::fs::read_to_string(dir.path().join("v/verify.csv")).unwrap();
    assert!(csv.starts_with("# config_hash="));
    assert!(dir.path().join("v/manifest.json").exists());
}

#[test]
fn injected_q2_fault_names_the_identity() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("f.toml"), "inject_fault = \"q2_constant\"\n").unwrap();
    let o = quadfeat(&["verify", "--config", "f.toml", "--out", "v"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).contains("FAIL gegenbauer.recursion_vs_explicit_q2"));
    assert!(String::from_utf8_lossy(&o.stderr).contains("gegenbauer.recursion_vs_explicit_q2"));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("typo.toml"), "m_1 = 64\n").unwrap();
    std::fs::write(dir.path().join("odd.toml"), "m1 = 63\n").unwrap();
    std::fs::write(dir.path().join("kind.toml"), "experiment = \"transfer\"\n").unwrap();
    for file in ["typo.toml", "odd.toml", "kind.toml", "missing.toml"] {
        let o = quadfeat(&["compare", "--config", file], dir.path());
        assert_eq!(o.status.code(), Some(2), "{file}");
    }
}

#[test]
fn print_config_applies_flag_overrides_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "m1 = 64\nseed = 5\n").unwrap();
    let o = quadfeat(&["transfer", "--config", "c.toml", "--seed", "9", "--print-config"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("m1 = 64"));
    assert!(text.contains("seed = 9"));
    std::fs::write(dir.path().join("resolved.toml"), &text).unwrap();
    let again = quadfeat(&["transfer", "--config", "resolved.toml", "--print-config"], dir.path());
    assert_eq!(stdout(&again), text);
}

#[test]
fn tiny_compare_writes_results_and_traces() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("c.toml"),
        "d = [8]\nn = [256]\nm1 = 32\nm2 = 64\nseeds = [0]\nn_test = 500\nn_cal = 10000\n\
         write_trace = true\nstage2_steps = 50\nlambda2 = 1e-3\n",
    )
    .unwrap();
    let o = quadfeat(&["compare", "--config", "c.toml", "--out", "r"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("r/results.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# config_hash="));
    assert_eq!(
        lines.next().unwrap(),
        "run_id,experiment,method,d,r,p,n1,n2,m1,m2,seed,test_mae,test_mse,mae_stderr,wall_seconds"
    );
    assert_eq!(lines.count(), 2);
    let trace = dir.path().join("r/runs/compare-d8-p4-n256-s0/compare-alg1-d8-p4-n1_128-n2_128-s0/trace.csv");
    let trace = std::fs::read_to_string(trace).unwrap();
    assert!(trace.lines().nth(1).unwrap() == "step,loss,grad_norm,a_norm");
    assert_eq!(trace.lines().count(), 2 + 51);

    // a different seed into the same directory is refused
    let o = quadfeat(&["compare", "--config", "c.toml", "--out", "r", "--seed", "3"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}
