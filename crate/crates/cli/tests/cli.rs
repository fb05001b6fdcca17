use std::fs;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cran-sim"))
}

#[test]
fn uplink_run_writes_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "k = 2\nn = 1\nslots = 2\nalpha = 1.0\n").unwrap();
    let out = dir.path().join("out");
    let status = bin()
        .args(["uplink", "--config"])
        .arg(&cfg)
        .args(["--drops", "2", "--seed", "4", "--jobs", "1", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let stdout = String::from_utf8(status.stdout).unwrap();
    assert!(stdout.contains("direction = \"uplink\"") && stdout.contains("[mt]"));
    let csv = fs::read_to_string(out.join("records.csv")).unwrap();
    // header + drops * slots * modes * MSs
    assert_eq!(csv.lines().count(), 1 + 2 * 2 * 2 * 2);
    assert!(out.join("summary.txt").exists() && out.join("cdf.dat").exists());
}

#[test]
fn output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["downlink", "--drops", "1", "--mode", "p2p", "--jobs", "1", "--preset", "dl-sweep-small", "--alpha", "0"])
        .env("CRAN_SIM_OUT", dir.path())
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let csv = fs::read_to_string(dir.path().join("records.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.split(',').nth(2) == Some("p2p")));
}

#[test]
fn sweep_writes_curve() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["sweep", "--preset", "ul-sweep", "--drops", "1", "--alphas", "0,2", "--jobs", "1", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let dat = fs::read_to_string(dir.path().join("sweep.dat")).unwrap();
    assert_eq!(dat.lines().count(), 3);
    assert!(dat.starts_with("# alpha p2p_avg_se p2p_cell_edge mt_avg_se mt_cell_edge"));
}

#[test]
fn bad_input_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "drops = 0\n").unwrap();
    let out = bin().args(["uplink", "--config"]).arg(&cfg).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("drops"));

    let out = bin().args(["uplink", "--preset", "ul-sweep", "--out"]).arg(dir.path()).output().unwrap();
    assert!(!out.status.success());

    let out = bin().args(["uplink", "--mode", "sideways"]).output().unwrap();
    assert!(!out.status.success());
}
