use std::path::Path;
use std::process::{Command, Output};

fn rrisloc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rrisloc")).args(args).output().expect("spawn rrisloc")
}

fn out_arg(dir: &Path) -> String {
    dir.to_str().unwrap().to_owned()
}

#[test]
fn gdop_writes_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = rrisloc(&["gdop", "--preset", "partitions", "--out", &out_arg(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("gdop.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 10);
    assert!(lines[0].starts_with("pattern,centroid_x_m"));
    let first: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(first[0], "2x2");
    let gdop: f64 = first[4].parse().unwrap();
    assert!((gdop - 34.77).abs() < 0.01, "{gdop}");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "gdop");
    assert_eq!(manifest["extra"]["cases"].as_array().unwrap().len(), 9);
}

#[test]
fn simulate_is_reproducible_across_thread_counts() {
    let cfg = r#"
[waveform]
k = 16
[estimator]
kind = "anm_music"
[sweep]
variable = "tx_power"
values = [10.0, 20.0]
trials = 2
base_seed = 7
"#;
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.toml");
    std::fs::write(&cfg_path, cfg).unwrap();
    let mut tables = Vec::new();
    for (sub, threads) in [("one", "1"), ("two", "2")] {
        let out_dir = dir.path().join(sub);
        let out = rrisloc(&[
            "simulate",
            "--config",
            cfg_path.to_str().unwrap(),
            "--threads",
            threads,
            "--out",
            &out_arg(&out_dir),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        tables.push(std::fs::read_to_string(out_dir.join("rmse.csv")).unwrap());
    }
    assert_eq!(tables[0], tables[1]);
    assert_eq!(tables[0].lines().count(), 3);
}

#[test]
fn crlb_reports_bound() {
    let dir = tempfile::tempdir().unwrap();
    let out = rrisloc(&["crlb", "--out", &out_arg(dir.path())]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("position error bound"));
    let csv = std::fs::read_to_string(dir.path().join("nlos_curves.csv")).unwrap();
    assert!(csv.starts_with("delta_rad,spread_rad"));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = rrisloc(&["gdop", "--preset", "nonexistent", "--out", &out_arg(dir.path())]);
    assert_eq!(out.status.code(), Some(2));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[waveform]\nbogus_key = 1\n").unwrap();
    let out = rrisloc(&["crlb", "--config", bad.to_str().unwrap(), "--out", &out_arg(dir.path())]);
    assert_eq!(out.status.code(), Some(2));

    let out = rrisloc(&["crlb", "--config", "/nonexistent/run.toml"]);
    assert_eq!(out.status.code(), Some(2));

    // element pitch of a full wavelength at 28 GHz
    let scene = dir.path().join("scene.toml");
    std::fs::write(
        &scene,
        r#"ms_position = [0.0, 0.0, 0.0]
carrier_freq_ghz = 28.0
[[subarrays]]
centroid = [2.0, 4.6, 5.4]
elements_y = 4
elements_z = 4
spacing_y = 0.0107
spacing_z = 0.0107
[[subarrays]]
centroid = [2.0, 5.4, 5.4]
elements_y = 4
elements_z = 4
spacing_y = 0.0107
spacing_z = 0.0107
"#,
    )
    .unwrap();
    let run = dir.path().join("run.toml");
    std::fs::write(&run, format!("[scene]\nfile = {:?}\n", scene.to_str().unwrap())).unwrap();
    let out = rrisloc(&["crlb", "--config", run.to_str().unwrap(), "--out", &out_arg(dir.path())]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}
