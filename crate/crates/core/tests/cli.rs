use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_csi-mos"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn write_config(dir: &Path) -> String {
    let path = dir.join("experiment.toml");
    fs::write(
        &path,
        r#"
engines = ["QR", "GBDT"]
seasons = ["summer"]
lead_times = [12]
min_cases = 10
[synth]
days = 60
start_date = "2017-06-01"
[engine.gbdt]
trees = 20
"#,
    )
    .unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn full_pipeline_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    let (data, run) = (data.to_str().unwrap(), run.to_str().unwrap());

    let o = bin(&["synth", "--config", &cfg, "--out", data]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("observations: 4320"));

    let o = bin(&["fit", "--config", &cfg, "--data", data, "--out", run, "--jobs", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("models: 6"));

    assert_eq!(code(&bin(&["predict", "--config", &cfg, "--data", data, "--out", run])), 0);
    assert!(Path::new(run).join("forecasts/QR.csv").exists());
    assert_eq!(code(&bin(&["verify", "--config", &cfg, "--out", run])), 0);
    let tables = Path::new(run).join("tables");
    assert_eq!(code(&bin(&["report", "--data", run, "--out", tables.to_str().unwrap()])), 0);
    assert!(tables.join("importance_top10.csv").exists());
}

#[test]
fn usage_and_config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let o = bin(&["synth", "--engines", "GA,XYZ", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown engine `XYZ`"));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "lead_times = [12]\ntress = 3\n").unwrap();
    let o = bin(&["synth", "--config", bad.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("tress"));

    assert_eq!(code(&bin(&["frobnicate"])), 1);
    assert_eq!(code(&bin(&["--help"])), 0);
}

#[test]
fn malformed_data_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let data = dir.path().join("data");
    assert_eq!(code(&bin(&["synth", "--config", &cfg, "--out", data.to_str().unwrap()])), 0);
    let obs = data.join("observations.csv");
    let mut text = fs::read_to_string(&obs).unwrap();
    text.push_str("coast,not-a-time,12.0\n");
    fs::write(&obs, text).unwrap();
    let run = dir.path().join("run");
    let o = bin(&["fit", "--config", &cfg, "--data", data.to_str().unwrap(), "--out", run.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("observations.csv"));
}

#[test]
fn verify_without_forecasts_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(&["verify", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("verified rows: 0"));
}
