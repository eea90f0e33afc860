use std::path::Path;
use std::process::{Command, Output};

fn kspark(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kspark")).args(args).output().expect("spawn kspark")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn small_config(dir: &Path, body: &str) -> String {
    let p = dir.join("run.json");
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn grappa_at_r1_matches_the_reference() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = small_config(
        d,
        r#"{"phantom": {"dims": [32, 32, 1]}, "coils": {"n_coils": 4},
            "mask": {"accel": [1, 1], "acs": [32, 1]}, "grappa": {"taps": [3, 2, 1]}}"#,
    );
    let data = d.join("data");
    let data = data.to_str().unwrap();
    let o = kspark(&["phantom", "--config", &cfg, "--out", data]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("net_acceleration=1.000000"));

    let img = d.join("grappa.kspc");
    let img = img.to_str().unwrap();
    let o = kspark(&["recon", "grappa", "--config", &cfg, "--data", data, "--out", img]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let reference = format!("{data}/reference.kspc");
    let o = kspark(&["eval", "rmse", "--recon", img, "--reference", &reference]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "rmse=0.00");

    let pgm = d.join("err.pgm");
    let o = kspark(&["export", "--image", img, "--reference", &reference, "--out", pgm.to_str().unwrap(), "--window", "0,0.1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let bytes = std::fs::read(&pgm).unwrap();
    assert!(bytes.starts_with(b"P5\n32 32\n255\n"));
    assert!(bytes[13..].iter().all(|&b| b == 0));
}

#[test]
fn missing_input_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere").join("recon.kspc");
    let o = kspark(&["eval", "rmse", "--recon", missing.to_str().unwrap(), "--reference", missing.to_str().unwrap()]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: "));
    assert!(err.contains(missing.to_str().unwrap()), "{err}");
}

#[test]
fn bad_config_is_a_one_line_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), r#"{"spark": {"epochz": 3}}"#);
    let o = kspark(&["mask", "--config", &cfg, "--out", "m.kspc"]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.contains("epochz"), "{err}");
}

#[test]
fn mask_command_reports_acceleration() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), r#"{"phantom": {"dims": [16, 40, 1]}, "mask": {"accel": [4, 1], "acs": [8, 1]}}"#);
    let out = dir.path().join("mask.kspc");
    let o = kspark(&["mask", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    // 10 lattice lines plus 6 extra ACS lines.
    assert!(stdout(&o).contains("sampled=16"), "{}", stdout(&o));
}

#[test]
fn repro_prints_a_passing_report() {
    let o = kspark(&["repro", "spark-grappa-r4"]);
    let text = stdout(&o);
    assert!(o.status.success(), "{text}");
    assert!(text.starts_with("scenario=spark-grappa-r4\n"));
    assert!(text.contains("check=pass"));
    assert!(text.trim_end().ends_with("passed=true"));
}
