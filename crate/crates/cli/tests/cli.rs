use std::path::Path;
use std::process::{Command, Output};

use afcsim::detection::{write_tags_csv, Channel, Origin, TimeTag};

fn afcsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_afcsim")).args(args).output().unwrap()
}

fn afcsim_threads(args: &[&str], threads: usize) -> Output {
    Command::new(env!("CARGO_BIN_EXE_afcsim"))
        .args(args)
        .env("RAYON_NUM_THREADS", threads.to_string())
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn listing(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

#[test]
fn presets_lists_every_preset() {
    let o = afcsim(&["presets"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    for name in afcsim::scenario::preset_names() {
        assert!(text.lines().any(|l| l.starts_with(name)), "{name} missing");
    }
}

#[test]
fn shown_preset_runs_as_config() {
    let o = afcsim(&["presets", "--show", "fig5_two"]);
    assert!(o.status.success());
    let cfg = afcsim::scenario::ScenarioConfig::from_json(std::str::from_utf8(&o.stdout).unwrap()).unwrap();
    assert_eq!(cfg, afcsim::scenario::preset("fig5_two").unwrap());
    assert_eq!(afcsim(&["presets", "--show", "nope"]).status.code(), Some(2));
}

#[test]
fn run_preset_writes_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = afcsim(&["run", "--preset", "fig3", "--seed", "4", "--duration", "2", "--out", out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let files = listing(dir.path());
    for f in [
        "fig3_4_bypass.csv",
        "fig3_4_bypass.svg",
        "fig3_4_afc8.csv",
        "fig3_4_afc16.svg",
        "fig3_4_metrics.json",
        "fig3_4_summary.csv",
    ] {
        assert!(files.iter().any(|x| x == f), "{f} not in {files:?}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("fig3_4_metrics.json")).unwrap()).unwrap();
    assert_eq!(report["provenance"]["seed"], 4);
}

#[test]
fn zero_duration_writes_metrics_only() {
    let dir = tempfile::tempdir().unwrap();
    let o = afcsim(&["run", "--preset", "fig4", "--duration", "0", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(listing(dir.path()), vec!["fig4_0_metrics.json".to_string()]);
}

#[test]
fn metrics_are_identical_across_thread_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = |d: &Path| {
        vec![
            "run".to_string(),
            "--preset".into(),
            "fig5_two".into(),
            "--duration".into(),
            "3".into(),
            "--out".into(),
            d.to_str().unwrap().to_string(),
        ]
    };
    let (x, y) = (args(a.path()), args(b.path()));
    let x: Vec<&str> = x.iter().map(String::as_str).collect();
    let y: Vec<&str> = y.iter().map(String::as_str).collect();
    assert!(afcsim_threads(&x, 1).status.success());
    assert!(afcsim_threads(&y, 3).status.success());
    let read = |d: &Path| std::fs::read(d.join("fig5_two_0_metrics.json")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn config_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = afcsim::scenario::preset("fig3").unwrap();
    cfg.name = "custom".into();
    cfg.points.truncate(2);
    let path = dir.path().join("custom.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    let out = dir.path().join("out");
    let o = afcsim(&[
        "run",
        "--config",
        path.to_str().unwrap(),
        "--duration",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("custom_0_afc8.csv").exists());
}

#[test]
fn validation_errors_exit_two() {
    let o = afcsim(&["run", "--preset", "fig99", "--out", "unused"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("fig5_six"), "{}", stderr(&o));

    let dir = tempfile::tempdir().unwrap();
    let mut v = serde_json::to_value(afcsim::scenario::preset("fig3").unwrap()).unwrap();
    v["source"]["pump_power"] = serde_json::json!(-1.0);
    let path = dir.path().join("bad.json");
    std::fs::write(&path, v.to_string()).unwrap();
    let o = afcsim(&["run", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("pump_power"), "{}", stderr(&o));

    let o = afcsim(&["run", "--preset", "fig3", "--duration", "-2", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    // neither --preset nor --config
    let o = afcsim(&["run", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn io_errors_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let o = afcsim(&["run", "--config", missing.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));

    let blocker = dir.path().join("file");
    std::fs::write(&blocker, b"x").unwrap();
    let out = blocker.join("sub");
    let o = afcsim(&["run", "--preset", "fig3", "--duration", "0", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

fn tag(channel: Channel, time_ps: i64) -> TimeTag {
    TimeTag {
        channel,
        time_ps,
        origin: Origin::Pair,
    }
}

#[test]
fn analyze_reports_windowed_g2() {
    // every trigger has a partner 4.96 ns later, every tenth one more 0.8 ns after that
    let mut tags = Vec::new();
    for k in 0..10_000i64 {
        let t = k * 100_000;
        tags.push(tag(Channel::Idler, t));
        tags.push(tag(Channel::Signal, t + 4_960));
        if k % 10 == 0 {
            tags.push(tag(Channel::Signal, t + 5_760));
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tags.csv");
    let mut buf = Vec::new();
    write_tags_csv(&tags, &mut buf).unwrap();
    std::fs::write(&path, buf).unwrap();
    let o = afcsim(&["analyze", "--tags", path.to_str().unwrap(), "--windows", "4.96e-9,0.8e-9,0.8e-9"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["idler_tags"], 10_000);
    assert!((v["g2"].as_f64().unwrap() - 10.0).abs() < 1e-9, "{v}");
    let want_sigma = 10.0 * (1.0f64 / 10_000.0 + 1.0 / 1_000.0).sqrt();
    assert!((v["sigma"].as_f64().unwrap() - want_sigma).abs() < 1e-9);
    assert!(v["rates"]["r_si"].as_f64().unwrap() > 0.0);

    let o = afcsim(&["analyze", "--tags", path.to_str().unwrap(), "--windows", "4.96e-9,-0.8e-9,0.8e-9"]);
    assert_eq!(o.status.code(), Some(2));
    let o = afcsim(&["analyze", "--tags", dir.path().join("none.csv").to_str().unwrap(), "--windows", "4.96e-9,0.8e-9,0.8e-9"]);
    assert_eq!(o.status.code(), Some(3));
    std::fs::write(&path, "time,channel\n1,2\n").unwrap();
    let o = afcsim(&["analyze", "--tags", path.to_str().unwrap(), "--windows", "4.96e-9,0.8e-9,0.8e-9"]);
    assert_eq!(o.status.code(), Some(2));
}
