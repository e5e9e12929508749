use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use reexcite::experiment::ExperimentConfig;

fn reexcite(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reexcite"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("reexcite-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn shipped_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn shipped_config_is_valid_and_matches_defaults() {
    let path = shipped_config();
    let out = reexcite(&["validate", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains(": ok"));
    assert_eq!(ExperimentConfig::load(&path).unwrap(), ExperimentConfig::default());
}

#[test]
fn violations_are_listed_with_their_key() {
    let dir = scratch("violation");
    let path = dir.join("bad.toml");
    std::fs::write(&path, "[laser]\npulse_fwhm_ps = -1.0\n").unwrap();
    let out = reexcite(&["validate", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stdout(&out).contains("laser.pulse_fwhm_ps"), "{}", stdout(&out));
}

#[test]
fn unknown_keys_are_rejected_by_name() {
    let dir = scratch("unknown");
    let path = dir.join("typo.toml");
    std::fs::write(&path, "[laser]\npulse_fwhm = 80.0\n").unwrap();
    let out = reexcite(&["validate", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("pulse_fwhm"), "{}", stderr(&out));
}

#[test]
fn unknown_preset_is_a_config_error() {
    let out = reexcite(&["preset", "fig9", "--n-pulses", "10"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("fig2b"), "{}", stderr(&out));
}

#[test]
fn preset_output_is_reproducible() {
    let dir = scratch("preset");
    let mut listings = Vec::new();
    for run in ["a", "b"] {
        let target = dir.join(run);
        let out = reexcite(&[
            "preset", "figS3", "--n-pulses", "20000", "--seed", "7", "--out", target.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        assert!(stderr(&out).contains("seed 7"));
        // The summary lists one checksum per output; only the wall time differs.
        let summary = stdout(&out);
        listings.push(summary.lines().skip(1).map(str::to_string).collect::<Vec<_>>());
        for file in ["hist2d.csv", "hist2d_jitter_free.csv", "metrics.json", "manifest.json"] {
            assert!(target.join(file).exists(), "{file} missing");
        }
    }
    assert_eq!(listings[0], listings[1]);
    assert!(!listings[0].is_empty());
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn simulated_tags_can_be_analyzed() {
    let dir = scratch("roundtrip");
    for (format, name) in [("binary", "tags.bin"), ("csv", "tags.csv")] {
        let tags = dir.join(name);
        let out = reexcite(&[
            "simulate", "--n-pulses", "20000", "--tags", tags.to_str().unwrap(), "--format", format,
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

        let analysis = dir.join(format!("g2-{format}"));
        let out = reexcite(&[
            "analyze", "--tags", tags.to_str().unwrap(), "--product", "g2", "--out", analysis.to_str().unwrap(), "--svg",
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        assert!(stdout(&out).starts_with("g2(0) = "));
        assert!(analysis.join("correlation.csv").exists());
        assert!(analysis.join("correlation.svg").exists());
    }
    let first = std::fs::read(dir.join("g2-binary/correlation.csv")).unwrap();
    let second = std::fs::read(dir.join("g2-csv/correlation.csv")).unwrap();
    assert_eq!(first, second);
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn g2scan_takes_a_pulse_length_list() {
    let dir = scratch("g2scan");
    let out = reexcite(&[
        "g2scan", "--n-pulses", "5000", "--pulse-lengths-ps", "20,80", "--out", dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.join("g2_vs_pulselength.csv")).unwrap();
    let rows = csv.lines().filter(|l| !l.starts_with('#')).count();
    assert_eq!(rows, 3, "{csv}");
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn missing_config_file_is_a_config_error() {
    let out = reexcite(&["simulate", "--config", "/nonexistent/cfg.toml", "--tags", "/tmp/x.bin"]);
    assert_eq!(out.status.code(), Some(2));
}
