use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn twinbeam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_twinbeam"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn small_config(dir: &Path, r: f64) -> PathBuf {
    let path = dir.join("run.txt");
    fs::write(
        &path,
        format!("# small run\nr = {r}\nsamples = 200000\nmc_draws = 2000\nseed = 11\n"),
    )
    .unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(dir: &Path, r: f64) -> PathBuf {
    let cfg = small_config(dir, r);
    let traces = dir.join("traces");
    let out = twinbeam(&["simulate", "--config", s(&cfg), "--out", s(&traces)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    traces
}

#[test]
fn simulate_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let (one, two) = (tmp.path().join("one"), tmp.path().join("two"));
    fs::create_dir_all(&one).unwrap();
    fs::create_dir_all(&two).unwrap();
    let a = simulate(&one, 0.4335);
    let b = simulate(&two, 0.4335);
    for name in ["a", "b", "c", "d", "e", "f", "shot"] {
        let file = format!("trace_{name}.csv");
        assert_eq!(fs::read(a.join(&file)).unwrap(), fs::read(b.join(&file)).unwrap(), "{file}");
    }
    let head = fs::read_to_string(a.join("trace_c.csv")).unwrap();
    assert!(head.starts_with("# mode=c\n"));
}

#[test]
fn full_pipeline_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let traces = simulate(tmp.path(), 0.4335);
    let cfg = tmp.path().join("run.txt");
    let rec_dir = tmp.path().join("rec");
    let out = twinbeam(&["reconstruct", s(&traces), "--config", s(&cfg), "--out", s(&rec_dir)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for f in ["cm.json", "aux_fits.json", "reconstruction.json", "kurtosis.csv"] {
        assert!(rec_dir.join(f).exists(), "{f}");
    }

    let ana_dir = tmp.path().join("ana");
    let out = twinbeam(&[
        "analyze",
        s(&rec_dir.join("cm.json")),
        "--aux",
        s(&rec_dir.join("aux_fits.json")),
        "--config",
        s(&cfg),
        "--out",
        s(&ana_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(ana_dir.join("analysis.json")).unwrap()).unwrap();
    assert!(report["criteria"]["phs_lhs"]["value"].as_f64().unwrap() > 0.25);
    assert!(ana_dir.join("purity_hist.csv").exists());
}

#[test]
fn inflated_trace_fails_the_gate() {
    let tmp = TempDir::new().unwrap();
    let traces = simulate(tmp.path(), 0.4335);
    let path = traces.join("trace_a.csv");
    let text = fs::read_to_string(&path).unwrap();
    let inflated: String = text
        .lines()
        .map(|line| match line.split_once(',') {
            Some((phase, value)) if !line.starts_with('#') && phase != "phase" => {
                let v: f64 = value.parse().unwrap();
                format!("{phase},{}\n", 1.5 * v)
            }
            _ => format!("{line}\n"),
        })
        .collect();
    fs::write(&path, inflated).unwrap();
    let out = twinbeam(&["reconstruct", s(&traces), "--out", s(&tmp.path().join("rec"))]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn corrupt_trace_is_a_parse_error() {
    let tmp = TempDir::new().unwrap();
    let traces = simulate(tmp.path(), 0.4335);
    let path = traces.join("trace_d.csv");
    let mut lines: Vec<String> = fs::read_to_string(&path).unwrap().lines().map(String::from).collect();
    lines[10] = "0.1,not-a-number".into();
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    let out = twinbeam(&["reconstruct", s(&traces), "--out", s(&tmp.path().join("rec"))]);
    assert_eq!(code(&out), 3);
    let err = stderr(&out);
    assert!(err.contains("trace_d.csv") && err.contains("11"), "{err}");
}

#[test]
fn missing_input_is_an_io_error() {
    let tmp = TempDir::new().unwrap();
    let out = twinbeam(&["reconstruct", s(tmp.path()), "--out", s(&tmp.path().join("rec"))]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    let out = twinbeam(&["analyze", s(&tmp.path().join("nope.json"))]);
    assert_eq!(code(&out), 4);
}

#[test]
fn bad_config_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let empty = tmp.path().join("empty.txt");
    fs::write(&empty, "").unwrap();
    assert_eq!(code(&twinbeam(&["simulate", "--config", s(&empty)])), 3);
    let bad = tmp.path().join("bad.txt");
    fs::write(&bad, "r = 0.4\nsquash = 3\n").unwrap();
    assert_eq!(code(&twinbeam(&["simulate", "--config", s(&bad)])), 3);
    assert_eq!(code(&twinbeam(&["frobnicate"])), 3);
}

#[test]
fn vacuum_is_not_entangled() {
    let tmp = TempDir::new().unwrap();
    let cm = tmp.path().join("vac.json");
    let mut entries = vec![0.0; 16];
    for i in 0..4 {
        entries[5 * i] = 0.5;
    }
    let json = serde_json::json!({
        "basis": ["Xa", "Ya", "Xb", "Yb"],
        "shot_noise": 0.5,
        "entries": entries,
        "errors": vec![0.01; 16],
    });
    fs::write(&cm, json.to_string()).unwrap();
    let out = twinbeam(&["analyze", s(&cm), "--quick", "--out", s(&tmp.path().join("ana"))]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));

    // the simulated vacuum still reconstructs cleanly
    let traces = simulate(tmp.path(), 0.0);
    let out = twinbeam(&["reconstruct", s(&traces), "--out", s(&tmp.path().join("rec"))]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

#[test]
fn modes_prints_the_synthesis_table() {
    let out = twinbeam(&["modes"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text, twinbeam::optics::modes_table().unwrap());
    assert!(text.contains("e[R,+1] = (i a + b)/sqrt(2)  global phase 1"));
}
