// SPDX-License-Identifier: MIT OR Apache-2.0

//! Configuration parsing, the `solve` / `sample` / `verify` commands and their
//! on-disk outputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use tthjb::cli::{check_potential_floor, config_hash, load_trajectory, solve_to_dir, Manifest, RunConfig};
use tthjb::hjb_operators::PotentialSpec;
use tthjb::tt_core::checkpoint;
use tthjb::Error;

const BIN: &str = env!("CARGO_BIN_EXE_tthjb");

/// Small 2-d Gaussian run that finishes in well under a second.
fn gaussian_config(out: &Path, t_final: f64) -> String {
    format!(
        r#"{{
  "space": {{"dims": 2, "intervals": [[-4, 4], [-4, 4]], "degrees": [2, 2]}},
  "potential": {{"builtins": [{{"name": "gaussian", "coords": [0, 1], "params": {{"Q": [[1.0, 0.2], [0.2, 0.8]]}}}}]}},
  "solver": {{"T": {t_final}, "tau_max": 0.1, "rho_schedule": [[0.0, 0.2]],
             "delta_proj": 0.01, "delta_rank": 0.01, "delta_contr": 1e-8, "seed": 3}},
  "sampler": {{"lambda": 1.0, "n_particles": 50, "seed": 11}},
  "output_dir": {out:?}
}}"#
    )
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(BIN).args(args).env("TTHJB_THREADS", "1").output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn solve_in(dir: &Path, sub: &str, t_final: f64) -> PathBuf {
    let out = dir.join(sub);
    let cfg = write_config(dir, &format!("{sub}.json"), &gaussian_config(&out, t_final));
    let (code, _, err) = run(&["solve", cfg.to_str().unwrap()]);
    assert_eq!(code, 0, "solve failed: {err}");
    out
}

#[test]
fn config_round_trips_and_validates() {
    let cfg = RunConfig::from_json(&gaussian_config(Path::new("/tmp/x"), 1.0)).unwrap();
    assert_eq!(cfg.space.dims, 2);
    assert_eq!(cfg.snapshot_stride, 1);
    assert_eq!(cfg.sampler.as_ref().unwrap().n_particles, 50);
    let text = serde_json::to_string(&cfg).unwrap();
    assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
    let space = cfg.poly_space().unwrap();
    assert_eq!(space.d(), 2);
}

#[test]
fn schema_violations_are_line_precise() {
    let good = gaussian_config(Path::new("/tmp/x"), 1.0);
    let unknown = good.replace("\"dims\": 2", "\"dims\": 2, \"bogus\": 1");
    let msg = RunConfig::from_json(&unknown).unwrap_err().to_string();
    assert!(msg.contains("bogus") && msg.contains("line 2"), "{msg}");

    let bad_degree = good.replace("\"degrees\": [2, 2]", "\"degrees\": [2, 13]");
    assert!(matches!(RunConfig::from_json(&bad_degree), Err(Error::InvalidInput(_))));
    let bad_interval = good.replace("[[-4, 4], [-4, 4]]", "[[-4, 4], [4, -4]]");
    assert!(matches!(RunConfig::from_json(&bad_interval), Err(Error::InvalidInput(_))));
    let bad_dims = good.replace("\"dims\": 2", "\"dims\": 3");
    assert!(matches!(RunConfig::from_json(&bad_dims), Err(Error::InvalidInput(_))));
    let bad_stride = good.replace("\"output_dir\"", "\"snapshot_stride\": 0, \"output_dir\"");
    assert!(matches!(RunConfig::from_json(&bad_stride), Err(Error::InvalidInput(_))));
    assert!(matches!(RunConfig::from_json("{"), Err(Error::Format(_))));
}

#[test]
fn potential_floor_check() {
    let empty = PotentialSpec::default();
    let msg = check_potential_floor(&empty, 2).unwrap_err().to_string();
    assert!(msg.contains("valid density potential"), "{msg}");
    let gauss = PotentialSpec::gaussian(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
    assert!(check_potential_floor(&gauss, 2).is_ok());
    // a Gaussian on the first coordinate only leaves the second unbounded
    assert!(check_potential_floor(&PotentialSpec::gaussian(&[vec![1.0]]), 2).is_err());
    let mut mixed = PotentialSpec::default();
    mixed.builtins.push(PotentialSpec::builtin("doublewell", vec![0, 1]));
    assert!(check_potential_floor(&mixed, 2).is_ok());
}

#[test]
fn empty_potential_is_rejected_by_solve() {
    let dir = tempfile::tempdir().unwrap();
    let text = gaussian_config(&dir.path().join("out"), 1.0);
    let start = text.find("\"potential\"").unwrap();
    let end = text[start..].find('\n').unwrap() + start;
    let text = format!("{}\"potential\": {{\"terms\": []}},{}", &text[..start], &text[end..]);
    let cfg = write_config(dir.path(), "empty.json", &text);
    let (code, _, err) = run(&["solve", cfg.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(err.contains("valid density potential"), "{err}");
}

#[test]
fn config_hash_tracks_every_byte() {
    let a = gaussian_config(Path::new("/tmp/x"), 1.0);
    let h = config_hash(a.as_bytes());
    assert_eq!(h.len(), 64);
    assert_eq!(h, config_hash(a.as_bytes()));
    let mut bytes = a.clone().into_bytes();
    for i in [0, bytes.len() / 2, bytes.len() - 1] {
        bytes[i] ^= 1;
        assert_ne!(config_hash(&bytes), h, "byte {i}");
        bytes[i] ^= 1;
    }
    assert_eq!(config_hash(&bytes), h);
    assert_eq!(
        config_hash(b""),
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
    );
}

#[test]
fn solve_writes_manifest_checkpoints_and_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let out = solve_in(dir.path(), "run", 1.0);
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest.complete && manifest.abort.is_none());
    assert_eq!(manifest.final_time, 1.0);
    // the cross term x₁x₂ has not decayed by t = 1, so the quadratic keeps rank 3
    assert_eq!(manifest.final_ranks, vec![3]);
    assert_eq!(manifest.files.len(), manifest.times.len());
    assert_eq!(manifest.files[0], "snapshot_0.ttck");
    assert!(manifest.times.windows(2).all(|w| w[0] < w[1]));
    let cfg_bytes = fs::read(dir.path().join("run.json")).unwrap();
    assert_eq!(manifest.config_hash, config_hash(&cfg_bytes));
    let diag = fs::read_to_string(out.join("diagnostics.jsonl")).unwrap();
    assert_eq!(diag.lines().count() + 1, manifest.files.len());
    for line in diag.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.get("tau").is_some() && v.get("ranks").is_some(), "{line}");
    }
    let traj = load_trajectory(&manifest, &out).unwrap();
    assert_eq!(traj.times(), manifest.times);
    for (f, s) in manifest.files.iter().zip(&traj.snapshots) {
        let (tt, t) = checkpoint::read_file(&out.join(f)).unwrap();
        assert_eq!(t, s.t);
        assert_eq!(tt, s.coeffs);
    }
}

#[test]
fn snapshot_stride_thins_output_but_keeps_endpoints() {
    let dir = tempfile::tempdir().unwrap();
    let text = gaussian_config(&dir.path().join("out"), 1.0).replace("\"output_dir\"", "\"snapshot_stride\": 4, \"output_dir\"");
    let cfg = RunConfig::from_json(&text).unwrap();
    let outcome = solve_to_dir(&cfg, text.as_bytes()).unwrap();
    let m = outcome.manifest;
    assert_eq!(m.times[0], 0.0);
    assert_eq!(*m.times.last().unwrap(), 1.0);
    let steps = outcome.trajectory.diagnostics.len();
    assert!(m.files.len() < steps, "{} files for {steps} steps", m.files.len());
    for f in &m.files[1..m.files.len() - 1] {
        let step: usize = f.trim_start_matches("snapshot_").trim_end_matches(".ttck").parse().unwrap();
        assert_eq!(step % 4, 0, "{f}");
    }
}

#[test]
fn repeated_solves_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = solve_in(dir.path(), "a", 1.0);
    let b = solve_in(dir.path(), "b", 1.0);
    assert_eq!(fs::read(a.join("diagnostics.jsonl")).unwrap(), fs::read(b.join("diagnostics.jsonl")).unwrap());
    let ma: Manifest = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    for f in &ma.files {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn sample_with_zero_particles_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = solve_in(dir.path(), "run", 0.5);
    let manifest = out.join("manifest.json");
    let (code, _, err) = run(&["sample", manifest.to_str().unwrap(), "--particles", "0"]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(fs::read_to_string(out.join("samples.csv")).unwrap(), "x1,x2,flags\n");
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("samples_meta.json")).unwrap()).unwrap();
    assert!(meta.is_object());
}

#[test]
fn deterministic_sampling_gives_identical_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let out = solve_in(dir.path(), "run", 1.0);
    let manifest = out.join("manifest.json");
    let args = ["sample", manifest.to_str().unwrap(), "--lambda", "1", "--langevin-steps", "0", "--seed", "7"];
    assert_eq!(run(&args).0, 0);
    let first = fs::read(out.join("samples.csv")).unwrap();
    assert_eq!(run(&args).0, 0);
    let second = fs::read(out.join("samples.csv")).unwrap();
    assert_eq!(first, second);
    let text = String::from_utf8(first).unwrap();
    assert_eq!(text.lines().count(), 51);
    assert!(text.lines().skip(1).all(|l| l.split(',').count() == 3));
}

#[test]
fn sample_rejects_incomplete_or_missing_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let out = solve_in(dir.path(), "run", 0.5);
    let path = out.join("manifest.json");
    let mut m: Manifest = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    m.complete = false;
    fs::write(&path, serde_json::to_string(&m).unwrap()).unwrap();
    let (code, _, err) = run(&["sample", path.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(err.contains("incomplete"), "{err}");
    let missing = dir.path().join("nope.json");
    assert_eq!(run(&["sample", missing.to_str().unwrap()]).0, 1);
}

#[test]
fn verify_suites_and_usage_errors() {
    let (code, stdout, _) = run(&["verify", "eigen"]);
    assert_eq!(code, 0, "{stdout}");
    assert!(stdout.lines().skip(1).all(|l| l.ends_with("PASS")), "{stdout}");
    let (code, _, err) = run(&["verify", "nonsense"]);
    assert_eq!(code, 1);
    assert!(err.contains("usage: tthjb verify <gaussian|operators|eigen|quadrature>"), "{err}");
    assert_eq!(run(&["frobnicate"]).0, 1);
    assert_eq!(run(&["solve"]).0, 1);
    assert_eq!(run(&["--help"]).0, 0);
    let (code, _, err) = run(&["solve", "/definitely/not/here.json"]);
    assert_eq!(code, 1);
    assert!(err.contains("cannot read"), "{err}");
}

#[test]
fn in_process_entry_point_matches_binary() {
    assert_eq!(tthjb::cli::run(["tthjb", "verify", "nonsense"]), 1);
    assert_eq!(tthjb::cli::cmd_verify("eigen"), 0);
}
