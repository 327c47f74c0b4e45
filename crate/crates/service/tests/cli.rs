mod common;

use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use common::*;

fn airays(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_airays"))
        .args(args)
        .current_dir(dir)
        .env_remove("AIRAYS_CONFIG")
        .env_remove("AIRAYS_BACKENDS")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

struct Killed(Child);

impl Drop for Killed {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

/// Spawn a listening subcommand and return its base URL.
fn spawn_listening(args: &[&str], config: Option<&Path>) -> (Killed, String) {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_airays"));
    cmd.args(args).current_dir(repo()).stdout(Stdio::piped()).env_remove("AIRAYS_BACKENDS");
    match config {
        Some(c) => cmd.env("AIRAYS_CONFIG", c),
        None => cmd.env_remove("AIRAYS_CONFIG"),
    };
    let mut child = cmd.spawn().unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let base = line.trim().strip_prefix("listening on ").expect("listen line").to_string();
    (Killed(child), base)
}

#[test]
fn run_once_twice_is_byte_identical() {
    let out = tempfile::tempdir().unwrap();
    let o = out.path().to_str().unwrap();
    let first = airays(&repo(), &["run-once", "fixtures/person.png", "--seed", "7", "--out", o]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let id = stdout(&first).lines().next().unwrap().strip_prefix("run_id: ").unwrap().to_string();
    let rec = out.path().join(&id).join("record.json");
    let png = out.path().join(&id).join("composite.png");
    let (r1, p1) = (std::fs::read(&rec).unwrap(), std::fs::read(&png).unwrap());
    assert!(stdout(&first).contains(&rec.display().to_string()));

    let second = airays(&repo(), &["run-once", "fixtures/person.png", "--seed", "7", "--out", o]);
    assert!(second.status.success());
    assert_eq!(stdout(&first), stdout(&second));
    assert_eq!(std::fs::read(&rec).unwrap(), r1);
    assert_eq!(std::fs::read(&png).unwrap(), p1);

    let other = airays(&repo(), &["run-once", "fixtures/person.png", "--seed", "8", "--out", o]);
    assert!(!stdout(&other).contains(&id));
}

#[test]
fn catalog_validate_exit_codes() {
    assert!(airays(&repo(), &["catalog", "validate", "assets/catalog"]).status.success());
    assert!(airays(&repo(), &["catalog", "validate", "fixtures/catalog"]).status.success());
    let bad = airays(&repo(), &["catalog", "validate", "fixtures/bad_dup"]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("lipstick"));
    assert!(!airays(&repo(), &["catalog", "validate", "fixtures/missing"]).status.success());
}

#[test]
fn config_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, "{\n  \"seed\": 3,\n  \"timings\": {\"cooldown\": 5}\n}\n").unwrap();
    let o = airays(&repo(), &["--config", cfg.to_str().unwrap(), "run-once", "fixtures/person.png"]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("c.json:3:"), "{err}");
    assert!(err.contains("unknown field `cooldown`"), "{err}");

    let o = Command::new(env!("CARGO_BIN_EXE_airays"))
        .args(["run-once", "fixtures/person.png"])
        .current_dir(repo())
        .env("AIRAYS_CONFIG", &cfg)
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("c.json:3:"));
}

#[test]
fn audit_cli_reports_the_yoga_finding() {
    let out = tempfile::tempdir().unwrap();
    let o = airays(
        &repo(),
        &["audit", "fixtures/stub_manifest.csv", "fixtures/codebook.json", "--axis", "gender", "--out", out.path().to_str().unwrap()],
    );
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("findings: 1"), "{text}");
    assert!(text.contains("YOGA female vs male: ratio 3.000"), "{text}");
    let dirs: Vec<_> = std::fs::read_dir(out.path()).unwrap().collect();
    assert_eq!(dirs.len(), 1);

    let bad = airays(&repo(), &["audit", "fixtures/stub_manifest.csv", "fixtures/codebook.json", "--axis", "age"]);
    assert!(!bad.status.success());
}

#[test]
fn incomplete_audit_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(repo().join("fixtures/stub_manifest.csv")).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    for l in lines.iter_mut().skip(1).take(15) {
        *l = l.replacen("corpus/", "gone/", 1);
    }
    std::fs::write(dir.path().join("m.csv"), lines.join("\n")).unwrap();
    std::os::unix::fs::symlink(repo().join("fixtures/corpus"), dir.path().join("corpus")).unwrap();
    let codebook = repo().join("fixtures/codebook.json");
    let o = airays(dir.path(), &["audit", "m.csv", codebook.to_str().unwrap(), "--axis", "gender"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("15 of 144"));
    assert!(dir.path().join("audits").is_dir());
}

#[test]
fn serve_answers_state_and_trigger() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    let runs = dir.path().join("runs");
    std::fs::write(&cfg, serde_json::json!({ "listen": "127.0.0.1:0", "runs_dir": runs, "virtual_clock": true }).to_string()).unwrap();
    let (_child, base) = spawn_listening(&["serve"], Some(&cfg));
    let c = client();
    let s: serde_json::Value = c.get(format!("{base}/state")).send().unwrap().json().unwrap();
    assert_eq!(s["state"], "Idle");
    let png = std::fs::read(repo().join("fixtures/person.png")).unwrap();
    assert_eq!(c.post(format!("{base}/trigger")).body(png).send().unwrap().status().as_u16(), 202);
    let start = Instant::now();
    while std::fs::read_dir(&runs).map(|d| d.count()).unwrap_or(0) == 0 {
        assert!(start.elapsed() < Duration::from_secs(20));
        std::thread::sleep(Duration::from_millis(20));
    }
}

#[test]
fn stub_backends_subcommand_serves_capabilities() {
    let (_child, base) = spawn_listening(&["stub-backends", "--port", "0"], None);
    let h = client().get(format!("{base}/healthz")).send().unwrap();
    assert!(h.status().is_success());
    let f = frame_with(true, true);
    let body = serde_json::json!({ "image": airays_core::backends::wire::encode_b64(&f.to_png().unwrap()), "query": "person" });
    let r: serde_json::Value = client().post(format!("{base}/detection")).json(&body).send().unwrap().json().unwrap();
    assert_eq!(r["boxes"].as_array().unwrap().len(), 1);
    assert_eq!(r["boxes"][0]["label"], "person");
}
