use std::io::{BufRead, BufReader};
use std::net::TcpListener;
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};

fn irispad(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_irispad"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn irispad")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn error_line(o: &Output) -> serde_json::Value {
    assert!(!o.status.success(), "expected failure, got {}", stdout(o));
    let last = stderr(o).lines().last().unwrap_or_default().to_string();
    serde_json::from_str(&last).unwrap_or_else(|_| panic!("not a JSON error line: {last}"))
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn mock_serve(dir: &Path, port: u16) -> Server {
    let mut child = Command::new(env!("CARGO_BIN_EXE_irispad"))
        .current_dir(dir)
        .args(["mock-serve", "--script", "demo/mock_script.txt", "--port", &port.to_string()])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    assert!(line.starts_with("listening on http://127.0.0.1:"), "{line}");
    Server(child)
}

#[test]
fn demo_workflow_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let port = free_port();
    let o = irispad(dir, &["ingest", "--demo", "demo", "--port", &port.to_string()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = dir.join("demo/config.toml");
    let cfg = cfg.to_str().unwrap();

    let o = irispad(dir, &["--config", cfg, "ingest"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("samples="));

    let _server = mock_serve(dir, port);
    let o = irispad(dir, &["--config", cfg, "run"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("failed=0"), "{}", stdout(&o));
    let store = dir.join("demo/out/results.txt");
    assert!(store.exists());

    // a second run has nothing left to do
    let o = irispad(dir, &["--config", cfg, "run"]);
    assert!(stdout(&o).starts_with("new=0 "), "{}", stdout(&o));

    let o = irispad(dir, &["--config", cfg, "score"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().filter(|l| l.contains(" mse=")).count(), 8);
    assert!(dir.join("demo/out/rates.csv").exists());

    let o = irispad(dir, &["--config", cfg, "curve"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 8);

    let o = irispad(dir, &["--config", cfg, "embed"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("silhouette | fused="));

    let s = store.to_str().unwrap();
    let o = irispad(dir, &["stats", s, s, "--test", "mann-whitney", "--quantity", "confidence", "--variant", "short"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = irispad(dir, &["stats", s, s]);
    assert_eq!(error_line(&o)["error"], "stats");
}

#[test]
fn missing_config_is_a_json_error() {
    let tmp = tempfile::tempdir().unwrap();
    let v = error_line(&irispad(tmp.path(), &["run"]));
    assert!(v["message"].as_str().unwrap().contains("--config"), "{v}");
}

#[test]
fn unreadable_config_is_a_json_error() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("bad.toml"), "seed = \"x\"\n").unwrap();
    let v = error_line(&irispad(tmp.path(), &["--config", "bad.toml", "embed"]));
    assert!(v["error"].is_string() && v["message"].is_string());
}

#[test]
fn bad_variant_name_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("s.txt"), "").unwrap();
    let o = irispad(tmp.path(), &["stats", "s.txt", "s.txt", "--variant", "medium+human"]);
    error_line(&o);
}

#[test]
fn usage_errors_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(!irispad(tmp.path(), &["frobnicate"]).status.success());
    assert!(irispad(tmp.path(), &["--help"]).status.success());
}
