use std::io::Write;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command as StdCommand, Stdio};
use std::time::{Duration, Instant};

use assert_cmd::Command;
use predicates::prelude::*;
use serde_json::Value;

use ragx_core::eval::{needle_squad, NeedleSpec};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn ragx(cwd: &Path) -> Command {
    let mut cmd = Command::cargo_bin("ragx").unwrap();
    cmd.current_dir(cwd).env_remove("RAGX_CONFIG").env_remove("RAGX_BACKEND_URL");
    cmd
}

fn free_addr() -> String {
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    l.local_addr().unwrap().to_string()
}

/// A background `ragx` process killed on drop.
struct Running(Child);

impl Drop for Running {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn spawn(cwd: &Path, args: &[&str]) -> Running {
    let child = StdCommand::new(assert_cmd::cargo::cargo_bin("ragx"))
        .args(args)
        .current_dir(cwd)
        .env_remove("RAGX_CONFIG")
        .env_remove("RAGX_BACKEND_URL")
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    Running(child)
}

fn wait_healthy(url: &str) -> Value {
    let deadline = Instant::now() + Duration::from_secs(20);
    loop {
        if let Ok(r) = reqwest::blocking::get(format!("{url}/health")) {
            if r.status().is_success() {
                return r.json().unwrap();
            }
        }
        assert!(Instant::now() < deadline, "{url} never became healthy");
        std::thread::sleep(Duration::from_millis(50));
    }
}

fn write_docs(dir: &Path) {
    std::fs::create_dir_all(dir).unwrap();
    std::fs::write(
        dir.join("geo.md"),
        "# Geography\n\n## France\n\nThe capital of France is Paris.\n\n## Germany\n\nThe capital of Germany is Berlin.\n",
    )
    .unwrap();
}

fn ingest_docs(tmp: &Path) -> PathBuf {
    let docs = tmp.join("docs");
    write_docs(&docs);
    let shard = tmp.join("geo.parquet");
    ragx(tmp)
        .args(["ingest", "--input", docs.to_str().unwrap(), "--out", shard.to_str().unwrap()])
        .assert()
        .success();
    shard
}

#[test]
fn ingest_markdown_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let docs = tmp.path().join("docs");
    write_docs(&docs);
    let shard = tmp.path().join("geo.parquet");
    let out = ragx(tmp.path())
        .args(["ingest", "--input", docs.to_str().unwrap(), "--out", shard.to_str().unwrap()])
        .assert()
        .success()
        .get_output()
        .stdout
        .clone();
    let out = String::from_utf8(out).unwrap();
    let n: usize = out
        .lines()
        .find_map(|l| l.strip_prefix("chunks: "))
        .expect("chunk count line")
        .parse()
        .unwrap();
    assert!(n >= 1);
    assert!(out.contains("embedder=hash-bow-64"), "{out}");
    assert!(shard.is_file());
}

#[test]
fn ingest_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    write_docs(&tmp.path().join("docs"));
    std::fs::write(
        tmp.path().join("manifest.jsonl"),
        r#"{"source_id":"wiki","uri":"https://wiki/geo","media_kind":"markdown","path":"docs/geo.md"}"#,
    )
    .unwrap();
    ragx(tmp.path())
        .args(["ingest", "--input", "manifest.jsonl", "--out", "wiki.parquet"])
        .assert()
        .success()
        .stdout(predicate::str::contains("shard: wiki "));
}

#[test]
fn ingest_unreadable_input_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    ragx(tmp.path())
        .args(["ingest", "--input", "missing-dir", "--out", "x.parquet"])
        .assert()
        .code(2)
        .stderr(predicate::str::contains("input"));
}

#[test]
fn ingest_tiny_limit_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let docs = tmp.path().join("docs");
    std::fs::create_dir_all(&docs).unwrap();
    std::fs::copy(fixture("heading_heavy.md"), docs.join("runbook.md")).unwrap();
    ragx(tmp.path())
        .args(["ingest", "--input", "docs", "--out", "x.parquet", "--chunk-tokens", "5"])
        .assert()
        .code(3)
        .stderr(predicate::str::contains("chunk"));
}

#[test]
fn ingest_unknown_embedder_needs_http_backend() {
    let tmp = tempfile::tempdir().unwrap();
    write_docs(&tmp.path().join("docs"));
    ragx(tmp.path())
        .args(["ingest", "--input", "docs", "--out", "x.parquet", "--embedder", "e5-large"])
        .assert()
        .code(78)
        .stderr(predicate::str::contains("backends.embedder"));
}

#[test]
fn eval_squad_fixture_writes_two_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let report = tmp.path().join("report.json");
    ragx(tmp.path())
        .args(["eval", "--dataset", "squad", "--path"])
        .arg(fixture("squad_two.json"))
        .args(["--k", "3", "--out"])
        .arg(&report)
        .assert()
        .success()
        .stdout(predicate::str::is_match(r"CP@3=\d\.\d{3} CR@3=\d\.\d{3} Hits@3=\d\.\d{3} latency_mean=[\d.]+ms p95=[\d.]+ms").unwrap());
    let json: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 2);
    assert_eq!(json["k"], 3);
}

#[test]
fn eval_text_report() {
    let tmp = tempfile::tempdir().unwrap();
    ragx(tmp.path())
        .args(["eval", "--dataset", "squad", "--path"])
        .arg(fixture("squad_two.json"))
        .args(["--out", "report.txt"])
        .assert()
        .success();
    let table = std::fs::read_to_string(tmp.path().join("report.txt")).unwrap();
    assert!(table.contains("q1") && table.contains("q2"), "{table}");
}

#[test]
fn eval_needle_fixture_finds_every_needle() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("needle.json");
    std::fs::write(&path, needle_squad(&NeedleSpec::default()).to_string()).unwrap();
    ragx(tmp.path())
        .args(["eval", "--dataset", "squad", "--path", "needle.json", "--k", "3"])
        .assert()
        .success()
        .stdout(predicate::str::contains("Hits@3=1.000"))
        .stdout(predicate::str::contains("CR@3=1.000"));
}

#[test]
fn eval_bad_dataset_kind_exits_64() {
    let tmp = tempfile::tempdir().unwrap();
    ragx(tmp.path())
        .args(["eval", "--dataset", "trivia", "--path", "x.json"])
        .assert()
        .code(64);
}

#[test]
fn eval_loader_error_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("bad.json"), r#"{"data": [{"title": "t"}]}"#).unwrap();
    ragx(tmp.path())
        .args(["eval", "--dataset", "squad", "--path", "bad.json"])
        .assert()
        .code(4)
        .stderr(predicate::str::contains("dataset"));
    ragx(tmp.path())
        .args(["eval", "--dataset", "multihop", "--path", "absent.json"])
        .assert()
        .code(4);
}

#[test]
fn serve_with_malformed_config_exits_78_naming_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("bad.toml"), "top_k = 0\n").unwrap();
    ragx(tmp.path())
        .args(["serve", "--config", "bad.toml"])
        .assert()
        .code(78)
        .stderr(predicate::str::contains("top_k"));
    std::fs::write(tmp.path().join("typo.toml"), "[rerank]\nkeep_fraktion = 0.5\n").unwrap();
    ragx(tmp.path())
        .args(["serve", "--config", "typo.toml"])
        .assert()
        .code(78)
        .stderr(predicate::str::contains("rerank"));
}

#[test]
fn config_from_environment_and_default_file() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("env.toml"), "candidate_depth = 1\n").unwrap();
    ragx(tmp.path())
        .env("RAGX_CONFIG", "env.toml")
        .args(["serve"])
        .assert()
        .code(78)
        .stderr(predicate::str::contains("candidate_depth"));
    std::fs::write(tmp.path().join("ragx.toml"), "retrieval_query_turns = 0\n").unwrap();
    ragx(tmp.path())
        .args(["serve"])
        .assert()
        .code(78)
        .stderr(predicate::str::contains("retrieval_query_turns"));
    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    std::fs::write(tmp.path().join("ok.toml"), format!("bind = \"{}\"\n", taken.local_addr().unwrap())).unwrap();
    ragx(tmp.path())
        .env("RAGX_CONFIG", "env.toml")
        .args(["serve", "--config", "ok.toml"])
        .assert()
        .code(2)
        .stderr(predicate::str::contains("bind"));
}

#[test]
fn serve_source_reports_health() {
    let tmp = tempfile::tempdir().unwrap();
    let shard = ingest_docs(tmp.path());
    let addr = free_addr();
    let _source = spawn(tmp.path(), &["serve-source", "--shard", shard.to_str().unwrap(), "--bind", &addr]);
    let health = wait_healthy(&format!("http://{addr}"));
    assert_eq!(health["status"], "ok");
    assert_eq!(health["shard_id"], "geo");
}

#[test]
fn serve_source_with_missing_shard_fails() {
    let tmp = tempfile::tempdir().unwrap();
    ragx(tmp.path())
        .args(["serve-source", "--shard", "absent.parquet"])
        .assert()
        .code(2)
        .stderr(predicate::str::contains("shard"));
}

#[test]
fn chat_prints_tokens_then_sources() {
    let tmp = tempfile::tempdir().unwrap();
    let shard = ingest_docs(tmp.path());
    let source_addr = free_addr();
    let _source = spawn(tmp.path(), &["serve-source", "--shard", shard.to_str().unwrap(), "--bind", &source_addr]);
    wait_healthy(&format!("http://{source_addr}"));

    let mcp_addr = free_addr();
    let _mcp = spawn(tmp.path(), &["stub-mcp", "--bind", &mcp_addr]);
    let backend_addr = free_addr();
    std::fs::write(
        tmp.path().join("ragx.toml"),
        format!(
            "bind = \"{backend_addr}\"\nsources = [\"http://{source_addr}\"]\n\n[[mcp_endpoints]]\nname = \"tickets\"\nbase_url = \"http://{mcp_addr}\"\n"
        ),
    )
    .unwrap();
    let _backend = spawn(tmp.path(), &["serve"]);
    let health = wait_healthy(&format!("http://{backend_addr}"));
    assert_eq!(health["sources"], 1);

    let mut chat = StdCommand::new(assert_cmd::cargo::cargo_bin("ragx"))
        .args(["chat"])
        .current_dir(tmp.path())
        .env_remove("RAGX_CONFIG")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    chat.stdin
        .take()
        .unwrap()
        .write_all(b"What is the capital of France?\nAnd Germany?\n")
        .unwrap();
    let out = chat.wait_with_output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = stdout.lines().collect();
    let first_sources = lines.iter().position(|l| *l == "Sources:").expect("Sources: line");
    assert!(lines[..first_sources].join("\n").contains("Paris"), "{stdout}");
    assert!(lines[first_sources + 1].starts_with("[1] file://geo.md"), "{stdout}");
    assert_eq!(lines.iter().filter(|l| **l == "Sources:").count(), 2, "{stdout}");
    assert!(stdout.contains("Berlin"), "{stdout}");
}

#[test]
fn chat_without_backend_exits_5() {
    let tmp = tempfile::tempdir().unwrap();
    let url = format!("http://{}", free_addr());
    ragx(tmp.path())
        .args(["chat", "--url", &url])
        .write_stdin("hello\n")
        .assert()
        .code(5)
        .stderr(predicate::str::contains("connection lost"));
}

#[test]
fn help_exits_0() {
    let tmp = tempfile::tempdir().unwrap();
    ragx(tmp.path())
        .arg("--help")
        .assert()
        .success()
        .stdout(predicate::str::contains("serve-source"));
}
