use std::path::PathBuf;
use std::time::{Duration, Instant};

use irispad::client::{ClientError, Dialect, DispatchItem, EndpointConfig, MllmClient, RequestKey};
use irispad::fixtures::TINY_PNG;
use irispad::mock::{AttemptSelector, MockScript, MockServer, ScriptAction};
use irispad::prompt::{render_short, AssembledPrompt};

fn image(dir: &tempfile::TempDir) -> PathBuf {
    let p = dir.path().join("img.png");
    std::fs::write(&p, TINY_PNG).unwrap();
    p
}

fn endpoint(server: &MockServer, dialect: Dialect) -> EndpointConfig {
    let mut cfg = EndpointConfig::new(dialect, format!("{}/v1", server.base_url()), "mock");
    cfg.retry_backoff = Duration::from_millis(1);
    cfg
}

fn prompt(img: &std::path::Path) -> AssembledPrompt {
    AssembledPrompt::new(None, render_short(), img.to_path_buf())
}

fn key(id: &str) -> RequestKey {
    RequestKey::new(id, None)
}

#[tokio::test]
async fn non_numeric_replies_are_retried_until_a_number() {
    let dir = tempfile::tempdir().unwrap();
    let img = image(&dir);
    let mut script = MockScript::default();
    script.push_texts("s01", &["I am not sure.", "It looks real", "{}", "0.7"]);
    let server = MockServer::start(script, 0).await.unwrap();
    let client = MllmClient::new(endpoint(&server, Dialect::ChatCompletions)).unwrap();
    let resp = client.query_with_retry(&key("s01"), &prompt(&img)).await.unwrap();
    assert_eq!(resp.confidence, 0.7);
    assert_eq!(resp.attempts, 4);
    assert_eq!(resp.raw_text, "0.7");
    assert_eq!(server.requests_for(None, "s01"), 4);
}

#[tokio::test]
async fn exhausted_retries_do_not_abort_the_batch() {
    let dir = tempfile::tempdir().unwrap();
    let img = image(&dir);
    let mut script = MockScript::default();
    script.push("bad", AttemptSelector::Any, ScriptAction::Text("no number here".into()));
    for id in ["a", "b", "c"] {
        script.push_texts(id, &["0.25"]);
    }
    let server = MockServer::start(script, 0).await.unwrap();
    let client = MllmClient::new(endpoint(&server, Dialect::ChatCompletions)).unwrap();
    let items: Vec<DispatchItem> = ["a", "bad", "b", "c"]
        .iter()
        .map(|id| DispatchItem { key: key(id), prompt: prompt(&img) })
        .collect();
    let out = client.run_batch(&items).await;
    let ids: Vec<&str> = out.iter().map(|o| o.key.sample_id.as_str()).collect();
    assert_eq!(ids, ["a", "bad", "b", "c"]);
    match &out[1].result {
        Err(ClientError::RetriesExhausted { attempts, .. }) => assert_eq!(*attempts, 10),
        other => panic!("expected RetriesExhausted, got {other:?}"),
    }
    assert_eq!(out[1].result.as_ref().unwrap_err().to_string().split(':').next(), Some("RetriesExhausted(10)"));
    for i in [0, 2, 3] {
        assert_eq!(out[i].result.as_ref().unwrap().confidence, 0.25);
    }
    assert_eq!(server.requests_for(None, "bad"), 10);
}

#[tokio::test]
async fn server_errors_back_off_and_recover() {
    let dir = tempfile::tempdir().unwrap();
    let img = image(&dir);
    let mut script = MockScript::default();
    script.push("s", AttemptSelector::Exact(1), ScriptAction::HttpStatus(500));
    script.push("s", AttemptSelector::Exact(2), ScriptAction::HttpStatus(429));
    script.push("s", AttemptSelector::Exact(3), ScriptAction::Text("Confidence: 0.12".into()));
    let server = MockServer::start(script, 0).await.unwrap();
    let mut cfg = endpoint(&server, Dialect::ChatCompletions);
    cfg.retry_backoff = Duration::from_millis(40);
    let client = MllmClient::new(cfg).unwrap();
    let started = Instant::now();
    let resp = client.query_with_retry(&key("s"), &prompt(&img)).await.unwrap();
    assert_eq!((resp.confidence, resp.attempts), (0.12, 3));
    // 40 ms then 80 ms
    assert!(started.elapsed() >= Duration::from_millis(120));
}

#[tokio::test]
async fn client_errors_are_not_retried() {
    let dir = tempfile::tempdir().unwrap();
    let img = image(&dir);
    let mut script = MockScript::default();
    script.push("s", AttemptSelector::Any, ScriptAction::HttpStatus(400));
    let server = MockServer::start(script, 0).await.unwrap();
    let client = MllmClient::new(endpoint(&server, Dialect::ChatCompletions)).unwrap();
    let err = client.query_with_retry(&key("s"), &prompt(&img)).await.unwrap_err();
    assert!(matches!(err, ClientError::Transport(_)), "{err:?}");
    assert_eq!(server.requests_for(None, "s"), 1);
}

#[tokio::test]
async fn unauthorized_is_an_auth_error() {
    let dir = tempfile::tempdir().unwrap();
    let img = image(&dir);
    let mut script = MockScript::default();
    script.push("s", AttemptSelector::Any, ScriptAction::HttpStatus(401));
    let server = MockServer::start(script, 0).await.unwrap();
    let client = MllmClient::new(endpoint(&server, Dialect::ChatCompletions)).unwrap();
    let err = client.query_with_retry(&key("s"), &prompt(&img)).await.unwrap_err();
    assert!(matches!(err, ClientError::Auth(_)), "{err:?}");
}

#[tokio::test]
async fn malformed_bodies_count_as_attempts() {
    let dir = tempfile::tempdir().unwrap();
    let img = image(&dir);
    let mut script = MockScript::default();
    script.push("s", AttemptSelector::Exact(1), ScriptAction::Malformed("{not json".into()));
    script.push("s", AttemptSelector::Exact(2), ScriptAction::Text("0.9".into()));
    let server = MockServer::start(script, 0).await.unwrap();
    let client = MllmClient::new(endpoint(&server, Dialect::GenerateContent)).unwrap();
    let resp = client.query_with_retry(&key("s"), &prompt(&img)).await.unwrap();
    assert_eq!((resp.confidence, resp.attempts), (0.9, 2));
}

#[tokio::test]
async fn missing_token_variable_is_reported_up_front() {
    let server = MockServer::start(MockScript::default(), 0).await.unwrap();
    let mut cfg = endpoint(&server, Dialect::ChatCompletions);
    cfg.auth_token_env = Some("IRISPAD_TEST_TOKEN_THAT_IS_NOT_SET".into());
    assert!(matches!(MllmClient::new(cfg), Err(ClientError::Auth(_))));
}

#[tokio::test]
async fn tagged_requests_select_tagged_script_entries() {
    let dir = tempfile::tempdir().unwrap();
    let img = image(&dir);
    let mut script = MockScript::default();
    script.push_texts("short/s", &["0.1"]);
    script.push_texts("long+human/s", &["0.8"]);
    let server = MockServer::start(script, 0).await.unwrap();
    let client = MllmClient::new(endpoint(&server, Dialect::ChatCompletions)).unwrap();
    let a = client.query_with_retry(&RequestKey::new("s", Some("short".into())), &prompt(&img)).await.unwrap();
    let b = client.query_with_retry(&RequestKey::new("s", Some("long+human".into())), &prompt(&img)).await.unwrap();
    assert_eq!((a.confidence, b.confidence), (0.1, 0.8));
    assert_eq!(server.requests_for(Some("short"), "s"), 1);
}

#[tokio::test]
async fn in_flight_bound_serializes_slow_requests() {
    let dir = tempfile::tempdir().unwrap();
    let img = image(&dir);
    let mut script = MockScript::default();
    for i in 0..4 {
        let id = format!("s{i}");
        script.push(&id, AttemptSelector::Any, ScriptAction::DelayMs(60));
        script.push(&id, AttemptSelector::Any, ScriptAction::Text("0.5".into()));
    }
    let server = MockServer::start(script, 0).await.unwrap();
    let items: Vec<DispatchItem> = (0..4)
        .map(|i| DispatchItem { key: key(&format!("s{i}")), prompt: prompt(&img) })
        .collect();

    let mut cfg = endpoint(&server, Dialect::ChatCompletions);
    cfg.max_in_flight = 1;
    let started = Instant::now();
    let out = MllmClient::new(cfg.clone()).unwrap().run_batch(&items).await;
    assert!(out.iter().all(|o| o.result.is_ok()));
    assert!(started.elapsed() >= Duration::from_millis(240));

    cfg.max_in_flight = 4;
    let started = Instant::now();
    MllmClient::new(cfg).unwrap().run_batch(&items).await;
    assert!(started.elapsed() < Duration::from_millis(230));
}

#[tokio::test]
async fn transcript_log_gets_one_line_per_request() {
    let dir = tempfile::tempdir().unwrap();
    let img = image(&dir);
    let mut script = MockScript::default();
    script.push_texts("s", &["hmm", "0.3"]);
    let server = MockServer::start(script, 0).await.unwrap();
    let mut cfg = endpoint(&server, Dialect::ChatCompletions);
    let log = dir.path().join("transcript.jsonl");
    cfg.transcript_log = Some(log.clone());
    let client = MllmClient::new(cfg).unwrap();
    client.query_with_retry(&key("s"), &prompt(&img)).await.unwrap();
    drop(client);
    let text = std::fs::read_to_string(&log).unwrap();
    let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["sample_id"], "s");
    assert_eq!(lines[1]["status"], 200);
}

#[tokio::test]
async fn unreadable_image_fails_without_a_request() {
    let server = MockServer::start(MockScript::default(), 0).await.unwrap();
    let client = MllmClient::new(endpoint(&server, Dialect::ChatCompletions)).unwrap();
    let p = AssembledPrompt::new(None, render_short(), PathBuf::from("/nonexistent/x.png"));
    let err = client.query_with_retry(&key("s"), &p).await.unwrap_err();
    assert!(matches!(err, ClientError::ImageUnreadable(..)));
    assert_eq!(server.total_requests(), 0);
}
