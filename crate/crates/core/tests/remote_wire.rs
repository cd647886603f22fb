//! Wire-format checks for the remote embedding and chat backends against a
//! throwaway local HTTP server.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use cfa_rag::config::RunConfig;
use cfa_rag::embedding::{EmbeddingError, RemoteEncoder};
use cfa_rag::evaluation::run_benchmark_with;
use cfa_rag::fusion::{build_prompt, Strategy};
use cfa_rag::generation::{GenerationBackend, GenerationError, RemoteChat};
use cfa_rag::http::RetryPolicy;
use serde_json::{json, Value};

#[derive(Debug, Clone)]
struct Seen {
    path: String,
    headers: BTreeMap<String, String>,
    body: Value,
}

type Responder = dyn Fn(&Seen, usize) -> (u16, String) + Send + Sync;

/// Serves every connection on its own thread; returns the base URL and the request log.
fn serve(respond: Arc<Responder>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let counter = Arc::new(AtomicUsize::new(0));
    let log = seen.clone();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            let (respond, log, counter) = (respond.clone(), log.clone(), counter.clone());
            thread::spawn(move || {
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut request_line = String::new();
                reader.read_line(&mut request_line).unwrap();
                let path = request_line.split_whitespace().nth(1).unwrap_or("").to_string();
                let mut headers = BTreeMap::new();
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let line = line.trim_end();
                    if line.is_empty() {
                        break;
                    }
                    if let Some((k, v)) = line.split_once(':') {
                        headers.insert(k.trim().to_ascii_lowercase(), v.trim().to_string());
                    }
                }
                let len: usize = headers.get("content-length").and_then(|v| v.parse().ok()).unwrap_or(0);
                let mut body = vec![0u8; len];
                reader.read_exact(&mut body).unwrap();
                let request = Seen { path, headers, body: serde_json::from_slice(&body).unwrap_or(Value::Null) };
                let n = counter.fetch_add(1, Ordering::SeqCst);
                log.lock().unwrap().push(request.clone());
                let (status, payload) = respond(&request, n);
                let mut stream = stream;
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                    payload.len()
                );
            });
        }
    });
    (url, seen)
}

fn quick_retry() -> RetryPolicy {
    RetryPolicy { base_backoff_ms: 1, timeout_ms: 5_000, ..Default::default() }
}

fn chat_reply(content: &str) -> String {
    json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
}

#[test]
fn chat_request_shape_and_audit_line() {
    let (url, seen) = serve(Arc::new(|_, _| (200, chat_reply("```json\n{\"facts\": []}\n```"))));
    let dir = tempfile::tempdir().unwrap();
    let audit = dir.path().join("audit.jsonl");
    let chat = RemoteChat::new(format!("{url}/v1/chat/completions"), "test-model")
        .with_retry(quick_retry())
        .with_audit_log(&audit)
        .unwrap();
    let prompt = build_prompt("What is the alumina consumption?", Strategy::NoDatasource, vec![], 10_000).unwrap();
    let answer = chat.generate(&prompt).unwrap();

    assert_eq!(answer.text, "```json\n{\"facts\": []}\n```");
    assert_eq!(answer.backend, "remote");
    assert_eq!(answer.attempts, 1);
    let req = seen.lock().unwrap()[0].clone();
    assert_eq!(req.path, "/v1/chat/completions");
    assert!(req.headers["content-type"].starts_with("application/json"));
    assert_eq!(req.body["model"], "test-model");
    assert_eq!(req.body["temperature"], 0);
    assert_eq!(req.body["messages"][0]["role"], "user");
    assert_eq!(req.body["messages"][0]["content"], prompt.rendered.as_str());

    let lines: Vec<Value> = std::fs::read_to_string(&audit)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 1);
    assert_eq!(lines[0]["ok"], true);
    assert_eq!(lines[0]["attempts"], 1);
    assert_eq!(lines[0]["request_hash"].as_str(), answer.request_hash.as_deref());
}

#[test]
fn chat_retries_server_errors_then_succeeds() {
    let (url, seen) = serve(Arc::new(|_, n| if n < 2 { (503, "{}".into()) } else { (200, chat_reply("ok")) }));
    let chat = RemoteChat::new(url, "m").with_retry(quick_retry());
    let prompt = build_prompt("Q", Strategy::NoDatasource, vec![], 10_000).unwrap();
    let answer = chat.generate(&prompt).unwrap();
    assert_eq!(answer.attempts, 3);
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn chat_gives_up_after_policy_attempts() {
    let (url, seen) = serve(Arc::new(|_, _| (500, "{}".into())));
    let chat = RemoteChat::new(url, "m").with_retry(quick_retry());
    let prompt = build_prompt("Q", Strategy::NoDatasource, vec![], 10_000).unwrap();
    match chat.generate(&prompt) {
        Err(GenerationError::Transport(e)) => assert_eq!(e.attempts, 3),
        other => panic!("expected transport failure, got {other:?}"),
    }
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn chat_missing_content_is_bad_response() {
    let (url, _) = serve(Arc::new(|_, _| (200, json!({"choices": []}).to_string())));
    let chat = RemoteChat::new(url, "m").with_retry(quick_retry());
    let prompt = build_prompt("Q", Strategy::NoDatasource, vec![], 10_000).unwrap();
    assert!(matches!(chat.generate(&prompt), Err(GenerationError::BadResponse(_))));
}

#[test]
fn embedding_request_shape_and_renormalization() {
    let (url, seen) = serve(Arc::new(|req, _| {
        let n = req.body["input"].as_array().map_or(0, Vec::len);
        let rows: Vec<Value> = (0..n).map(|i| json!([3.0, 4.0 + i as f64])).collect();
        (200, json!({ "embeddings": rows }).to_string())
    }));
    let enc = RemoteEncoder::new(url);
    let out = enc.embed_batch(&["first", "second"]).unwrap();
    assert_eq!(seen.lock().unwrap()[0].body, json!({"input": ["first", "second"]}));
    assert_eq!(out.len(), 2);
    let v = out[0].as_slice();
    assert!((v[0] - 0.6).abs() < 1e-12 && (v[1] - 0.8).abs() < 1e-12);
    let norm: f64 = out[1].as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!((norm - 1.0).abs() < 1e-12);
}

#[test]
fn embedding_count_and_dimension_mismatches_rejected() {
    let (url, _) = serve(Arc::new(|_, _| (200, json!({"embeddings": [[1.0, 0.0]]}).to_string())));
    let enc = RemoteEncoder::new(url.clone());
    assert!(matches!(enc.embed_batch(&["a", "b"]), Err(EmbeddingError::BadResponse(_))));
    let enc = RemoteEncoder { expected_dims: Some(3), ..RemoteEncoder::new(url) };
    assert!(matches!(enc.embed_batch(&["a"]), Err(EmbeddingError::DimensionMismatch { .. })));
}

#[test]
fn benchmark_over_remote_backend_matches_scripted_run() {
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/aluminum");
    let bench: Value = serde_json::from_str(&std::fs::read_to_string(fixture.join("benchmark.json")).unwrap()).unwrap();
    let script: BTreeMap<String, String> =
        serde_json::from_str(&std::fs::read_to_string(fixture.join("mock_perfect.json")).unwrap()).unwrap();
    // the server only sees the rendered prompt, so answer by the question it contains
    let by_question: Vec<(String, String)> = bench["queries"]
        .as_array()
        .unwrap()
        .iter()
        .map(|q| {
            let text = q["query_text"].as_str().unwrap().to_string();
            (format!("Question: {text}"), script[q["query_id"].as_str().unwrap()].clone())
        })
        .collect();
    let (url, seen) = serve(Arc::new(move |req, _| {
        let content = req.body["messages"][0]["content"].as_str().unwrap_or("");
        match by_question.iter().find(|(q, _)| content.contains(q.as_str())) {
            Some((_, answer)) => (200, chat_reply(answer)),
            None => (404, "{}".into()),
        }
    }));

    let cfg = RunConfig::load(&fixture.join("config_perfect.json")).unwrap();
    let backend = GenerationBackend::Remote(RemoteChat::new(url, "m").with_retry(quick_retry()).with_max_in_flight(2));
    let report = run_benchmark_with(&cfg, &fixture.join("benchmark.json"), &backend).unwrap();
    assert_eq!(report.irr_pct, 100.0);
    assert_eq!(report.id_pct, Some(0.0));
    assert!(report.ad.ad_pct.abs() < 1e-9);
    assert_eq!(report.run.backend_kind, "remote");
    assert_eq!(seen.lock().unwrap().len(), 3);
}
