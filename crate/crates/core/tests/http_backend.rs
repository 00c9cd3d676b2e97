//! The HTTP backend against a scripted local server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use vqa_harness::gateway::{
    BackendError, Backoff, ChatBackend, ChatRequest, Clock, Gateway, GatewayError, HttpBackend,
    ModelConfig, VirtualClock,
};
use vqa_harness::prompt::{build_prompt, TemplateId};

struct Captured {
    headers: Vec<String>,
    body: serde_json::Value,
}

/// Serves one scripted `(status, body)` per connection, then stops.
fn serve(script: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Captured>>>, JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!(
        "http://{}/v1/chat/completions",
        listener.local_addr().unwrap()
    );
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    let handle = std::thread::spawn(move || {
        for (status, body) in script {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut headers = Vec::new();
            let mut length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end().to_string();
                if line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
                headers.push(line);
            }
            let mut raw = vec![0; length];
            reader.read_exact(&mut raw).unwrap();
            log.lock().unwrap().push(Captured {
                headers,
                body: serde_json::from_slice(&raw).unwrap(),
            });
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (url, seen, handle)
}

fn completion(text: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}]})
        .to_string()
}

fn request() -> ChatRequest<'static> {
    ChatRequest {
        model_id: "vicuna-13b",
        prompt: "There is an image.",
        temperature: 0.0,
        max_output_tokens: 256,
    }
}

#[test]
fn posts_chat_body_with_bearer_token() {
    let (url, seen, handle) = serve(vec![(200, completion("The answer is 4."))]);
    let backend = HttpBackend::new(&url, Duration::from_secs(5))
        .unwrap()
        .with_api_key(Some("sk-test".into()));
    assert_eq!(backend.chat(&request()).unwrap(), "The answer is 4.");
    handle.join().unwrap();

    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 1);
    assert!(seen[0].headers[0].starts_with("POST /v1/chat/completions"));
    assert!(seen[0]
        .headers
        .iter()
        .any(|h| h.eq_ignore_ascii_case("authorization: Bearer sk-test")));
    let body = &seen[0].body;
    assert_eq!(body["model"], "vicuna-13b");
    assert_eq!(body["messages"][0]["role"], "user");
    assert_eq!(body["messages"][0]["content"], "There is an image.");
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["max_tokens"], 256);
}

#[test]
fn status_classes() {
    let (url, _, handle) = serve(vec![
        (503, "{}".into()),
        (429, "{}".into()),
        (401, "{\"error\":\"bad key\"}".into()),
        (200, "{\"choices\":[]}".into()),
    ]);
    let backend = HttpBackend::new(&url, Duration::from_secs(5))
        .unwrap()
        .with_api_key(None);
    assert!(matches!(
        backend.chat(&request()),
        Err(BackendError::Transient(_))
    ));
    assert!(matches!(
        backend.chat(&request()),
        Err(BackendError::Transient(_))
    ));
    match backend.chat(&request()) {
        Err(BackendError::Fatal(m)) => assert!(m.contains("401") && m.contains("bad key"), "{m}"),
        other => panic!("{other:?}"),
    }
    assert!(matches!(
        backend.chat(&request()),
        Err(BackendError::Malformed(_))
    ));
    handle.join().unwrap();
}

fn gateway_for(url: &str, retries: u32) -> (Gateway, Arc<VirtualClock>) {
    let mut cfg = ModelConfig::new("vicuna-13b", url);
    cfg.max_retries = retries;
    let backend = Arc::new(
        HttpBackend::new(url, Duration::from_secs(5))
            .unwrap()
            .with_api_key(None),
    );
    let clock = Arc::new(VirtualClock::new());
    let g = Gateway::with_backend(cfg, backend, clock.clone()).with_backoff(Backoff::default());
    (g, clock)
}

#[test]
fn gateway_retries_server_errors() {
    let (url, seen, handle) = serve(vec![
        (503, "{}".into()),
        (502, "{}".into()),
        (200, completion("ok")),
    ]);
    let (g, clock) = gateway_for(&url, 3);
    let p = build_prompt(TemplateId::Generic, "STOP", "What?", &[], 10_000).unwrap();
    let answer = g.complete(&p).unwrap();
    handle.join().unwrap();
    assert_eq!(answer.text, "ok");
    assert_eq!(seen.lock().unwrap().len(), 3);
    // 500 ms then 1 s of backoff on the virtual clock.
    assert!(clock.now() >= Duration::from_millis(1500));
}

#[test]
fn gateway_reports_unreachable_with_hash() {
    let (url, _, handle) = serve(vec![(500, "{}".into()), (500, "{}".into())]);
    let (g, _) = gateway_for(&url, 1);
    let p = build_prompt(TemplateId::Generic, "STOP", "What?", &[], 10_000).unwrap();
    let err = g.complete(&p).unwrap_err();
    handle.join().unwrap();
    match &err {
        GatewayError::Unreachable {
            attempts,
            prompt_hash,
            ..
        } => {
            assert_eq!(*attempts, 2);
            assert_eq!(*prompt_hash, g.config().prompt_hash(&p.rendered));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn malformed_body_is_not_retried() {
    let (url, seen, handle) = serve(vec![(200, "not json".into())]);
    let (g, _) = gateway_for(&url, 3);
    let p = build_prompt(TemplateId::Generic, "STOP", "What?", &[], 10_000).unwrap();
    assert!(matches!(
        g.complete(&p),
        Err(GatewayError::MalformedResponse { .. })
    ));
    handle.join().unwrap();
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn refused_connection_is_transient() {
    let port = TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let backend = HttpBackend::new(&format!("http://127.0.0.1:{port}/"), Duration::from_secs(2))
        .unwrap()
        .with_api_key(None);
    assert!(matches!(
        backend.chat(&request()),
        Err(BackendError::Transient(_)) | Err(BackendError::Timeout)
    ));
}
