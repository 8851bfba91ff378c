//! HTTP clients against a throwaway local server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use reflect_core::eval::{Embedder, EndpointEmbedder};
use reflect_core::export::{EndpointTokenCounter, TokenCounter};
use reflect_core::gateway::{HttpBackend, RetryPolicy};
use reflect_core::{CompletionRequest, Gateway, GatewayError};

/// Serves `replies` in order, one per connection, and records request
/// bodies. Returns the base URL.
/// `(path and auth header, body)` per request.
type Seen = Arc<Mutex<Vec<(String, String)>>>;

fn serve(replies: Vec<(u16, String)>) -> (String, Seen) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for (status, body) in replies {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let mut len = 0usize;
            let mut auth = String::new();
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if lower.starts_with("authorization:") {
                    auth = line["authorization:".len()..].trim().to_string();
                }
            }
            let mut buf = vec![0u8; len];
            reader.read_exact(&mut buf).unwrap();
            let path = request_line
                .split_whitespace()
                .nth(1)
                .unwrap_or("")
                .to_string();
            log.lock()
                .unwrap()
                .push((format!("{path} {auth}"), String::from_utf8(buf).unwrap()));
            let response = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(response.as_bytes()).unwrap();
        }
    });
    (format!("http://{addr}/v1"), seen)
}

fn chat_reply(text: &str) -> String {
    serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": text}, "finish_reason": "stop"}],
        "usage": {"prompt_tokens": 3, "completion_tokens": 2, "total_tokens": 5}
    })
    .to_string()
}

fn fast_retry() -> RetryPolicy {
    RetryPolicy {
        max_retries: 3,
        backoff_base: Duration::from_millis(1),
    }
}

#[test]
fn chat_round_trip_with_retry() {
    let (base, seen) = serve(vec![
        (503, "busy".into()),
        (200, chat_reply("Thought: ok\nAction: Finish[A]")),
    ]);
    let backend = HttpBackend::new(&base, Duration::from_secs(5), Some("sk-test".into())).unwrap();
    let gw = Gateway::new(backend)
        .with_model("tiny")
        .with_retry(fast_retry());
    let req = CompletionRequest::user("hello")
        .temperature(0.0)
        .seed(9)
        .stop(["\nObservation:"]);
    let result = gw.complete(&req).unwrap();
    assert_eq!(result.text, "Thought: ok\nAction: Finish[A]");
    assert_eq!(result.attempts, 2);

    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 2);
    assert_eq!(seen[1].0, "/v1/chat/completions Bearer sk-test");
    let body: serde_json::Value = serde_json::from_str(&seen[1].1).unwrap();
    assert_eq!(body["model"], "tiny");
    assert_eq!(body["messages"][0]["content"], "hello");
    assert_eq!(body["seed"], 9);
    assert_eq!(body["stop"][0], "\nObservation:");
}

#[test]
fn malformed_reply_is_a_protocol_error() {
    let (base, _) = serve(vec![(200, r#"{"choices": []}"#.into())]);
    let gw = Gateway::new(HttpBackend::new(&base, Duration::from_secs(5), None).unwrap())
        .with_model("tiny")
        .with_retry(fast_retry());
    let err = gw.complete(&CompletionRequest::user("x")).unwrap_err();
    assert!(matches!(err, GatewayError::Protocol(_)), "{err:?}");
}

#[test]
fn client_errors_are_not_retried() {
    let (base, seen) = serve(vec![(400, "bad".into()), (200, chat_reply("late"))]);
    let gw = Gateway::new(HttpBackend::new(&base, Duration::from_secs(5), None).unwrap())
        .with_model("tiny")
        .with_retry(fast_retry());
    let err = gw.complete(&CompletionRequest::user("x")).unwrap_err();
    assert!(
        matches!(err, GatewayError::Status { status: 400, .. }),
        "{err:?}"
    );
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn embeddings_and_tokenize_endpoints() {
    let (base, seen) = serve(vec![
        (
            200,
            r#"{"data":[{"index":1,"embedding":[0.0,1.0]},{"index":0,"embedding":[1.0,0.0]}]}"#
                .into(),
        ),
        (200, r#"{"count": 7}"#.into()),
        (200, r#"{"tokens": [1, 2, 3]}"#.into()),
    ]);
    let embedder = EndpointEmbedder::new(&base, "emb", Duration::from_secs(5), None).unwrap();
    let vecs = embedder.embed(&["a".into(), "b".into()]).unwrap();
    assert_eq!(vecs, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);

    let counter = EndpointTokenCounter::new(&base, "tok", Duration::from_secs(5)).unwrap();
    assert_eq!(counter.count("some text").unwrap(), 7);
    assert_eq!(counter.count("other").unwrap(), 3);

    let seen = seen.lock().unwrap();
    assert!(seen[0].0.starts_with("/v1/embeddings"));
    assert!(seen[1].0.starts_with("/v1/tokenize"));
}
