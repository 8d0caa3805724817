//! HttpChatClient against a local stub server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;

use gantry::llm::{ChatClient, ChatMessage, ClientConfig, ClientError, HttpChatClient, ImageAttachment};

const SECRET: &str = "sk-test-do-not-log-4f1c";

struct Captured {
    request_line: String,
    headers: Vec<(String, String)>,
    body: String,
}

/// Serves the canned `(status, body)` replies in order, one per connection,
/// and reports what each request looked like.
fn stub(replies: Vec<(u16, String)>) -> (String, mpsc::Receiver<Captured>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let mut headers = Vec::new();
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (k, v) = line.split_once(':').unwrap();
                headers.push((k.trim().to_ascii_lowercase(), v.trim().to_string()));
            }
            let len: usize = headers
                .iter()
                .find(|(k, _)| k == "content-length")
                .map_or(0, |(_, v)| v.parse().unwrap());
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            let _ = tx.send(Captured {
                request_line: request_line.trim_end().to_string(),
                headers,
                body: String::from_utf8(buf).unwrap(),
            });
            let mut stream = stream;
            let resp = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(resp.as_bytes()).unwrap();
        }
    });
    (format!("http://{addr}/v1"), rx)
}

fn ok_body(text: &str) -> String {
    serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": text}}],
        "usage": {"prompt_tokens": 11, "completion_tokens": 5, "total_tokens": 16}
    })
    .to_string()
}

fn config(base_url: String, key_var: &str) -> ClientConfig {
    std::env::set_var(key_var, SECRET);
    ClientConfig {
        base_url,
        api_key_env_var: key_var.into(),
        timeout_s: 5.0,
        max_retries: 3,
        backoff_initial_s: 0.001,
        ..ClientConfig::default()
    }
}

#[test]
fn sends_bearer_key_and_image_parts() {
    let (url, rx) = stub(vec![(200, ok_body("{\"gantry_angles\": [0, 90]}"))]);
    let client = HttpChatClient::new(config(url, "GANTRY_TEST_KEY_A")).unwrap();
    let png = ImageAttachment::png(vec![0x89, b'P', b'N', b'G']);
    let reply = client
        .complete(&[ChatMessage::user_with_images("plan please", vec![png])])
        .unwrap();
    assert_eq!(reply, "{\"gantry_angles\": [0, 90]}");

    let req = rx.recv().unwrap();
    assert_eq!(req.request_line, "POST /v1/chat/completions HTTP/1.1");
    let auth = req.headers.iter().find(|(k, _)| k == "authorization").unwrap();
    assert_eq!(auth.1, format!("Bearer {SECRET}"));
    let body: serde_json::Value = serde_json::from_str(&req.body).unwrap();
    assert_eq!(body["model"], "gpt-4o");
    assert_eq!(body["temperature"], 0.0);
    let parts = body["messages"][0]["content"].as_array().unwrap();
    assert_eq!(parts[0]["text"], "plan please");
    assert_eq!(parts[1]["image_url"]["url"], "data:image/png;base64,iVBORw==");
}

#[test]
fn retries_server_errors_then_succeeds() {
    let (url, rx) = stub(vec![
        (500, "{}".into()),
        (503, "{}".into()),
        (200, ok_body("done")),
    ]);
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("calls.jsonl");
    let cfg = ClientConfig {
        call_log: Some(log.clone()),
        ..config(url, "GANTRY_TEST_KEY_B")
    };
    let client = HttpChatClient::new(cfg).unwrap();
    assert_eq!(client.complete(&[ChatMessage::user("hi")]).unwrap(), "done");
    assert_eq!(rx.try_iter().count(), 3);

    let text = std::fs::read_to_string(&log).unwrap();
    assert!(!text.contains(SECRET));
    let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[2]["total_tokens"], 16);
    assert_eq!(lines[0]["status"], 500);
}

#[test]
fn gives_up_after_max_retries() {
    let (url, _rx) = stub(vec![(500, "{}".into()); 3]);
    let cfg = ClientConfig {
        max_retries: 2,
        ..config(url, "GANTRY_TEST_KEY_C")
    };
    let client = HttpChatClient::new(cfg).unwrap();
    let err = client.complete(&[ChatMessage::user("hi")]).unwrap_err();
    assert!(matches!(err, ClientError::Transport { attempts: 3, .. }), "{err:?}");
}

#[test]
fn unauthorised_is_not_retried() {
    let (url, rx) = stub(vec![(401, "{\"error\": \"bad key\"}".into()), (200, ok_body("late"))]);
    let client = HttpChatClient::new(config(url, "GANTRY_TEST_KEY_D")).unwrap();
    let err = client.complete(&[ChatMessage::user("hi")]).unwrap_err();
    assert!(matches!(err, ClientError::Auth(401)), "{err:?}");
    assert!(!err.to_string().contains(SECRET));
    assert_eq!(rx.recv().unwrap().request_line, "POST /v1/chat/completions HTTP/1.1");
}

#[test]
fn malformed_body_is_reported() {
    let (url, _rx) = stub(vec![(200, "{\"choices\": []}".into())]);
    let client = HttpChatClient::new(config(url, "GANTRY_TEST_KEY_E")).unwrap();
    let err = client.complete(&[ChatMessage::user("hi")]).unwrap_err();
    assert!(matches!(err, ClientError::MalformedResponse(_)), "{err:?}");
}

#[test]
fn missing_key_is_a_config_error() {
    let cfg = ClientConfig {
        api_key_env_var: "GANTRY_TEST_KEY_NEVER_SET".into(),
        ..ClientConfig::default()
    };
    let err = HttpChatClient::new(cfg).unwrap_err();
    assert!(matches!(err, ClientError::Config(_)), "{err:?}");
}
