//! The chat-completion client against a local mock server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;

use serde_json::{json, Value};
use skeleton_cache::priors::{default_prompt_slots, fetch_priors, EndpointConfig, PriorSource};
use skeleton_cache::Error;

/// Reads one HTTP/1.1 request and returns its body.
fn read_request(stream: &mut TcpStream) -> String {
    let mut reader = BufReader::new(stream);
    let mut length = 0;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        if line == "\r\n" || line.is_empty() {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            if name.eq_ignore_ascii_case("content-length") {
                length = value.trim().parse().unwrap();
            }
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).unwrap();
    String::from_utf8(body).unwrap()
}

fn respond(stream: &mut TcpStream, status: u16, body: &str) {
    let reply = format!(
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    stream.write_all(reply.as_bytes()).unwrap();
}

fn completion(content: &str) -> String {
    json!({ "choices": [{ "message": { "role": "assistant", "content": content } }] }).to_string()
}

/// Serves `replies` in order, one connection each, and records request bodies.
fn serve(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<String>>>, thread::JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    let handle = thread::spawn(move || {
        for (status, body) in replies {
            let (mut stream, _) = listener.accept().unwrap();
            let request = read_request(&mut stream);
            log.lock().unwrap().push(request);
            respond(&mut stream, status, &body);
        }
    });
    (url, seen, handle)
}

fn endpoint(url: String) -> PriorSource {
    let mut cfg = EndpointConfig::new(url, "gpt-4-turbo", "SKCACHE_TEST_NO_KEY");
    cfg.backoff_ms = 1;
    cfg.max_retries = 2;
    PriorSource::Endpoint(cfg)
}

const WAVING: &str =
    r#"Sure. {"spatial": [0.05, 0.10, 0.70, 0.15], "temporal": [0.15, 0.60, 0.25], "gamma": 0.30}"#;

#[test]
fn retries_server_errors_then_parses() {
    let (url, seen, handle) = serve(vec![
        (500, "{}".into()),
        (429, "{}".into()),
        (200, completion(WAVING)),
    ]);
    let (s, t) = default_prompt_slots();
    let m = fetch_priors(&["Waving".to_string()], &s, &t, &endpoint(url)).unwrap();
    handle.join().unwrap();
    assert!((m.row(0).as_slice()[3] - 0.28824).abs() < 1e-5);

    let requests = seen.lock().unwrap();
    assert_eq!(requests.len(), 3);
    let body: Value = serde_json::from_str(&requests[2]).unwrap();
    assert_eq!(body["temperature"], 0);
    assert_eq!(body["model"], "gpt-4-turbo");
    let prompt = body["messages"][0]["content"].as_str().unwrap();
    assert!(prompt.contains("Given the action class Waving,"));
}

#[test]
fn client_errors_are_not_retried() {
    let (url, seen, handle) = serve(vec![(400, r#"{"error":"bad"}"#.into())]);
    let (s, t) = default_prompt_slots();
    let err = fetch_priors(&["Waving".to_string()], &s, &t, &endpoint(url)).unwrap_err();
    handle.join().unwrap();
    assert_eq!(seen.lock().unwrap().len(), 1);
    match err {
        Error::PriorFetch(f) => assert!(f[0].1.contains("400"), "{f:?}"),
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn retries_are_bounded() {
    let (url, seen, handle) = serve(vec![
        (503, "{}".into()),
        (503, "{}".into()),
        (503, "{}".into()),
    ]);
    let (s, t) = default_prompt_slots();
    let err = fetch_priors(&["Waving".to_string()], &s, &t, &endpoint(url)).unwrap_err();
    handle.join().unwrap();
    assert_eq!(seen.lock().unwrap().len(), 3);
    assert!(!err.is_validation());
}

#[test]
fn malformed_answer_names_the_class() {
    let (url, _, handle) = serve(vec![
        (200, completion(WAVING)),
        (
            200,
            completion(r#"{"spatial": [0.5, 0.5], "temporal": [1, 0, 0], "gamma": 0.2}"#),
        ),
    ]);
    let (s, t) = default_prompt_slots();
    let names = vec!["Waving".to_string(), "Jump Up".to_string()];
    let err = fetch_priors(&names, &s, &t, &endpoint(url)).unwrap_err();
    handle.join().unwrap();
    match err {
        Error::PriorFetch(f) => {
            assert_eq!(f.len(), 1);
            assert_eq!(f[0].0, "Jump Up");
        }
        other => panic!("unexpected {other}"),
    }
}
