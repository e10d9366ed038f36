//! Knowledge client, HTTP backend and snapshot refresh against a local server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::process::Command;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use chestrag::corpus::LabelVocabulary;
use chestrag::http::UreqTransport;
use chestrag::knowledge::{fetch_summary, snapshot_load, FetchMode, FetchPolicy, KnowledgeError, SnapshotStore};
use chestrag::llm::{
    build_prompt, parse_label, BackendConfig, HttpBackend, LlmBackend, LlmError, ParsedLabel, PromptContext,
};
use chestrag::Condition;

#[derive(Debug, Clone)]
struct Seen {
    method: String,
    path: String,
    body: String,
}

type Handler = dyn Fn(&Seen) -> Option<(u16, String)> + Send + Sync;

/// Serves each connection with `handler`; `None` stalls past any test timeout.
fn serve(handler: Arc<Handler>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let log = Arc::new(Mutex::new(Vec::new()));
    let log2 = log.clone();
    thread::spawn(move || {
        for stream in listener.incoming().flatten() {
            let (handler, log) = (handler.clone(), log2.clone());
            thread::spawn(move || handle(stream, &*handler, &log));
        }
    });
    (format!("http://{addr}"), log)
}

fn handle(stream: TcpStream, handler: &Handler, log: &Mutex<Vec<Seen>>) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut line = String::new();
    if reader.read_line(&mut line).is_err() || line.is_empty() {
        return;
    }
    let mut parts = line.split_whitespace();
    let method = parts.next().unwrap_or_default().to_string();
    let path = parts.next().unwrap_or_default().to_string();
    let mut len = 0;
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).unwrap();
        if h == "\r\n" || h.is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                len = v.trim().parse().unwrap();
            }
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).unwrap();
    let seen = Seen { method, path, body: String::from_utf8(body).unwrap() };
    log.lock().unwrap().push(seen.clone());
    let mut stream = stream;
    match handler(&seen) {
        Some((status, body)) => {
            let _ = write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
        }
        None => thread::sleep(Duration::from_secs(3)),
    }
}

fn wiki() -> Arc<Handler> {
    Arc::new(|req: &Seen| match req.path.as_str() {
        "/page/summary/pleural%20effusion" => {
            Some((200, r#"{"title":"x","extract":"Fluid in the pleural space."}"#.into()))
        }
        "/page/summary/Mass" => Some((200, r#"{"extract":"A lump."}"#.into())),
        "/page/summary/broken" => Some((200, r#"{"title":"no extract"}"#.into())),
        "/page/summary/slow" => None,
        _ => Some((404, "{}".into())),
    })
}

fn policy(endpoint: &str, timeout: f64) -> FetchPolicy {
    FetchPolicy { mode: FetchMode::Refresh, endpoint: endpoint.into(), timeout_secs: timeout }
}

#[test]
fn refresh_fetches_and_caches() {
    let (url, log) = serve(wiki());
    let mut store = SnapshotStore::default();
    let got = fetch_summary("pleural effusion", &policy(&url, 5.0), &mut store, &UreqTransport).unwrap();
    assert_eq!(got, "Fluid in the pleural space.");
    assert_eq!(store.get("pleural effusion").unwrap().summary, got);
    let offline = FetchPolicy { mode: FetchMode::OfflineOnly, ..policy(&url, 5.0) };
    assert_eq!(fetch_summary("Pleural Effusion", &offline, &mut store, &UreqTransport).unwrap(), got);
    assert_eq!(log.lock().unwrap().len(), 1);
    fetch_summary("Mass", &policy(&url, 5.0), &mut store, &UreqTransport).unwrap();
    assert!(store.get("mass").is_some());
    assert_eq!(log.lock().unwrap()[1].method, "GET");
}

#[test]
fn refresh_errors() {
    let (url, _) = serve(wiki());
    let mut store = SnapshotStore::default();
    let p = policy(&url, 5.0);
    assert_eq!(fetch_summary("unknown", &p, &mut store, &UreqTransport), Err(KnowledgeError::HttpError(404)));
    assert_eq!(fetch_summary("broken", &p, &mut store, &UreqTransport), Err(KnowledgeError::MalformedBody));
    assert_eq!(fetch_summary("slow", &policy(&url, 0.3), &mut store, &UreqTransport), Err(KnowledgeError::Timeout));
    assert!(store.is_empty());
    let refused = fetch_summary("x", &policy("http://127.0.0.1:1", 1.0), &mut store, &UreqTransport);
    assert!(matches!(refused, Err(KnowledgeError::Transport(_))), "{refused:?}");
}

#[test]
fn http_backend_round_trip() {
    let handler: Arc<Handler> = Arc::new(|req: &Seen| {
        let v: serde_json::Value = serde_json::from_str(&req.body).ok()?;
        let prompt = v["prompt"].as_str()?;
        if prompt.contains("stall") {
            return None;
        }
        let text = if prompt.contains("Similar training studies") { "Finding: Mass" } else { "probably pneumonia" };
        Some((200, serde_json::json!({ "text": text }).to_string()))
    });
    let (url, log) = serve(handler);
    let vocab = LabelVocabulary::default();
    let backend = HttpBackend::new(format!("{url}/generate"), Duration::from_secs(5));
    let req = build_prompt(
        "s1",
        &[0.1, 0.2],
        Condition::ImageRag,
        PromptContext::Neighbors(vec!["Mass".into()]),
        &vocab,
        "Mass",
    )
    .unwrap();
    let reply = backend.request(&req).unwrap();
    let seen = log.lock().unwrap()[0].clone();
    assert_eq!((seen.method.as_str(), seen.path.as_str()), ("POST", "/generate"));
    let sent: serde_json::Value = serde_json::from_str(&seen.body).unwrap();
    assert_eq!(sent["prompt"].as_str().unwrap(), req.prompt_text());
    assert!(sent.get("model").is_none());
    assert_eq!(parse_label(&reply, &vocab), ParsedLabel::Valid(vocab.index_of("Mass").unwrap()));
    let plain = build_prompt("s2", &[0.1, 0.2], Condition::Baseline, PromptContext::None, &vocab, "Mass").unwrap();
    assert!(matches!(parse_label(&backend.request(&plain).unwrap(), &vocab), ParsedLabel::Hallucination(_)));

    let cfg: BackendConfig = serde_json::from_value(
        serde_json::json!({"kind": "http", "endpoint": format!("{url}/generate"), "model": "example-model-7b"}),
    )
    .unwrap();
    cfg.build().unwrap().unwrap().request(&req).unwrap();
    let sent: serde_json::Value = serde_json::from_str(&log.lock().unwrap()[2].body).unwrap();
    assert_eq!(sent["model"], "example-model-7b");

    let slow = HttpBackend::new(format!("{url}/generate"), Duration::from_millis(300));
    let stall = build_prompt("stall", &[0.1], Condition::Baseline, PromptContext::None, &vocab, "Mass").unwrap();
    assert_eq!(slow.request(&stall), Err(LlmError::Timeout));
}

#[test]
fn http_backend_rejects_bad_replies() {
    let handler: Arc<Handler> = Arc::new(|req: &Seen| match req.path.as_str() {
        "/bad" => Some((200, "not json".into())),
        _ => Some((503, "{}".into())),
    });
    let (url, _) = serve(handler);
    let vocab = LabelVocabulary::default();
    let req = build_prompt("s", &[1.0], Condition::Baseline, PromptContext::None, &vocab, "Mass").unwrap();
    assert_eq!(
        HttpBackend::new(format!("{url}/bad"), Duration::from_secs(5)).request(&req),
        Err(LlmError::MalformedReply)
    );
    assert_eq!(
        HttpBackend::new(format!("{url}/down"), Duration::from_secs(5)).request(&req),
        Err(LlmError::HttpError(503))
    );
}

#[test]
fn cli_snapshot_refresh() {
    let (url, _) = serve(wiki());
    let dir = tempfile::tempdir().unwrap();
    let terms = dir.path().join("terms.txt");
    let snap = dir.path().join("snap.jsonl");
    std::fs::write(&terms, "pleural effusion\n# comment\n\nMass\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_chestrag"))
        .args(["snapshot", "refresh", "--terms"])
        .arg(&terms)
        .arg("--snapshot")
        .arg(&snap)
        .args(["--endpoint", &url, "--timeout", "5"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let store = snapshot_load(&snap).unwrap();
    assert_eq!(store.len(), 2);
    assert_eq!(store.get("mass").unwrap().summary, "A lump.");

    std::fs::write(&terms, "unknown\nMass\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_chestrag"))
        .args(["snapshot", "refresh", "--terms"])
        .arg(&terms)
        .arg("--snapshot")
        .arg(&snap)
        .args(["--endpoint", &url])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(snapshot_load(&snap).unwrap().len(), 2);
}
