use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};
use tqx_cli::fetch::{FetchError, FetchItem, ProviderClient, PROTOCOL_VERSION};

type Handler = dyn Fn(usize, &Value) -> (u16, Value) + Send + Sync;

/// Minimal HTTP/1.1 server answering every POST through `handler`.
struct Mock {
    url: String,
    hits: Arc<AtomicUsize>,
    max_in_flight: Arc<AtomicUsize>,
    auth: Arc<Mutex<Vec<String>>>,
}

fn serve(delay: Duration, handler: Box<Handler>) -> Mock {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/embed", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let in_flight = Arc::new(AtomicUsize::new(0));
    let max_in_flight = Arc::new(AtomicUsize::new(0));
    let auth = Arc::new(Mutex::new(Vec::new()));
    let handler: Arc<Handler> = Arc::from(handler);
    let (h, f, m, a) = (hits.clone(), in_flight.clone(), max_in_flight.clone(), auth.clone());
    thread::spawn(move || {
        for stream in listener.incoming() {
            let mut stream = stream.unwrap();
            let (h, f, m, a, handler) = (h.clone(), f.clone(), m.clone(), a.clone(), handler.clone());
            thread::spawn(move || {
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut length = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let line = line.trim_end();
                    if line.is_empty() {
                        break;
                    }
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        length = v.trim().parse().unwrap();
                    }
                    if lower.starts_with("authorization:") {
                        a.lock().unwrap().push(line["authorization:".len()..].trim().to_string());
                    }
                }
                let mut body = vec![0; length];
                reader.read_exact(&mut body).unwrap();
                let request: Value = serde_json::from_slice(&body).unwrap();
                let now = f.fetch_add(1, Ordering::SeqCst) + 1;
                m.fetch_max(now, Ordering::SeqCst);
                let hit = h.fetch_add(1, Ordering::SeqCst);
                thread::sleep(delay);
                let (status, reply) = handler(hit, &request);
                f.fetch_sub(1, Ordering::SeqCst);
                let reply = reply.to_string();
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                    reply.len()
                )
                .unwrap();
            });
        }
    });
    Mock {
        url,
        hits,
        max_in_flight,
        auth,
    }
}

fn vector_for(id: &str) -> Vec<f32> {
    let n: f32 = id[1..].parse().unwrap();
    vec![n, 1.0, -0.5 * n]
}

/// Embeds every requested id, answering in reverse order.
fn echo(_: usize, request: &Value) -> (u16, Value) {
    assert_eq!(request["version"], PROTOCOL_VERSION);
    let mut rows: Vec<Value> = request["items"]
        .as_array()
        .unwrap()
        .iter()
        .map(|item| {
            let id = item["id"].as_str().unwrap();
            json!({"id": id, "values": vector_for(id)})
        })
        .collect();
    rows.reverse();
    (200, json!({"dim": 3, "embeddings": rows}))
}

fn items(n: usize) -> Vec<FetchItem> {
    (0..n).map(|i| FetchItem::text(format!("k{i}"), format!("term {i}"))).collect()
}

fn client(mock: &Mock) -> ProviderClient {
    let mut c = ProviderClient::new(&mock.url).with_token(None);
    c.backoff = Duration::from_millis(1);
    c
}

#[test]
fn all_ids_are_assembled_in_input_order() {
    let mock = serve(Duration::ZERO, Box::new(echo));
    let mut c = client(&mock);
    c.batch_size = 2;
    let m = c.fetch(&items(5)).unwrap();
    assert_eq!(m.rows(), 5);
    assert_eq!(m.dim(), 3);
    for i in 0..5 {
        assert_eq!(m.ids()[i], format!("k{i}"));
        assert_eq!(m.row(i), vector_for(&format!("k{i}")).as_slice());
    }
    assert_eq!(mock.hits.load(Ordering::SeqCst), 3);
}

#[test]
fn omitted_id_is_reported() {
    let mock = serve(
        Duration::ZERO,
        Box::new(|hit, req| {
            let (status, mut body) = echo(hit, req);
            body["embeddings"]
                .as_array_mut()
                .unwrap()
                .retain(|r| r["id"] != "k2");
            (status, body)
        }),
    );
    let err = client(&mock).fetch(&items(4)).unwrap_err();
    match err {
        FetchError::MissingIds(ids) => assert_eq!(ids, vec!["k2".to_string()]),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn second_call_is_served_from_cache() {
    let dir = tempfile::tempdir().unwrap();
    let mock = serve(Duration::ZERO, Box::new(echo));
    let c = client(&mock).with_cache_dir(dir.path());
    let fresh = c.fetch(&items(3)).unwrap();
    assert_eq!(mock.hits.load(Ordering::SeqCst), 1);
    let cached = c.fetch(&items(3)).unwrap();
    assert_eq!(mock.hits.load(Ordering::SeqCst), 1);
    assert_eq!(fresh, cached);
    let fresh_bits: Vec<u32> = fresh.values().iter().map(|v| v.to_bits()).collect();
    let cached_bits: Vec<u32> = cached.values().iter().map(|v| v.to_bits()).collect();
    assert_eq!(fresh_bits, cached_bits);
    c.fetch(&items(4)).unwrap();
    assert_eq!(mock.hits.load(Ordering::SeqCst), 2);
}

#[test]
fn transient_failures_are_retried() {
    let mock = serve(
        Duration::ZERO,
        Box::new(|hit, req| if hit < 2 { (503, json!({})) } else { echo(hit, req) }),
    );
    let m = client(&mock).fetch(&items(2)).unwrap();
    assert_eq!(m.rows(), 2);
    assert_eq!(mock.hits.load(Ordering::SeqCst), 3);
}

#[test]
fn retries_are_bounded() {
    let mock = serve(Duration::ZERO, Box::new(|_, _| (500, json!({}))));
    let err = client(&mock).fetch(&items(1)).unwrap_err();
    assert!(matches!(err, FetchError::ProviderError(500)));
    assert_eq!(mock.hits.load(Ordering::SeqCst), 4);
}

#[test]
fn client_errors_are_not_retried() {
    let mock = serve(Duration::ZERO, Box::new(|_, _| (401, json!({}))));
    let err = client(&mock).fetch(&items(1)).unwrap_err();
    assert!(matches!(err, FetchError::ProviderError(401)));
    assert_eq!(mock.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn unexpected_dimension_is_rejected() {
    let mock = serve(Duration::ZERO, Box::new(echo));
    let mut c = client(&mock);
    c.expected_dim = Some(4);
    let err = c.fetch(&items(2)).unwrap_err();
    assert!(matches!(err, FetchError::DimensionMismatch { expected: 4, found: 3 }));
}

#[test]
fn bearer_token_is_sent() {
    let mock = serve(Duration::ZERO, Box::new(echo));
    let c = client(&mock).with_token(Some("s3cret".into()));
    c.fetch(&items(1)).unwrap();
    assert_eq!(*mock.auth.lock().unwrap(), vec!["Bearer s3cret".to_string()]);
}

#[test]
fn concurrency_is_bounded() {
    let mock = serve(Duration::from_millis(30), Box::new(echo));
    let mut c = client(&mock);
    c.batch_size = 1;
    c.concurrency = 3;
    let m = c.fetch(&items(9)).unwrap();
    assert_eq!(m.ids(), (0..9).map(|i| format!("k{i}")).collect::<Vec<_>>().as_slice());
    assert_eq!(mock.hits.load(Ordering::SeqCst), 9);
    assert!(mock.max_in_flight.load(Ordering::SeqCst) <= 3);
}
