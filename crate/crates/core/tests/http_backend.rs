use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde_json::Value;

use scpo::backends::{Backend, HttpBackend, HttpConfig, SamplingSpec};
use scpo::consistency::{Origin, Pool, Problem, Split};
use scpo::seed::{derive_seed, problem_seed};
use scpo::Error;

/// What the mock server does with the n-th request (0-based).
type Behavior = dyn Fn(usize, &Value) -> (u16, String) + Send + Sync;

/// Request body plus its Authorization header.
type Request = (Value, Option<String>);

struct MockServer {
    url: String,
    hits: Arc<AtomicUsize>,
    bodies: Arc<Mutex<Vec<Request>>>,
}

fn read_request(stream: &mut TcpStream) -> Request {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut length = 0;
    let mut auth = None;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        let (name, value) = line.split_once(':').unwrap_or((line, ""));
        match name.to_ascii_lowercase().as_str() {
            "content-length" => length = value.trim().parse().unwrap(),
            "authorization" => auth = Some(value.trim().to_string()),
            _ => {}
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).unwrap();
    (serde_json::from_slice(&body).unwrap(), auth)
}

fn spawn(behavior: Arc<Behavior>) -> MockServer {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let bodies = Arc::new(Mutex::new(Vec::new()));
    let (h, b) = (hits.clone(), bodies.clone());
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let (hits, bodies, behavior) = (h.clone(), b.clone(), behavior.clone());
            thread::spawn(move || {
                let (body, auth) = read_request(&mut stream);
                let n = hits.fetch_add(1, Ordering::SeqCst);
                let (status, payload) = behavior(n, &body);
                bodies.lock().unwrap().push((body, auth));
                let response = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                    payload.len()
                );
                let _ = stream.write_all(response.as_bytes());
            });
        }
    });
    MockServer { url, hits, bodies }
}

fn completion(content: &str, finish: &str) -> String {
    serde_json::json!({
        "model": "mock-model",
        "choices": [{"message": {"role": "assistant", "content": content}, "finish_reason": finish}]
    })
    .to_string()
}

fn seed_of(body: &Value) -> u64 {
    body["seed"].as_u64().unwrap()
}

fn backend(url: &str, concurrency: usize) -> HttpBackend {
    HttpBackend::new(HttpConfig {
        base_url: url.to_string(),
        concurrency,
        max_attempts: 3,
        backoff_ms: 1,
        timeout_secs: 10,
        api_key_env: "SCPO_TEST_UNSET_TOKEN".into(),
        ..HttpConfig::default()
    })
    .unwrap()
}

fn problem() -> Problem {
    Problem {
        id: "q1".into(),
        text: "Tom has 3 apples and buys 4 more. How many?".into(),
        gold_answer: Some("7".into()),
        split: Split::Train,
        origin: Origin::Seed,
    }
}

#[test]
fn samples_come_back_in_request_order_under_delays() {
    let server = spawn(Arc::new(|_, body: &Value| {
        let seed = seed_of(body);
        // Scramble completion order.
        thread::sleep(Duration::from_millis(seed % 7 * 5));
        (200, completion(&format!("seed {seed}\n#### {}", seed % 10), "stop"))
    }));
    let spec = SamplingSpec {
        n: 8,
        seed: 42,
        ..SamplingSpec::default()
    };
    let batch = backend(&server.url, 4).sample_responses(&problem(), &spec).unwrap();
    assert_eq!(batch.samples.len(), 8);
    assert_eq!(batch.model.as_deref(), Some("mock-model"));
    let base = problem_seed(42, "q1");
    for (i, s) in batch.samples.iter().enumerate() {
        let expected = derive_seed(base, "http/sample", i as u64) & 0x7fff_ffff;
        assert_eq!(s.sample_idx, i);
        assert_eq!(s.text, format!("seed {expected}\n#### {}", expected % 10));
        assert_eq!(s.answer.as_deref(), Some((expected % 10).to_string().as_str()));
        assert_eq!(s.pool, Pool::Base);
    }
    let bodies = server.bodies.lock().unwrap();
    let first = &bodies[0].0;
    assert_eq!(first["n"], 1);
    assert_eq!(first["temperature"], 0.7);
    assert_eq!(first["top_p"], 0.9);
    assert_eq!(first["max_tokens"], 1024);
    assert!(first["messages"][0]["content"].as_str().unwrap().contains("Tom has 3 apples"));
    assert!(bodies[0].1.is_none());
}

#[test]
fn server_errors_are_retried() {
    let server = spawn(Arc::new(|n, _: &Value| {
        if n < 2 {
            (500, "{\"error\":\"busy\"}".to_string())
        } else {
            (200, completion("so\n#### 7", "stop"))
        }
    }));
    let spec = SamplingSpec {
        n: 1,
        ..SamplingSpec::default()
    };
    let batch = backend(&server.url, 1).sample_responses(&problem(), &spec).unwrap();
    assert_eq!(batch.samples[0].answer.as_deref(), Some("7"));
    assert_eq!(server.hits.load(Ordering::SeqCst), 3);
}

#[test]
fn rate_limits_are_retried() {
    let server = spawn(Arc::new(|n, _: &Value| {
        if n == 0 {
            (429, "{}".to_string())
        } else {
            (200, completion("#### 3", "stop"))
        }
    }));
    let got = backend(&server.url, 1).greedy_answer(&problem()).unwrap();
    assert_eq!(got.as_deref(), Some("3"));
    let bodies = server.bodies.lock().unwrap();
    assert_eq!(bodies[1].0["temperature"], 0.0);
}

#[test]
fn exhausted_retries_report_unavailable() {
    let server = spawn(Arc::new(|_, _: &Value| (503, "{}".to_string())));
    let err = backend(&server.url, 1)
        .sample_responses(&problem(), &SamplingSpec { n: 1, ..SamplingSpec::default() })
        .unwrap_err();
    match err {
        Error::BackendUnavailable { attempts, .. } => assert_eq!(attempts, 3),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(server.hits.load(Ordering::SeqCst), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let server = spawn(Arc::new(|_, _: &Value| (400, "{\"error\":\"bad\"}".to_string())));
    let err = backend(&server.url, 1).greedy_answer(&problem()).unwrap_err();
    assert!(matches!(err, Error::BackendUnavailable { attempts: 1, .. }));
    assert_eq!(server.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn unreachable_server_reports_unavailable() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    drop(listener);
    let err = backend(&url, 1).greedy_answer(&problem()).unwrap_err();
    assert!(matches!(err, Error::BackendUnavailable { attempts: 3, .. }));
}

#[test]
fn length_stops_are_flagged_as_truncated() {
    let server = spawn(Arc::new(|n, _: &Value| {
        let finish = if n % 2 == 0 { "length" } else { "stop" };
        (200, completion("partial reasoning", finish))
    }));
    let batch = backend(&server.url, 1)
        .sample_responses(&problem(), &SamplingSpec { n: 4, ..SamplingSpec::default() })
        .unwrap();
    assert_eq!(batch.truncated.len(), 2);
    assert!(batch.samples.iter().all(|s| s.answer.is_none()));
}

#[test]
fn bearer_token_is_sent_when_configured() {
    std::env::set_var("SCPO_TEST_TOKEN_SET", "sk-test");
    let server = spawn(Arc::new(|_, _: &Value| (200, completion("#### 1", "stop"))));
    let backend = HttpBackend::new(HttpConfig {
        base_url: server.url.clone(),
        api_key_env: "SCPO_TEST_TOKEN_SET".into(),
        ..HttpConfig::default()
    })
    .unwrap();
    backend.greedy_answer(&problem()).unwrap();
    assert_eq!(server.bodies.lock().unwrap()[0].1.as_deref(), Some("Bearer sk-test"));
}

#[test]
fn generated_queries_are_parsed_and_deduplicated() {
    let server = spawn(Arc::new(|n, _: &Value| {
        let text = match n {
            1 => "   ",
            3 => "Seed question 0?",
            _ => "Q: How many legs do 3 spiders have?",
        };
        (200, completion(text, "stop"))
    }));
    let mut b = backend(&server.url, 1);
    let seeds: Vec<Problem> = (0..4)
        .map(|i| Problem {
            id: format!("s{i}"),
            text: format!("Seed question {i}?"),
            ..problem()
        })
        .collect();
    let out = b.generate_queries(&seeds, 4, 4, &SamplingSpec::default()).unwrap();
    assert_eq!(server.hits.load(Ordering::SeqCst), 4);
    // Blank, repeated and seed-copy completions are discarded.
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].text, "How many legs do 3 spiders have?");
    assert_eq!(out[0].origin, Origin::Generated);
    assert!(out[0].gold_answer.is_none());
}
