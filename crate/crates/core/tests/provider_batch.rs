use std::collections::HashSet;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use genqa::provider::{
    Client, Clock, Completion, GenerationError, GenerationRequest, Provider, ProviderConfig, ProviderKind, VirtualClock,
};
use genqa::template::InstantiatedPrompt;

fn prompt(text: &str) -> InstantiatedPrompt {
    InstantiatedPrompt {
        template_id: "t".into(),
        text: text.into(),
        bindings: Default::default(),
        seed: 0,
        booster_used: String::new(),
    }
}

fn requests(n: usize) -> Vec<GenerationRequest> {
    (0..n)
        .map(|i| GenerationRequest::new(format!("r-{i:04}"), prompt(&format!("p{i}")), "m", 1.0, 64).unwrap())
        .collect()
}

fn ok(text: &str) -> Completion {
    Completion {
        text: text.into(),
        prompt_tokens: 1,
        output_tokens: 1,
        created_at: Some("1970-01-01T00:00:00Z".into()),
    }
}

/// Counts concurrent calls and holds each one for a short real-time pause.
struct Gauge {
    in_flight: AtomicUsize,
    peak: AtomicUsize,
    hold: Duration,
}

impl Provider for Gauge {
    fn name(&self) -> &str {
        "gauge"
    }

    fn complete(&self, r: &GenerationRequest) -> Result<Completion, GenerationError> {
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        std::thread::sleep(self.hold);
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        Ok(ok(&r.request_id))
    }
}

fn config(max_in_flight: usize, rps: f64) -> ProviderConfig {
    let mut c = ProviderConfig::mock(0);
    c.max_in_flight = max_in_flight;
    c.requests_per_second = rps;
    c
}

#[test]
fn concurrency_is_bounded() {
    let gauge = Arc::new(Gauge {
        in_flight: AtomicUsize::new(0),
        peak: AtomicUsize::new(0),
        hold: Duration::from_millis(3),
    });
    let client = Client::new(gauge.clone(), &config(8, 1e6));
    let mut seen = Vec::new();
    client.generate_batch(requests(100), |item| {
        assert_eq!(item.result.as_ref().unwrap().text, item.request_id);
        seen.push(item.request_id);
    });
    let peak = gauge.peak.load(Ordering::SeqCst);
    assert!(peak <= 8, "peak concurrency {peak}");
    assert!(peak >= 2, "batch never overlapped requests");
    assert_eq!(seen.len(), 100);
    assert_eq!(seen.iter().collect::<HashSet<_>>().len(), 100);
}

struct Instant0;

impl Provider for Instant0 {
    fn name(&self) -> &str {
        "instant"
    }

    fn complete(&self, _r: &GenerationRequest) -> Result<Completion, GenerationError> {
        Ok(ok("x"))
    }
}

#[test]
fn rate_cap_sets_minimum_duration() {
    // 1000 requests at 50/s: the last slot is at 999/50 = 19.98 s.
    let clock = Arc::new(VirtualClock::new());
    let client = Client::with_clock(Arc::new(Instant0), &config(8, 50.0), clock.clone());
    let mut n = 0;
    client.generate_batch(requests(1000), |item| {
        assert!(item.result.is_ok());
        n += 1;
    });
    assert_eq!(n, 1000);
    let elapsed = clock.now().as_secs_f64();
    assert!(elapsed >= 19.9, "virtual time {elapsed}");
    assert!(elapsed < 20.5, "virtual time {elapsed}");
}

/// Records the real time of every call.
struct Stamps(Mutex<Vec<Instant>>);

impl Provider for Stamps {
    fn name(&self) -> &str {
        "stamps"
    }

    fn complete(&self, _r: &GenerationRequest) -> Result<Completion, GenerationError> {
        self.0.lock().unwrap().push(Instant::now());
        Ok(ok("x"))
    }
}

#[test]
fn no_one_second_window_exceeds_cap_in_real_time() {
    let stamps = Arc::new(Stamps(Mutex::new(Vec::new())));
    let client = Client::new(stamps.clone(), &config(4, 50.0));
    let start = Instant::now();
    client.generate_batch(requests(75), |_| {});
    assert!(start.elapsed() >= Duration::from_secs_f64(74.0 / 50.0 - 0.01));
    let mut t = stamps.0.lock().unwrap().clone();
    t.sort();
    for (i, &a) in t.iter().enumerate() {
        let n = t[i..].iter().take_while(|&&b| b - a < Duration::from_secs(1)).count();
        assert!(n <= 51, "window holds {n}");
    }
}

struct RefuseOne;

impl Provider for RefuseOne {
    fn name(&self) -> &str {
        "refuse-one"
    }

    fn complete(&self, r: &GenerationRequest) -> Result<Completion, GenerationError> {
        if r.request_id == "r-0500" {
            Err(GenerationError::SafetyRefusal("blocked".into()))
        } else {
            Ok(ok("fine"))
        }
    }
}

#[test]
fn refusal_is_isolated() {
    let client = Client::new(Arc::new(RefuseOne), &config(8, 1e6));
    let (mut good, mut bad) = (0, Vec::new());
    client.generate_batch(requests(1000), |item| match item.result {
        Ok(_) => good += 1,
        Err(e) => bad.push((item.request_id, e)),
    });
    assert_eq!(good, 999);
    assert_eq!(bad.len(), 1);
    assert_eq!(bad[0].0, "r-0500");
    assert!(matches!(bad[0].1, GenerationError::SafetyRefusal(_)));
}

/// Minimal HTTP/1.1 server answering from a script, one response per
/// connection, recording each request's headers and body.
struct Stub {
    url: String,
    seen: Arc<Mutex<Vec<(String, String)>>>,
}

fn stub(script: Vec<(u16, String)>) -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    std::thread::spawn(move || {
        for (status, body) in script {
            let Ok((stream, _)) = listener.accept() else { return };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut head = String::new();
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                head.push_str(&line);
            }
            let mut req_body = vec![0; len];
            reader.read_exact(&mut req_body).unwrap();
            log.lock().unwrap().push((head, String::from_utf8(req_body).unwrap()));
            let mut s = stream;
            write!(
                s,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    Stub { url, seen }
}

fn remote_config(url: &str, auth_env: &str) -> ProviderConfig {
    let mut c = ProviderConfig::mock(0);
    c.name = "remote".into();
    c.kind = ProviderKind::OpenaiCompatible;
    c.endpoint = Some(url.to_string());
    c.auth_env = Some(auth_env.to_string());
    c.mock = None;
    c.retry.max_attempts = 3;
    c.retry.base_backoff_ms = 1;
    c
}

#[test]
fn remote_round_trip_with_retry() {
    let reply = r#"{"choices":[{"message":{"content":"Question: q\nAnswer: a"},"finish_reason":"stop"}],"usage":{"prompt_tokens":7,"completion_tokens":4}}"#;
    let server = stub(vec![(429, r#"{"error":"slow down"}"#.into()), (200, reply.into())]);
    std::env::set_var("GENQA_TEST_REMOTE_KEY", "sekrit");
    let cfg = remote_config(&server.url, "GENQA_TEST_REMOTE_KEY");
    let client = Client::with_clock(cfg.build_provider(), &cfg, Arc::new(VirtualClock::new()));
    let req = GenerationRequest::new("r-1", prompt("Write a question."), "some-model", 0.7, 64).unwrap();
    let out = client.generate(&req).unwrap();
    assert_eq!(out.text, "Question: q\nAnswer: a");
    assert_eq!(out.provider, "remote");

    let seen = server.seen.lock().unwrap();
    assert_eq!(seen.len(), 2, "the 429 is retried once");
    let (head, body) = &seen[1];
    assert!(head.to_ascii_lowercase().contains("authorization: bearer sekrit"));
    let body: serde_json::Value = serde_json::from_str(body).unwrap();
    assert_eq!(body["model"], "some-model");
    assert_eq!(body["messages"][0]["content"], "Write a question.");
}

#[test]
fn content_filter_is_a_refusal() {
    let server = stub(vec![(
        200,
        r#"{"choices":[{"message":{"content":""},"finish_reason":"content_filter"}]}"#.into(),
    )]);
    std::env::set_var("GENQA_TEST_FILTER_KEY", "k");
    let cfg = remote_config(&server.url, "GENQA_TEST_FILTER_KEY");
    let client = Client::with_clock(cfg.build_provider(), &cfg, Arc::new(VirtualClock::new()));
    let req = GenerationRequest::new("r-1", prompt("p"), "m", 1.0, 64).unwrap();
    assert!(matches!(client.generate(&req), Err(GenerationError::SafetyRefusal(_))));
    assert_eq!(server.seen.lock().unwrap().len(), 1, "refusals are not retried");
}

#[test]
fn missing_credential_fails_without_connecting() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    listener.set_nonblocking(true).unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let cfg = remote_config(&url, "GENQA_TEST_NEVER_SET_9F2C");
    let client = Client::new(cfg.build_provider(), &cfg);
    let req = GenerationRequest::new("r-1", prompt("p"), "m", 1.0, 64).unwrap();
    match client.generate(&req) {
        Err(GenerationError::AuthMissing(var)) => assert_eq!(var, "GENQA_TEST_NEVER_SET_9F2C"),
        other => panic!("expected AuthMissing, got {other:?}"),
    }
    assert!(listener.accept().is_err(), "no connection may be attempted");
}
