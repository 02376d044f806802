use std::io::{Read, Write};
use std::net::TcpStream;

use glidebench::scenario::Scenario;
use glidebench::sim::Simulation;
use glidebench_api::{Response, Service};
use serde_json::{json, Value};

fn service() -> Service {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/abc.json")).unwrap();
    Service::new(Simulation::new(&Scenario::from_json(&text).unwrap()).unwrap())
}

fn get(s: &Service, target: &str) -> Response {
    s.handle("GET", target, b"")
}

fn post(s: &Service, target: &str, body: Value) -> Response {
    s.handle("POST", target, body.to_string().as_bytes())
}

#[test]
fn gets_do_not_move_state() {
    let s = service();
    post(&s, "/api/v1/campaigns", json!({"spec_id": "s1", "mode": "all_due"}));
    post(&s, "/api/v1/sim/advance", json!({"seconds": 400}));
    let before = get(&s, "/api/v1/status");
    for t in [
        "/api/v1/scores?spec=s1",
        "/api/v1/results",
        "/api/v1/campaigns/c-000001",
        "/api/v1/plan?demand=100&spec=s1",
        "/api/v1/config",
        "/api/v1/nowhere",
    ] {
        get(&s, t);
        get(&s, t);
    }
    assert_eq!(get(&s, "/api/v1/status"), before);
}

#[test]
fn campaign_is_visible_immediately() {
    let s = service();
    let created = post(&s, "/api/v1/campaigns", json!({"spec_id": "s1", "mode": "all_due"}));
    assert_eq!(created.status, 201);
    let id = created.body["campaign_id"].as_str().unwrap();
    let st = get(&s, &format!("/api/v1/campaigns/{id}"));
    assert_eq!(st.status, 200);
    assert_eq!(st.body["selected"], 3);
    assert_eq!(st.body["queued"], 3);
    // Everything just ran, so a second campaign has nothing to do.
    let again = post(&s, "/api/v1/campaigns", json!({"spec_id": "s1", "mode": "all_due"}));
    assert_eq!((again.status, again.body["error"].as_str()), (400, Some("nothing_due")));
}

#[test]
fn malformed_requests_are_400() {
    let s = service();
    for (target, body) in [
        ("/api/v1/campaigns", "not json"),
        ("/api/v1/campaigns", r#"{"spec_id": "s1"}"#),
        ("/api/v1/campaigns", r#"{"spec_id": "s1", "mode": "weekly"}"#),
        (
            "/api/v1/campaigns",
            r#"{"spec_id": "s1", "mode": "all_due", "extra": 1}"#,
        ),
        (
            "/api/v1/campaigns",
            r#"{"spec_id": "s1", "mode": "all_due", "min_interval_s": 0}"#,
        ),
        ("/api/v1/reconfig", "{"),
        ("/api/v1/sim/advance", r#"{"secs": 5}"#),
    ] {
        let r = s.handle("POST", target, body.as_bytes());
        assert_eq!(r.status, 400, "{target} {body}");
        assert!(r.body["error"].is_string() && r.body.get("detail").is_some());
    }
    for target in [
        "/api/v1/scores",
        "/api/v1/plan?spec=s1",
        "/api/v1/plan?demand=0&spec=s1",
        "/api/v1/plan?demand=5&spec=q",
    ] {
        assert_eq!(get(&s, target).status, 400, "{target}");
    }
    assert_eq!(get(&s, "/elsewhere").status, 404);
}

#[test]
fn percent_encoded_query_values() {
    let s = service();
    post(&s, "/api/v1/campaigns", json!({"spec_id": "s1", "mode": "all_due"}));
    post(&s, "/api/v1/sim/advance", json!({"seconds": 7200}));
    let r = get(&s, "/api/v1/results?entry=%61&spec=s1");
    assert_eq!(r.body.as_array().unwrap().len(), 1);
    assert_eq!(r.body[0]["entry_id"], "a");
}

#[test]
fn served_over_http() {
    let rt = tokio::runtime::Runtime::new().unwrap();
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let addr = listener.local_addr().unwrap();
    let app = glidebench_api::router(service());
    rt.spawn(async move { axum::serve(listener, app).await.unwrap() });

    let exchange = |raw: String| {
        let mut stream = TcpStream::connect(addr).unwrap();
        stream.write_all(raw.as_bytes()).unwrap();
        let mut out = String::new();
        stream.read_to_string(&mut out).unwrap();
        out
    };
    let status = exchange("GET /api/v1/status HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n".into());
    assert!(status.starts_with("HTTP/1.1 200"), "{status}");
    assert!(status.to_ascii_lowercase().contains("content-type: application/json"));
    assert!(status.contains(r#""benchmark_pilots":{"queued":0,"running":0}"#));

    let body = r#"{"spec_id":"s1","mode":"all_due"}"#;
    let created = exchange(format!(
        "POST /api/v1/campaigns HTTP/1.1\r\nHost: x\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    ));
    assert!(created.starts_with("HTTP/1.1 201"), "{created}");
    let missing = exchange("GET /api/v1/campaigns/c-000042 HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n".into());
    assert!(missing.starts_with("HTTP/1.1 404"), "{missing}");
}
