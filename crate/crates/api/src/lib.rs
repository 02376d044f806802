//! JSON-over-HTTP access to a running simulation under `/api/v1`.
//!
//! [`Service::handle`] is the whole route table and is plain synchronous
//! code; [`serve`] puts it behind an axum listener. Every request takes the
//! simulation lock, so mutations apply in arrival order and readers never see
//! a half-applied change.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::http::{Method, StatusCode, Uri};
use axum::response::{IntoResponse, Response as AxumResponse};
use serde::Deserialize;
use serde_json::{json, Value};

use glidebench::factory::ConfigError;
use glidebench::runner::SamplingMode;
use glidebench::sim::{SimError, Simulation};

pub mod golden;

pub const PREFIX: &str = "/api/v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pub status: u16,
    pub body: Value,
}

impl Response {
    fn ok(body: Value) -> Self {
        Response { status: 200, body }
    }

    fn error(status: u16, error: &str, detail: Option<Value>) -> Self {
        let mut body = json!({ "error": error });
        if let Some(d) = detail {
            body["detail"] = d;
        }
        Response { status, body }
    }

    fn bad_request(error: &str, detail: impl Into<Value>) -> Self {
        Self::error(400, error, Some(detail.into()))
    }

    fn not_found() -> Self {
        Self::error(404, "not_found", None)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CampaignRequest {
    spec_id: String,
    mode: SamplingMode,
    #[serde(default)]
    min_interval_s: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AdvanceRequest {
    seconds: f64,
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("response serializes")
}

fn parse_query(query: &str) -> BTreeMap<String, String> {
    form_urlencoded::parse(query.as_bytes()).into_owned().collect()
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T, Response> {
    serde_json::from_slice(body).map_err(|e| Response::bad_request("invalid_body", e.to_string()))
}

#[derive(Clone)]
pub struct Service {
    sim: Arc<Mutex<Simulation>>,
}

impl Service {
    pub fn new(sim: Simulation) -> Self {
        Service {
            sim: Arc::new(Mutex::new(sim)),
        }
    }

    pub fn simulation(&self) -> Arc<Mutex<Simulation>> {
        Arc::clone(&self.sim)
    }

    /// Dispatches one request. `target` is the path with an optional
    /// `?query`.
    pub fn handle(&self, method: &str, target: &str, body: &[u8]) -> Response {
        let (path, query) = target.split_once('?').unwrap_or((target, ""));
        let Some(route) = path.strip_prefix(PREFIX) else {
            return Response::not_found();
        };
        let q = parse_query(query);
        let mut sim = self.sim.lock().unwrap_or_else(|p| p.into_inner());
        match (method, route) {
            ("GET", "/status") => Response::ok(to_value(&sim.status())),
            ("GET", "/scores") => scores(&sim, &q),
            ("GET", "/results") => results(&sim, &q),
            ("POST", "/campaigns") => post_campaign(&mut sim, body),
            ("GET", r) if r.starts_with("/campaigns/") => campaign(&sim, &r["/campaigns/".len()..]),
            ("GET", "/plan") => plan(&sim, &q),
            ("POST", "/reconfig") => reconfig(&mut sim, body),
            ("GET", "/config") => Response::ok(to_value(sim.config())),
            ("POST", "/sim/advance") => advance(&mut sim, body),
            _ => Response::not_found(),
        }
    }
}

fn require_spec(sim: &Simulation, q: &BTreeMap<String, String>) -> Result<String, Response> {
    let spec = q
        .get("spec")
        .ok_or_else(|| Response::bad_request("missing_parameter", "spec"))?;
    if sim.factory().spec(spec).is_none() {
        return Err(Response::bad_request("unknown_spec", spec.as_str()));
    }
    Ok(spec.clone())
}

fn scores(sim: &Simulation, q: &BTreeMap<String, String>) -> Response {
    match require_spec(sim, q) {
        Ok(spec) => Response::ok(to_value(&sim.scores(&spec))),
        Err(r) => r,
    }
}

fn results(sim: &Simulation, q: &BTreeMap<String, String>) -> Response {
    let limit = match q.get("limit").map(|l| l.parse::<usize>()) {
        None => None,
        Some(Ok(n)) => Some(n),
        Some(Err(_)) => return Response::bad_request("invalid_parameter", "limit must be a non-negative integer"),
    };
    let rows = sim.store().query(
        q.get("entry").map(String::as_str),
        q.get("spec").map(String::as_str),
        limit,
    );
    Response::ok(to_value(&rows))
}

fn post_campaign(sim: &mut Simulation, body: &[u8]) -> Response {
    let req: CampaignRequest = match parse_body(body) {
        Ok(r) => r,
        Err(e) => return e,
    };
    if let Some(m) = req.min_interval_s {
        if !(m > 0.0 && m.is_finite()) {
            return Response::bad_request("invalid_body", "min_interval_s must be > 0");
        }
    }
    match sim.trigger_campaign(&req.spec_id, req.mode, req.min_interval_s) {
        Ok(c) => Response {
            status: 201,
            body: json!({
                "campaign_id": c.campaign_id,
                "created_at": c.created_at,
                "spec_id": c.policy.spec_id,
                "mode": c.policy.mode,
                "min_interval_s": c.policy.min_interval_s,
                "selected": c.selected,
            }),
        },
        Err(SimError::UnknownSpec(s)) => Response::bad_request("unknown_spec", s),
        Err(SimError::NothingDue) => Response::bad_request("nothing_due", "no enabled entry is due for this spec"),
        Err(e) => Response::bad_request("campaign_rejected", e.to_string()),
    }
}

fn campaign(sim: &Simulation, id: &str) -> Response {
    let (Some(record), Ok(status)) = (sim.runner().campaign(id), sim.campaign_status(id)) else {
        return Response::error(404, "campaign_not_found", Some(Value::String(id.to_string())));
    };
    let mut body = to_value(&status);
    body["campaign_id"] = json!(id);
    body["selected"] = json!(record.selected.len());
    Response::ok(body)
}

fn plan(sim: &Simulation, q: &BTreeMap<String, String>) -> Response {
    let demand = match q.get("demand").map(|d| d.parse::<f64>()) {
        Some(Ok(d)) if d > 0.0 && d.is_finite() => d,
        Some(_) => return Response::bad_request("invalid_parameter", "demand must be a positive decimal"),
        None => return Response::bad_request("missing_parameter", "demand"),
    };
    match require_spec(sim, q) {
        Ok(spec) => Response::ok(to_value(&sim.plan(demand, &spec))),
        Err(r) => r,
    }
}

fn reconfig(sim: &mut Simulation, body: &[u8]) -> Response {
    let Ok(text) = std::str::from_utf8(body) else {
        return Response::bad_request("invalid_body", "body is not UTF-8");
    };
    match sim.reconfig(text) {
        Ok(version) => Response::ok(json!({ "version": version })),
        Err(ConfigError::Invalid(v)) => Response::error(422, "validation_failed", Some(json!(v))),
        Err(ConfigError::Parse { line, column, message }) => Response::bad_request(
            "invalid_body",
            json!({ "line": line, "column": column, "message": message }),
        ),
    }
}

fn advance(sim: &mut Simulation, body: &[u8]) -> Response {
    let req: AdvanceRequest = match parse_body(body) {
        Ok(r) => r,
        Err(e) => return e,
    };
    if !(req.seconds >= 0.0 && req.seconds.is_finite()) {
        return Response::bad_request("invalid_body", "seconds must be a non-negative number");
    }
    sim.advance_by(req.seconds);
    Response::ok(to_value(&sim.status()))
}

async fn dispatch(
    axum::extract::State(service): axum::extract::State<Service>,
    method: Method,
    uri: Uri,
    body: Bytes,
) -> AxumResponse {
    let target = uri.path_and_query().map(|p| p.as_str().to_string()).unwrap_or_default();
    let resp = tokio::task::spawn_blocking(move || service.handle(method.as_str(), &target, &body))
        .await
        .unwrap_or_else(|_| Response::error(500, "internal_error", None));
    let status = StatusCode::from_u16(resp.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, axum::Json(resp.body)).into_response()
}

pub fn router(service: Service) -> axum::Router {
    axum::Router::new().fallback(dispatch).with_state(service)
}

/// Serves until the process is stopped.
pub async fn serve(service: Service, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(service)).await
}
