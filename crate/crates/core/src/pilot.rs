//! What a pilot does once it lands on a node: validate, probe resources,
//! run the payload, and ship the outcome home on stderr.
//!
//! A result travels as a three-line block:
//!
//! ```text
//! =GLIDEBENCH:BEGIN v1=
//! {"schema_version":1,"pilot_id":...,"exit_code":0}
//! =GLIDEBENCH:END <sha256 of line 2, lowercase hex>=
//! ```
//!
//! Failures end the stream with a single `GLIDEBENCH:ERROR <reason>` line.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::benchharness::{compute_score, execute, Executor, EXIT_TIMEOUT};
use crate::domain::{BenchmarkResult, BenchmarkSpec, NodeInfo, PilotState, Purpose, Timestamp, RESULT_SCHEMA_VERSION};
use crate::fabricsim::{FabricProfile, PilotStreams};

pub const BEGIN_SENTINEL: &str = "=GLIDEBENCH:BEGIN v1=";
pub const END_PREFIX: &str = "=GLIDEBENCH:END ";
pub const ERROR_PREFIX: &str = "GLIDEBENCH:ERROR ";

/// Raw node description as the fabric exposes it; any field may be absent.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDescriptor {
    pub cores: Option<u32>,
    pub memory_mb: Option<u64>,
    pub disk_mb: Option<u64>,
    pub gpus: Option<u32>,
    pub cpu_model: Option<String>,
}

pub fn detect_resources(descriptor: Option<&NodeDescriptor>) -> NodeInfo {
    let d = NodeInfo::default();
    let Some(desc) = descriptor else {
        return d;
    };
    NodeInfo {
        cores: desc.cores.filter(|&c| c >= 1).unwrap_or(d.cores),
        memory_mb: desc.memory_mb.filter(|&m| m >= 1).unwrap_or(d.memory_mb),
        disk_mb: desc.disk_mb.unwrap_or(d.disk_mb),
        gpus: desc.gpus.unwrap_or(d.gpus),
        cpu_model: desc.cpu_model.clone().unwrap_or(d.cpu_model),
    }
}

#[derive(Debug, Clone)]
pub struct PilotContext {
    pub pilot_id: String,
    pub entry_id: String,
    pub purpose: Purpose,
    pub spec: Option<BenchmarkSpec>,
    pub node: Option<NodeDescriptor>,
    pub container_available: bool,
    pub started_at: Timestamp,
}

/// Terminal outcome of a pilot run.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotRun {
    pub state: PilotState,
    pub stderr_lines: Vec<String>,
    /// Simulated seconds from start to the terminal state.
    pub payload_s: f64,
}

pub fn checksum_hex(payload: &str) -> String {
    hex::encode(Sha256::digest(payload.as_bytes()))
}

/// Encodes `result` as the three-line stderr block.
pub fn emit_result_block(result: &BenchmarkResult) -> Vec<String> {
    let payload = serde_json::to_string(result).expect("result serializes");
    let end = format!("{END_PREFIX}{}=", checksum_hex(&payload));
    vec![BEGIN_SENTINEL.to_string(), payload, end]
}

fn error_line(reason: &str) -> String {
    format!("{ERROR_PREFIX}{reason}")
}

fn fail(mut log: Vec<String>, state: PilotState, reason: &str, payload_s: f64) -> PilotRun {
    log.push(error_line(reason));
    PilotRun {
        state,
        stderr_lines: log,
        payload_s,
    }
}

/// Runs a started pilot to completion against the simulated fabric.
pub fn run(ctx: &PilotContext, profile: &FabricProfile, streams: &mut PilotStreams) -> PilotRun {
    let mut log = vec![format!("glidein {} starting on entry {}", ctx.pilot_id, ctx.entry_id)];

    let spec = match (ctx.purpose, &ctx.spec) {
        (Purpose::User, _) => {
            log.push("no user payload assigned; exiting".to_string());
            return PilotRun {
                state: PilotState::Completed,
                stderr_lines: log,
                payload_s: 0.0,
            };
        }
        (Purpose::Benchmark, None) => {
            return fail(log, PilotState::Failed, "missing_spec", 0.0);
        }
        (Purpose::Benchmark, Some(spec)) => spec,
    };

    if !spec.image_ref.is_empty() && !ctx.container_available {
        return fail(log, PilotState::Failed, "container_unavailable", 0.0);
    }
    log.push("validation ok".to_string());

    let node = detect_resources(ctx.node.as_ref());
    log.push(format!(
        "node: cores={} memory_mb={} disk_mb={} gpus={} cpu_model={}",
        node.cores, node.memory_mb, node.disk_mb, node.gpus, node.cpu_model
    ));
    log.push(format!(
        "running benchmark {} ({} units)",
        spec.spec_id, spec.work_units
    ));

    let m = execute(spec, Executor::Simulated { profile, streams });
    let Some(score) = compute_score(&m, spec) else {
        if m.exit_code == EXIT_TIMEOUT {
            return fail(log, PilotState::TimedOut, "timeout", spec.timeout_s as f64);
        }
        return fail(log, PilotState::Failed, "payload_failed", m.elapsed_s);
    };

    let result = BenchmarkResult {
        schema_version: RESULT_SCHEMA_VERSION,
        pilot_id: ctx.pilot_id.clone(),
        entry_id: ctx.entry_id.clone(),
        spec_id: spec.spec_id.clone(),
        score,
        duration_s: m.elapsed_s,
        started_at: ctx.started_at,
        node,
        exit_code: m.exit_code,
    };
    log.extend(emit_result_block(&result));
    PilotRun {
        state: PilotState::Completed,
        stderr_lines: log,
        payload_s: m.elapsed_s,
    }
}
