//! Shared vocabulary: entries, nodes, pilots, benchmark specs and results.
//!
//! Timestamps are `f64` seconds on the simulation clock, with epoch 0 at
//! scenario start.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Seconds on the simulation clock.
pub type Timestamp = f64;

/// Publicly visible description of one compute entrypoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntryConfig {
    pub entry_id: String,
    pub site_name: String,
    pub cpu_model: String,
    pub price_per_hour: f64,
    pub max_pilots: u32,
    pub supports_containers: bool,
    pub enabled: bool,
}

/// Resources reported by a pilot after probing its node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeInfo {
    pub cores: u32,
    pub memory_mb: u64,
    pub disk_mb: u64,
    pub gpus: u32,
    pub cpu_model: String,
}

impl Default for NodeInfo {
    fn default() -> Self {
        NodeInfo {
            cores: 1,
            memory_mb: 1,
            disk_mb: 0,
            gpus: 0,
            cpu_model: "unknown".to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Purpose {
    User,
    Benchmark,
}

impl fmt::Display for Purpose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Purpose::User => "user",
            Purpose::Benchmark => "benchmark",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PilotState {
    Submitted,
    Queued,
    Running,
    Completed,
    Failed,
    TimedOut,
}

impl PilotState {
    pub fn is_terminal(self) -> bool {
        matches!(self, PilotState::Completed | PilotState::Failed | PilotState::TimedOut)
    }

    /// Queued or running; the pilots that count against pressure and caps.
    pub fn is_in_flight(self) -> bool {
        matches!(self, PilotState::Submitted | PilotState::Queued | PilotState::Running)
    }

    pub fn can_transition_to(self, next: PilotState) -> bool {
        use PilotState::*;
        matches!(
            (self, next),
            (Submitted, Queued)
                | (Queued, Running)
                | (Queued, Failed)
                | (Running, Completed)
                | (Running, Failed)
                | (Running, TimedOut)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("illegal pilot transition {from:?} -> {to:?}")]
pub struct TransitionError {
    pub from: PilotState,
    pub to: PilotState,
}

/// One pilot's lifecycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotRecord {
    pub pilot_id: String,
    pub entry_id: String,
    pub purpose: Purpose,
    pub spec_id: Option<String>,
    pub state: PilotState,
    pub submitted_at: Option<Timestamp>,
    pub started_at: Option<Timestamp>,
    pub finished_at: Option<Timestamp>,
    pub stderr_lines: Vec<String>,
}

impl PilotRecord {
    pub fn new(
        pilot_id: String,
        entry_id: String,
        purpose: Purpose,
        spec_id: Option<String>,
        submitted_at: Timestamp,
    ) -> Self {
        PilotRecord {
            pilot_id,
            entry_id,
            purpose,
            spec_id,
            state: PilotState::Submitted,
            submitted_at: Some(submitted_at),
            started_at: None,
            finished_at: None,
            stderr_lines: Vec::new(),
        }
    }

    /// Moves the pilot to `next`, stamping `started_at`/`finished_at` as
    /// appropriate. Times earlier than the previous stamp are clamped so the
    /// record stays monotone.
    pub fn transition(&mut self, next: PilotState, now: Timestamp) -> Result<(), TransitionError> {
        if !self.state.can_transition_to(next) {
            return Err(TransitionError {
                from: self.state,
                to: next,
            });
        }
        let floor = self.started_at.or(self.submitted_at).unwrap_or(f64::NEG_INFINITY);
        let now = now.max(floor);
        if next == PilotState::Running {
            self.started_at = Some(now);
        }
        if next.is_terminal() {
            self.finished_at = Some(now);
        }
        self.state = next;
        Ok(())
    }

    /// Checks the record-level invariants. Returns the violated ones.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if (self.purpose == Purpose::Benchmark) != self.spec_id.is_some() {
            out.push("spec_id must be present iff purpose is benchmark".to_string());
        }
        let stamps = [self.submitted_at, self.started_at, self.finished_at];
        let present: Vec<f64> = stamps.iter().flatten().copied().collect();
        if present.windows(2).any(|w| w[0] > w[1]) {
            out.push("timestamps not monotone".to_string());
        }
        let needs_start = matches!(
            self.state,
            PilotState::Running | PilotState::Completed | PilotState::TimedOut
        );
        let forbids_start = matches!(self.state, PilotState::Submitted | PilotState::Queued);
        if needs_start && self.started_at.is_none() {
            out.push(format!("state {:?} requires started_at", self.state));
        }
        if forbids_start && self.started_at.is_some() {
            out.push(format!("state {:?} must not have started_at", self.state));
        }
        if self.state.is_terminal() != self.finished_at.is_some() {
            out.push("finished_at present iff terminal".to_string());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSpec {
    pub spec_id: String,
    pub name: String,
    pub image_ref: String,
    pub work_units: u64,
    pub timeout_s: u64,
}

impl BenchmarkSpec {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.spec_id.is_empty() {
            out.push("spec_id empty".to_string());
        }
        if self.work_units < 1 {
            out.push(format!("spec {}: work_units must be >= 1", self.spec_id));
        }
        if self.timeout_s < 1 {
            out.push(format!("spec {}: timeout_s must be >= 1", self.spec_id));
        }
        out
    }
}

pub const RESULT_SCHEMA_VERSION: u32 = 1;

/// One measured benchmark outcome as shipped home by a pilot.
///
/// Field order here is the wire order of the payload line and of the
/// JSON-Lines store; do not reorder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkResult {
    pub schema_version: u32,
    pub pilot_id: String,
    pub entry_id: String,
    pub spec_id: String,
    pub score: f64,
    pub duration_s: f64,
    pub started_at: Timestamp,
    pub node: NodeInfo,
    pub exit_code: i32,
}

impl BenchmarkResult {
    pub fn is_success(&self) -> bool {
        self.exit_code == 0
    }

    /// Invariant check. `timeout_s`, when known, also bounds successful
    /// durations.
    pub fn violations(&self, timeout_s: Option<u64>) -> Vec<String> {
        let mut out = Vec::new();
        if self.schema_version != RESULT_SCHEMA_VERSION {
            out.push(format!("unsupported schema_version {}", self.schema_version));
        }
        if !self.score.is_finite() || !self.duration_s.is_finite() || !self.started_at.is_finite() {
            out.push("non-finite number".to_string());
        }
        if (self.score > 0.0) != (self.exit_code == 0) {
            out.push("score > 0 iff exit_code = 0".to_string());
        }
        if self.duration_s <= 0.0 {
            out.push("duration_s must be > 0".to_string());
        }
        if let Some(t) = timeout_s {
            if self.exit_code == 0 && self.duration_s > t as f64 {
                out.push("duration_s exceeds timeout_s".to_string());
            }
        }
        if self.pilot_id.is_empty() || self.entry_id.is_empty() || self.spec_id.is_empty() {
            out.push("empty identifier".to_string());
        }
        out
    }
}

fn valid_entry_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || matches!(b, b'_' | b'.' | b'-'))
}

/// Returns every violated invariant of `cfg`; empty means valid.
pub fn validate_entry_config(cfg: &EntryConfig) -> Vec<String> {
    let mut out = Vec::new();
    if cfg.entry_id.is_empty() {
        out.push("entry_id empty".to_string());
    } else if !valid_entry_id(&cfg.entry_id) {
        out.push(format!(
            "entry_id {:?} has characters outside [a-z0-9_.-]",
            cfg.entry_id
        ));
    }
    if cfg.price_per_hour.is_nan() {
        out.push("price_per_hour not a number".to_string());
    } else if cfg.price_per_hour < 0.0 {
        out.push("price_per_hour negative".to_string());
    } else if cfg.price_per_hour.is_infinite() {
        out.push("price_per_hour infinite".to_string());
    }
    out
}

/// Normalizes a raw CPU model string into a hardware class key: lowercase,
/// trimmed, interior whitespace runs collapsed to one space.
pub fn hardware_fingerprint(cpu_model: &str) -> String {
    cpu_model
        .to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Formats the global pilot sequence number.
pub fn format_pilot_id(seq: u64) -> String {
    format!("p-{seq:08}")
}
