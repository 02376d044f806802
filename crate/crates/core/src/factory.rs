//! Pressure-based pilot factory.
//!
//! The factory keeps, per entry, the number of queued plus running pilots
//! close to what its clients asked for. It never cancels pilots; it only
//! fills deficits, bounded by each entry's `max_pilots` and by a per-cycle
//! submission budget shared across entries in entry_id order.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::domain::{
    format_pilot_id, validate_entry_config, BenchmarkSpec, EntryConfig, PilotRecord, PilotState, Purpose, Timestamp,
    TransitionError,
};

pub const DEFAULT_CYCLE_PERIOD_S: f64 = 60.0;
pub const DEFAULT_MAX_SUBMIT_PER_CYCLE: u32 = 100;

/// Mailbox address of the factory itself.
pub const FACTORY_ADDRESS: &str = "factory";

fn default_cycle_period() -> f64 {
    DEFAULT_CYCLE_PERIOD_S
}

fn default_max_submit() -> u32 {
    DEFAULT_MAX_SUBMIT_PER_CYCLE
}

/// Active, validated factory configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FactoryConfig {
    pub version: u32,
    pub entries: Vec<EntryConfig>,
    pub benchmarks_enabled: bool,
    pub cycle_period_s: f64,
    pub max_submit_per_cycle: u32,
}

/// The input document. `version` is output-only and ignored when present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactoryConfigInput {
    pub entries: Vec<EntryConfig>,
    #[serde(default)]
    pub benchmarks_enabled: bool,
    #[serde(default = "default_cycle_period")]
    pub cycle_period_s: f64,
    #[serde(default = "default_max_submit")]
    pub max_submit_per_cycle: u32,
    #[serde(default, skip_serializing)]
    #[allow(dead_code)]
    version: Option<serde_json::Value>,
}

impl FactoryConfigInput {
    pub fn new(
        entries: Vec<EntryConfig>,
        benchmarks_enabled: bool,
        cycle_period_s: f64,
        max_submit_per_cycle: u32,
    ) -> Self {
        FactoryConfigInput {
            entries,
            benchmarks_enabled,
            cycle_period_s,
            max_submit_per_cycle,
            version: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid configuration: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

impl FactoryConfig {
    pub fn validate(input: FactoryConfigInput, version: u32) -> Result<Self, ConfigError> {
        let mut violations = Vec::new();
        let mut seen = std::collections::BTreeSet::new();
        for e in &input.entries {
            violations.extend(validate_entry_config(e));
            if !e.entry_id.is_empty() && !seen.insert(e.entry_id.as_str()) {
                violations.push(format!("duplicate entry_id {}", e.entry_id));
            }
        }
        if !(input.cycle_period_s > 0.0 && input.cycle_period_s.is_finite()) {
            violations.push("cycle_period_s must be > 0".to_string());
        }
        if input.max_submit_per_cycle < 1 {
            violations.push("max_submit_per_cycle must be >= 1".to_string());
        }
        if !violations.is_empty() {
            return Err(ConfigError::Invalid(violations));
        }
        let mut entries = input.entries;
        entries.sort_by(|a, b| a.entry_id.cmp(&b.entry_id));
        Ok(FactoryConfig {
            version,
            entries,
            benchmarks_enabled: input.benchmarks_enabled,
            cycle_period_s: input.cycle_period_s,
            max_submit_per_cycle: input.max_submit_per_cycle,
        })
    }

    pub fn entry(&self, entry_id: &str) -> Option<&EntryConfig> {
        self.entries
            .binary_search_by(|e| e.entry_id.as_str().cmp(entry_id))
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn to_input(&self) -> FactoryConfigInput {
        FactoryConfigInput::new(
            self.entries.clone(),
            self.benchmarks_enabled,
            self.cycle_period_s,
            self.max_submit_per_cycle,
        )
    }

    pub fn to_document(&self) -> String {
        serde_json::to_string_pretty(&self.to_input()).expect("config serializes")
    }
}

/// Parses and validates a configuration document at version 1.
pub fn load_config(document: &str) -> Result<FactoryConfig, ConfigError> {
    parse_config(document, 1)
}

fn parse_config(document: &str, version: u32) -> Result<FactoryConfig, ConfigError> {
    let input: FactoryConfigInput = serde_json::from_str(document).map_err(|e| match e.classify() {
        serde_json::error::Category::Data => ConfigError::Invalid(vec![e.to_string()]),
        _ => ConfigError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        },
    })?;
    FactoryConfig::validate(input, version)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FactoryError {
    #[error("unknown entry {0}")]
    UnknownEntry(String),
    #[error("entry {0} is disabled")]
    EntryDisabled(String),
    #[error("benchmarks_disabled")]
    BenchmarksDisabled,
    #[error("unknown spec {0}")]
    UnknownSpec(String),
    #[error("benchmark pilots need a spec_id")]
    MissingSpec,
    #[error("entry_full")]
    EntryFull,
    #[error("unknown pilot {0}")]
    UnknownPilot(String),
    #[error(transparent)]
    Transition(#[from] TransitionError),
}

impl FactoryError {
    /// Short machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            FactoryError::UnknownEntry(_) => "unknown_entry",
            FactoryError::EntryDisabled(_) => "entry_disabled",
            FactoryError::BenchmarksDisabled => "benchmarks_disabled",
            FactoryError::UnknownSpec(_) => "unknown_spec",
            FactoryError::MissingSpec => "missing_spec",
            FactoryError::EntryFull => "entry_full",
            FactoryError::UnknownPilot(_) => "unknown_pilot",
            FactoryError::Transition(_) => "illegal_transition",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PressureRequest {
    pub client_id: String,
    pub entry_id: String,
    pub requested: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    PressureRequest,
    StatusReport,
    CampaignNotice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MailboxMessage {
    pub msg_id: String,
    pub from: String,
    pub to: String,
    pub kind: MessageKind,
    pub body: String,
    pub posted_at: Timestamp,
}

/// Pilots created for one entry during a cycle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Submission {
    pub entry_id: String,
    pub count: u32,
    pub pilot_ids: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PilotFilter {
    pub entry_id: Option<String>,
    pub purpose: Option<Purpose>,
    pub states: Option<Vec<PilotState>>,
}

impl PilotFilter {
    fn matches(&self, p: &PilotRecord) -> bool {
        self.entry_id.as_ref().is_none_or(|e| *e == p.entry_id)
            && self.purpose.is_none_or(|x| x == p.purpose)
            && self.states.as_ref().is_none_or(|s| s.contains(&p.state))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StateCounts {
    pub queued: u32,
    pub running: u32,
}

pub struct Factory {
    config: FactoryConfig,
    specs: BTreeMap<String, BenchmarkSpec>,
    pressure: BTreeMap<(String, String), u32>,
    pilots: BTreeMap<String, PilotRecord>,
    // Entry parameters as they were when each pilot was submitted.
    pilot_entries: BTreeMap<String, EntryConfig>,
    in_flight: BTreeMap<String, u32>,
    benchmark_counts: StateCounts,
    next_pilot_seq: u64,
    mailbox: BTreeMap<String, VecDeque<MailboxMessage>>,
    next_msg_seq: u64,
}

impl Factory {
    pub fn new(config: FactoryConfig, specs: impl IntoIterator<Item = BenchmarkSpec>) -> Self {
        Factory {
            config,
            specs: specs.into_iter().map(|s| (s.spec_id.clone(), s)).collect(),
            pressure: BTreeMap::new(),
            pilots: BTreeMap::new(),
            pilot_entries: BTreeMap::new(),
            in_flight: BTreeMap::new(),
            benchmark_counts: StateCounts::default(),
            next_pilot_seq: 1,
            mailbox: BTreeMap::new(),
            next_msg_seq: 1,
        }
    }

    pub fn config(&self) -> &FactoryConfig {
        &self.config
    }

    pub fn version(&self) -> u32 {
        self.config.version
    }

    pub fn specs(&self) -> &BTreeMap<String, BenchmarkSpec> {
        &self.specs
    }

    pub fn spec(&self, spec_id: &str) -> Option<&BenchmarkSpec> {
        self.specs.get(spec_id)
    }

    /// Swaps in a new configuration. On any error the active one is kept.
    pub fn reconfig(&mut self, document: &str) -> Result<u32, ConfigError> {
        let next = parse_config(document, self.config.version + 1)?;
        self.config = next;
        Ok(self.config.version)
    }

    fn usable_entry(&self, entry_id: &str) -> Result<&EntryConfig, FactoryError> {
        let entry = self
            .config
            .entry(entry_id)
            .ok_or_else(|| FactoryError::UnknownEntry(entry_id.to_string()))?;
        if !entry.enabled {
            return Err(FactoryError::EntryDisabled(entry_id.to_string()));
        }
        Ok(entry)
    }

    pub fn set_pressure(&mut self, client_id: &str, entry_id: &str, requested: u32) -> Result<(), FactoryError> {
        self.usable_entry(entry_id)?;
        self.pressure
            .insert((entry_id.to_string(), client_id.to_string()), requested);
        Ok(())
    }

    pub fn pressure_requests(&self) -> Vec<PressureRequest> {
        self.pressure
            .iter()
            .map(|((entry_id, client_id), &requested)| PressureRequest {
                client_id: client_id.clone(),
                entry_id: entry_id.clone(),
                requested,
            })
            .collect()
    }

    /// Sum of live requests on `entry_id` over all clients.
    pub fn requested(&self, entry_id: &str) -> u32 {
        self.pressure
            .range((entry_id.to_string(), String::new())..)
            .take_while(|((e, _), _)| e == entry_id)
            .map(|(_, &n)| n)
            .sum()
    }

    /// Queued plus running pilots on `entry_id`.
    pub fn in_flight(&self, entry_id: &str) -> u32 {
        self.in_flight.get(entry_id).copied().unwrap_or(0)
    }

    /// Live benchmark pilots, across entries.
    pub fn benchmark_counts(&self) -> StateCounts {
        self.benchmark_counts
    }

    fn create_pilot(
        &mut self,
        entry: EntryConfig,
        purpose: Purpose,
        spec_id: Option<String>,
        now: Timestamp,
    ) -> String {
        let pilot_id = format_pilot_id(self.next_pilot_seq);
        self.next_pilot_seq += 1;
        let mut record = PilotRecord::new(pilot_id.clone(), entry.entry_id.clone(), purpose, spec_id, now);
        record
            .transition(PilotState::Queued, now)
            .expect("SUBMITTED -> QUEUED is always legal");
        *self.in_flight.entry(entry.entry_id.clone()).or_default() += 1;
        if purpose == Purpose::Benchmark {
            self.benchmark_counts.queued += 1;
        }
        self.pilot_entries.insert(pilot_id.clone(), entry);
        self.pilots.insert(pilot_id.clone(), record);
        pilot_id
    }

    /// Applies pressure requests waiting in the factory's mailbox. Bad
    /// requests are answered with a status report to the sender.
    fn apply_mailbox_requests(&mut self, now: Timestamp) {
        for msg in self.mailbox_fetch(FACTORY_ADDRESS) {
            if msg.kind != MessageKind::PressureRequest {
                continue;
            }
            #[derive(Deserialize)]
            struct Body {
                entry_id: String,
                requested: u32,
            }
            let outcome = serde_json::from_str::<Body>(&msg.body)
                .map_err(|e| e.to_string())
                .and_then(|b| {
                    self.set_pressure(&msg.from, &b.entry_id, b.requested)
                        .map_err(|e| e.to_string())
                });
            if let Err(err) = outcome {
                let body = serde_json::json!({ "msg_id": msg.msg_id, "error": err }).to_string();
                self.mailbox_post(FACTORY_ADDRESS, &msg.from, MessageKind::StatusReport, body, now);
            }
        }
    }

    /// One submission cycle: fill each enabled entry's pressure deficit.
    pub fn cycle(&mut self, now: Timestamp) -> Vec<Submission> {
        self.apply_mailbox_requests(now);
        let mut budget = self.config.max_submit_per_cycle;
        let mut out = Vec::new();
        let entries: Vec<EntryConfig> = self.config.entries.iter().filter(|e| e.enabled).cloned().collect();
        for entry in entries {
            if budget == 0 {
                break;
            }
            let in_flight = self.in_flight(&entry.entry_id);
            let deficit = self.requested(&entry.entry_id).saturating_sub(in_flight);
            let room = entry.max_pilots.saturating_sub(in_flight);
            let count = deficit.min(room).min(budget);
            if count == 0 {
                continue;
            }
            budget -= count;
            let pilot_ids = (0..count)
                .map(|_| self.create_pilot(entry.clone(), Purpose::User, None, now))
                .collect();
            out.push(Submission {
                entry_id: entry.entry_id.clone(),
                count,
                pilot_ids,
            });
        }
        out
    }

    /// Submits one ad-hoc pilot outside the pressure loop.
    pub fn submit_single(
        &mut self,
        entry_id: &str,
        purpose: Purpose,
        spec_id: Option<&str>,
        now: Timestamp,
    ) -> Result<String, FactoryError> {
        let entry = self.usable_entry(entry_id)?.clone();
        let spec_id = match purpose {
            Purpose::Benchmark => {
                if !self.config.benchmarks_enabled {
                    return Err(FactoryError::BenchmarksDisabled);
                }
                let id = spec_id.ok_or(FactoryError::MissingSpec)?;
                if !self.specs.contains_key(id) {
                    return Err(FactoryError::UnknownSpec(id.to_string()));
                }
                Some(id.to_string())
            }
            Purpose::User => None,
        };
        if self.in_flight(entry_id) >= entry.max_pilots {
            return Err(FactoryError::EntryFull);
        }
        Ok(self.create_pilot(entry, purpose, spec_id, now))
    }

    pub fn pilot(&self, pilot_id: &str) -> Option<&PilotRecord> {
        self.pilots.get(pilot_id)
    }

    /// Entry parameters captured when the pilot was submitted.
    pub fn pilot_entry(&self, pilot_id: &str) -> Option<&EntryConfig> {
        self.pilot_entries.get(pilot_id)
    }

    pub fn query_pilots(&self, filter: &PilotFilter) -> Vec<PilotRecord> {
        self.pilots.values().filter(|p| filter.matches(p)).cloned().collect()
    }

    pub fn pilots(&self) -> impl Iterator<Item = &PilotRecord> {
        self.pilots.values()
    }

    fn transition(
        &mut self,
        pilot_id: &str,
        next: PilotState,
        now: Timestamp,
    ) -> Result<&mut PilotRecord, FactoryError> {
        let p = self
            .pilots
            .get_mut(pilot_id)
            .ok_or_else(|| FactoryError::UnknownPilot(pilot_id.to_string()))?;
        let prev = p.state;
        p.transition(next, now)?;
        if p.purpose == Purpose::Benchmark {
            let c = &mut self.benchmark_counts;
            match prev {
                PilotState::Queued | PilotState::Submitted => c.queued -= 1,
                PilotState::Running => c.running -= 1,
                _ => {}
            }
            if next == PilotState::Running {
                c.running += 1;
            }
        }
        if next.is_terminal() {
            if let Some(n) = self.in_flight.get_mut(&p.entry_id) {
                *n -= 1;
            }
        }
        Ok(p)
    }

    pub fn mark_running(&mut self, pilot_id: &str, now: Timestamp) -> Result<(), FactoryError> {
        self.transition(pilot_id, PilotState::Running, now).map(|_| ())
    }

    pub fn mark_finished(
        &mut self,
        pilot_id: &str,
        state: PilotState,
        now: Timestamp,
        stderr_lines: Vec<String>,
    ) -> Result<(), FactoryError> {
        let p = self.transition(pilot_id, state, now)?;
        p.stderr_lines = stderr_lines;
        Ok(())
    }

    pub fn mailbox_post(&mut self, from: &str, to: &str, kind: MessageKind, body: String, now: Timestamp) -> String {
        let msg_id = format!("m-{:08}", self.next_msg_seq);
        self.next_msg_seq += 1;
        self.mailbox
            .entry(to.to_string())
            .or_default()
            .push_back(MailboxMessage {
                msg_id: msg_id.clone(),
                from: from.to_string(),
                to: to.to_string(),
                kind,
                body,
                posted_at: now,
            });
        msg_id
    }

    /// Drains `recipient`'s queue in posted order.
    pub fn mailbox_fetch(&mut self, recipient: &str) -> Vec<MailboxMessage> {
        self.mailbox
            .get_mut(recipient)
            .map(|q| q.drain(..).collect())
            .unwrap_or_default()
    }
}
