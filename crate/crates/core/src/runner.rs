//! Benchmark campaign control: cadence, sampling, factory reconfiguration,
//! throttled submission of benchmark pilots, and campaign bookkeeping.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::domain::{hardware_fingerprint, EntryConfig, PilotState, Purpose, Timestamp};
use crate::factory::{ConfigError, Factory, FactoryError};

pub const DEFAULT_MIN_INTERVAL_S: f64 = 86_400.0;
pub const DEFAULT_MAX_CONCURRENT: u32 = 200;
pub const DEFAULT_WAKE_PERIOD_S: f64 = 300.0;

/// Last benchmark pilot start per (entry_id, spec_id).
pub type StartHistory = BTreeMap<(String, String), Timestamp>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    AllDue,
    RepresentativePerClass,
    NewOnly,
}

impl std::str::FromStr for SamplingMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("unknown mode {s:?}"))
    }
}

fn default_min_interval() -> f64 {
    DEFAULT_MIN_INTERVAL_S
}

fn default_max_concurrent() -> u32 {
    DEFAULT_MAX_CONCURRENT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunnerPolicy {
    #[serde(default = "default_min_interval")]
    pub min_interval_s: f64,
    pub mode: SamplingMode,
    pub spec_id: String,
    #[serde(default = "default_max_concurrent")]
    pub max_concurrent_benchmarks: u32,
}

impl RunnerPolicy {
    pub fn new(spec_id: &str, mode: SamplingMode) -> Self {
        RunnerPolicy {
            min_interval_s: DEFAULT_MIN_INTERVAL_S,
            mode,
            spec_id: spec_id.to_string(),
            max_concurrent_benchmarks: DEFAULT_MAX_CONCURRENT,
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.min_interval_s > 0.0 && self.min_interval_s.is_finite()) {
            out.push("min_interval_s must be > 0".to_string());
        }
        if self.max_concurrent_benchmarks < 1 {
            out.push("max_concurrent_benchmarks must be >= 1".to_string());
        }
        out
    }
}

fn last_start<'a>(history: &'a StartHistory, entry_id: &str, spec_id: &str) -> Option<&'a Timestamp> {
    history.get(&(entry_id.to_string(), spec_id.to_string()))
}

/// Enabled entries that were never benchmarked with the policy's spec, or
/// whose last benchmark started at least `min_interval_s` ago. Sorted.
pub fn due_entries(
    entries: &[EntryConfig],
    history: &StartHistory,
    now: Timestamp,
    policy: &RunnerPolicy,
) -> Vec<String> {
    let mut due: Vec<String> = entries
        .iter()
        .filter(|e| e.enabled)
        .filter(|e| match last_start(history, &e.entry_id, &policy.spec_id) {
            None => true,
            Some(&t) => now - t >= policy.min_interval_s,
        })
        .map(|e| e.entry_id.clone())
        .collect();
    due.sort();
    due
}

/// Applies the policy's sampling mode to the due list. `classes` maps
/// entry_id to hardware class; missing entries form their own class.
pub fn sample_representatives(
    due: &[String],
    classes: &BTreeMap<String, String>,
    history: &StartHistory,
    policy: &RunnerPolicy,
) -> Vec<String> {
    let never = |e: &String| last_start(history, e, &policy.spec_id).is_none();
    let mut selected: Vec<String> = match policy.mode {
        SamplingMode::AllDue => due.to_vec(),
        SamplingMode::NewOnly => due.iter().filter(|e| never(e)).cloned().collect(),
        SamplingMode::RepresentativePerClass => {
            let mut by_class: BTreeMap<&str, Vec<&String>> = BTreeMap::new();
            for e in due {
                let class = classes.get(e).map(String::as_str).unwrap_or(e.as_str());
                by_class.entry(class).or_default().push(e);
            }
            let mut picked = BTreeSet::new();
            for members in by_class.values() {
                // Oldest start wins; never-benchmarked counts as infinitely old.
                let rep = members
                    .iter()
                    .min_by(|a, b| {
                        let ta = last_start(history, a, &policy.spec_id)
                            .copied()
                            .unwrap_or(f64::NEG_INFINITY);
                        let tb = last_start(history, b, &policy.spec_id)
                            .copied()
                            .unwrap_or(f64::NEG_INFINITY);
                        ta.total_cmp(&tb).then_with(|| a.cmp(b))
                    })
                    .expect("class is non-empty");
                picked.insert((*rep).clone());
                picked.extend(members.iter().filter(|e| never(e)).map(|e| (*e).clone()));
            }
            picked.into_iter().collect()
        }
    };
    selected.sort();
    selected
}

/// Hardware class per entry, from the configured CPU model strings.
pub fn hardware_classes(entries: &[EntryConfig]) -> BTreeMap<String, String> {
    entries
        .iter()
        .map(|e| (e.entry_id.clone(), hardware_fingerprint(&e.cpu_model)))
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct TerminalCounts {
    pub completed: u32,
    pub failed: u32,
    pub timed_out: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CampaignRecord {
    pub campaign_id: String,
    pub created_at: Timestamp,
    pub policy: RunnerPolicy,
    pub selected: Vec<String>,
    pub pilot_map: BTreeMap<String, String>,
    pub terminal_counts: TerminalCounts,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CampaignStatus {
    pub queued: u32,
    pub running: u32,
    pub completed: u32,
    pub failed: u32,
    pub timed_out: u32,
    pub pending_submit: u32,
}

impl CampaignStatus {
    pub fn total(&self) -> u32 {
        self.queued + self.running + self.completed + self.failed + self.timed_out + self.pending_submit
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RunnerError {
    #[error("campaign needs at least one selected entry")]
    EmptySelection,
    #[error("duplicate entry {0} in selection")]
    DuplicateEntry(String),
    #[error("unknown spec {0}")]
    UnknownSpec(String),
    #[error("reconfiguration failed: {0}")]
    Reconfig(#[from] ConfigError),
    #[error("campaign {0} not found")]
    UnknownCampaign(String),
}

struct Campaign {
    record: CampaignRecord,
    pending: VecDeque<String>,
    // Entries whose submission was refused for good, with the reason.
    rejected: BTreeMap<String, String>,
}

/// What a launch or drain submitted, so the caller can schedule starts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Submitted {
    pub pilot_ids: Vec<String>,
    pub reconfigured_to: Option<u32>,
}

#[derive(Default)]
pub struct Runner {
    campaigns: BTreeMap<String, Campaign>,
    pilot_campaign: BTreeMap<String, String>,
    next_seq: u64,
}

impl Runner {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn campaign(&self, campaign_id: &str) -> Option<&CampaignRecord> {
        self.campaigns.get(campaign_id).map(|c| &c.record)
    }

    pub fn campaigns(&self) -> impl Iterator<Item = &CampaignRecord> {
        self.campaigns.values().map(|c| &c.record)
    }

    /// Entries with a benchmark for `spec_id` still pending or in flight in
    /// some campaign. They are not eligible for a new campaign on that spec.
    pub fn busy_entries(&self, factory: &Factory, spec_id: &str) -> BTreeSet<String> {
        let mut busy = BTreeSet::new();
        for c in self.campaigns.values().filter(|c| c.record.policy.spec_id == spec_id) {
            busy.extend(c.pending.iter().cloned());
            for (entry, pilot) in &c.record.pilot_map {
                if factory.pilot(pilot).is_some_and(|p| p.state.is_in_flight()) {
                    busy.insert(entry.clone());
                }
            }
        }
        busy
    }

    /// Picks the entries a campaign under `policy` would target now.
    pub fn select(
        &self,
        factory: &Factory,
        history: &StartHistory,
        now: Timestamp,
        policy: &RunnerPolicy,
    ) -> Vec<String> {
        let busy = self.busy_entries(factory, &policy.spec_id);
        let entries: Vec<EntryConfig> = factory
            .config()
            .entries
            .iter()
            .filter(|e| !busy.contains(&e.entry_id))
            .cloned()
            .collect();
        let due = due_entries(&entries, history, now, policy);
        sample_representatives(&due, &hardware_classes(&entries), history, policy)
    }

    /// Starts a campaign: enables benchmarks if needed (one reconfig), then
    /// submits as many pilots as the concurrency cap allows. The rest stay
    /// pending for [`Runner::drain`].
    pub fn launch_campaign(
        &mut self,
        factory: &mut Factory,
        selected: Vec<String>,
        policy: RunnerPolicy,
        now: Timestamp,
    ) -> Result<(String, Submitted), RunnerError> {
        if selected.is_empty() {
            return Err(RunnerError::EmptySelection);
        }
        let mut seen = BTreeSet::new();
        if let Some(dup) = selected.iter().find(|e| !seen.insert(e.as_str())) {
            return Err(RunnerError::DuplicateEntry(dup.clone()));
        }
        if factory.spec(&policy.spec_id).is_none() {
            return Err(RunnerError::UnknownSpec(policy.spec_id.clone()));
        }
        let mut submitted = Submitted::default();
        if !factory.config().benchmarks_enabled {
            let mut input = factory.config().to_input();
            input.benchmarks_enabled = true;
            let doc = serde_json::to_string(&input).expect("config serializes");
            submitted.reconfigured_to = Some(factory.reconfig(&doc)?);
        }
        self.next_seq += 1;
        let campaign_id = format!("c-{:06}", self.next_seq);
        self.campaigns.insert(
            campaign_id.clone(),
            Campaign {
                record: CampaignRecord {
                    campaign_id: campaign_id.clone(),
                    created_at: now,
                    policy,
                    selected: selected.clone(),
                    pilot_map: BTreeMap::new(),
                    terminal_counts: TerminalCounts::default(),
                },
                pending: selected.into(),
                rejected: BTreeMap::new(),
            },
        );
        submitted.pilot_ids = self.drain_one(&campaign_id, factory, now);
        Ok((campaign_id, submitted))
    }

    fn drain_one(&mut self, campaign_id: &str, factory: &mut Factory, now: Timestamp) -> Vec<String> {
        let Some(c) = self.campaigns.get_mut(campaign_id) else {
            return Vec::new();
        };
        let cap = c.record.policy.max_concurrent_benchmarks;
        let mut new_ids = Vec::new();
        let mut retry = VecDeque::new();
        while let Some(entry) = c.pending.pop_front() {
            let live = factory.benchmark_counts();
            if live.queued + live.running >= cap {
                retry.push_back(entry);
                break;
            }
            match factory.submit_single(&entry, Purpose::Benchmark, Some(&c.record.policy.spec_id), now) {
                Ok(pilot_id) => {
                    c.record.pilot_map.insert(entry, pilot_id.clone());
                    self.pilot_campaign.insert(pilot_id.clone(), campaign_id.to_string());
                    new_ids.push(pilot_id);
                }
                Err(FactoryError::EntryFull | FactoryError::BenchmarksDisabled) => retry.push_back(entry),
                Err(e) => {
                    c.rejected.insert(entry, e.code().to_string());
                }
            }
        }
        retry.extend(c.pending.drain(..));
        c.pending = retry;
        new_ids
    }

    /// Retries pending submissions of every campaign, oldest campaign first.
    pub fn drain(&mut self, factory: &mut Factory, now: Timestamp) -> Vec<String> {
        let ids: Vec<String> = self
            .campaigns
            .iter()
            .filter(|(_, c)| !c.pending.is_empty())
            .map(|(id, _)| id.clone())
            .collect();
        ids.iter().flat_map(|id| self.drain_one(id, factory, now)).collect()
    }

    pub fn has_pending(&self) -> bool {
        self.campaigns.values().any(|c| !c.pending.is_empty())
    }

    /// Records a benchmark pilot reaching a terminal state.
    pub fn on_pilot_terminal(&mut self, pilot_id: &str, state: PilotState) {
        let Some(cid) = self.pilot_campaign.get(pilot_id) else {
            return;
        };
        if let Some(c) = self.campaigns.get_mut(cid) {
            let t = &mut c.record.terminal_counts;
            match state {
                PilotState::Completed => t.completed += 1,
                PilotState::Failed => t.failed += 1,
                PilotState::TimedOut => t.timed_out += 1,
                _ => {}
            }
        }
    }

    pub fn campaign_status(&self, campaign_id: &str, factory: &Factory) -> Result<CampaignStatus, RunnerError> {
        let c = self
            .campaigns
            .get(campaign_id)
            .ok_or_else(|| RunnerError::UnknownCampaign(campaign_id.to_string()))?;
        let mut s = CampaignStatus::default();
        for entry in &c.record.selected {
            if let Some(pid) = c.record.pilot_map.get(entry) {
                match factory.pilot(pid).map(|p| p.state) {
                    Some(PilotState::Submitted | PilotState::Queued) => s.queued += 1,
                    Some(PilotState::Running) => s.running += 1,
                    Some(PilotState::Completed) => s.completed += 1,
                    Some(PilotState::Failed) | None => s.failed += 1,
                    Some(PilotState::TimedOut) => s.timed_out += 1,
                }
            } else if c.rejected.contains_key(entry) {
                s.failed += 1;
            } else {
                s.pending_submit += 1;
            }
        }
        Ok(s)
    }
}
