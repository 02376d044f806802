//! Scenario documents: the factory configuration, the hidden fabric ground
//! truth, benchmark specs, the runner policy, and optional schedules of
//! campaign triggers and pressure changes.
//!
//! ```json
//! {
//!   "seed": 42,
//!   "entries": [{ "entry_id": "e1", "site_name": "s", "cpu_model": "AMD EPYC 7763",
//!                 "price_per_hour": 1.0, "max_pilots": 10,
//!                 "true_perf": 50.0, "perf_noise_cv": 0.0,
//!                 "queue_delay_median_s": 300.0, "queue_delay_sigma": 0.5,
//!                 "failure_prob": 0.0 }],
//!   "specs": [{ "spec_id": "s1", "name": "kernel", "image_ref": "bench.sif",
//!               "work_units": 1000, "timeout_s": 600 }],
//!   "policies": { "mode": "all_due", "spec_id": "s1" },
//!   "campaigns": [{ "at_s": 0 }]
//! }
//! ```
//!
//! Unknown keys anywhere are rejected.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::collector::AggregationParams;
use crate::decision::DEFAULT_TTL_S;
use crate::domain::{validate_entry_config, BenchmarkSpec, EntryConfig, Timestamp};
use crate::fabricsim::FabricProfile;
use crate::factory::{FactoryConfigInput, DEFAULT_CYCLE_PERIOD_S, DEFAULT_MAX_SUBMIT_PER_CYCLE};
use crate::pilot::NodeDescriptor;
use crate::runner::{RunnerPolicy, SamplingMode, DEFAULT_WAKE_PERIOD_S};

fn yes() -> bool {
    true
}

fn default_user_runtime() -> f64 {
    3600.0
}

/// An entry as the factory sees it plus the fabric's hidden parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioEntry {
    pub entry_id: String,
    #[serde(default)]
    pub site_name: String,
    #[serde(default)]
    pub cpu_model: String,
    pub price_per_hour: f64,
    pub max_pilots: u32,
    #[serde(default = "yes")]
    pub supports_containers: bool,
    #[serde(default = "yes")]
    pub enabled: bool,
    pub true_perf: f64,
    #[serde(default)]
    pub perf_noise_cv: f64,
    #[serde(default)]
    pub queue_delay_median_s: f64,
    #[serde(default)]
    pub queue_delay_sigma: f64,
    #[serde(default)]
    pub failure_prob: f64,
    /// How long a user pilot holds its slot once running.
    #[serde(default = "default_user_runtime")]
    pub user_runtime_s: f64,
    /// Node descriptor exposed to pilots. Absent fields fall back to
    /// detection defaults; an absent descriptor reports `cpu_model` only.
    #[serde(default)]
    pub node: Option<NodeDescriptor>,
}

impl ScenarioEntry {
    pub fn config(&self) -> EntryConfig {
        EntryConfig {
            entry_id: self.entry_id.clone(),
            site_name: self.site_name.clone(),
            cpu_model: self.cpu_model.clone(),
            price_per_hour: self.price_per_hour,
            max_pilots: self.max_pilots,
            supports_containers: self.supports_containers,
            enabled: self.enabled,
        }
    }

    pub fn profile(&self) -> FabricProfile {
        FabricProfile {
            entry_id: self.entry_id.clone(),
            true_perf: self.true_perf,
            perf_noise_cv: self.perf_noise_cv,
            queue_delay_median_s: self.queue_delay_median_s,
            queue_delay_sigma: self.queue_delay_sigma,
            failure_prob: self.failure_prob,
        }
    }

    pub fn node_descriptor(&self) -> NodeDescriptor {
        self.node.clone().unwrap_or_else(|| NodeDescriptor {
            cpu_model: Some(self.cpu_model.clone()),
            ..NodeDescriptor::default()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorySettings {
    #[serde(default)]
    pub benchmarks_enabled: bool,
    #[serde(default = "FactorySettings::default_cycle")]
    pub cycle_period_s: f64,
    #[serde(default = "FactorySettings::default_budget")]
    pub max_submit_per_cycle: u32,
}

impl FactorySettings {
    fn default_cycle() -> f64 {
        DEFAULT_CYCLE_PERIOD_S
    }
    fn default_budget() -> u32 {
        DEFAULT_MAX_SUBMIT_PER_CYCLE
    }
}

impl Default for FactorySettings {
    fn default() -> Self {
        FactorySettings {
            benchmarks_enabled: false,
            cycle_period_s: DEFAULT_CYCLE_PERIOD_S,
            max_submit_per_cycle: DEFAULT_MAX_SUBMIT_PER_CYCLE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregationSettings {
    #[serde(default = "AggregationSettings::default_k")]
    pub k: usize,
    #[serde(default = "AggregationSettings::default_half_life")]
    pub half_life_s: f64,
    #[serde(default = "AggregationSettings::default_ttl")]
    pub ttl_s: f64,
}

impl AggregationSettings {
    fn default_k() -> usize {
        AggregationParams::default().k
    }
    fn default_half_life() -> f64 {
        AggregationParams::default().half_life_s
    }
    fn default_ttl() -> f64 {
        DEFAULT_TTL_S
    }

    pub fn params(&self) -> AggregationParams {
        AggregationParams {
            k: self.k,
            half_life_s: self.half_life_s,
        }
    }
}

impl Default for AggregationSettings {
    fn default() -> Self {
        AggregationSettings {
            k: Self::default_k(),
            half_life_s: Self::default_half_life(),
            ttl_s: Self::default_ttl(),
        }
    }
}

/// Campaign request fired on the first runner wake at or after `at_s`.
/// Unset fields inherit from the scenario policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignTrigger {
    pub at_s: Timestamp,
    #[serde(default)]
    pub mode: Option<SamplingMode>,
    #[serde(default)]
    pub spec_id: Option<String>,
    #[serde(default)]
    pub min_interval_s: Option<f64>,
}

/// Pressure request applied at the first factory cycle at or after `at_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PressureChange {
    pub at_s: Timestamp,
    pub client_id: String,
    pub entry_id: String,
    pub requested: u32,
}

fn default_wake() -> f64 {
    DEFAULT_WAKE_PERIOD_S
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub entries: Vec<ScenarioEntry>,
    pub specs: Vec<BenchmarkSpec>,
    pub policies: RunnerPolicy,
    #[serde(default)]
    pub factory: FactorySettings,
    #[serde(default)]
    pub aggregation: AggregationSettings,
    #[serde(default = "default_wake")]
    pub runner_wake_s: f64,
    #[serde(default)]
    pub campaigns: Vec<CampaignTrigger>,
    #[serde(default)]
    pub pressure: Vec<PressureChange>,
    /// Throughput demand (work units/s, policy spec) planned in summaries.
    #[serde(default)]
    pub demand: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("invalid scenario: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario, ScenarioError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        let v = s.violations();
        if v.is_empty() {
            Ok(s)
        } else {
            Err(ScenarioError::Invalid(v))
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut ids = BTreeSet::new();
        for e in &self.entries {
            out.extend(validate_entry_config(&e.config()));
            out.extend(e.profile().violations());
            if !ids.insert(e.entry_id.as_str()) {
                out.push(format!("duplicate entry_id {}", e.entry_id));
            }
            if !(e.user_runtime_s > 0.0 && e.user_runtime_s.is_finite()) {
                out.push(format!("{}: user_runtime_s must be > 0", e.entry_id));
            }
        }
        let mut spec_ids = BTreeSet::new();
        for s in &self.specs {
            out.extend(s.violations());
            if !spec_ids.insert(s.spec_id.as_str()) {
                out.push(format!("duplicate spec_id {}", s.spec_id));
            }
        }
        out.extend(self.policies.violations());
        if !spec_ids.contains(self.policies.spec_id.as_str()) {
            out.push(format!(
                "policies.spec_id {} is not a known spec",
                self.policies.spec_id
            ));
        }
        for t in &self.campaigns {
            if let Some(s) = &t.spec_id {
                if !spec_ids.contains(s.as_str()) {
                    out.push(format!("campaign at {}: unknown spec {s}", t.at_s));
                }
            }
        }
        for p in &self.pressure {
            if !ids.contains(p.entry_id.as_str()) {
                out.push(format!("pressure at {}: unknown entry {}", p.at_s, p.entry_id));
            }
        }
        if !(self.factory.cycle_period_s > 0.0) {
            out.push("factory.cycle_period_s must be > 0".to_string());
        }
        if self.factory.max_submit_per_cycle < 1 {
            out.push("factory.max_submit_per_cycle must be >= 1".to_string());
        }
        if !(self.runner_wake_s > 0.0) {
            out.push("runner_wake_s must be > 0".to_string());
        }
        if self.aggregation.k < 1 || !(self.aggregation.half_life_s > 0.0) || !(self.aggregation.ttl_s > 0.0) {
            out.push("aggregation: k >= 1, half_life_s > 0 and ttl_s > 0 required".to_string());
        }
        if let Some(d) = self.demand {
            if !(d > 0.0 && d.is_finite()) {
                out.push("demand must be > 0".to_string());
            }
        }
        out
    }

    pub fn factory_input(&self) -> FactoryConfigInput {
        FactoryConfigInput::new(
            self.entries.iter().map(ScenarioEntry::config).collect(),
            self.factory.benchmarks_enabled,
            self.factory.cycle_period_s,
            self.factory.max_submit_per_cycle,
        )
    }
}
