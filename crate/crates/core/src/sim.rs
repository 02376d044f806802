//! The event loop that drives factory, pilots, runner and collector over
//! the simulated fabric on one timeline.

use std::collections::{BTreeMap, VecDeque};

use serde::Serialize;
use serde_json::json;

use crate::collector::{parse_stream, EntryScore, IngestOutcome, ResultStore};
use crate::decision::{
    cost_gap, eligible_candidates, oracle_search_size, plan_greedy, plan_oracle, ProvisionPlan, ORACLE_SEARCH_LIMIT,
};
use crate::domain::{PilotState, Purpose, Timestamp};
use crate::fabricsim::{sample_queue_delay, EventKind, EventQueue, PilotStreams, RngStream, SimEvent};
use crate::factory::{ConfigError, Factory, FactoryConfig, FactoryError, StateCounts};
use crate::pilot::{self, PilotContext, PilotRun};
use crate::runner::{CampaignRecord, CampaignStatus, Runner, RunnerError, RunnerPolicy, SamplingMode, StartHistory};
use crate::scenario::{AggregationSettings, CampaignTrigger, PressureChange, Scenario, ScenarioEntry};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("unknown spec {0}")]
    UnknownSpec(String),
    #[error("no entries are due for benchmarking")]
    NothingDue,
    #[error(transparent)]
    Runner(#[from] RunnerError),
    #[error(transparent)]
    Factory(#[from] FactoryError),
}

/// Invariant audit taken right after each factory cycle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleAudit {
    pub time: Timestamp,
    pub submitted: u32,
    pub budget: u32,
    /// Entries whose queued+running exceeds max_pilots after the cycle.
    pub over_cap: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimStatus {
    pub benchmark_pilots: StateCounts,
    pub factory_version: u32,
    pub sim_time: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanReport {
    pub demand: f64,
    pub spec_id: String,
    #[serde(flatten)]
    pub plan: ProvisionPlan,
    pub unknown: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CampaignSummary {
    pub campaign_id: String,
    pub created_at: Timestamp,
    pub spec_id: String,
    pub mode: SamplingMode,
    pub selected: usize,
    pub status: CampaignStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryPlan {
    pub demand: f64,
    pub spec_id: String,
    pub greedy: ProvisionPlan,
    pub oracle: Option<ProvisionPlan>,
    pub gap: Option<f64>,
    pub unknown: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub sim_time: Timestamp,
    pub factory_version: u32,
    pub results: usize,
    pub benchmark_pilots: BTreeMap<String, u32>,
    pub campaigns: Vec<CampaignSummary>,
    pub scores: Vec<EntryScore>,
    pub plan: Option<SummaryPlan>,
}

struct FabricEntry {
    profile: crate::fabricsim::FabricProfile,
    node: crate::pilot::NodeDescriptor,
    user_runtime_s: f64,
}

pub struct Simulation {
    seed: u64,
    queue: EventQueue,
    factory: Factory,
    runner: Runner,
    store: ResultStore,
    fabric: BTreeMap<String, FabricEntry>,
    delay_streams: BTreeMap<String, RngStream>,
    history: StartHistory,
    policy: RunnerPolicy,
    aggregation: AggregationSettings,
    wake_period_s: f64,
    triggers: VecDeque<CampaignTrigger>,
    pressure: VecDeque<PressureChange>,
    demand: Option<f64>,
    in_progress: BTreeMap<String, PilotRun>,
    trace: Option<Vec<String>>,
    audits: Vec<CycleAudit>,
    ingest_rejections: u64,
}

impl Simulation {
    pub fn new(scenario: &Scenario) -> Result<Simulation, ConfigError> {
        let doc = serde_json::to_string(&scenario.factory_input()).expect("config serializes");
        let config = crate::factory::load_config(&doc)?;
        let factory = Factory::new(config, scenario.specs.iter().cloned());
        let fabric = scenario
            .entries
            .iter()
            .map(|e: &ScenarioEntry| {
                (
                    e.entry_id.clone(),
                    FabricEntry {
                        profile: e.profile(),
                        node: e.node_descriptor(),
                        user_runtime_s: e.user_runtime_s,
                    },
                )
            })
            .collect();
        let mut triggers = scenario.campaigns.clone();
        triggers.sort_by(|a, b| a.at_s.total_cmp(&b.at_s));
        let mut pressure = scenario.pressure.clone();
        pressure.sort_by(|a, b| a.at_s.total_cmp(&b.at_s));
        let mut queue = EventQueue::new();
        queue.schedule(0.0, EventKind::FactoryCycle);
        queue.schedule(0.0, EventKind::RunnerWake);
        Ok(Simulation {
            seed: scenario.seed,
            queue,
            factory,
            runner: Runner::new(),
            store: ResultStore::with_timeouts(scenario.specs.iter().map(|s| (s.spec_id.clone(), s.timeout_s))),
            fabric,
            delay_streams: BTreeMap::new(),
            history: StartHistory::new(),
            policy: scenario.policies.clone(),
            aggregation: scenario.aggregation.clone(),
            wake_period_s: scenario.runner_wake_s,
            triggers: triggers.into(),
            pressure: pressure.into(),
            demand: scenario.demand,
            in_progress: BTreeMap::new(),
            trace: Some(Vec::new()),
            audits: Vec::new(),
            ingest_rejections: 0,
        })
    }

    /// Stops recording the event trace (long-running services).
    pub fn disable_trace(&mut self) {
        self.trace = None;
    }

    pub fn now(&self) -> Timestamp {
        self.queue.now()
    }

    pub fn factory(&self) -> &Factory {
        &self.factory
    }

    pub fn factory_mut(&mut self) -> &mut Factory {
        &mut self.factory
    }

    pub fn runner(&self) -> &Runner {
        &self.runner
    }

    pub fn store(&self) -> &ResultStore {
        &self.store
    }

    pub fn policy(&self) -> &RunnerPolicy {
        &self.policy
    }

    pub fn history(&self) -> &StartHistory {
        &self.history
    }

    pub fn audits(&self) -> &[CycleAudit] {
        &self.audits
    }

    pub fn ingest_rejections(&self) -> u64 {
        self.ingest_rejections
    }

    pub fn trace_lines(&self) -> &[String] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn reconfig(&mut self, document: &str) -> Result<u32, ConfigError> {
        self.factory.reconfig(document)
    }

    pub fn config(&self) -> &FactoryConfig {
        self.factory.config()
    }

    pub fn status(&self) -> SimStatus {
        SimStatus {
            benchmark_pilots: self.factory.benchmark_counts(),
            factory_version: self.factory.version(),
            sim_time: self.now(),
        }
    }

    fn record(&mut self, value: serde_json::Value) {
        if let Some(trace) = &mut self.trace {
            trace.push(value.to_string());
        }
    }

    /// Processes every event up to and including `until`, then parks the
    /// clock at `until`.
    pub fn run_until(&mut self, until: Timestamp) {
        while self.queue.peek_time().is_some_and(|t| t <= until) {
            let ev = self.queue.advance().expect("peeked");
            self.handle(ev);
        }
        self.queue.set_clock(until);
    }

    pub fn advance_by(&mut self, seconds: f64) {
        let target = self.now() + seconds.max(0.0);
        self.run_until(target);
    }

    fn handle(&mut self, ev: SimEvent) {
        let now = ev.time;
        if self.trace.is_some() {
            let v = serde_json::to_value(&ev).expect("event serializes");
            self.record(v);
        }
        match ev.kind {
            EventKind::FactoryCycle => self.on_cycle(now),
            EventKind::RunnerWake => self.on_wake(now),
            EventKind::PilotStart { pilot_id } => self.on_start(&pilot_id, now),
            EventKind::PilotFinish { pilot_id } => self.on_finish(&pilot_id, now),
        }
    }

    fn on_cycle(&mut self, now: Timestamp) {
        while self.pressure.front().is_some_and(|p| p.at_s <= now) {
            let p = self.pressure.pop_front().expect("front exists");
            if let Err(e) = self.factory.set_pressure(&p.client_id, &p.entry_id, p.requested) {
                self.record(
                    json!({"time": now, "kind": "PRESSURE_REJECTED", "entry_id": p.entry_id, "error": e.to_string()}),
                );
            }
        }
        let subs = self.factory.cycle(now);
        let mut submitted = 0;
        for s in &subs {
            submitted += s.count;
            for id in &s.pilot_ids {
                self.schedule_start(id, now);
            }
        }
        let cfg = self.factory.config();
        let over_cap = cfg
            .entries
            .iter()
            .filter(|e| self.factory.in_flight(&e.entry_id) > e.max_pilots)
            .count() as u32;
        self.audits.push(CycleAudit {
            time: now,
            submitted,
            budget: cfg.max_submit_per_cycle,
            over_cap,
        });
        let next = now + cfg.cycle_period_s;
        self.queue.schedule(next, EventKind::FactoryCycle);
    }

    fn on_wake(&mut self, now: Timestamp) {
        while self.triggers.front().is_some_and(|t| t.at_s <= now) {
            let t = self.triggers.pop_front().expect("front exists");
            let spec = t.spec_id.clone().unwrap_or_else(|| self.policy.spec_id.clone());
            let mode = t.mode.unwrap_or(self.policy.mode);
            match self.trigger_campaign(&spec, mode, t.min_interval_s) {
                Ok(record) => {
                    let (id, n) = (record.campaign_id.clone(), record.selected.len());
                    self.record(json!({"time": now, "kind": "CAMPAIGN", "campaign_id": id, "selected": n}));
                }
                Err(e) => self.record(json!({"time": now, "kind": "CAMPAIGN_SKIPPED", "reason": e.to_string()})),
            }
        }
        let ids = self.runner.drain(&mut self.factory, now);
        for id in ids {
            self.schedule_start(&id, now);
        }
        self.queue.schedule(now + self.wake_period_s, EventKind::RunnerWake);
    }

    fn schedule_start(&mut self, pilot_id: &str, now: Timestamp) {
        let entry_id = self.factory.pilot(pilot_id).expect("pilot exists").entry_id.clone();
        let delay = match self.fabric.get(&entry_id) {
            Some(f) => {
                let seed = self.seed;
                let stream = self
                    .delay_streams
                    .entry(entry_id.clone())
                    .or_insert_with(|| RngStream::new(seed, format!("delay/{entry_id}")));
                sample_queue_delay(&f.profile, stream)
            }
            None => 0.0,
        };
        self.queue.schedule(
            now + delay,
            EventKind::PilotStart {
                pilot_id: pilot_id.to_string(),
            },
        );
    }

    fn on_start(&mut self, pilot_id: &str, now: Timestamp) {
        let record = self.factory.pilot(pilot_id).expect("pilot exists").clone();
        let Some(fabric) = self.fabric.get(&record.entry_id) else {
            // No resource behind this entry: the batch system refuses it.
            let line = "GLIDEBENCH:ERROR entry_unreachable".to_string();
            self.factory
                .mark_finished(pilot_id, PilotState::Failed, now, vec![line])
                .expect("queued pilot can fail");
            self.on_terminal(pilot_id, PilotState::Failed);
            return;
        };
        self.factory
            .mark_running(pilot_id, now)
            .expect("queued pilot can start");
        let run = match record.purpose {
            Purpose::User => PilotRun {
                state: PilotState::Completed,
                stderr_lines: vec![format!("glidein {pilot_id} served user jobs")],
                payload_s: fabric.user_runtime_s,
            },
            Purpose::Benchmark => {
                let spec_id = record.spec_id.clone().expect("benchmark pilots carry a spec");
                self.history.insert((record.entry_id.clone(), spec_id.clone()), now);
                let entry = self.factory.pilot_entry(pilot_id).expect("snapshot exists");
                let ctx = PilotContext {
                    pilot_id: pilot_id.to_string(),
                    entry_id: record.entry_id.clone(),
                    purpose: Purpose::Benchmark,
                    spec: self.factory.spec(&spec_id).cloned(),
                    node: Some(fabric.node.clone()),
                    container_available: entry.supports_containers,
                    started_at: now,
                };
                let mut streams = PilotStreams::new(self.seed, &record.entry_id, pilot_id);
                pilot::run(&ctx, &fabric.profile, &mut streams)
            }
        };
        let finish = now + run.payload_s;
        self.in_progress.insert(pilot_id.to_string(), run);
        self.queue.schedule(
            finish,
            EventKind::PilotFinish {
                pilot_id: pilot_id.to_string(),
            },
        );
    }

    fn on_finish(&mut self, pilot_id: &str, now: Timestamp) {
        let run = self.in_progress.remove(pilot_id).expect("finish follows start");
        let purpose = self.factory.pilot(pilot_id).expect("pilot exists").purpose;
        if purpose == Purpose::Benchmark {
            let parsed = parse_stream(&run.stderr_lines);
            for r in parsed.results {
                if self.store.ingest(r) != IngestOutcome::Accepted {
                    self.ingest_rejections += 1;
                }
            }
        }
        let state = run.state;
        self.factory
            .mark_finished(pilot_id, state, now, run.stderr_lines)
            .expect("running pilot can finish");
        self.on_terminal(pilot_id, state);
    }

    fn on_terminal(&mut self, pilot_id: &str, state: PilotState) {
        self.runner.on_pilot_terminal(pilot_id, state);
        if self.runner.has_pending() {
            let now = self.now();
            for id in self.runner.drain(&mut self.factory, now) {
                self.schedule_start(&id, now);
            }
        }
    }

    /// Selects due entries under the scenario policy (with overrides) and
    /// launches a campaign on them now.
    pub fn trigger_campaign(
        &mut self,
        spec_id: &str,
        mode: SamplingMode,
        min_interval_s: Option<f64>,
    ) -> Result<&CampaignRecord, SimError> {
        if self.factory.spec(spec_id).is_none() {
            return Err(SimError::UnknownSpec(spec_id.to_string()));
        }
        let mut policy = self.policy.clone();
        policy.spec_id = spec_id.to_string();
        policy.mode = mode;
        if let Some(m) = min_interval_s {
            policy.min_interval_s = m;
        }
        let now = self.now();
        let selected = self.runner.select(&self.factory, &self.history, now, &policy);
        if selected.is_empty() {
            return Err(SimError::NothingDue);
        }
        let (cid, submitted) = self.runner.launch_campaign(&mut self.factory, selected, policy, now)?;
        for id in &submitted.pilot_ids {
            self.schedule_start(id, now);
        }
        Ok(self.runner.campaign(&cid).expect("just created"))
    }

    pub fn campaign_status(&self, campaign_id: &str) -> Result<CampaignStatus, RunnerError> {
        self.runner.campaign_status(campaign_id, &self.factory)
    }

    pub fn scores(&self, spec_id: &str) -> Vec<EntryScore> {
        self.store.scores(spec_id, self.now(), self.aggregation.params())
    }

    /// Greedy plan over fresh scores, with entries lacking fresh scores
    /// listed as unknown.
    pub fn plan(&self, demand: f64, spec_id: &str) -> PlanReport {
        let scores = self.scores(spec_id);
        let factory = &self.factory;
        let elig = eligible_candidates(
            &scores,
            factory.config(),
            &|e| factory.in_flight(e),
            self.now(),
            self.aggregation.ttl_s,
        );
        PlanReport {
            demand,
            spec_id: spec_id.to_string(),
            plan: plan_greedy(demand, &elig.candidates),
            unknown: elig.unknown,
        }
    }

    pub fn summary(&self) -> Summary {
        let spec_id = self.policy.spec_id.clone();
        let mut bench = BTreeMap::new();
        for p in self.factory.pilots().filter(|p| p.purpose == Purpose::Benchmark) {
            let key = serde_json::to_value(p.state).expect("state serializes");
            *bench.entry(key.as_str().unwrap_or_default().to_string()).or_insert(0) += 1;
        }
        let campaigns = self
            .runner
            .campaigns()
            .map(|c| CampaignSummary {
                campaign_id: c.campaign_id.clone(),
                created_at: c.created_at,
                spec_id: c.policy.spec_id.clone(),
                mode: c.policy.mode,
                selected: c.selected.len(),
                status: self.campaign_status(&c.campaign_id).expect("campaign exists"),
            })
            .collect();
        let plan = self.demand.map(|demand| {
            let report = self.plan(demand, &spec_id);
            let scores = self.scores(&spec_id);
            let factory = &self.factory;
            let elig = eligible_candidates(
                &scores,
                factory.config(),
                &|e| factory.in_flight(e),
                self.now(),
                self.aggregation.ttl_s,
            );
            let oracle = (oracle_search_size(&elig.candidates) <= ORACLE_SEARCH_LIMIT)
                .then(|| plan_oracle(demand, &elig.candidates).ok())
                .flatten();
            let gap = oracle.as_ref().and_then(|o| cost_gap(&report.plan, o));
            SummaryPlan {
                demand,
                spec_id: spec_id.clone(),
                greedy: report.plan,
                oracle,
                gap,
                unknown: report.unknown,
            }
        });
        Summary {
            sim_time: self.now(),
            factory_version: self.factory.version(),
            results: self.store.len(),
            benchmark_pilots: bench,
            campaigns,
            scores: self.scores(&spec_id),
            plan,
        }
    }

    /// Benchmark start times per (entry, spec), ascending.
    pub fn benchmark_starts(&self) -> BTreeMap<(String, String), Vec<Timestamp>> {
        let mut out: BTreeMap<(String, String), Vec<Timestamp>> = BTreeMap::new();
        for p in self.factory.pilots() {
            if let (Purpose::Benchmark, Some(spec), Some(t)) = (p.purpose, &p.spec_id, p.started_at) {
                out.entry((p.entry_id.clone(), spec.clone())).or_default().push(t);
            }
        }
        for v in out.values_mut() {
            v.sort_by(f64::total_cmp);
        }
        out
    }
}
