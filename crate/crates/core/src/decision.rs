//! Cost-aware provisioning from benchmark scores.
//!
//! A plan covers a throughput demand (work units per second) with integer
//! pilot counts per entry, each bounded by the entry's free capacity, at
//! minimum hourly cost. [`plan_greedy`] is the production heuristic;
//! [`plan_oracle`] enumerates every allocation and is only usable on small
//! instances, where it measures the heuristic's gap.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::Serialize;

use crate::collector::EntryScore;
use crate::domain::Timestamp;
use crate::factory::FactoryConfig;

pub const DEFAULT_TTL_S: f64 = 604_800.0;
pub const ORACLE_SEARCH_LIMIT: u64 = 1_000_000;

// Relative slack for float accumulation when comparing throughput to
// demand and costs to each other.
const REL_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    pub entry_id: String,
    pub score: f64,
    pub price_per_hour: f64,
    pub cap: u32,
}

impl Candidate {
    pub fn new(entry_id: &str, score: f64, price_per_hour: f64, cap: u32) -> Self {
        Candidate {
            entry_id: entry_id.to_string(),
            score,
            price_per_hour,
            cap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProvisionPlan {
    pub allocation: BTreeMap<String, u32>,
    pub total_cost: f64,
    pub achieved_throughput: f64,
    pub feasible: bool,
}

impl ProvisionPlan {
    fn from_allocation(allocation: BTreeMap<String, u32>, candidates: &[Candidate], demand: f64) -> Self {
        let by_id: BTreeMap<&str, &Candidate> = candidates.iter().map(|c| (c.entry_id.as_str(), c)).collect();
        let mut total_cost = 0.0;
        let mut achieved_throughput = 0.0;
        for (id, &n) in &allocation {
            let c = by_id[id.as_str()];
            total_cost += n as f64 * c.price_per_hour;
            achieved_throughput += n as f64 * c.score;
        }
        ProvisionPlan {
            feasible: covers(achieved_throughput, demand),
            allocation,
            total_cost,
            achieved_throughput,
        }
    }
}

fn covers(throughput: f64, demand: f64) -> bool {
    throughput >= demand - REL_EPS * demand.abs().max(1.0)
}

/// Price per hour divided by score; lower is better. `None` if the score
/// is not positive.
pub fn price_performance(price_per_hour: f64, score: f64) -> Option<f64> {
    (score > 0.0).then(|| price_per_hour / score)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Eligibility {
    pub candidates: Vec<Candidate>,
    /// Enabled entries without a fresh score; worth benchmarking.
    pub unknown: Vec<String>,
}

/// Joins fresh scores with prices and free capacity. `in_flight` gives
/// the pilots already queued or running per entry.
pub fn eligible_candidates(
    scores: &[EntryScore],
    config: &FactoryConfig,
    in_flight: &dyn Fn(&str) -> u32,
    now: Timestamp,
    ttl_s: f64,
) -> Eligibility {
    let by_entry: BTreeMap<&str, &EntryScore> = scores.iter().map(|s| (s.entry_id.as_str(), s)).collect();
    let mut out = Eligibility::default();
    for entry in config.entries.iter().filter(|e| e.enabled) {
        let fresh = by_entry
            .get(entry.entry_id.as_str())
            .filter(|s| now - s.last_ts <= ttl_s && s.median_score > 0.0);
        match fresh {
            None => out.unknown.push(entry.entry_id.clone()),
            Some(s) => {
                let cap = entry.max_pilots.saturating_sub(in_flight(&entry.entry_id));
                if cap > 0 {
                    out.candidates.push(Candidate::new(
                        &entry.entry_id,
                        s.median_score,
                        entry.price_per_hour,
                        cap,
                    ));
                }
            }
        }
    }
    out
}

fn ratio_order(a: &Candidate, b: &Candidate) -> Ordering {
    let ra = a.price_per_hour / a.score;
    let rb = b.price_per_hour / b.score;
    ra.total_cmp(&rb).then_with(|| a.entry_id.cmp(&b.entry_id))
}

/// Candidates in the order the greedy planner consumes them.
pub fn greedy_order(candidates: &[Candidate]) -> Vec<&Candidate> {
    let mut sorted: Vec<&Candidate> = candidates.iter().filter(|c| c.score > 0.0).collect();
    sorted.sort_by(|a, b| ratio_order(a, b));
    sorted
}

/// Fills the demand from the best price-performance candidates first.
pub fn plan_greedy(demand: f64, candidates: &[Candidate]) -> ProvisionPlan {
    let mut allocation = BTreeMap::new();
    let mut remaining = demand;
    let slack = REL_EPS * demand.abs().max(1.0);
    for c in greedy_order(candidates) {
        if remaining <= slack {
            break;
        }
        let needed = (remaining / c.score - REL_EPS).ceil().max(0.0);
        let n = (needed.min(c.cap as f64)) as u32;
        if n == 0 {
            continue;
        }
        allocation.insert(c.entry_id.clone(), n);
        remaining -= n as f64 * c.score;
    }
    ProvisionPlan::from_allocation(allocation, candidates, demand)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("search space of {size} allocations exceeds the limit of {limit}")]
pub struct SearchTooLarge {
    pub size: u64,
    pub limit: u64,
}

/// Number of allocations the oracle would enumerate, saturating.
pub fn oracle_search_size(candidates: &[Candidate]) -> u64 {
    candidates
        .iter()
        .fold(1u64, |acc, c| acc.saturating_mul(c.cap as u64 + 1))
}

/// Exhaustive minimum-cost cover. Ties prefer higher throughput, then the
/// lexicographically smallest count vector in entry_id order.
pub fn plan_oracle(demand: f64, candidates: &[Candidate]) -> Result<ProvisionPlan, SearchTooLarge> {
    let size = oracle_search_size(candidates);
    if size > ORACLE_SEARCH_LIMIT {
        return Err(SearchTooLarge {
            size,
            limit: ORACLE_SEARCH_LIMIT,
        });
    }
    let mut cands: Vec<&Candidate> = candidates.iter().filter(|c| c.score > 0.0).collect();
    cands.sort_by(|a, b| a.entry_id.cmp(&b.entry_id));

    let mut counts = vec![0u32; cands.len()];
    let mut best: Option<(f64, f64, Vec<u32>)> = None;
    loop {
        let mut cost = 0.0;
        let mut thr = 0.0;
        for (c, &n) in cands.iter().zip(&counts) {
            cost += n as f64 * c.price_per_hour;
            thr += n as f64 * c.score;
        }
        if covers(thr, demand) {
            let better = match &best {
                None => true,
                Some((bc, bt, bv)) => {
                    let tol = REL_EPS * bc.abs().max(1.0);
                    if cost < bc - tol {
                        true
                    } else if cost > bc + tol {
                        false
                    } else if thr != *bt {
                        thr > *bt
                    } else {
                        counts < *bv
                    }
                }
            };
            if better {
                best = Some((cost, thr, counts.clone()));
            }
        }
        // Odometer increment over 0..=cap per position.
        let mut i = cands.len();
        loop {
            if i == 0 {
                let allocation = best
                    .map(|(_, _, v)| {
                        cands
                            .iter()
                            .zip(v)
                            .filter(|(_, n)| *n > 0)
                            .map(|(c, n)| (c.entry_id.clone(), n))
                            .collect()
                    })
                    .unwrap_or_default();
                let mut plan = ProvisionPlan::from_allocation(allocation, candidates, demand);
                if plan.allocation.is_empty() && !covers(0.0, demand) {
                    plan.feasible = false;
                }
                return Ok(plan);
            }
            i -= 1;
            if counts[i] < cands[i].cap {
                counts[i] += 1;
                break;
            }
            counts[i] = 0;
        }
    }
}

/// Relative cost excess of `greedy` over `oracle`, e.g. 0.961 for 96.1%.
pub fn cost_gap(greedy: &ProvisionPlan, oracle: &ProvisionPlan) -> Option<f64> {
    (oracle.total_cost > 0.0).then(|| (greedy.total_cost - oracle.total_cost) / oracle.total_cost)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Preference {
    First,
    Second,
    Tie,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlipReport {
    /// Which candidate has the higher score.
    pub higher_score: Preference,
    /// Which candidate has the lower (better) price-performance ratio.
    pub better_ratio: Preference,
    pub ratio_first: f64,
    pub ratio_second: f64,
}

impl FlipReport {
    /// True when the second candidate wins on score and on ratio.
    pub fn second_dominates(&self) -> bool {
        self.higher_score == Preference::Second && self.better_ratio == Preference::Second
    }
}

/// Compares two candidates (typically two CPU generations) on raw score
/// and on price-performance.
pub fn preference_flip_check(first: &Candidate, second: &Candidate) -> FlipReport {
    let ratio_first = first.price_per_hour / first.score;
    let ratio_second = second.price_per_hour / second.score;
    let higher_score = match first.score.total_cmp(&second.score) {
        Ordering::Greater => Preference::First,
        Ordering::Less => Preference::Second,
        Ordering::Equal => Preference::Tie,
    };
    let better_ratio = match ratio_first.total_cmp(&ratio_second) {
        Ordering::Less => Preference::First,
        Ordering::Greater => Preference::Second,
        Ordering::Equal => Preference::Tie,
    };
    FlipReport {
        higher_score,
        better_ratio,
        ratio_first,
        ratio_second,
    }
}
