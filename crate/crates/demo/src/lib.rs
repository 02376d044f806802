//! Browser bindings for three operations: planning a demand over
//! hand-entered candidates, sampling one entry's simulated fabric, and
//! encoding or checking stderr result blocks. Every function takes and
//! returns JSON strings; the `*_json` twins are the native entry points used
//! by the tests.

use serde::{Deserialize, Serialize};
use serde_json::json;
use wasm_bindgen::prelude::*;

use glidebench::collector::{median, parse_stream};
use glidebench::decision::{
    cost_gap, greedy_order, oracle_search_size, plan_greedy, plan_oracle, Candidate, ORACLE_SEARCH_LIMIT,
};
use glidebench::domain::{BenchmarkResult, BenchmarkSpec};
use glidebench::fabricsim::{
    sample_queue_delay, sample_run_outcome, FabricProfile, OutcomeStatus, PilotStreams, RngStream,
};
use glidebench::pilot::emit_result_block;

fn to_js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[derive(Deserialize)]
struct CandidateInput {
    entry_id: String,
    score: f64,
    price_per_hour: f64,
    cap: u32,
}

/// `candidates` is a JSON array of `{entry_id, score, price_per_hour, cap}`.
pub fn plan_whatif_json(candidates: &str, demand: f64) -> Result<String, String> {
    let input: Vec<CandidateInput> = serde_json::from_str(candidates).map_err(|e| e.to_string())?;
    if !(demand > 0.0 && demand.is_finite()) {
        return Err("demand must be > 0".into());
    }
    let mut cands = Vec::new();
    for c in input {
        if !(c.score > 0.0 && c.score.is_finite()) || !(c.price_per_hour >= 0.0) {
            return Err(format!("{}: score must be > 0 and price >= 0", c.entry_id));
        }
        cands.push(Candidate::new(&c.entry_id, c.score, c.price_per_hour, c.cap));
    }
    let order: Vec<serde_json::Value> = greedy_order(&cands)
        .iter()
        .map(|c| json!({"entry_id": c.entry_id, "ratio": c.price_per_hour / c.score}))
        .collect();
    let greedy = plan_greedy(demand, &cands);
    let size = oracle_search_size(&cands);
    let oracle = if size <= ORACLE_SEARCH_LIMIT {
        plan_oracle(demand, &cands).ok()
    } else {
        None
    };
    let gap = oracle.as_ref().and_then(|o| cost_gap(&greedy, o));
    Ok(json!({"order": order, "greedy": greedy, "oracle": oracle, "gap": gap, "search_size": size}).to_string())
}

#[wasm_bindgen]
pub fn plan_whatif(candidates: &str, demand: f64) -> Result<String, JsError> {
    to_js(plan_whatif_json(candidates, demand))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleInput {
    true_perf: f64,
    #[serde(default)]
    perf_noise_cv: f64,
    #[serde(default)]
    queue_delay_median_s: f64,
    #[serde(default)]
    queue_delay_sigma: f64,
    #[serde(default)]
    failure_prob: f64,
    work_units: u64,
    timeout_s: u64,
}

#[derive(Serialize)]
struct Histogram {
    lo: f64,
    hi: f64,
    counts: Vec<u32>,
}

fn histogram(values: &[f64], bins: usize) -> Option<Histogram> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() || bins == 0 {
        return None;
    }
    let mut counts = vec![0; bins];
    let width = (hi - lo) / bins as f64;
    for v in values {
        let i = if width > 0.0 { ((v - lo) / width) as usize } else { 0 };
        counts[i.min(bins - 1)] += 1;
    }
    Some(Histogram { lo, hi, counts })
}

/// Runs `n` benchmark pilots against one simulated entry and summarises the
/// queue delays and measured scores.
pub fn sample_fabric_json(params: &str, n: u32, seed: u64, bins: u32) -> Result<String, String> {
    let p: SampleInput = serde_json::from_str(params).map_err(|e| e.to_string())?;
    let profile = FabricProfile {
        entry_id: "demo".into(),
        true_perf: p.true_perf,
        perf_noise_cv: p.perf_noise_cv,
        queue_delay_median_s: p.queue_delay_median_s,
        queue_delay_sigma: p.queue_delay_sigma,
        failure_prob: p.failure_prob,
    };
    let spec = BenchmarkSpec {
        spec_id: "demo".into(),
        name: "demo".into(),
        image_ref: String::new(),
        work_units: p.work_units,
        timeout_s: p.timeout_s,
    };
    let mut problems = profile.violations();
    problems.extend(spec.violations());
    if !problems.is_empty() {
        return Err(problems.join("; "));
    }
    let n = n.clamp(1, 100_000);
    let mut delay_rng = RngStream::new(seed, "delay/demo");
    let delays: Vec<f64> = (0..n).map(|_| sample_queue_delay(&profile, &mut delay_rng)).collect();
    let (mut scores, mut failed, mut timed_out) = (Vec::new(), 0, 0);
    for i in 0..n {
        let mut streams = PilotStreams::new(seed, "demo", &format!("p-{:08}", i + 1));
        let o = sample_run_outcome(&profile, &spec, &mut streams);
        match o.status {
            OutcomeStatus::Success => scores.push(o.measured_score),
            OutcomeStatus::Failed => failed += 1,
            OutcomeStatus::TimedOut => timed_out += 1,
        }
    }
    let bins = bins.clamp(1, 200) as usize;
    let k5: Vec<f64> = scores.iter().take(5).copied().collect();
    Ok(json!({
        "n": n,
        "succeeded": scores.len(),
        "failed": failed,
        "timed_out": timed_out,
        "delay_median": median(&delays),
        "score_median": (!scores.is_empty()).then(|| median(&scores)),
        "first_five_median": (!k5.is_empty()).then(|| median(&k5)),
        "delays": histogram(&delays, bins),
        "scores": histogram(&scores, bins),
    })
    .to_string())
}

#[wasm_bindgen]
pub fn sample_fabric(params: &str, n: u32, seed: u64, bins: u32) -> Result<String, JsError> {
    to_js(sample_fabric_json(params, n, seed, bins))
}

/// Renders a BenchmarkResult (JSON) as the three stderr lines.
pub fn encode_block_json(result: &str) -> Result<String, String> {
    let r: BenchmarkResult = serde_json::from_str(result).map_err(|e| e.to_string())?;
    Ok(emit_result_block(&r).join("\n"))
}

#[wasm_bindgen]
pub fn encode_block(result: &str) -> Result<String, JsError> {
    to_js(encode_block_json(result))
}

/// Scans pasted stderr text for result blocks.
pub fn check_stream_json(text: &str) -> String {
    let lines: Vec<&str> = text.lines().collect();
    let parsed = parse_stream(&lines);
    let diagnostics: Vec<serde_json::Value> = parsed
        .diagnostics
        .iter()
        .map(|d| json!({"line": d.line + 1, "kind": d.kind.to_string(), "detail": d.detail}))
        .collect();
    json!({"results": parsed.results, "diagnostics": diagnostics, "pilot_errors": parsed.pilot_errors}).to_string()
}

#[wasm_bindgen]
pub fn check_stream(text: &str) -> String {
    check_stream_json(text)
}
