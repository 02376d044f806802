//! Result collection: stderr block parsing, the append-only result store,
//! and per-entry score aggregation with staleness.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;

use crate::domain::{BenchmarkResult, Timestamp};
use crate::pilot::{checksum_hex, BEGIN_SENTINEL, END_PREFIX, ERROR_PREFIX};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticKind {
    TruncatedBlock,
    MalformedEnd,
    ChecksumMismatch,
    MalformedPayload,
    UnreadableLine,
}

impl fmt::Display for DiagnosticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DiagnosticKind::TruncatedBlock => "truncated_block",
            DiagnosticKind::MalformedEnd => "malformed_end",
            DiagnosticKind::ChecksumMismatch => "checksum_mismatch",
            DiagnosticKind::MalformedPayload => "malformed_payload",
            DiagnosticKind::UnreadableLine => "unreadable_line",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    /// Zero-based index of the offending line.
    pub line: usize,
    pub kind: DiagnosticKind,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedStream {
    pub results: Vec<BenchmarkResult>,
    pub diagnostics: Vec<Diagnostic>,
    /// Reasons from `GLIDEBENCH:ERROR` lines, in order.
    pub pilot_errors: Vec<String>,
}

/// Returns the checksum carried by a well-formed END sentinel.
fn parse_end(line: &str) -> Option<&str> {
    let hex = line.strip_prefix(END_PREFIX)?.strip_suffix('=')?;
    (hex.len() == 64 && hex.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))).then_some(hex)
}

/// Scans stderr lines for result blocks. Problems become diagnostics and
/// scanning resumes right after the BEGIN line that started the bad block.
pub fn parse_stream<S: AsRef<str>>(lines: &[S]) -> ParsedStream {
    let mut out = ParsedStream::default();
    let mut i = 0;
    while i < lines.len() {
        let line = lines[i].as_ref();
        if let Some(reason) = line.strip_prefix(ERROR_PREFIX) {
            out.pilot_errors.push(reason.to_string());
            i += 1;
            continue;
        }
        if line != BEGIN_SENTINEL {
            i += 1;
            continue;
        }
        let mut diag = |line: usize, kind: DiagnosticKind, detail: String| {
            out.diagnostics.push(Diagnostic { line, kind, detail });
        };
        if i + 2 >= lines.len() {
            diag(i, DiagnosticKind::TruncatedBlock, "stream ends inside a block".into());
            i += 1;
            continue;
        }
        let payload = lines[i + 1].as_ref();
        let Some(expected) = parse_end(lines[i + 2].as_ref()) else {
            diag(
                i + 2,
                DiagnosticKind::MalformedEnd,
                "missing or malformed END sentinel".into(),
            );
            i += 1;
            continue;
        };
        let actual = checksum_hex(payload);
        if actual != expected {
            diag(
                i + 2,
                DiagnosticKind::ChecksumMismatch,
                format!("expected {expected}, got {actual}"),
            );
            i += 1;
            continue;
        }
        match serde_json::from_str::<BenchmarkResult>(payload) {
            Ok(r) => {
                out.results.push(r);
                i += 3;
            }
            Err(e) => {
                diag(i + 1, DiagnosticKind::MalformedPayload, e.to_string());
                i += 1;
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "outcome", content = "violations", rename_all = "snake_case")]
pub enum IngestOutcome {
    Accepted,
    Duplicate,
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AggregationParams {
    pub k: usize,
    pub half_life_s: f64,
}

impl Default for AggregationParams {
    fn default() -> Self {
        AggregationParams {
            k: 5,
            half_life_s: 259_200.0,
        }
    }
}

/// Preprocessed per-entry view of the stored results.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntryScore {
    pub entry_id: String,
    pub spec_id: String,
    pub median_score: f64,
    pub n_samples: usize,
    pub last_ts: Timestamp,
    pub age_s: f64,
    pub staleness_weight: f64,
}

pub fn staleness_weight(age_s: f64, half_life_s: f64) -> f64 {
    (-(age_s / half_life_s)).exp2()
}

/// Median of a non-empty slice; even counts average the middle pair.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Append-only store of results, indexed by (entry_id, spec_id) and
/// deduplicated on (pilot_id, spec_id).
#[derive(Debug, Clone, Default)]
pub struct ResultStore {
    results: Vec<BenchmarkResult>,
    index: BTreeMap<(String, String), Vec<usize>>,
    seen: BTreeSet<(String, String)>,
    timeouts: BTreeMap<String, u64>,
}

impl ResultStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Enables the duration-vs-timeout check for the given specs.
    pub fn with_timeouts(timeouts: impl IntoIterator<Item = (String, u64)>) -> Self {
        ResultStore {
            timeouts: timeouts.into_iter().collect(),
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.results.len()
    }

    pub fn is_empty(&self) -> bool {
        self.results.is_empty()
    }

    pub fn results(&self) -> &[BenchmarkResult] {
        &self.results
    }

    pub fn ingest(&mut self, result: BenchmarkResult) -> IngestOutcome {
        let violations = result.violations(self.timeouts.get(&result.spec_id).copied());
        if !violations.is_empty() {
            return IngestOutcome::Invalid(violations);
        }
        if !self.seen.insert((result.pilot_id.clone(), result.spec_id.clone())) {
            return IngestOutcome::Duplicate;
        }
        self.index
            .entry((result.entry_id.clone(), result.spec_id.clone()))
            .or_default()
            .push(self.results.len());
        self.results.push(result);
        IngestOutcome::Accepted
    }

    /// Entry ids with at least one stored result for `spec_id`.
    pub fn entries_for_spec(&self, spec_id: &str) -> Vec<String> {
        self.index
            .keys()
            .filter(|(_, s)| s == spec_id)
            .map(|(e, _)| e.clone())
            .collect()
    }

    /// Results for the filters, newest `started_at` first; ties go to the
    /// later-ingested result.
    pub fn query(&self, entry_id: Option<&str>, spec_id: Option<&str>, limit: Option<usize>) -> Vec<BenchmarkResult> {
        let mut idx: Vec<usize> = (0..self.results.len())
            .filter(|&i| {
                let r = &self.results[i];
                entry_id.is_none_or(|e| r.entry_id == e) && spec_id.is_none_or(|s| r.spec_id == s)
            })
            .collect();
        idx.sort_by(|&a, &b| {
            self.results[b]
                .started_at
                .total_cmp(&self.results[a].started_at)
                .then(b.cmp(&a))
        });
        idx.into_iter()
            .take(limit.unwrap_or(usize::MAX))
            .map(|i| self.results[i].clone())
            .collect()
    }

    pub fn aggregate(
        &self,
        entry_id: &str,
        spec_id: &str,
        now: Timestamp,
        params: AggregationParams,
    ) -> Option<EntryScore> {
        let idx = self.index.get(&(entry_id.to_string(), spec_id.to_string()))?;
        let mut ok: Vec<usize> = idx.iter().copied().filter(|&i| self.results[i].is_success()).collect();
        if ok.is_empty() || params.k == 0 {
            return None;
        }
        ok.sort_by(|&a, &b| {
            self.results[b]
                .started_at
                .total_cmp(&self.results[a].started_at)
                .then(b.cmp(&a))
        });
        ok.truncate(params.k);
        let scores: Vec<f64> = ok.iter().map(|&i| self.results[i].score).collect();
        let last_ts = self.results[ok[0]].started_at;
        let age_s = (now - last_ts).max(0.0);
        Some(EntryScore {
            entry_id: entry_id.to_string(),
            spec_id: spec_id.to_string(),
            median_score: median(&scores),
            n_samples: scores.len(),
            last_ts,
            age_s,
            staleness_weight: staleness_weight(age_s, params.half_life_s),
        })
    }

    /// Aggregates for every entry measured under `spec_id`, by entry_id.
    pub fn scores(&self, spec_id: &str, now: Timestamp, params: AggregationParams) -> Vec<EntryScore> {
        self.entries_for_spec(spec_id)
            .iter()
            .filter_map(|e| self.aggregate(e, spec_id, now, params))
            .collect()
    }

    /// Newest `started_at` across the store.
    pub fn latest_ts(&self) -> Option<Timestamp> {
        self.results.iter().map(|r| r.started_at).max_by(f64::total_cmp)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.results {
            out.push_str(&serde_json::to_string(r).expect("result serializes"));
            out.push('\n');
        }
        out
    }

    /// Replays JSON-Lines text through `ingest`. Unreadable or invalid
    /// lines are reported and skipped.
    pub fn from_jsonl(text: &str) -> (ResultStore, Vec<Diagnostic>) {
        let mut store = ResultStore::new();
        let mut diags = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<BenchmarkResult>(line) {
                Ok(r) => match store.ingest(r) {
                    IngestOutcome::Invalid(v) => diags.push(Diagnostic {
                        line: n,
                        kind: DiagnosticKind::MalformedPayload,
                        detail: v.join("; "),
                    }),
                    IngestOutcome::Accepted | IngestOutcome::Duplicate => {}
                },
                Err(e) => diags.push(Diagnostic {
                    line: n,
                    kind: DiagnosticKind::UnreadableLine,
                    detail: e.to_string(),
                }),
            }
        }
        (store, diags)
    }

    pub fn persist(&self, path: &Path) -> io::Result<()> {
        let mut f = io::BufWriter::new(fs::File::create(path)?);
        f.write_all(self.to_jsonl().as_bytes())?;
        f.flush()
    }

    pub fn load(path: &Path) -> io::Result<(ResultStore, Vec<Diagnostic>)> {
        Ok(Self::from_jsonl(&fs::read_to_string(path)?))
    }
}
