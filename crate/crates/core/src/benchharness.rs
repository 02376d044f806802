//! Benchmark payload execution behind one interface.
//!
//! Two executors exist. The simulated one asks the fabric model for an
//! outcome. The local one runs a fixed CPU-bound kernel on this machine:
//! each work unit is [`LOCAL_ROUNDS_PER_UNIT`] rounds of an xorshift64*
//! step folded into an accumulator, starting from the state
//! `0x9E37_79B9_7F4A_7C15`. The kernel is a development aid for comparing
//! machines; its scores are only meaningful relative to each other.

use std::hint::black_box;
use std::time::Instant;

use crate::domain::BenchmarkSpec;
use crate::fabricsim::{sample_run_outcome, FabricProfile, OutcomeStatus, PilotStreams};

pub const LOCAL_ROUNDS_PER_UNIT: u32 = 20_000;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
/// Same code the coreutils `timeout` command uses.
pub const EXIT_TIMEOUT: i32 = 124;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawMeasurement {
    pub elapsed_s: f64,
    pub completed_units: u64,
    pub exit_code: i32,
    /// Rate reported by the payload itself, when it measures one. The
    /// simulated fabric does; the local kernel leaves this empty and the
    /// score is derived from wall time.
    pub reported_rate: Option<f64>,
}

pub enum Executor<'a> {
    Simulated {
        profile: &'a FabricProfile,
        streams: &'a mut PilotStreams,
    },
    Local,
}

pub fn execute(spec: &BenchmarkSpec, executor: Executor<'_>) -> RawMeasurement {
    match executor {
        Executor::Simulated { profile, streams } => {
            let outcome = sample_run_outcome(profile, spec, streams);
            let timeout = spec.timeout_s as f64;
            match outcome.status {
                OutcomeStatus::Success => RawMeasurement {
                    elapsed_s: outcome.duration_s,
                    completed_units: spec.work_units,
                    exit_code: EXIT_OK,
                    reported_rate: Some(outcome.measured_score),
                },
                OutcomeStatus::TimedOut => RawMeasurement {
                    elapsed_s: timeout,
                    completed_units: ((timeout * outcome.measured_score) as u64).min(spec.work_units - 1),
                    exit_code: EXIT_TIMEOUT,
                    reported_rate: None,
                },
                OutcomeStatus::Failed => RawMeasurement {
                    elapsed_s: outcome.duration_s,
                    completed_units: ((outcome.duration_s * outcome.measured_score) as u64).min(spec.work_units - 1),
                    exit_code: EXIT_FAILED,
                    reported_rate: None,
                },
            }
        }
        Executor::Local => run_local_kernel(spec),
    }
}

fn kernel_unit(state: &mut u64, acc: &mut u64) {
    for _ in 0..LOCAL_ROUNDS_PER_UNIT {
        *state ^= *state >> 12;
        *state ^= *state << 25;
        *state ^= *state >> 27;
        *acc = acc.wrapping_add(state.wrapping_mul(0x2545_F491_4F6C_DD1D));
    }
}

fn run_local_kernel(spec: &BenchmarkSpec) -> RawMeasurement {
    let start = Instant::now();
    let timeout = spec.timeout_s as f64;
    let mut state = 0x9E37_79B9_7F4A_7C15u64;
    let mut acc = 0u64;
    let mut done = 0;
    while done < spec.work_units {
        kernel_unit(&mut state, &mut acc);
        done += 1;
        if start.elapsed().as_secs_f64() > timeout {
            break;
        }
    }
    black_box(acc);
    let elapsed_s = start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE);
    let exit_code = if done == spec.work_units && elapsed_s <= timeout {
        EXIT_OK
    } else {
        EXIT_TIMEOUT
    };
    RawMeasurement {
        elapsed_s,
        completed_units: if exit_code == EXIT_OK {
            done
        } else {
            done.min(spec.work_units - 1)
        },
        exit_code,
        reported_rate: None,
    }
}

/// Work units per second, or `None` for a failed measurement.
pub fn compute_score(m: &RawMeasurement, spec: &BenchmarkSpec) -> Option<f64> {
    if m.exit_code != EXIT_OK || !(m.elapsed_s > 0.0) {
        return None;
    }
    match m.reported_rate {
        Some(rate) if rate > 0.0 => Some(rate),
        Some(_) => None,
        None => Some(spec.work_units as f64 / m.elapsed_s),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(units: u64, timeout: u64) -> BenchmarkSpec {
        BenchmarkSpec {
            spec_id: "s1".into(),
            name: "k".into(),
            image_ref: String::new(),
            work_units: units,
            timeout_s: timeout,
        }
    }

    fn wall(elapsed: f64) -> RawMeasurement {
        RawMeasurement {
            elapsed_s: elapsed,
            completed_units: 1000,
            exit_code: 0,
            reported_rate: None,
        }
    }

    #[test]
    fn simulated_noiseless() {
        let p = FabricProfile::ideal("e1", 50.0);
        let mut s = PilotStreams::new(1, "e1", "p-1");
        let m = execute(
            &spec(1000, 100),
            Executor::Simulated {
                profile: &p,
                streams: &mut s,
            },
        );
        assert_eq!((m.elapsed_s, m.completed_units, m.exit_code), (20.0, 1000, 0));
        assert_eq!(compute_score(&m, &spec(1000, 100)), Some(50.0));
    }

    #[test]
    fn simulated_failure() {
        let p = FabricProfile {
            failure_prob: 1.0,
            ..FabricProfile::ideal("e1", 50.0)
        };
        let mut s = PilotStreams::new(1, "e1", "p-1");
        let m = execute(
            &spec(1000, 100),
            Executor::Simulated {
                profile: &p,
                streams: &mut s,
            },
        );
        assert_ne!(m.exit_code, 0);
        assert!(m.completed_units < 1000);
        assert_eq!(compute_score(&m, &spec(1000, 100)), None);
    }

    #[test]
    fn simulated_timeout() {
        let p = FabricProfile::ideal("e1", 5.0);
        let mut s = PilotStreams::new(1, "e1", "p-1");
        let m = execute(
            &spec(1000, 100),
            Executor::Simulated {
                profile: &p,
                streams: &mut s,
            },
        );
        assert_eq!(m.exit_code, EXIT_TIMEOUT);
        assert_eq!(m.elapsed_s, 100.0);
        assert_eq!(m.completed_units, 500);
    }

    #[test]
    fn noiseless_score_exact_for_awkward_rates() {
        // 1000 / (1000 / 15) != 15 in binary floating point.
        for perf in [15.0, 29.0, 0.3, 123.456] {
            let p = FabricProfile::ideal("e1", perf);
            let mut s = PilotStreams::new(1, "e1", "p-1");
            let sp = spec(1000, 1_000_000);
            let m = execute(
                &sp,
                Executor::Simulated {
                    profile: &p,
                    streams: &mut s,
                },
            );
            assert_eq!(compute_score(&m, &sp), Some(perf));
        }
    }

    #[test]
    fn score_from_wall_time() {
        assert_eq!(compute_score(&wall(20.0), &spec(1000, 100)), Some(50.0));
        assert_eq!(compute_score(&wall(1000.0), &spec(1000, 2000)), Some(1.0));
        let failed = RawMeasurement {
            exit_code: 1,
            ..wall(20.0)
        };
        assert_eq!(compute_score(&failed, &spec(1000, 100)), None);
        assert_eq!(compute_score(&wall(0.0), &spec(1000, 100)), None);
    }

    #[test]
    fn score_strictly_decreasing_in_elapsed() {
        let sp = spec(1000, 100);
        let scores: Vec<f64> = [0.5, 1.0, 2.0, 20.0, 99.0]
            .iter()
            .map(|&e| compute_score(&wall(e), &sp).unwrap())
            .collect();
        assert!(scores.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn local_kernel_completes() {
        let sp = spec(50, 60);
        let m = execute(&sp, Executor::Local);
        assert_eq!(m.exit_code, 0);
        assert_eq!(m.completed_units, 50);
        assert!(compute_score(&m, &sp).unwrap() > 0.0);
    }

    #[test]
    fn local_kernel_repeatable() {
        let sp = spec(1000, 120);
        // Warm up caches and frequency scaling before the measured pair.
        execute(&spec(200, 60), Executor::Local);
        let a = compute_score(&execute(&sp, Executor::Local), &sp).unwrap();
        let b = compute_score(&execute(&sp, Executor::Local), &sp).unwrap();
        let rel = (a - b).abs() / a.max(b);
        assert!(rel < 0.20, "local scores {a} vs {b}");
    }
}
