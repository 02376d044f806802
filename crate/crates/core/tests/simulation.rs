use glidebench::domain::{PilotState, Purpose};
use glidebench::factory::PilotFilter;
use glidebench::runner::SamplingMode;
use glidebench::scenario::Scenario;
use glidebench::sim::{SimError, Simulation};
use proptest::prelude::*;
use serde_json::json;

#[derive(Debug, Clone)]
struct Entry {
    cap: u32,
    perf: f64,
    cv: f64,
    fail: f64,
    delay: f64,
    pressure: u32,
}

fn entry() -> impl Strategy<Value = Entry> {
    (
        1u32..5,
        10.0f64..200.0,
        0.0f64..0.3,
        0.0f64..0.3,
        30.0f64..2000.0,
        0u32..6,
    )
        .prop_map(|(cap, perf, cv, fail, delay, pressure)| Entry {
            cap,
            perf,
            cv,
            fail,
            delay,
            pressure,
        })
}

fn scenario(seed: u64, entries: &[Entry], budget: u32) -> Scenario {
    let es: Vec<_> = entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            json!({
                "entry_id": format!("e{i}"), "cpu_model": format!("cpu-{}", i % 2),
                "price_per_hour": 1.0 + i as f64, "max_pilots": e.cap,
                "true_perf": e.perf, "perf_noise_cv": e.cv, "failure_prob": e.fail,
                "queue_delay_median_s": e.delay, "queue_delay_sigma": 0.8, "user_runtime_s": 1800.0,
            })
        })
        .collect();
    let pressure: Vec<_> = entries
        .iter()
        .enumerate()
        .filter(|(_, e)| e.pressure > 0)
        .map(|(i, e)| json!({"at_s": 0, "client_id": "fe1", "entry_id": format!("e{i}"), "requested": e.pressure}))
        .collect();
    let doc = json!({
        "seed": seed,
        "entries": es,
        "specs": [{"spec_id": "s1", "name": "k", "image_ref": "k.sif", "work_units": 3000, "timeout_s": 120}],
        "policies": {"mode": "all_due", "spec_id": "s1", "min_interval_s": 3600.0},
        "factory": {"max_submit_per_cycle": budget},
        "campaigns": [{"at_s": 0}],
        "pressure": pressure,
    });
    Scenario::from_json(&doc.to_string()).unwrap()
}

/// Steps a simulation through `hours`, launching a campaign every 45 minutes
/// and checking campaign conservation and pilot records between events.
fn drive(sim: &mut Simulation, hours: u32) {
    let mut campaigns = Vec::new();
    for step in 0..hours * 4 {
        if step % 3 == 1 {
            let mode = if step % 2 == 0 {
                SamplingMode::AllDue
            } else {
                SamplingMode::RepresentativePerClass
            };
            match sim.trigger_campaign("s1", mode, None) {
                Ok(c) => campaigns.push((c.campaign_id.clone(), c.selected.len() as u32)),
                Err(SimError::NothingDue) => {}
                Err(e) => panic!("{e}"),
            }
        }
        sim.advance_by(900.0);
        for (id, n) in &campaigns {
            assert_eq!(
                sim.campaign_status(id).unwrap().total(),
                *n,
                "campaign {id} at {}",
                sim.now()
            );
        }
        for p in sim.factory().query_pilots(&PilotFilter::default()) {
            if let (Some(s), Some(f)) = (p.started_at, p.finished_at) {
                assert!(s <= f, "{p:?}");
            }
            if p.state == PilotState::Running {
                assert!(p.started_at.is_some() && p.finished_at.is_none(), "{p:?}");
            }
            if p.state.is_terminal() {
                assert!(p.finished_at.is_some(), "{p:?}");
            }
            if p.purpose == Purpose::Benchmark {
                assert!(p.spec_id.is_some(), "{p:?}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn caps_budget_cadence_and_conservation_hold(
        seed in any::<u64>(),
        entries in prop::collection::vec(entry(), 1..6),
        budget in 1u32..6,
    ) {
        let mut sim = Simulation::new(&scenario(seed, &entries, budget)).unwrap();
        sim.disable_trace();
        drive(&mut sim, 8);
        prop_assert!(!sim.audits().is_empty());
        for a in sim.audits() {
            prop_assert_eq!(a.over_cap, 0, "{:?}", a);
            prop_assert!(a.submitted <= a.budget, "{:?}", a);
        }
        for ((entry, spec), starts) in sim.benchmark_starts() {
            for w in starts.windows(2) {
                prop_assert!(w[1] - w[0] >= 3600.0, "{} {} {:?}", entry, spec, w);
            }
        }
    }

    #[test]
    fn same_seed_same_trace(seed in any::<u64>(), entries in prop::collection::vec(entry(), 1..4)) {
        let s = scenario(seed, &entries, 3);
        let mut a = Simulation::new(&s).unwrap();
        let mut b = Simulation::new(&s).unwrap();
        drive(&mut a, 3);
        drive(&mut b, 3);
        prop_assert_eq!(a.trace_lines(), b.trace_lines());
        prop_assert_eq!(a.store().results(), b.store().results());
    }

    #[test]
    fn failed_reconfig_changes_nothing(seed in any::<u64>(), entries in prop::collection::vec(entry(), 1..4)) {
        let s = scenario(seed, &entries, 3);
        let mut a = Simulation::new(&s).unwrap();
        let mut b = Simulation::new(&s).unwrap();
        a.advance_by(1800.0);
        b.advance_by(1800.0);
        let e = |price: f64| json!({"entry_id": "x", "site_name": "s", "cpu_model": "c", "price_per_hour": price,
                                    "max_pilots": 1, "supports_containers": true, "enabled": true});
        let bad = json!({"entries": [e(-1.0), e(1.0)]}).to_string();
        prop_assert!(a.reconfig(&bad).is_err());
        let garbled = "{ nope";
        prop_assert!(a.reconfig(garbled).is_err());
        prop_assert_eq!(a.config(), b.config());
        a.advance_by(7200.0);
        b.advance_by(7200.0);
        prop_assert_eq!(a.trace_lines(), b.trace_lines());
    }
}
