use glidebench_demo::{check_stream_json, encode_block_json, plan_whatif_json, sample_fabric_json};
use serde_json::Value;

#[test]
fn whatif_reproduces_the_trap() {
    let c = r#"[{"entry_id":"a","score":99,"price_per_hour":1.0,"cap":2},{"entry_id":"b","score":100,"price_per_hour":1.02,"cap":1}]"#;
    let v: Value = serde_json::from_str(&plan_whatif_json(c, 100.0).unwrap()).unwrap();
    assert_eq!(v["greedy"]["total_cost"], 2.0);
    assert_eq!(v["oracle"]["total_cost"], 1.02);
    assert!((v["gap"].as_f64().unwrap() - 0.9608).abs() < 1e-4);
    assert_eq!(v["order"][0]["entry_id"], "a");
    assert!(plan_whatif_json(c, 0.0).is_err());
    assert!(plan_whatif_json("[", 1.0).is_err());
}

#[test]
fn sampler_is_seeded_and_counts_add_up() {
    let p = r#"{"true_perf":100,"perf_noise_cv":0.1,"queue_delay_median_s":300,"queue_delay_sigma":0.5,"failure_prob":0.1,"work_units":6000,"timeout_s":600}"#;
    let a = sample_fabric_json(p, 500, 3, 20).unwrap();
    assert_eq!(a, sample_fabric_json(p, 500, 3, 20).unwrap());
    let v: Value = serde_json::from_str(&a).unwrap();
    let total = v["succeeded"].as_u64().unwrap() + v["failed"].as_u64().unwrap() + v["timed_out"].as_u64().unwrap();
    assert_eq!(total, 500);
    let hist: u64 = v["delays"]["counts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c.as_u64().unwrap())
        .sum();
    assert_eq!(hist, 500);
    assert!((v["delay_median"].as_f64().unwrap() / 300.0 - 1.0).abs() < 0.1);
    assert!(sample_fabric_json(r#"{"true_perf":-1,"work_units":1,"timeout_s":1}"#, 5, 1, 5).is_err());
}

#[test]
fn encode_then_check_round_trips() {
    let r = r#"{"schema_version":1,"pilot_id":"p-00000001","entry_id":"e1","spec_id":"s1","score":123.456,"duration_s":8.1,
               "started_at":10.0,"node":{"cores":8,"memory_mb":16000,"disk_mb":0,"gpus":0,"cpu_model":"amd epyc 7763"},"exit_code":0}"#;
    let block = encode_block_json(r).unwrap();
    let text = format!("noise\n{block}\nmore noise\n");
    let v: Value = serde_json::from_str(&check_stream_json(&text)).unwrap();
    assert_eq!(v["results"].as_array().unwrap().len(), 1);
    assert_eq!(v["results"][0]["score"], 123.456);
    let tampered = text.replace("123.456", "123.457");
    let v: Value = serde_json::from_str(&check_stream_json(&tampered)).unwrap();
    assert!(v["results"].as_array().unwrap().is_empty());
    assert_eq!(v["diagnostics"][0]["kind"], "checksum_mismatch");
}
