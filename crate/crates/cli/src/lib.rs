//! `glidebench` subcommands. Exit codes: 0 success, 2 validation, 3 I/O.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use glidebench::collector::{EntryScore, ResultStore};
use glidebench::decision::{
    cost_gap, eligible_candidates, oracle_search_size, plan_greedy, plan_oracle, price_performance, ProvisionPlan,
    ORACLE_SEARCH_LIMIT,
};
use glidebench::factory::{load_config, FactoryConfig};
use glidebench::scenario::Scenario;
use glidebench::sim::Simulation;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Parser)]
#[command(
    name = "glidebench",
    version,
    about = "Benchmark-driven pilot provisioning simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write results.jsonl, trace.jsonl and summary.json.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Simulated seconds to run.
        #[arg(long)]
        duration: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregated scores per entry. Prices from --scenario sort by
    /// price-performance.
    Scores {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        spec: Option<String>,
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Aggregation time; defaults to the newest result in the store.
        #[arg(long)]
        now: Option<f64>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Stored results, newest first.
    Results {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        entry: Option<String>,
        #[arg(long)]
        spec: Option<String>,
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Greedy plan for a demand, with the exhaustive optimum when feasible
    /// to enumerate.
    Plan {
        #[arg(long)]
        store: PathBuf,
        /// Scenario supplying prices, caps and aggregation settings.
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        demand: f64,
        #[arg(long)]
        spec: String,
        #[arg(long)]
        now: Option<f64>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Serve the REST API over a scenario's simulation.
    Serve {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}

#[derive(Debug)]
enum Failure {
    Validation(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Validation(_) => EXIT_VALIDATION,
            Failure::Io(_) => EXIT_IO,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Io(m) => m,
        }
    }
}

type Outcome = Result<(), Failure>;

fn io_err(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

/// Parses `args` (program name first) and runs the subcommand.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 {
                out.write_all(text.as_bytes())
            } else {
                err.write_all(text.as_bytes())
            };
            return if code == 0 { EXIT_OK } else { EXIT_VALIDATION };
        }
    };
    let result = match cli.command {
        Command::Run {
            scenario,
            duration,
            seed,
            out: dir,
        } => cmd_run(&scenario, duration, seed, &dir, out),
        Command::Scores {
            store,
            spec,
            scenario,
            now,
            csv,
        } => cmd_scores(&store, spec.as_deref(), scenario.as_deref(), now, csv.as_deref(), out),
        Command::Results {
            store,
            entry,
            spec,
            limit,
            csv,
        } => cmd_results(&store, entry.as_deref(), spec.as_deref(), limit, csv.as_deref(), out),
        Command::Plan {
            store,
            scenario,
            demand,
            spec,
            now,
            csv,
        } => cmd_plan(&store, &scenario, demand, &spec, now, csv.as_deref(), out),
        Command::Serve { scenario, seed, addr } => cmd_serve(&scenario, seed, addr, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message());
            f.code()
        }
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Scenario::from_json(&text).map_err(|e| e.to_string())
}

fn scenario_arg(path: &Path) -> Result<Scenario, Failure> {
    load_scenario(path).map_err(Failure::Validation)
}

fn load_store(path: &Path, out: &mut dyn Write) -> Result<ResultStore, Failure> {
    let (store, diags) = ResultStore::load(path).map_err(|e| io_err(path, e))?;
    for d in diags {
        let _ = writeln!(out, "# skipped line {}: {} {}", d.line, d.kind, d.detail);
    }
    Ok(store)
}

fn write_file(path: &Path, contents: &str) -> Outcome {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn cmd_run(path: &Path, duration: f64, seed: Option<u64>, dir: &Path, out: &mut dyn Write) -> Outcome {
    if !(duration >= 0.0 && duration.is_finite()) {
        return Err(Failure::Validation("--duration must be a non-negative number".into()));
    }
    let mut scenario = scenario_arg(path)?;
    if let Some(s) = seed {
        scenario.seed = s;
    }
    let mut sim = Simulation::new(&scenario).map_err(|e| Failure::Validation(e.to_string()))?;
    sim.run_until(duration);
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    sim.store()
        .persist(&dir.join("results.jsonl"))
        .map_err(|e| io_err(dir, e))?;
    let mut trace = sim.trace_lines().join("\n");
    if !trace.is_empty() {
        trace.push('\n');
    }
    write_file(&dir.join("trace.jsonl"), &trace)?;
    let summary = serde_json::to_string_pretty(&sim.summary()).expect("summary serializes") + "\n";
    write_file(&dir.join("summary.json"), &summary)?;
    let _ = writeln!(
        out,
        "simulated {duration} s: {} results, {} campaigns, factory version {}; wrote {}",
        sim.store().len(),
        sim.runner().campaigns().count(),
        sim.factory().version(),
        dir.display()
    );
    Ok(())
}

/// Column-aligned text table whose cells are also the CSV cells.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(headers: &[&str]) -> Self {
        Table {
            headers: headers.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn render(&self) -> String {
        let mut widths: Vec<usize> = self.headers.iter().map(String::len).collect();
        for row in &self.rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.len());
            }
        }
        let line = |cells: &[String]| {
            let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
            padded.join("  ").trim_end().to_string() + "\n"
        };
        let mut s = line(&self.headers);
        for row in &self.rows {
            s.push_str(&line(row));
        }
        s
    }

    fn write_csv(&self, path: &Path) -> Outcome {
        let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
        w.write_record(&self.headers).map_err(|e| io_err(path, e))?;
        for row in &self.rows {
            w.write_record(row).map_err(|e| io_err(path, e))?;
        }
        w.flush().map_err(|e| io_err(path, e))
    }
}

fn emit(table: &Table, csv: Option<&Path>, out: &mut dyn Write) -> Outcome {
    let _ = out.write_all(table.render().as_bytes());
    match csv {
        Some(p) => table.write_csv(p),
        None => Ok(()),
    }
}

fn scenario_config(scenario: &Scenario) -> FactoryConfig {
    let doc = serde_json::to_string(&scenario.factory_input()).expect("config serializes");
    load_config(&doc).expect("validated scenario yields a valid config")
}

fn spec_ids(store: &ResultStore) -> Vec<String> {
    let mut ids: Vec<String> = store.results().iter().map(|r| r.spec_id.clone()).collect();
    ids.sort();
    ids.dedup();
    ids
}

fn cmd_scores(
    store_path: &Path,
    spec: Option<&str>,
    scenario: Option<&Path>,
    now: Option<f64>,
    csv: Option<&Path>,
    out: &mut dyn Write,
) -> Outcome {
    let scenario = scenario.map(scenario_arg).transpose()?;
    let store = load_store(store_path, out)?;
    let now = now.or(store.latest_ts()).unwrap_or(0.0);
    let params = scenario.as_ref().map(|s| s.aggregation.params()).unwrap_or_default();
    let specs = match spec {
        Some(s) => vec![s.to_string()],
        None => spec_ids(&store),
    };
    let mut scores: Vec<EntryScore> = specs.iter().flat_map(|s| store.scores(s, now, params)).collect();
    let config = scenario.as_ref().map(scenario_config);
    let price = |e: &str| config.as_ref().and_then(|c| c.entry(e)).map(|c| c.price_per_hour);
    let ratio = |s: &EntryScore| price(&s.entry_id).and_then(|p| price_performance(p, s.median_score));
    if config.is_some() {
        scores.sort_by(|a, b| {
            match (ratio(a), ratio(b)) {
                (Some(x), Some(y)) => x.total_cmp(&y),
                (Some(_), None) => std::cmp::Ordering::Less,
                (None, Some(_)) => std::cmp::Ordering::Greater,
                (None, None) => std::cmp::Ordering::Equal,
            }
            .then_with(|| (&a.entry_id, &a.spec_id).cmp(&(&b.entry_id, &b.spec_id)))
        });
    }
    let mut headers = vec![
        "entry_id",
        "spec_id",
        "median_score",
        "n_samples",
        "last_ts",
        "age_s",
        "staleness_weight",
    ];
    if config.is_some() {
        headers.extend(["price_per_hour", "price_performance"]);
    }
    let mut table = Table::new(&headers);
    for s in &scores {
        let mut row = vec![
            s.entry_id.clone(),
            s.spec_id.clone(),
            s.median_score.to_string(),
            s.n_samples.to_string(),
            s.last_ts.to_string(),
            s.age_s.to_string(),
            s.staleness_weight.to_string(),
        ];
        if config.is_some() {
            row.push(price(&s.entry_id).map_or("-".into(), |p| p.to_string()));
            row.push(ratio(s).map_or("-".into(), |r| r.to_string()));
        }
        table.rows.push(row);
    }
    emit(&table, csv, out)
}

fn cmd_results(
    store_path: &Path,
    entry: Option<&str>,
    spec: Option<&str>,
    limit: Option<usize>,
    csv: Option<&Path>,
    out: &mut dyn Write,
) -> Outcome {
    let store = load_store(store_path, out)?;
    let mut table = Table::new(&[
        "pilot_id",
        "entry_id",
        "spec_id",
        "started_at",
        "duration_s",
        "score",
        "exit_code",
        "cpu_model",
    ]);
    for r in store.query(entry, spec, limit) {
        table.rows.push(vec![
            r.pilot_id,
            r.entry_id,
            r.spec_id,
            r.started_at.to_string(),
            r.duration_s.to_string(),
            r.score.to_string(),
            r.exit_code.to_string(),
            r.node.cpu_model,
        ]);
    }
    emit(&table, csv, out)
}

/// Greedy and (when enumerable) oracle plans over a store's fresh scores.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanComparison {
    pub greedy: ProvisionPlan,
    pub oracle: Result<ProvisionPlan, u64>,
    pub unknown: Vec<String>,
}

impl PlanComparison {
    pub fn gap(&self) -> Option<f64> {
        self.oracle.as_ref().ok().and_then(|o| cost_gap(&self.greedy, o))
    }
}

pub fn compare_plans(store: &ResultStore, scenario: &Scenario, demand: f64, spec: &str, now: f64) -> PlanComparison {
    let config = scenario_config(scenario);
    let scores = store.scores(spec, now, scenario.aggregation.params());
    let elig = eligible_candidates(&scores, &config, &|_| 0, now, scenario.aggregation.ttl_s);
    let size = oracle_search_size(&elig.candidates);
    let oracle = if size <= ORACLE_SEARCH_LIMIT {
        plan_oracle(demand, &elig.candidates).map_err(|_| size)
    } else {
        Err(size)
    };
    PlanComparison {
        greedy: plan_greedy(demand, &elig.candidates),
        oracle,
        unknown: elig.unknown,
    }
}

fn allocation_cell(plan: &ProvisionPlan) -> String {
    let parts: Vec<String> = plan.allocation.iter().map(|(e, n)| format!("{e}:{n}")).collect();
    if parts.is_empty() {
        "-".into()
    } else {
        parts.join(" ")
    }
}

fn plan_row(name: &str, plan: &ProvisionPlan, gap: String) -> Vec<String> {
    vec![
        name.to_string(),
        format!("{:.2}", plan.total_cost),
        plan.achieved_throughput.to_string(),
        plan.feasible.to_string(),
        gap,
        allocation_cell(plan),
    ]
}

fn cmd_plan(
    store_path: &Path,
    scenario_path: &Path,
    demand: f64,
    spec: &str,
    now: Option<f64>,
    csv: Option<&Path>,
    out: &mut dyn Write,
) -> Outcome {
    if !(demand > 0.0 && demand.is_finite()) {
        return Err(Failure::Validation("--demand must be > 0".into()));
    }
    let scenario = scenario_arg(scenario_path)?;
    let store = load_store(store_path, out)?;
    let now = now.or(store.latest_ts()).unwrap_or(0.0);
    let cmp = compare_plans(&store, &scenario, demand, spec, now);
    let mut table = Table::new(&[
        "planner",
        "total_cost",
        "throughput",
        "feasible",
        "gap_pct",
        "allocation",
    ]);
    let gap = cmp.gap().map_or("-".into(), |g| format!("{:.1}", g * 100.0));
    table.rows.push(plan_row("greedy", &cmp.greedy, gap));
    if let Ok(o) = &cmp.oracle {
        table.rows.push(plan_row("oracle", o, "-".into()));
    }
    let _ = writeln!(out, "# spec {spec}, demand {demand}");
    emit(&table, csv, out)?;
    if let Err(size) = cmp.oracle {
        let _ = writeln!(out, "# oracle skipped: {size} allocations exceed {ORACLE_SEARCH_LIMIT}");
    }
    if !cmp.unknown.is_empty() {
        let _ = writeln!(out, "# unknown (benchmark these): {}", cmp.unknown.join(" "));
    }
    Ok(())
}

fn cmd_serve(path: &Path, seed: Option<u64>, addr: SocketAddr, out: &mut dyn Write) -> Outcome {
    let mut scenario = scenario_arg(path)?;
    if let Some(s) = seed {
        scenario.seed = s;
    }
    let mut sim = Simulation::new(&scenario).map_err(|e| Failure::Validation(e.to_string()))?;
    sim.disable_trace();
    let service = glidebench_api::Service::new(sim);
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::Io(e.to_string()))?;
    let _ = writeln!(out, "serving {}/* on http://{addr}", glidebench_api::PREFIX);
    let _ = out.flush();
    rt.block_on(glidebench_api::serve(service, addr))
        .map_err(|e| Failure::Io(format!("{addr}: {e}")))
}
