//! Operator commands behind the `engiweave` binary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::{json, Value};

use engiweave::blueprint::parse_blueprint;
use engiweave::coordinator::{run_session, PolicyMode, SessionConfig, SessionStatus};
use engiweave::evaluation::{aggregate_benchmark, load_dataset, BenchmarkRow, ProblemEntry};
use engiweave::expand::expand;
use engiweave::feasibility::{check_solution, FeasibilityReport, TolerancePolicy};
use engiweave::interchange::{emit_interchange, parse_solution_file};
use engiweave::memory::{parse_trace, serialize_trace};
use engiweave::model::{compile_blueprint, ModelIR};
use engiweave::solution::SolutionCandidate;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandOutcome {
    pub code: u8,
    pub summary: String,
    /// Main file written, if any.
    pub output: Option<PathBuf>,
}

impl CommandOutcome {
    fn error(message: impl Into<String>) -> Self {
        Self { code: 1, summary: message.into(), output: None }
    }
}

/// Command-line settings layered over a config file.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub policy: Option<PolicyMode>,
    /// Accepted for reproducibility records; sessions draw no random numbers.
    pub seed: Option<u64>,
}

pub fn exit_code(status: SessionStatus) -> u8 {
    match status {
        SessionStatus::Solved => 0,
        SessionStatus::InfeasibleFinal => 2,
        SessionStatus::BudgetExhausted => 3,
        SessionStatus::Error => 1,
    }
}

pub fn verify_exit_code(report: &FeasibilityReport) -> u8 {
    if report.feasible {
        0
    } else {
        2
    }
}

/// Processor count capped at 8.
pub fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get()).min(8)
}

fn load_config(path: &Path, o: &Overrides) -> Result<SessionConfig, String> {
    let mut cfg = SessionConfig::load(path).map_err(|e| e.to_string())?;
    if let Some(p) = o.policy {
        cfg.policy = p;
        cfg.validate().map_err(|e| e.to_string())?;
    }
    Ok(cfg)
}

fn write(path: &Path, text: &str) -> Result<(), String> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
    }
    std::fs::write(path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("values serialize");
    s.push('\n');
    s
}

fn pick(entries: Vec<ProblemEntry>, id: Option<&str>) -> Result<ProblemEntry, String> {
    match id {
        Some(id) => entries.into_iter().find(|e| e.id == id).ok_or_else(|| format!("no problem `{id}` in the manifest")),
        None if entries.len() == 1 => Ok(entries.into_iter().next().expect("one entry")),
        None => Err(format!("manifest holds {} problems; pick one with --id", entries.len())),
    }
}

pub fn cmd_solve(problem: &Path, config: &Path, id: Option<&str>, out: &Path, o: &Overrides) -> CommandOutcome {
    match solve(problem, config, id, out, o) {
        Ok(outcome) => outcome,
        Err(e) => CommandOutcome::error(e),
    }
}

fn solve(problem: &Path, config: &Path, id: Option<&str>, out: &Path, o: &Overrides) -> Result<CommandOutcome, String> {
    let cfg = load_config(config, o)?;
    let entry = pick(load_dataset(problem).map_err(|e| e.to_string())?, id)?;
    let result = run_session(&entry, &cfg).map_err(|e| e.to_string())?;

    let mut doc = result.to_json();
    doc["policy"] = json!(cfg.policy);
    doc["seed"] = json!(o.seed);
    let result_path = out.join(format!("{}.result.json", entry.id));
    let trace_path = out.join(format!("{}.trace.jsonl", entry.id));
    write(&result_path, &pretty(&doc))?;
    write(&trace_path, &serialize_trace(&result.memory))?;

    let mut summary = format!("{}: {} after {} steps", entry.id, result.status.as_str(), result.memory.step_count());
    if let Some(v) = result.solution.as_ref().and_then(|s| s.objective_value) {
        let _ = write!(summary, ", objective {v}");
    }
    if let Some(r) = &result.feasibility {
        let _ = write!(summary, ", feasible {}", u8::from(r.feasible));
    }
    if let Some(m) = &result.message {
        let _ = write!(summary, "\n{m}");
    }
    let _ = write!(summary, "\nresult {}\ntrace {}", result_path.display(), trace_path.display());
    Ok(CommandOutcome { code: exit_code(result.status), summary, output: Some(result_path) })
}

/// Maps solution-file columns onto the model's variables.
fn candidate_from_file(m: &ModelIR, text: &str) -> Result<SolutionCandidate, String> {
    let file = parse_solution_file(text).map_err(|e| e.to_string())?;
    if !file.status.has_point() {
        return Err(format!("solution status {} carries no point", file.status));
    }
    let ex = expand(m).map_err(|e| e.to_string())?;
    if let Some(unknown) = file.values.keys().find(|k| ex.column_index(k).is_none()) {
        return Err(format!("solution names unknown column `{unknown}`"));
    }
    let missing: Vec<&str> =
        ex.columns.iter().filter(|c| !file.values.contains_key(&c.name)).map(|c| c.name.as_str()).collect();
    if !missing.is_empty() {
        return Err(format!("solution has no value for {}", missing.join(", ")));
    }
    let x: Vec<f64> = ex.columns.iter().map(|c| file.values[&c.name]).collect();
    let objective = match &m.objective {
        Some(o) => engiweave::model::eval_expression(&o.expr, &ex.assignment(m, &x), m).map_err(|e| e.to_string())?,
        None => file.objective.unwrap_or(0.0),
    };
    Ok(SolutionCandidate::with_point(file.status, ex.assignment(m, &x), objective, "file"))
}

fn load_model(path: &Path) -> Result<ModelIR, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let bp = parse_blueprint(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    compile_blueprint(&bp).map_err(|e| format!("{}: {e}", path.display()))
}

pub fn render_report(r: &FeasibilityReport) -> String {
    let mut s = format!("feasible {}\n", u8::from(r.feasible));
    let _ = writeln!(s, "rows checked {}, violated {}", r.per_constraint.len(), r.violated().count());
    for c in r.violated() {
        let _ = write!(s, "violated {} [{}]: lhs {} rhs {} residual {}", c.row_id, c.category.label(), c.lhs, c.rhs, c.residual);
        if let Some(e) = &c.error {
            let _ = write!(s, " ({e})");
        }
        s.push('\n');
    }
    for b in &r.bound_violations {
        let _ = writeln!(s, "bound {}: {} outside [{}, {}]", b.column, b.value, b.lower, b.upper);
    }
    for i in &r.integrality_violations {
        let _ = writeln!(s, "integrality {}: {}", i.column, i.value);
    }
    if !r.data_consistency.checked {
        s.push_str("data consistency not checked (no parameter snapshot)\n");
    }
    for m in &r.data_consistency.mismatches {
        let _ = writeln!(s, "data mismatch {}", m.param_id);
    }
    s.truncate(s.trim_end().len());
    s
}

pub fn cmd_verify(model: &Path, solution: &Path, out: Option<&Path>) -> CommandOutcome {
    let run = || -> Result<CommandOutcome, String> {
        let m = load_model(model)?;
        let text = std::fs::read_to_string(solution).map_err(|e| format!("cannot read {}: {e}", solution.display()))?;
        let cand = candidate_from_file(&m, &text).map_err(|e| format!("{}: {e}", solution.display()))?;
        let report = check_solution(&m, &cand, &TolerancePolicy::default()).map_err(|e| e.to_string())?;
        if let Some(path) = out {
            write(path, &pretty(&json!(report)))?;
        }
        Ok(CommandOutcome { code: verify_exit_code(&report), summary: render_report(&report), output: out.map(Path::to_path_buf) })
    };
    run().unwrap_or_else(CommandOutcome::error)
}

fn error_row(entry: &ProblemEntry, message: &str) -> BenchmarkRow {
    BenchmarkRow {
        id: entry.id.clone(),
        status: SessionStatus::Error.as_str().to_string(),
        numerical: false,
        feasible: entry.feasibility_spec.is_some().then_some(false),
        scores: None,
        duration_seconds: 0.0,
        tokens: Default::default(),
        cost_usd: None,
        judge_disagreement: Some(format!("session error: {message}")),
    }
}

pub fn cmd_bench(manifest: &Path, config: &Path, out: &Path, workers: usize, method: &str, o: &Overrides) -> CommandOutcome {
    let run = || -> Result<CommandOutcome, String> {
        let cfg = load_config(config, o)?;
        let entries = load_dataset(manifest).map_err(|e| e.to_string())?;
        let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build().map_err(|e| e.to_string())?;
        let runs: Vec<(BenchmarkRow, Option<String>)> = pool.install(|| {
            entries
                .par_iter()
                .map(|entry| match run_session(entry, &cfg) {
                    Ok(r) => (r.benchmark_row(entry.feasibility_spec.is_some()), Some(serialize_trace(&r.memory))),
                    Err(e) => (error_row(entry, &e.to_string()), None),
                })
                .collect()
        });
        let mut rows = Vec::with_capacity(runs.len());
        for (row, trace) in runs {
            if let Some(t) = trace {
                write(&out.join("traces").join(format!("{}.trace.jsonl", row.id)), &t)?;
            }
            rows.push(row);
        }
        let mut report = aggregate_benchmark(rows);
        if let Some(seed) = o.seed {
            report.notes.push(format!("seed {seed}"));
        }
        let json_path = out.join("report.json");
        let text = report.render_text(method);
        write(&json_path, &pretty(&json!(report)))?;
        write(&out.join("report.txt"), &text)?;
        Ok(CommandOutcome { code: 0, summary: text.trim_end().to_string(), output: Some(json_path) })
    };
    run().unwrap_or_else(CommandOutcome::error)
}

/// Echo of a trace: each routing decision followed by the debug lines of its step.
pub fn cmd_replay(trace: &Path) -> CommandOutcome {
    let text = match std::fs::read_to_string(trace) {
        Ok(t) => t,
        Err(e) => return CommandOutcome::error(format!("cannot read {}: {e}", trace.display())),
    };
    let parsed = match parse_trace(&text) {
        Ok(p) => p,
        Err(e) => return CommandOutcome::error(format!("{}: {e}", trace.display())),
    };
    let mem = &parsed.memory;
    let mut out = String::new();
    let mut entries = mem.entries().iter().peekable();
    for step in 0..=mem.routing_history().len() {
        if step > 0 {
            let _ = writeln!(out, "step {step}\n{}", mem.routing_history()[step - 1].render());
        }
        while let Some(e) = entries.next_if(|e| e.step <= step) {
            let _ = writeln!(out, "{}", e.debug_line());
        }
    }
    for e in entries {
        let _ = writeln!(out, "{}", e.debug_line());
    }
    for m in &parsed.mismatches {
        let _ = writeln!(out, "counter mismatch at {m}");
    }
    let code = if parsed.mismatches.is_empty() { 0 } else { 2 };
    out.truncate(out.trim_end().len());
    CommandOutcome { code, summary: out, output: None }
}

pub fn cmd_emit_model(model: &Path, out: Option<&Path>) -> CommandOutcome {
    let run = || -> Result<CommandOutcome, String> {
        let m = load_model(model)?;
        let doc = emit_interchange(&m).map_err(|e| e.to_string())?;
        match out {
            Some(path) => {
                write(path, &doc)?;
                Ok(CommandOutcome { code: 0, summary: format!("wrote {}", path.display()), output: Some(path.to_path_buf()) })
            }
            None => Ok(CommandOutcome { code: 0, summary: doc.trim_end().to_string(), output: None }),
        }
    };
    run().unwrap_or_else(CommandOutcome::error)
}
