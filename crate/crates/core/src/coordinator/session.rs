use std::collections::{HashMap, VecDeque};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::agents::{
    extract_code, invoke_agent, invoke_channel, parse_blueprint_response, parse_verifier_verdict,
    render_coordinator_prompt, render_prompt, AgentBackend, AgentError, AgentRole, AgentTarget, EvaluatorVerdict,
    PromptContext, TokenUsage,
};
use crate::blueprint::{to_document, validate_blueprint, ModelingBlueprint};
use crate::evaluation::{compute_cost, score_solution, BenchmarkRow, ProblemEntry, ScoringPackage};
use crate::feasibility::{check_solution, classify_failure, FailureEvidence, FeasibilityReport};
use crate::memory::{Outcome, SessionMemory, MISMATCH, SUCCESS};
use crate::model::{compile_blueprint, ModelIR};
use crate::solution::{SolutionCandidate, SolveStatus};
use crate::solver::sandbox::{exception_label, run_sandbox, SandboxRequest, SandboxStatus};
use crate::solver::{solve_enumeration, solve_external, Invocation};

use super::policy::{Artifacts, Failure, LastStep, SessionView, MISSING_ARTIFACT, RESTART_REQUESTED};
use super::{
    apply_guards, next_route, parse_routing_reply, ConfigError, ExecutionConfig, PolicyMode, RoutingDecision,
    ScriptedExecution, SessionConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Solved,
    InfeasibleFinal,
    BudgetExhausted,
    Error,
}

impl SessionStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SessionStatus::Solved => "solved",
            SessionStatus::InfeasibleFinal => "infeasible_final",
            SessionStatus::BudgetExhausted => "budget_exhausted",
            SessionStatus::Error => "error",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UsageTotals {
    pub seconds: f64,
    pub tokens: TokenUsage,
    /// `None` when no priced model is configured.
    pub cost_usd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionResult {
    pub problem_id: String,
    pub status: SessionStatus,
    pub solution: Option<SolutionCandidate>,
    pub feasibility: Option<FeasibilityReport>,
    pub evaluation: Option<EvaluatorVerdict>,
    pub judge_disagreement: Option<String>,
    pub memory: SessionMemory,
    pub usage: UsageTotals,
    pub message: Option<String>,
}

impl SessionResult {
    /// Summary document; the full trace is written separately.
    pub fn to_json(&self) -> Value {
        json!({
            "problem_id": self.problem_id,
            "status": self.status.as_str(),
            "steps": self.memory.step_count(),
            "solution": self.solution,
            "feasibility": self.feasibility,
            "evaluation": self.evaluation,
            "judge_disagreement": self.judge_disagreement,
            "usage": self.usage,
            "message": self.message,
            "debug_log": self.memory.debug_lines(),
        })
    }

    /// The benchmark row for this run. Without a feasibility spec the row is
    /// unverifiable and never counts as feasible.
    pub fn benchmark_row(&self, verifiable: bool) -> BenchmarkRow {
        let feasible = self.feasibility.as_ref().is_some_and(|r| r.feasible);
        BenchmarkRow {
            id: self.problem_id.clone(),
            status: self.status.as_str().to_string(),
            numerical: self.solution.as_ref().is_some_and(|s| s.assignment.is_some()),
            feasible: verifiable.then_some(feasible),
            scores: self.evaluation.as_ref().map(|e| e.scores),
            duration_seconds: self.usage.seconds,
            tokens: self.usage.tokens,
            cost_usd: self.usage.cost_usd,
            judge_disagreement: self.judge_disagreement.clone(),
        }
    }
}

enum Verdict {
    Solved,
    Final,
    Restart,
}

fn is_exception_name(label: &str) -> bool {
    ["Error", "Exception", "Interrupt", "Exit"].iter().any(|s| label.ends_with(s))
}

/// Agent responsible for a failure reported as free text, and its label.
fn attribute(text: &str, default_label: &str) -> (AgentRole, String) {
    if let Some(label) = exception_label(text).filter(|l| is_exception_name(l)) {
        return (AgentRole::Modeler, label);
    }
    let lower = text.to_ascii_lowercase();
    if lower.contains("non-linear") || lower.contains("nonlinear") {
        (AgentRole::Analyzer, "StructuralNonlinearity".into())
    } else if lower.contains("infeasib") {
        (AgentRole::Solver, "Infeasibility".into())
    } else {
        (AgentRole::Solver, default_label.into())
    }
}

fn missing(acted: AgentTarget, stage: AgentRole) -> Failure {
    let mut f = failure(acted, acted, MISSING_ARTIFACT, format!("{acted} needs the {stage} output first"));
    f.missing = Some(stage);
    f
}

fn failure(acted: AgentTarget, responsible: impl Into<AgentTarget>, label: impl Into<String>, message: impl Into<String>) -> Failure {
    Failure { acted, responsible: responsible.into(), label: label.into(), message: message.into(), missing: None }
}

struct Session<'a> {
    problem: &'a ProblemEntry,
    cfg: &'a SessionConfig,
    backends: HashMap<AgentRole, AgentBackend>,
    coordinator: Option<AgentBackend>,
    reference: Option<ModelIR>,
    mem: SessionMemory,
    blueprint: Option<ModelingBlueprint>,
    code: Option<String>,
    model: Option<ModelIR>,
    candidate: Option<SolutionCandidate>,
    report: Option<FeasibilityReport>,
    evaluation: Option<EvaluatorVerdict>,
    disagreement: Option<String>,
    feedback: Option<String>,
    last: Option<LastStep>,
    tokens: TokenUsage,
    executions: VecDeque<ScriptedExecution>,
    /// Why the last candidate could not be checked, if it could not.
    check_error: Option<String>,
}

impl Session<'_> {
    fn artifacts(&self) -> Artifacts {
        Artifacts {
            blueprint: self.blueprint.is_some(),
            code: self.code.is_some(),
            model: self.model.is_some(),
            solution: self.candidate.as_ref().is_some_and(|c| c.assignment.is_some()),
        }
    }

    fn describe_last(&self) -> String {
        match &self.last {
            None => "none (session start)".into(),
            Some(LastStep::Completed(t)) => format!("{t} completed successfully"),
            Some(LastStep::Failed(f)) => format!("{} failed with {}: {}", f.acted, f.label, f.message),
            Some(LastStep::RestartRequested) => "evaluator requested a restart".into(),
        }
    }

    fn propose(&mut self) -> RoutingDecision {
        let view = SessionView { last: self.last.clone(), artifacts: self.artifacts() };
        let rule = next_route(&view, self.cfg.policy);
        let Some(backend) = self.coordinator.clone().filter(|_| self.cfg.policy == PolicyMode::Remote) else {
            return rule;
        };
        let history: Vec<String> = self.mem.routing_history().iter().map(RoutingDecision::render).collect();
        let ctx = PromptContext::new()
            .with("problem_text", &self.problem.problem)
            .with("last_step", self.describe_last())
            .with("routing_history", history.join("\n\n"))
            .with("debug_log", self.mem.debug_lines().join("\n"));
        let reply = render_coordinator_prompt(&ctx)
            .and_then(|p| invoke_channel("coordinator", &p, &backend, &self.cfg.agent_limits()));
        let parsed = match reply {
            Ok(resp) => {
                self.tokens += resp.usage;
                parse_routing_reply(&resp.text).map_err(|e| e.to_string())
            }
            Err(e) => Err(e.to_string()),
        };
        match parsed {
            Ok(mut d) => {
                if let Some(stage) = view.artifacts.gap(d.target_agent.role) {
                    d.reasoning = format!("{} [redirected: {} has no input yet]", d.reasoning, d.target_agent);
                    d.original_target = Some(d.target_agent);
                    d.target_agent = stage.into();
                    d.guard_overridden = true;
                }
                d
            }
            Err(e) => {
                let mut d = rule;
                d.reasoning = format!("{} [remote policy fallback: {e}]", d.reasoning);
                d.guard_overridden = true;
                d
            }
        }
    }

    fn ask(&mut self, target: AgentTarget, ctx: &PromptContext) -> Result<String, Failure> {
        let agent_failure = |e: AgentError| failure(target, target, e.label(), e.to_string());
        let prompt = render_prompt(target.role, ctx, &self.mem).map_err(agent_failure)?;
        let resp = invoke_agent(target.role, &prompt, &self.backends[&target.role], &self.cfg.agent_limits())
            .map_err(agent_failure)?;
        self.tokens += resp.usage;
        Ok(resp.text)
    }

    fn with_feedback(&self, mut ctx: PromptContext) -> PromptContext {
        if let Some(f) = &self.feedback {
            ctx.set("feedback", f);
        }
        ctx
    }

    fn analyze(&mut self, target: AgentTarget) -> Result<(), Failure> {
        let mut ctx = PromptContext::new().with("problem_text", &self.problem.problem);
        for (k, v) in &self.cfg.knowledge {
            ctx.set(k, v);
        }
        let text = self.ask(target, &self.with_feedback(ctx))?;
        let invalid = |message: String| failure(target, target, "BlueprintInvalid", message);
        let (bp, _) = parse_blueprint_response(&text).map_err(|e| invalid(e.to_string()))?;
        let report = validate_blueprint(&bp);
        if report.has_errors() {
            let msgs: Vec<String> = report.errors().map(|f| format!("{}: {}", f.path, f.message)).collect();
            return Err(invalid(msgs.join("; ")));
        }
        self.mem.artifacts.insert("blueprint".into(), to_document(&bp));
        self.blueprint = Some(bp);
        self.code = None;
        self.model = None;
        self.candidate = None;
        self.report = None;
        Ok(())
    }

    fn build_model(&mut self, target: AgentTarget) -> Result<(), Failure> {
        let bp = self.blueprint.clone().ok_or_else(|| missing(target, AgentRole::Analyzer))?;
        let ctx = PromptContext::new().with("analysis_result_str", to_document(&bp));
        let text = self.ask(target, &self.with_feedback(ctx))?;
        let code = extract_code(&text).map_err(|e| failure(target, target, "MissingCode", e.to_string()))?;
        let model = compile_blueprint(&bp).map_err(|e| failure(target, target, e.label(), e.to_string()))?;
        self.mem.artifacts.insert("model_code".into(), code.body.clone());
        self.code = Some(code.body);
        self.model = Some(model);
        self.candidate = None;
        self.report = None;
        Ok(())
    }

    fn verify(&mut self, target: AgentTarget) -> Result<(), Failure> {
        let ctx = PromptContext::new()
            .with("safe_original_problem", &self.problem.problem)
            .with("safe_pyomo_code", self.code.clone().unwrap_or_default());
        if self.code.is_none() {
            return Err(missing(target, AgentRole::Modeler));
        }
        let text = self.ask(target, &ctx)?;
        let verdict = parse_verifier_verdict(&text).map_err(|e| failure(target, target, e.label(), e.to_string()))?;
        if verdict.passed() {
            return Ok(());
        }
        self.feedback = Some(format!("{}\n{}", verdict.mismatch_reason, verdict.suggestion));
        Err(failure(target, target, MISMATCH, format!("Verifier confirmed mismatch: {}", verdict.mismatch_reason)))
    }

    fn crash(&self, target: AgentTarget, stderr: &str) -> Failure {
        let (who, label) = attribute(stderr, "ExecutionFault");
        let mut lines = stderr.lines().map(str::trim).filter(|l| !l.is_empty());
        // Tracebacks end with the exception line; that line is the trigger.
        let text = match lines.clone().rev().find(|l| l.starts_with(&format!("{label}:"))) {
            Some(line) => line.to_string(),
            None if lines.next().is_none() => "model script crashed".to_string(),
            None => stderr.trim().to_string(),
        };
        failure(target, who, label, text)
    }

    /// Runs the model with the configured execution backend.
    fn execute(&mut self, target: AgentTarget, model: &ModelIR) -> Result<SolutionCandidate, Failure> {
        let limits = self.cfg.limits;
        let solver_fault = |label: &str, e: &dyn std::fmt::Display| {
            let (who, label) = attribute(&e.to_string(), label);
            let who = if label == "NonlinearModel" || label == "UnsupportedStructure" { AgentRole::Analyzer } else { who };
            failure(target, who, label, e.to_string())
        };
        let run_enumeration = |m: &ModelIR| solve_enumeration(m, &limits).map_err(|e| solver_fault(e.label(), &e));
        match &self.cfg.execution {
            ExecutionConfig::Enumeration => run_enumeration(model),
            ExecutionConfig::External { command } => solve_external(model, command, &limits).map_err(|e| solver_fault(e.label(), &e)),
            ExecutionConfig::Sandbox { runner, output_byte_cap } => {
                let inv = Invocation::new(runner[0].clone(), runner[1..].iter().cloned());
                let req = SandboxRequest {
                    script: self.code.clone().unwrap_or_default(),
                    wall_clock_seconds: limits.wall_clock_seconds,
                    output_byte_cap: *output_byte_cap,
                };
                let result = run_sandbox(&inv, &req, &limits).map_err(|e| solver_fault("ExecutionFault", &e))?;
                match result.status {
                    SandboxStatus::Crash => Err(self.crash(target, &result.stderr_tail)),
                    SandboxStatus::ProtocolError => Err(failure(
                        target,
                        AgentRole::Modeler,
                        "ResultProtocol",
                        "model script did not print exactly one result line",
                    )),
                    _ => Ok(result.into_candidate(model)),
                }
            }
            ExecutionConfig::Scripted { .. } => match self.executions.pop_front() {
                None | Some(ScriptedExecution::Enumerate) => run_enumeration(model),
                Some(ScriptedExecution::Crash { stderr }) => Err(self.crash(target, &stderr)),
                Some(ScriptedExecution::Timeout) => {
                    Ok(SolutionCandidate::without_point(SolveStatus::Timeout, "scripted", "script exceeded the wall-clock limit".to_string()))
                }
                Some(ScriptedExecution::Status { status, message }) => {
                    // A point cannot be scripted; point statuses solve for real.
                    if status.has_point() {
                        run_enumeration(model)
                    } else {
                        Ok(SolutionCandidate::without_point(status, "scripted", message))
                    }
                }
            },
        }
    }

    fn solve(&mut self, target: AgentTarget) -> Result<(), Failure> {
        let model = self.model.clone().ok_or_else(|| missing(target, AgentRole::Modeler))?;
        let ctx = PromptContext::new()
            .with("solver_backend", self.cfg.execution.name())
            .with("time_limit", self.cfg.limits.wall_clock_seconds.to_string())
            .with("problem_text", &self.problem.problem)
            .with("model_code", self.code.clone().unwrap_or_default());
        self.ask(target, &ctx)?;
        let cand = self.execute(target, &model)?;
        let note = cand.message.clone().unwrap_or_default();
        match cand.status {
            s if s.has_point() => {
                let report = check_solution(&model, &cand, &self.cfg.tolerance)
                    .map_err(|e| failure(target, target, "ExecutionFault", e.to_string()))?;
                if !report.feasible {
                    let ev = FailureEvidence {
                        report: Some(&report),
                        solver_status: Some(cand.status),
                        model: Some(&model),
                        ..FailureEvidence::default()
                    };
                    let class = classify_failure(&ev).as_str();
                    let rows: Vec<&str> = report.violated().map(|c| c.row_id.as_str()).collect();
                    return Err(failure(target, target, class, format!("{class}: solution violates {}", rows.join(", "))));
                }
                self.candidate = Some(cand);
                self.report = Some(report);
                Ok(())
            }
            SolveStatus::Infeasible => {
                Err(failure(target, target, "Infeasibility", format!("Infeasibility: solver reported the model infeasible {note}").trim_end().to_string()))
            }
            SolveStatus::Unbounded => Err(failure(target, AgentRole::Analyzer, "Unbounded", format!("Unbounded objective {note}").trim_end().to_string())),
            SolveStatus::Timeout => Err(failure(target, target, "Timeout", format!("solver timed out {note}").trim_end().to_string())),
            _ => {
                let (who, label) = attribute(&note, "ExecutionFault");
                Err(failure(target, who, label, if note.is_empty() { "solver failed".to_string() } else { note }))
            }
        }
    }

    fn evaluate(&mut self, target: AgentTarget) -> Result<Verdict, Failure> {
        let Some(cand) = self.candidate.clone() else { return Err(missing(target, AgentRole::Solver)) };
        let checked_model = self.reference.as_ref().or(self.model.as_ref()).ok_or_else(|| missing(target, AgentRole::Modeler))?;
        let report = match check_solution(checked_model, &cand, &self.cfg.tolerance) {
            Ok(r) => Some(r),
            Err(e) => {
                self.check_error = Some(e.to_string());
                None
            }
        };
        let code = self.code.clone().unwrap_or_default();
        let pkg = ScoringPackage {
            problem_text: &self.problem.problem,
            model_code: &code,
            candidate: &cand,
            report: report.as_ref(),
        };
        let judged = score_solution(&pkg, &self.backends[&AgentRole::Evaluator], &self.cfg.agent_limits(), &self.mem)
            .map_err(|e| failure(target, target, e.label(), e.to_string()))?;
        self.tokens += judged.usage;
        self.report = report;
        self.disagreement = judged.disagreement.clone();
        let restart = judged.verdict.restart;
        if restart {
            self.feedback = Some(judged.verdict.commentary.clone());
        }
        self.evaluation = Some(judged.verdict);
        Ok(match (judged.feasible, restart) {
            (true, false) => Verdict::Solved,
            (false, false) => Verdict::Final,
            (_, true) => Verdict::Restart,
        })
    }

    fn step(&mut self, target: AgentTarget) -> Result<(), Failure> {
        match target.role {
            AgentRole::Analyzer => self.analyze(target),
            AgentRole::Modeler => self.build_model(target),
            AgentRole::Verifier => self.verify(target),
            AgentRole::Solver => self.solve(target),
            AgentRole::Evaluator => unreachable!("evaluator steps are handled by the loop"),
        }
    }

    fn fail(&mut self, f: Failure) {
        self.mem.record_attempt(f.responsible.name(), &f.label, Outcome::Failure);
        if f.label != MISMATCH && f.label != MISSING_ARTIFACT {
            self.feedback = Some(format!("{}: {}", f.label, f.message));
        }
        self.last = Some(LastStep::Failed(f));
    }

    fn stopped(&self) -> SessionStatus {
        if self.mem.step_count() >= self.cfg.max_steps {
            SessionStatus::BudgetExhausted
        } else {
            SessionStatus::InfeasibleFinal
        }
    }

    fn run(&mut self) -> SessionStatus {
        loop {
            let proposed = self.propose();
            let d = apply_guards(proposed, &self.mem, self.cfg);
            let (target, keep_going) = (d.target_agent, d.should_continue);
            self.mem.push_route(d);
            if target.role == AgentRole::Evaluator {
                match self.evaluate(target) {
                    Ok(Verdict::Solved) => {
                        self.mem.record_attempt(target.name(), SUCCESS, Outcome::Success);
                        return SessionStatus::Solved;
                    }
                    Ok(Verdict::Final) => {
                        let label = self
                            .report
                            .as_ref()
                            .map(|r| classify_failure(&FailureEvidence { report: Some(r), ..FailureEvidence::default() }))
                            .map_or("Infeasibility", |c| c.as_str());
                        self.mem.record_attempt(target.name(), label, Outcome::Failure);
                        return SessionStatus::InfeasibleFinal;
                    }
                    Ok(Verdict::Restart) => {
                        self.mem.record_attempt(target.name(), RESTART_REQUESTED, Outcome::Failure);
                        if self.mem.step_count() >= self.cfg.max_steps {
                            return SessionStatus::BudgetExhausted;
                        }
                        self.last = Some(LastStep::RestartRequested);
                        continue;
                    }
                    Err(f) => self.fail(f),
                }
            } else {
                match self.step(target) {
                    Ok(()) => {
                        self.mem.record_attempt(target.name(), SUCCESS, Outcome::Success);
                        if matches!(target.role, AgentRole::Analyzer | AgentRole::Modeler) {
                            self.feedback = None;
                        }
                        self.last = Some(LastStep::Completed(target));
                    }
                    Err(f) => self.fail(f),
                }
            }
            if !keep_going {
                return self.stopped();
            }
        }
    }

    fn cost(&self) -> Option<f64> {
        let remote = self
            .cfg
            .backends
            .values()
            .chain(self.cfg.coordinator_backend.iter())
            .find_map(|b| b.model_name().map(str::to_string));
        let model = self.cfg.pricing_model.clone().or(remote)?;
        let pricing = self.cfg.pricing.clone().unwrap_or_default();
        compute_cost(self.tokens, &model, &pricing).ok()
    }
}

/// Solves one problem end to end. Agent and solver failures are routed
/// inside the loop; only configuration problems are returned as errors.
pub fn run_session(problem: &ProblemEntry, cfg: &SessionConfig) -> Result<SessionResult, ConfigError> {
    let started = Instant::now();
    cfg.validate()?;
    let mut backends = HashMap::new();
    for role in AgentRole::ALL {
        backends.insert(role, cfg.backends[&role].build(role.as_str(), &cfg.base_dir)?);
    }
    let coordinator = match (&cfg.coordinator_backend, cfg.policy) {
        (Some(b), PolicyMode::Remote) => Some(b.build("coordinator", &cfg.base_dir)?),
        _ => None,
    };
    let reference = problem
        .reference_blueprint()
        .map_err(|e| ConfigError::Invalid(e.to_string()))?
        .map(|bp| compile_blueprint(&bp))
        .transpose()
        .map_err(|e| ConfigError::Invalid(format!("feasibility spec of `{}`: {e}", problem.id)))?;
    let executions = match &cfg.execution {
        ExecutionConfig::Scripted { outcomes } => outcomes.iter().cloned().collect(),
        _ => VecDeque::new(),
    };
    let mut s = Session {
        problem,
        cfg,
        backends,
        coordinator,
        reference,
        mem: SessionMemory::new(),
        blueprint: None,
        code: None,
        model: None,
        candidate: None,
        report: None,
        evaluation: None,
        disagreement: None,
        feedback: None,
        last: None,
        tokens: TokenUsage::default(),
        executions,
        check_error: None,
    };
    let status = s.run();
    let message = match (&s.last, status) {
        (Some(LastStep::Failed(f)), SessionStatus::BudgetExhausted | SessionStatus::InfeasibleFinal) => {
            Some(format!("last failure: {} ({})", f.label, f.responsible))
        }
        (_, SessionStatus::InfeasibleFinal) => match (&s.report, &s.check_error) {
            (Some(r), _) => {
                let rows: Vec<&str> = r.violated().map(|c| c.row_id.as_str()).take(5).collect();
                Some(format!("solution fails the feasibility check; violated rows: {}", rows.join(", ")))
            }
            (None, Some(e)) => Some(format!("solution cannot be checked: {e}")),
            (None, None) => None,
        },
        _ => None,
    };
    let usage = UsageTotals { seconds: started.elapsed().as_secs_f64(), tokens: s.tokens, cost_usd: s.cost() };
    Ok(SessionResult {
        problem_id: problem.id.clone(),
        status,
        solution: s.candidate.take(),
        feasibility: s.report.take(),
        evaluation: s.evaluation.take(),
        judge_disagreement: s.disagreement.take(),
        memory: s.mem,
        usage,
        message,
    })
}
