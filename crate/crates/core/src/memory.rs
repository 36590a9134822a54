//! Per-session attempt history, failure counters and trace files.

use std::collections::BTreeMap;
use std::fmt;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::coordinator::RoutingDecision;

pub const DEBUG_LINE_PREFIX: &str = "Record debugging attempt: ";
/// Label of a verifier failure that counts toward tolerance escalation.
pub const MISMATCH: &str = "mismatch";
/// Label recorded with successful attempts.
pub const SUCCESS: &str = "success";
const VERIFIER: &str = "verifier";
const TRACE_FORMAT: &str = "engiweave-trace/1";
const MEMORY_NOTE: &str = "memory and counters are preserved across evaluator restarts";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Success,
    Failure,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Success => "success",
            Outcome::Failure => "failure",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DebugEntry {
    pub agent: String,
    pub error_label: String,
    pub outcome: Outcome,
    pub timestamp_ms: u64,
    pub step: usize,
}

impl DebugEntry {
    /// `Record debugging attempt: <agent> -- <error_label> -- <outcome>`
    pub fn debug_line(&self) -> String {
        format!("{DEBUG_LINE_PREFIX}{} -- {} -- {}", self.agent, self.error_label, self.outcome.as_str())
    }
}

/// Consecutive-failure counters, all derivable from the entry list.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Counters {
    /// (agent, error label) → failures since that agent's last success.
    pub by_class: BTreeMap<(String, String), u32>,
    /// Verifier mismatches since the verifier's last success.
    pub verification_failures: u32,
}

impl Counters {
    fn apply(&mut self, agent: &str, label: &str, outcome: Outcome) {
        match outcome {
            Outcome::Failure => {
                *self.by_class.entry((agent.to_string(), label.to_string())).or_insert(0) += 1;
                if agent == VERIFIER && label == MISMATCH {
                    self.verification_failures += 1;
                }
            }
            Outcome::Success => {
                self.by_class.retain(|(a, _), _| a != agent);
                if agent == VERIFIER {
                    self.verification_failures = 0;
                }
            }
        }
    }

    pub fn get(&self, agent: &str, label: &str) -> u32 {
        self.by_class.get(&(agent.to_string(), label.to_string())).copied().unwrap_or(0)
    }

    /// Replays `entries` from empty counters.
    pub fn recompute(entries: &[DebugEntry]) -> Self {
        let mut c = Self::default();
        for e in entries {
            c.apply(&e.agent, &e.error_label, e.outcome);
        }
        c
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SessionMemory {
    entries: Vec<DebugEntry>,
    routing_history: Vec<RoutingDecision>,
    counters: Counters,
    /// Stage name → latest artifact text (blueprint document, model code, ...).
    pub artifacts: BTreeMap<String, String>,
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

fn one_line(label: &str) -> String {
    label.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl SessionMemory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[DebugEntry] {
        &self.entries
    }

    pub fn routing_history(&self) -> &[RoutingDecision] {
        &self.routing_history
    }

    pub fn step_count(&self) -> usize {
        self.routing_history.len()
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    pub fn consecutive_failures(&self, agent: &str, label: &str) -> u32 {
        self.counters.get(agent, label)
    }

    pub fn consecutive_verification_failures(&self) -> u32 {
        self.counters.verification_failures
    }

    pub fn last_entry(&self) -> Option<&DebugEntry> {
        self.entries.last()
    }

    pub fn push_route(&mut self, d: RoutingDecision) {
        self.routing_history.push(d);
    }

    /// Appends an entry for the current routing step. Labels are folded to
    /// one line so the debug line stays parseable.
    pub fn record_attempt(&mut self, agent: &str, error_label: &str, outcome: Outcome) -> &DebugEntry {
        let step = self.step_count();
        self.push_entry(DebugEntry {
            agent: agent.to_string(),
            error_label: one_line(error_label),
            outcome,
            timestamp_ms: now_ms(),
            step,
        })
    }

    fn push_entry(&mut self, e: DebugEntry) -> &DebugEntry {
        debug_assert!(self.entries.last().is_none_or(|l| l.step < e.step), "one entry per step");
        self.counters.apply(&e.agent, &e.error_label, e.outcome);
        self.entries.push(e);
        self.entries.last().expect("just pushed")
    }

    /// Whether the stored counters match a replay of the entry list.
    pub fn counters_consistent(&self) -> bool {
        Counters::recompute(&self.entries) == self.counters
    }

    /// Debug lines in entry order.
    pub fn debug_lines(&self) -> Vec<String> {
        self.entries.iter().map(DebugEntry::debug_line).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CounterValue {
    agent: String,
    error_label: String,
    count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Record {
    Header {
        format: String,
        memory: String,
    },
    Route {
        step: usize,
        #[serde(flatten)]
        decision: RoutingDecision,
    },
    Attempt {
        step: usize,
        agent: String,
        error_label: String,
        outcome: Outcome,
        timestamp_ms: u64,
        counters: Vec<CounterValue>,
        verification_failures: u32,
    },
}

fn snapshot(c: &Counters) -> Vec<CounterValue> {
    c.by_class
        .iter()
        .map(|((agent, error_label), &count)| CounterValue { agent: agent.clone(), error_label: error_label.clone(), count })
        .collect()
}

fn push_record(out: &mut String, r: &Record) {
    out.push_str(&serde_json::to_string(r).expect("trace records serialize"));
    out.push('\n');
}

/// Newline-delimited trace: a header, then for each step its route record
/// followed by the attempt record and literal debug line of that step.
pub fn serialize_trace(mem: &SessionMemory) -> String {
    let mut out = String::new();
    if mem.entries.is_empty() && mem.routing_history.is_empty() {
        return out;
    }
    push_record(&mut out, &Record::Header { format: TRACE_FORMAT.into(), memory: MEMORY_NOTE.into() });
    let mut running = Counters::default();
    let mut entries = mem.entries.iter().peekable();
    let mut attempt = |out: &mut String, e: &DebugEntry| {
        running.apply(&e.agent, &e.error_label, e.outcome);
        push_record(
            out,
            &Record::Attempt {
                step: e.step,
                agent: e.agent.clone(),
                error_label: e.error_label.clone(),
                outcome: e.outcome,
                timestamp_ms: e.timestamp_ms,
                counters: snapshot(&running),
                verification_failures: running.verification_failures,
            },
        );
        out.push_str(&e.debug_line());
        out.push('\n');
    };
    for step in 0..=mem.routing_history.len() {
        if step > 0 {
            push_record(&mut out, &Record::Route { step, decision: mem.routing_history[step - 1].clone() });
        }
        while let Some(e) = entries.next_if(|e| e.step <= step) {
            attempt(&mut out, e);
        }
    }
    // Entries past the last route; only reachable through hand-built memories.
    for e in entries {
        attempt(&mut out, e);
    }
    out
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TraceError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
}

/// A counter snapshot in a trace that disagrees with the replayed entries.
#[derive(Debug, Clone, PartialEq)]
pub struct CounterMismatch {
    pub line: usize,
    pub step: usize,
    pub recorded: Counters,
    pub recomputed: Counters,
}

impl fmt::Display for CounterMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "line {} (step {}): trace records {:?} / verification {}, entries give {:?} / verification {}",
            self.line,
            self.step,
            self.recorded.by_class,
            self.recorded.verification_failures,
            self.recomputed.by_class,
            self.recomputed.verification_failures
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedTrace {
    pub memory: SessionMemory,
    pub has_header: bool,
    pub mismatches: Vec<CounterMismatch>,
}

/// Parses a trace document, rebuilding the memory and checking every
/// recorded counter snapshot against the entries before it.
pub fn parse_trace(text: &str) -> Result<ParsedTrace, TraceError> {
    let mut mem = SessionMemory::new();
    let mut has_header = false;
    let mut mismatches = Vec::new();
    let mut pending_line: Option<String> = None;
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let bad = |message: String| TraceError::Malformed { line: n, message };
        if line.starts_with(DEBUG_LINE_PREFIX) {
            match pending_line.take() {
                Some(expected) if expected == line => continue,
                Some(expected) => return Err(bad(format!("debug line does not match its record, expected `{expected}`"))),
                None => return Err(bad("debug line without an attempt record".into())),
            }
        }
        if let Some(expected) = pending_line.take() {
            return Err(bad(format!("missing debug line `{expected}`")));
        }
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        match serde_json::from_value::<Record>(value).map_err(|e| bad(e.to_string()))? {
            Record::Header { .. } if n == 1 => has_header = true,
            Record::Header { .. } => return Err(bad("header after the first line".into())),
            Record::Route { step, decision } => {
                if step != mem.step_count() + 1 {
                    return Err(bad(format!("route step {step} out of sequence")));
                }
                mem.push_route(decision);
            }
            Record::Attempt { step, agent, error_label, outcome, timestamp_ms, counters, verification_failures } => {
                if mem.entries.last().is_some_and(|l| l.step >= step) {
                    return Err(bad(format!("attempt step {step} is not increasing")));
                }
                let entry = mem.push_entry(DebugEntry { agent, error_label, outcome, timestamp_ms, step });
                pending_line = Some(entry.debug_line());
                let recorded = Counters {
                    by_class: counters.into_iter().map(|c| ((c.agent, c.error_label), c.count)).collect(),
                    verification_failures,
                };
                if recorded != mem.counters {
                    mismatches.push(CounterMismatch { line: n, step, recorded, recomputed: mem.counters.clone() });
                }
            }
        }
    }
    if let Some(expected) = pending_line {
        return Err(TraceError::Malformed { line: text.lines().count() + 1, message: format!("missing debug line `{expected}`") });
    }
    Ok(ParsedTrace { memory: mem, has_header, mismatches })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::AgentRole;
    use crate::coordinator::{Priority, RoutingDecision};

    fn route(mem: &mut SessionMemory, target: AgentRole) {
        mem.push_route(RoutingDecision::new("t", target.into(), "s", Priority::High, 0.4, true, "r"));
    }

    #[test]
    fn import_failure_then_fix() {
        let mut mem = SessionMemory::new();
        route(&mut mem, AgentRole::Solver);
        mem.record_attempt("modeler", "ImportError", Outcome::Failure);
        assert_eq!(mem.consecutive_failures("modeler", "ImportError"), 1);
        route(&mut mem, AgentRole::Modeler);
        mem.record_attempt("modeler", SUCCESS, Outcome::Success);
        assert_eq!(mem.consecutive_failures("modeler", "ImportError"), 0);
        assert_eq!(
            mem.debug_lines(),
            [
                "Record debugging attempt: modeler -- ImportError -- failure",
                "Record debugging attempt: modeler -- success -- success"
            ]
        );
    }

    #[test]
    fn verification_counter_counts_mismatches() {
        let mut mem = SessionMemory::new();
        for _ in 0..3 {
            route(&mut mem, AgentRole::Verifier);
            mem.record_attempt("verifier", MISMATCH, Outcome::Failure);
        }
        assert_eq!(mem.consecutive_verification_failures(), 3);
        route(&mut mem, AgentRole::Verifier);
        mem.record_attempt("verifier", SUCCESS, Outcome::Success);
        assert_eq!(mem.consecutive_verification_failures(), 0);
        assert!(mem.counters().by_class.is_empty());
    }

    #[test]
    fn empty_memory_gives_empty_trace() {
        assert_eq!(serialize_trace(&SessionMemory::new()), "");
        let parsed = parse_trace("").unwrap();
        assert_eq!(parsed.memory.step_count(), 0);
        assert!(parsed.mismatches.is_empty());
    }

    #[test]
    fn trace_round_trip_and_tamper_detection() {
        let mut mem = SessionMemory::new();
        route(&mut mem, AgentRole::Modeler);
        mem.record_attempt("modeler", "RuntimeError", Outcome::Failure);
        route(&mut mem, AgentRole::Modeler);
        mem.record_attempt("modeler", "RuntimeError", Outcome::Failure);
        let doc = serialize_trace(&mem);
        let parsed = parse_trace(&doc).unwrap();
        assert!(parsed.has_header && parsed.mismatches.is_empty());
        assert_eq!(serialize_trace(&parsed.memory), doc);

        let tampered = doc.replacen("\"count\":2", "\"count\":1", 1);
        assert_ne!(tampered, doc);
        let parsed = parse_trace(&tampered).unwrap();
        assert_eq!(parsed.mismatches.len(), 1);
        assert_eq!(parsed.mismatches[0].step, 2);
    }

    #[test]
    fn debug_line_must_follow_its_record() {
        let doc = "Record debugging attempt: modeler -- x -- failure\n";
        assert!(matches!(parse_trace(doc), Err(TraceError::Malformed { line: 1, .. })));
    }
}
