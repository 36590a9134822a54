#[path = "support/adversarial.rs"]
mod adversarial;

use engiweave::agents::{render_prompt, AgentRole, DimensionScores, PromptContext, TokenUsage};
use engiweave::coordinator::{run_session, PolicyMode, Priority, RoutingDecision, SessionStatus};
use engiweave::evaluation::{aggregate_benchmark, compute_cost, BenchmarkRow, PricingTable};
use engiweave::memory::{parse_trace, serialize_trace, Counters, Outcome, SessionMemory, MISMATCH, SUCCESS};
use proptest::prelude::*;

use adversarial::{adversarial_config, p35, repeated_targets, stage_ordered};

fn config() -> ProptestConfig {
    ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() }
}

const AGENTS: [&str; 4] = ["analyzer", "modeler", "verifier", "solver"];
const LABELS: [&str; 3] = ["ImportError", "Infeasibility", MISMATCH];

/// Per step: routed role, and optionally (agent, label, succeeded).
type Step = (usize, Option<(usize, usize, bool)>);

fn steps() -> impl Strategy<Value = Vec<Step>> {
    prop::collection::vec((0usize..5, prop::option::of((0usize..4, 0usize..3, any::<bool>()))), 0..30)
}

fn build(steps: &[Step]) -> SessionMemory {
    let mut mem = SessionMemory::new();
    for (role, attempt) in steps {
        let d = RoutingDecision::new("t", AgentRole::ALL[*role].into(), "s", Priority::Medium, 0.5, true, "r");
        mem.push_route(d);
        if let Some((agent, label, ok)) = attempt {
            if *ok {
                mem.record_attempt(AGENTS[*agent], SUCCESS, Outcome::Success);
            } else {
                mem.record_attempt(AGENTS[*agent], LABELS[*label], Outcome::Failure);
            }
        }
    }
    mem
}

fn scores() -> impl Strategy<Value = Option<DimensionScores>> {
    prop::option::of((0u8..=10, 0u8..=10, 0u8..=10, 0u8..=10).prop_map(|(a, b, c, d)| DimensionScores {
        IE: a.into(),
        DR: b.into(),
        MO: c.into(),
        UH: d.into(),
    }))
}

fn rows() -> impl Strategy<Value = Vec<BenchmarkRow>> {
    prop::collection::vec((any::<bool>(), prop::option::of(any::<bool>()), scores(), 0u32..1000), 0..40).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (numerical, feasible, scores, tokens))| BenchmarkRow {
                id: format!("P{i:02}"),
                status: "solved".into(),
                numerical,
                feasible: feasible.map(|f| f && numerical),
                scores,
                duration_seconds: f64::from(tokens) / 8.0,
                tokens: TokenUsage { input_tokens: tokens.into(), output_tokens: 0 },
                cost_usd: Some(f64::from(tokens) / 1024.0),
                judge_disagreement: None,
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn adversarial_sessions_terminate_within_budget(cfg in adversarial_config()) {
        let r = run_session(&p35(), &cfg).unwrap();
        prop_assert!(r.memory.step_count() <= cfg.max_steps);
        prop_assert!(r.memory.entries().len() <= cfg.max_steps);
        prop_assert_ne!(r.status, SessionStatus::Solved);
        prop_assert!(r.memory.counters_consistent());
        if cfg.policy == PolicyMode::Fixed {
            prop_assert!(stage_ordered(&r.memory));
        } else {
            let bad = repeated_targets(&r.memory, cfg.forced_switch_threshold as usize);
            prop_assert!(bad.is_empty(), "steps {bad:?} repeat a stuck agent");
        }
    }

    #[test]
    fn traces_round_trip(s in steps()) {
        let mem = build(&s);
        let text = serialize_trace(&mem);
        let parsed = parse_trace(&text).unwrap();
        prop_assert!(parsed.mismatches.is_empty());
        prop_assert_eq!(parsed.memory.entries(), mem.entries());
        prop_assert_eq!(parsed.memory.routing_history(), mem.routing_history());
        prop_assert_eq!(serialize_trace(&parsed.memory), text);
    }

    #[test]
    fn counters_are_a_function_of_the_entries(s in steps()) {
        let mem = build(&s);
        prop_assert_eq!(mem.counters(), &Counters::recompute(mem.entries()));
        // Recount the verifier's mismatches since its last success by hand.
        let mut expected = 0;
        for e in mem.entries().iter().filter(|e| e.agent == "verifier") {
            expected = if e.outcome == Outcome::Success { 0 } else if e.error_label == MISMATCH { expected + 1 } else { expected };
        }
        prop_assert_eq!(mem.consecutive_verification_failures(), expected);
    }

    #[test]
    fn verifier_prompt_escalates_past_five_and_eight(n in 0u32..20) {
        let mut mem = SessionMemory::new();
        for _ in 0..n {
            mem.push_route(RoutingDecision::new("t", AgentRole::Verifier.into(), "s", Priority::High, 0.5, true, "r"));
            mem.record_attempt("verifier", MISMATCH, Outcome::Failure);
        }
        let ctx = PromptContext::new().with("safe_original_problem", "P").with("safe_pyomo_code", "C");
        let p = render_prompt(AgentRole::Verifier, &ctx, &mem).unwrap();
        prop_assert_eq!(p.contains("Verification difficulties detected"), n > 5 && n <= 8);
        prop_assert_eq!(p.contains("Multiple verification loops detected"), n > 8);
    }

    #[test]
    fn cost_is_additive_in_tokens(a in 0u64..5_000_000, b in 0u64..5_000_000, c in 0u64..5_000_000, d in 0u64..5_000_000) {
        let table = PricingTable::default();
        for model in ["gpt-4o", "gemini-2.5-flash", "deepseek-v3"] {
            let cost = |i, o| compute_cost(TokenUsage { input_tokens: i, output_tokens: o }, model, &table).unwrap();
            let whole = cost(a + c, b + d);
            prop_assert!(whole >= 0.0);
            prop_assert!((whole - cost(a, b) - cost(c, d)).abs() <= 1e-12 * (1.0 + whole));
        }
    }

    #[test]
    fn aggregation_ignores_row_order((rows, shuffled) in rows().prop_flat_map(|r| (Just(r.clone()), Just(r).prop_shuffle()))) {
        let report = aggregate_benchmark(rows.clone());
        prop_assert_eq!(&report, &aggregate_benchmark(shuffled));
        let n = rows.len();
        let count = |f: &dyn Fn(&BenchmarkRow) -> bool| rows.iter().filter(|r| f(r)).count();
        let rate = |k: usize| if n == 0 { 0.0 } else { 100.0 * k as f64 / n as f64 };
        prop_assert!((report.num_rate - rate(count(&|r| r.numerical))).abs() < 1e-9);
        prop_assert!((report.feas_rate - rate(count(&|r| r.feasible == Some(true)))).abs() < 1e-9);
        prop_assert_eq!(report.feasible_means.is_none(), count(&|r| r.feasible == Some(true)) == 0);
    }
}
