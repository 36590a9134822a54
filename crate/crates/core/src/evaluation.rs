//! Dataset manifests, cost accounting, judging and benchmark aggregation.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::agents::{
    invoke_agent, parse_evaluator_verdict, render_prompt, AgentBackend, AgentError, AgentRole, DimensionScores,
    EvaluatorVerdict, ParseError, PromptContext, TokenUsage,
};
use crate::blueprint::{parse_blueprint, BlueprintError, ModelingBlueprint};
use crate::feasibility::FeasibilityReport;
use crate::memory::SessionMemory;
use crate::model::{Assignment, ModelIR};
use crate::solution::SolutionCandidate;
use crate::solver::ResourceLimits;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    MarketAndMultiAgentDecisionMaking,
    SchedulingAndResourceAllocation,
    PlanningAndDesign,
    ControlAndAutonomousSystemModeling,
}

impl Domain {
    /// Accepts the category title in any case, or its first word.
    pub fn parse(text: &str) -> Option<Self> {
        let t = text.trim().to_ascii_lowercase().replace(['-', '_'], " ");
        let first = t.split_whitespace().next()?;
        Some(match first {
            "market" => Domain::MarketAndMultiAgentDecisionMaking,
            "scheduling" => Domain::SchedulingAndResourceAllocation,
            "planning" => Domain::PlanningAndDesign,
            "control" => Domain::ControlAndAutonomousSystemModeling,
            _ => return None,
        })
    }
}

/// Per-problem IE/DR/MO/UH annotations as given in the manifest.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct DimensionAnnotations {
    pub IE: f64,
    pub DR: f64,
    pub MO: f64,
    pub UH: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemEntry {
    pub id: String,
    pub problem: String,
    pub reference: String,
    pub field: Domain,
    pub dimensions: DimensionAnnotations,
    /// Blueprint the solution is checked against, resolved against the manifest directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feasibility_spec: Option<PathBuf>,
}

impl ProblemEntry {
    pub fn reference_blueprint(&self) -> Result<Option<ModelingBlueprint>, DatasetError> {
        let Some(path) = &self.feasibility_spec else { return Ok(None) };
        let text = std::fs::read_to_string(path).map_err(|e| DatasetError::Io(path.clone(), e.to_string()))?;
        parse_blueprint(&text)
            .map(Some)
            .map_err(|source| DatasetError::FeasibilitySpec { id: self.id.clone(), source })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DatasetError {
    #[error("cannot read {}: {}", .0.display(), .1)]
    Io(PathBuf, String),
    #[error("manifest is not valid JSON: {0}")]
    ParseError(String),
    #[error("entry `{id}` has no `{field}`")]
    MissingField { id: String, field: String },
    #[error("entry `{id}` field `{field}`: {message}")]
    InvalidField { id: String, field: String, message: String },
    #[error("feasibility spec of `{id}`: {source}")]
    FeasibilitySpec { id: String, source: BlueprintError },
}

fn entry_from(obj: &Map<String, Value>, position: usize, base: &Path) -> Result<ProblemEntry, DatasetError> {
    let id = match obj.get("id") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        _ => return Err(DatasetError::MissingField { id: format!("#{}", position + 1), field: "id".into() }),
    };
    let missing = |field: &str| DatasetError::MissingField { id: id.clone(), field: field.into() };
    let text = |field: &str| obj.get(field).and_then(Value::as_str).map(str::to_string).ok_or_else(|| missing(field));
    let field_text = text("field")?;
    let field = Domain::parse(&field_text).ok_or_else(|| DatasetError::InvalidField {
        id: id.clone(),
        field: "field".into(),
        message: format!("`{field_text}` is not one of the four problem domains"),
    })?;
    let dim = |name: &str| match obj.get(name) {
        Some(Value::Number(n)) => n.as_f64().ok_or_else(|| missing(name)),
        Some(Value::Bool(b)) => Ok(f64::from(u8::from(*b))),
        _ => Err(missing(name)),
    };
    let feasibility_spec = match obj.get("feasibility_spec") {
        None | Some(Value::Null) => None,
        Some(Value::String(p)) => Some(base.join(p)),
        Some(_) => {
            return Err(DatasetError::InvalidField {
                id: id.clone(),
                field: "feasibility_spec".into(),
                message: "expected a path".into(),
            })
        }
    };
    Ok(ProblemEntry {
        problem: text("problem")?,
        reference: text("reference")?,
        field,
        dimensions: DimensionAnnotations { IE: dim("IE")?, DR: dim("DR")?, MO: dim("MO")?, UH: dim("UH")? },
        feasibility_spec,
        id,
    })
}

/// Reads a manifest: a JSON array of problem records, or a single record.
pub fn load_dataset(path: &Path) -> Result<Vec<ProblemEntry>, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|e| DatasetError::Io(path.to_path_buf(), e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let value: Value = serde_json::from_str(&text).map_err(|e| DatasetError::ParseError(e.to_string()))?;
    let items = match value {
        Value::Array(items) => items,
        obj @ Value::Object(_) => vec![obj],
        _ => return Err(DatasetError::ParseError("expected an array of problem records".into())),
    };
    items
        .iter()
        .enumerate()
        .map(|(i, item)| match item {
            Value::Object(obj) => entry_from(obj, i, base),
            _ => Err(DatasetError::ParseError(format!("record {} is not an object", i + 1))),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelPrice {
    /// USD per 1M input tokens.
    pub input: f64,
    /// USD per 1M output tokens.
    pub output: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PricingTable(pub IndexMap<String, ModelPrice>);

impl Default for PricingTable {
    fn default() -> Self {
        let mut t = IndexMap::new();
        t.insert("gpt-4o".to_string(), ModelPrice { input: 2.50, output: 5.00 });
        t.insert("gemini-2.5-flash".to_string(), ModelPrice { input: 0.30, output: 2.50 });
        t.insert("deepseek-v3".to_string(), ModelPrice { input: 0.27, output: 1.10 });
        Self(t)
    }
}

impl PricingTable {
    /// Case-insensitive lookup; `DeepSeek-V3-671B` finds `deepseek-v3`.
    pub fn get(&self, model: &str) -> Option<ModelPrice> {
        let m = model.trim().to_ascii_lowercase();
        self.0
            .iter()
            .filter(|(k, _)| m == k.to_ascii_lowercase() || m.starts_with(&format!("{}-", k.to_ascii_lowercase())))
            .max_by_key(|(k, _)| k.len())
            .map(|(_, p)| *p)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("no pricing for model `{0}`")]
pub struct UnknownModel(pub String);

/// USD cost; unrounded. Use [`format_usd`] for display.
pub fn compute_cost(usage: TokenUsage, model: &str, pricing: &PricingTable) -> Result<f64, UnknownModel> {
    let p = pricing.get(model).ok_or_else(|| UnknownModel(model.to_string()))?;
    Ok(usage.input_tokens as f64 * p.input / 1e6 + usage.output_tokens as f64 * p.output / 1e6)
}

pub fn format_usd(amount: f64) -> String {
    format!("{amount:.2}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub id: String,
    pub status: String,
    /// Whether any numerical solution came out.
    pub numerical: bool,
    /// `None` when the problem has no machine-readable feasibility spec.
    pub feasible: Option<bool>,
    pub scores: Option<DimensionScores>,
    pub duration_seconds: f64,
    pub tokens: TokenUsage,
    pub cost_usd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_disagreement: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct DimensionMeans {
    pub IE: f64,
    pub DR: f64,
    pub MO: f64,
    pub UH: f64,
    pub avg: f64,
}

impl DimensionMeans {
    fn of<'a>(scores: impl Iterator<Item = Option<&'a DimensionScores>>) -> Option<Self> {
        let mut n = 0usize;
        let mut sum = [0.0; 4];
        for s in scores {
            n += 1;
            if let Some(s) = s {
                for (acc, v) in sum.iter_mut().zip(s.values()) {
                    *acc += v;
                }
            }
        }
        if n == 0 {
            return None;
        }
        let [ie, dr, mo, uh] = sum.map(|s| s / n as f64);
        Some(Self { IE: ie, DR: dr, MO: mo, UH: uh, avg: (ie + dr + mo + uh) / 4.0 })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub rows: Vec<BenchmarkRow>,
    pub total: usize,
    pub numerical: usize,
    pub feasible: usize,
    pub unverifiable: usize,
    /// Percentages, unrounded.
    pub num_rate: f64,
    pub feas_rate: f64,
    /// Means over all rows; rows without scores count as zero.
    pub total_means: Option<DimensionMeans>,
    /// Means over feasible rows; `None` renders as "/".
    pub feasible_means: Option<DimensionMeans>,
    pub total_duration_seconds: f64,
    pub total_tokens: TokenUsage,
    pub total_cost_usd: f64,
    pub notes: Vec<String>,
}

/// Rates and means over `rows`, sorted by problem id.
pub fn aggregate_benchmark(mut rows: Vec<BenchmarkRow>) -> BenchmarkReport {
    rows.sort_by(|a, b| a.id.cmp(&b.id));
    let total = rows.len();
    let numerical = rows.iter().filter(|r| r.numerical).count();
    let feasible = rows.iter().filter(|r| r.feasible == Some(true)).count();
    let unverifiable = rows.iter().filter(|r| r.feasible.is_none()).count();
    let rate = |count: usize| if total == 0 { 0.0 } else { count as f64 / total as f64 * 100.0 };
    let mut tokens = TokenUsage::default();
    for r in &rows {
        tokens += r.tokens;
    }
    BenchmarkReport {
        total,
        numerical,
        feasible,
        unverifiable,
        num_rate: rate(numerical),
        feas_rate: rate(feasible),
        total_means: DimensionMeans::of(rows.iter().map(|r| r.scores.as_ref())),
        feasible_means: DimensionMeans::of(rows.iter().filter(|r| r.feasible == Some(true)).map(|r| r.scores.as_ref())),
        total_duration_seconds: rows.iter().map(|r| r.duration_seconds).sum(),
        total_tokens: tokens,
        total_cost_usd: rows.iter().filter_map(|r| r.cost_usd).sum(),
        notes: vec![
            "one judge prompt scores every run; rows are tagged by feasibility".into(),
            "problems without a feasibility spec count in the denominator only".into(),
        ],
        rows,
    }
}

impl BenchmarkReport {
    fn means_cells(m: Option<&DimensionMeans>) -> [String; 5] {
        match m {
            Some(m) => [m.IE, m.DR, m.MO, m.UH, m.avg].map(|v| format!("{v:.2}")),
            None => std::array::from_fn(|_| "/".to_string()),
        }
    }

    /// Aligned text table in the Total / Feasible column layout.
    pub fn render_text(&self, method: &str) -> String {
        let mut out = String::new();
        let w = method.len().max(6);
        let _ = writeln!(out, "{:w$}  {:^51}  {:^34}", "", "Total", "Feasible");
        let head = ["Num.", "Feas.", "IE", "DR", "MO", "UH", "Avg."];
        let _ = write!(out, "{:w$}", "Method");
        for h in head.iter().chain(&head[2..]) {
            let _ = write!(out, "  {h:>8}");
        }
        out.push('\n');
        let _ = write!(out, "{method:w$}  {:>8}  {:>8}", format!("{:.2}%", self.num_rate), format!("{:.2}%", self.feas_rate));
        for cell in Self::means_cells(self.total_means.as_ref()).iter().chain(&Self::means_cells(self.feasible_means.as_ref())) {
            let _ = write!(out, "  {cell:>8}");
        }
        out.push('\n');
        let _ = writeln!(
            out,
            "\nproblems {}  numerical {}  feasible {}  unverifiable {}",
            self.total, self.numerical, self.feasible, self.unverifiable
        );
        let _ = writeln!(
            out,
            "duration {:.1} s  tokens {}  cost ${}",
            self.total_duration_seconds,
            self.total_tokens.total(),
            format_usd(self.total_cost_usd)
        );
        out
    }
}

/// What the judge is shown.
#[derive(Debug, Clone, Copy)]
pub struct ScoringPackage<'a> {
    pub problem_text: &'a str,
    pub model_code: &'a str,
    pub candidate: &'a SolutionCandidate,
    /// The executable check; `None` when the candidate has no point.
    pub report: Option<&'a FeasibilityReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JudgedSolution {
    pub verdict: EvaluatorVerdict,
    /// Always the executable check's verdict.
    pub feasible: bool,
    /// Set when the judge claimed feasibility the check does not support.
    pub disagreement: Option<String>,
    pub usage: TokenUsage,
    pub elapsed_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScoringError {
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

impl ScoringError {
    pub fn label(&self) -> String {
        match self {
            Self::Agent(e) => e.label(),
            Self::Parse(e) => e.label().to_string(),
        }
    }
}

pub fn solution_summary(c: &SolutionCandidate) -> String {
    let mut s = format!("status: {}", c.status);
    if let Some(obj) = c.objective_value {
        let _ = write!(s, "\nobjective: {obj}");
    }
    if let Some(a) = &c.assignment {
        for (name, t) in a {
            let _ = write!(s, "\n{name} = {}", t.to_json());
        }
    }
    if let Some(m) = &c.message {
        let _ = write!(s, "\nmessage: {m}");
    }
    s
}

pub fn feasibility_summary(report: Option<&FeasibilityReport>) -> String {
    let Some(r) = report else { return "not checked: no solution point".into() };
    let mut s = format!("feasible: {}", u8::from(r.feasible));
    for c in r.violated() {
        let _ = write!(s, "\nviolated {}: lhs {} rhs {}", c.row_id, c.lhs, c.rhs);
    }
    for b in &r.bound_violations {
        let _ = write!(s, "\nbound violated: {}", b.column);
    }
    for v in &r.integrality_violations {
        let _ = write!(s, "\nnot integral: {}", v.column);
    }
    for m in &r.data_consistency.mismatches {
        let _ = write!(s, "\ndata mismatch: {}", m.param_id);
    }
    s
}

/// Asks the judge for dimension scores. Feasibility is taken from the
/// executable check, never from the judge.
pub fn score_solution(
    pkg: &ScoringPackage<'_>,
    judge: &AgentBackend,
    limits: &ResourceLimits,
    mem: &SessionMemory,
) -> Result<JudgedSolution, ScoringError> {
    let ctx = PromptContext::new()
        .with("problem_text", pkg.problem_text)
        .with("model_code", pkg.model_code)
        .with("solution_summary", solution_summary(pkg.candidate))
        .with("feasibility_summary", feasibility_summary(pkg.report));
    let prompt = render_prompt(AgentRole::Evaluator, &ctx, mem)?;
    let resp = invoke_agent(AgentRole::Evaluator, &prompt, judge, limits)?;
    let verdict = parse_evaluator_verdict(&resp.text)?;
    let feasible = pkg.report.is_some_and(|r| r.feasible);
    let disagreement = (verdict.claimed_feasible == Some(true) && !feasible)
        .then(|| "judge claimed feasible; executable check found the solution infeasible".to_string());
    Ok(JudgedSolution { verdict, feasible, disagreement, usage: resp.usage, elapsed_seconds: resp.elapsed_seconds })
}

/// Performance figures of a rooftop PV layout: capex, yearly savings,
/// payback, avoided CO2 and roof coverage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PvMetrics {
    pub capex: f64,
    pub energy_kwh: f64,
    pub savings_per_year: f64,
    pub payback_years: f64,
    pub co2_avoided_kg: f64,
    pub roof_coverage: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("rooftop metrics need `{0}`")]
pub struct MissingSymbol(pub String);

/// Reads `c_i`, `a_i`, `A_use`, `p_el`, `gamma_CO2`, `n_i` and `E_k` by name.
pub fn pv_metrics(m: &ModelIR, a: &Assignment) -> Result<PvMetrics, MissingSymbol> {
    let param = |s: &str| m.parameter_by_symbol(s).map(|p| p.value.data().to_vec()).ok_or_else(|| MissingSymbol(s.into()));
    let var = |s: &str| a.get(s).map(|t| t.data().to_vec()).ok_or_else(|| MissingSymbol(s.into()));
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
    let (c, area, n, e) = (param("c_i")?, param("a_i")?, var("n_i")?, var("E_k")?);
    let scalar = |s: &str| param(s).map(|v| v.first().copied().unwrap_or(f64::NAN));
    let capex = dot(&c, &n);
    let energy = e.iter().sum::<f64>();
    let savings = scalar("p_el")? * energy;
    Ok(PvMetrics {
        capex,
        energy_kwh: energy,
        savings_per_year: savings,
        payback_years: capex / savings,
        co2_avoided_kg: scalar("gamma_CO2")? * energy,
        roof_coverage: dot(&area, &n) / scalar("A_use")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cost_examples() {
        let t = PricingTable::default();
        let gpt = compute_cost(TokenUsage { input_tokens: 100_000, output_tokens: 20_000 }, "GPT-4o", &t).unwrap();
        assert_eq!(format_usd(gpt), "0.35");
        let ds = compute_cost(TokenUsage { input_tokens: 1_000_000, output_tokens: 1_000_000 }, "DeepSeek-V3-671B", &t)
            .unwrap();
        assert_eq!(format_usd(ds), "1.37");
        assert_eq!(compute_cost(TokenUsage::default(), "gemini-2.5-flash", &t).unwrap(), 0.0);
        assert_eq!(compute_cost(TokenUsage::default(), "llama", &t), Err(UnknownModel("llama".into())));
    }

    fn row(id: &str, numerical: bool, feasible: Option<bool>, scores: Option<[f64; 4]>) -> BenchmarkRow {
        BenchmarkRow {
            id: id.into(),
            status: "solved".into(),
            numerical,
            feasible,
            scores: scores.map(|[ie, dr, mo, uh]| DimensionScores { IE: ie, DR: dr, MO: mo, UH: uh }),
            duration_seconds: 1.0,
            tokens: TokenUsage { input_tokens: 10, output_tokens: 5 },
            cost_usd: Some(0.01),
            judge_disagreement: None,
        }
    }

    #[test]
    fn empty_feasible_subset_renders_slash() {
        let r = aggregate_benchmark(vec![row("a", true, Some(false), Some([5.0; 4]))]);
        assert!(r.feasible_means.is_none());
        let text = r.render_text("engiweave");
        assert!(text.lines().nth(2).unwrap().trim_end().ends_with('/'));
        let empty = aggregate_benchmark(Vec::new());
        assert_eq!((empty.total, empty.num_rate, empty.feas_rate), (0, 0.0, 0.0));
    }

    #[test]
    fn singleton_feasible_means() {
        let r = aggregate_benchmark(vec![row("a", true, Some(true), Some([8.0, 7.0, 6.0, 5.0]))]);
        let m = r.feasible_means.unwrap();
        assert_eq!([m.IE, m.DR, m.MO, m.UH, m.avg], [8.0, 7.0, 6.0, 5.0, 6.5]);
    }

    #[test]
    fn domains_parse_from_titles() {
        assert_eq!(Domain::parse("Planning and Design"), Some(Domain::PlanningAndDesign));
        assert_eq!(Domain::parse("control_and_autonomous_system_modeling"), Some(Domain::ControlAndAutonomousSystemModeling));
        assert_eq!(Domain::parse("astronomy"), None);
    }
}
