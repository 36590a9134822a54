//! The hierarchical modeling blueprint produced by the analyzer.
//!
//! Field names follow the analyzer's JSON output schema exactly so that a
//! live model's reply parses without renaming. Fields the schema does not
//! know about are kept in `extra` maps and written back out unchanged.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::expr::IndexValue;
use crate::tensor::{Tensor, TensorError};

/// Name of the third top-level block in the analyzer schema.
pub const EXTENDED_BLOCK: &str = "extended_analysis_and_robustness";
const EXTENDED_ALIAS: &str = "extended_analysis";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelingBlueprint {
    pub modeling_context: ModelingContext,
    pub core_model_elements: CoreModelElements,
    #[serde(rename = "extended_analysis_and_robustness")]
    pub extended_analysis: ExtendedAnalysis,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelingContext {
    pub problem_essence: String,
    pub engineering_domain: String,
    pub modeling_paradigm: String,
    pub solution_scope: String,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoreModelElements {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    /// Explicit index-set value lists. Sets not listed here are inferred
    /// from parameter shapes at compile time.
    #[serde(skip_serializing_if = "IndexMap::is_empty")]
    pub index_sets: IndexMap<String, Vec<IndexValue>>,
    pub decision_variables: Vec<VariableDecl>,
    pub parameters: Vec<ParameterDecl>,
    pub objective_function: ObjectiveDecl,
    pub constraints: Vec<ConstraintDecl>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarType {
    Continuous,
    Integer,
    Binary,
}

impl VarType {
    pub fn is_discrete(self) -> bool {
        !matches!(self, VarType::Continuous)
    }

    fn parse(text: &str) -> Option<Self> {
        match text.trim().to_ascii_lowercase().as_str() {
            "continuous" | "real" | "continuous/real" => Some(Self::Continuous),
            "integer" | "int" | "nonnegativeintegers" => Some(Self::Integer),
            "binary" | "bool" | "boolean" => Some(Self::Binary),
            _ => None,
        }
    }
}

impl fmt::Display for VarType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VarType::Continuous => "continuous",
            VarType::Integer => "integer",
            VarType::Binary => "binary",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariableDecl {
    pub name: String,
    pub description: String,
    #[serde(rename = "type")]
    pub var_type: VarType,
    pub domain: String,
    pub shape: Vec<String>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParameterDecl {
    pub param_id: String,
    pub name: String,
    pub value: Tensor,
    pub unit: String,
    pub description: String,
    pub source_reference: String,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConstraintCategory {
    #[serde(rename = "Physical Laws")]
    PhysicalLaws,
    #[serde(rename = "Resource Capacity")]
    ResourceCapacity,
    #[serde(rename = "Supply-Demand Balance")]
    SupplyDemandBalance,
    #[serde(rename = "Operational Logic")]
    OperationalLogic,
    #[serde(rename = "Strategic Requirements")]
    StrategicRequirements,
}

impl ConstraintCategory {
    pub const ALL: [ConstraintCategory; 5] = [
        Self::PhysicalLaws,
        Self::ResourceCapacity,
        Self::SupplyDemandBalance,
        Self::OperationalLogic,
        Self::StrategicRequirements,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Self::PhysicalLaws => "Physical Laws",
            Self::ResourceCapacity => "Resource Capacity",
            Self::SupplyDemandBalance => "Supply-Demand Balance",
            Self::OperationalLogic => "Operational Logic",
            Self::StrategicRequirements => "Strategic Requirements",
        }
    }

    /// Lenient match: case, spacing and `-`/`_` are ignored.
    pub fn parse(text: &str) -> Option<Self> {
        let norm = |s: &str| {
            s.chars()
                .filter(|c| c.is_alphanumeric())
                .flat_map(char::to_lowercase)
                .collect::<String>()
        };
        let wanted = norm(text);
        Self::ALL.into_iter().find(|c| norm(c.label()) == wanted)
    }

    /// Categories whose violation makes a solution physically impossible.
    pub fn is_physical(self) -> bool {
        matches!(self, Self::PhysicalLaws | Self::SupplyDemandBalance)
    }
}

impl fmt::Display for ConstraintCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintDecl {
    pub constraint_id: String,
    pub name: String,
    pub expression: String,
    pub category: ConstraintCategory,
    pub description: String,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Minimize,
    Maximize,
}

impl Sense {
    fn parse(text: &str) -> Option<Self> {
        match text.trim().to_ascii_lowercase().as_str() {
            "minimize" | "min" | "minimise" => Some(Self::Minimize),
            "maximize" | "max" | "maximise" => Some(Self::Maximize),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObjectiveDecl {
    pub name: String,
    #[serde(rename = "type")]
    pub sense: Sense,
    pub expression: String,
    pub components: Vec<ObjectiveComponent>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObjectiveComponent {
    pub component_expr: String,
    pub description: String,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtendedAnalysis {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub key_assumptions: Vec<KeyAssumption>,
    pub uncertainty_sources: Vec<UncertaintySource>,
    pub trade_off_analysis: TradeOffAnalysis,
    pub sensitivity_factors: Vec<SensitivityFactor>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KeyAssumption {
    pub assumption_id: String,
    pub content: String,
    pub justification: String,
    pub impact_on_model: String,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UncertaintySource {
    pub source_id: String,
    pub description: String,
    pub affected_elements: Vec<String>,
    pub handling_strategy: String,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

/// Secondary objectives and soft constraints are kept for reporting only;
/// they never enter the compiled model.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct TradeOffAnalysis {
    pub secondary_objectives: Vec<Map<String, Value>>,
    pub soft_constraints: Vec<Map<String, Value>>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityFactor {
    pub param_id: String,
    pub justification: String,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BlueprintError {
    #[error("malformed document: {0}")]
    MalformedDocument(String),
    #[error("schema violation at `{path}`: {message}")]
    SchemaViolation { path: String, message: String },
}

impl BlueprintError {
    fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self::SchemaViolation { path: path.into(), message: message.into() }
    }

    /// Short class name used as an error label in traces.
    pub fn label(&self) -> &'static str {
        match self {
            Self::MalformedDocument(_) => "MalformedDocument",
            Self::SchemaViolation { .. } => "SchemaViolation",
        }
    }
}

type Result<T> = std::result::Result<T, BlueprintError>;

/// Parses a blueprint document (UTF-8 JSON).
pub fn parse_blueprint(document: &str) -> Result<ModelingBlueprint> {
    let value: Value =
        serde_json::from_str(document).map_err(|e| BlueprintError::MalformedDocument(e.to_string()))?;
    blueprint_from_value(&value)
}

/// Serializes a blueprint back into its JSON document form.
pub fn to_document(bp: &ModelingBlueprint) -> String {
    serde_json::to_string_pretty(bp).expect("blueprint serialization is infallible")
}

pub fn blueprint_from_value(value: &Value) -> Result<ModelingBlueprint> {
    let mut root = Fields::object(value, "")?;
    let modeling_context = {
        let mut f = root.required_object("modeling_context")?;
        ModelingContext {
            problem_essence: f.required_string("problem_essence")?,
            engineering_domain: f.required_string("engineering_domain")?,
            modeling_paradigm: f.required_string("modeling_paradigm")?,
            solution_scope: f.required_string("solution_scope")?,
            extra: f.rest(),
        }
    };
    let core_model_elements = parse_core(root.required_object("core_model_elements")?)?;
    let extended = if root.has(EXTENDED_BLOCK) {
        root.required_object(EXTENDED_BLOCK)?
    } else if root.has(EXTENDED_ALIAS) {
        root.required_object(EXTENDED_ALIAS)?
    } else {
        return Err(BlueprintError::schema(EXTENDED_BLOCK, "required block is missing"));
    };
    let extended_analysis = parse_extended(extended)?;
    Ok(ModelingBlueprint { modeling_context, core_model_elements, extended_analysis, extra: root.rest() })
}

fn parse_core(mut f: Fields<'_>) -> Result<CoreModelElements> {
    let description = f.optional_string("description")?;
    let mut index_sets = IndexMap::new();
    if let Some(sets) = f.optional_object("index_sets")? {
        let path = sets.path.clone();
        for (name, values) in sets.map {
            let list = values
                .as_array()
                .ok_or_else(|| BlueprintError::schema(format!("{path}.{name}"), "index set must be a list"))?;
            let parsed = list
                .iter()
                .map(|v| match v {
                    Value::Number(n) if n.is_i64() => Ok(IndexValue::Int(n.as_i64().unwrap_or_default())),
                    Value::String(s) => Ok(IndexValue::Label(s.clone())),
                    _ => Err(BlueprintError::schema(format!("{path}.{name}"), "index values are integers or strings")),
                })
                .collect::<Result<Vec<_>>>()?;
            index_sets.insert(name.clone(), parsed);
        }
    }
    let decision_variables = f.required_list("decision_variables", |mut v| {
        let path = v.path.clone();
        let type_text = v.required_string("type")?;
        let var_type = VarType::parse(&type_text).ok_or_else(|| {
            BlueprintError::schema(format!("{path}.type"), format!("`{type_text}` is not one of continuous/integer/binary"))
        })?;
        Ok(VariableDecl {
            name: v.required_string("name")?,
            description: v.optional_string("description")?.unwrap_or_default(),
            var_type,
            domain: v.optional_string("domain")?.unwrap_or_default(),
            shape: v.shape("shape")?,
            extra: v.rest(),
        })
    })?;
    let parameters = f.required_list("parameters", |mut p| {
        let path = p.path.clone();
        let raw = p.take("value").ok_or_else(|| BlueprintError::schema(format!("{path}.value"), "required field is missing"))?;
        let value = Tensor::from_json(raw).map_err(|e| match e {
            TensorError::Placeholder(s) => BlueprintError::schema(
                format!("{path}.value"),
                format!("placeholder `{s}` where concrete data is required"),
            ),
            other => BlueprintError::schema(format!("{path}.value"), other.to_string()),
        })?;
        Ok(ParameterDecl {
            param_id: p.required_string("param_id")?,
            name: p.required_string("name")?,
            value,
            unit: p.optional_string("unit")?.unwrap_or_default(),
            description: p.optional_string("description")?.unwrap_or_default(),
            source_reference: p.required_string("source_reference")?,
            extra: p.rest(),
        })
    })?;
    let objective_function = {
        let mut o = f.required_object("objective_function")?;
        let path = o.path.clone();
        let sense_text = o.required_string("type")?;
        let sense = Sense::parse(&sense_text).ok_or_else(|| {
            BlueprintError::schema(format!("{path}.type"), format!("`{sense_text}` is not minimize/maximize"))
        })?;
        ObjectiveDecl {
            name: o.optional_string("name")?.unwrap_or_default(),
            sense,
            expression: o.required_string("expression")?,
            components: o.optional_list("components", |mut c| {
                Ok(ObjectiveComponent {
                    component_expr: c.optional_string("component_expr")?.unwrap_or_default(),
                    description: c.optional_string("description")?.unwrap_or_default(),
                    extra: c.rest(),
                })
            })?,
            extra: o.rest(),
        }
    };
    let constraints = f.required_list("constraints", |mut c| {
        let path = c.path.clone();
        let category_text = c.required_string("category")?;
        let category = ConstraintCategory::parse(&category_text).ok_or_else(|| {
            BlueprintError::schema(format!("{path}.category"), format!("unknown category `{category_text}`"))
        })?;
        Ok(ConstraintDecl {
            constraint_id: c.required_string("constraint_id")?,
            name: c.optional_string("name")?.unwrap_or_default(),
            expression: c.required_string("expression")?,
            category,
            description: c.optional_string("description")?.unwrap_or_default(),
            extra: c.rest(),
        })
    })?;
    Ok(CoreModelElements {
        description,
        index_sets,
        decision_variables,
        parameters,
        objective_function,
        constraints,
        extra: f.rest(),
    })
}

fn parse_extended(mut f: Fields<'_>) -> Result<ExtendedAnalysis> {
    let description = f.optional_string("description")?;
    let key_assumptions = f.optional_list("key_assumptions", |mut a| {
        Ok(KeyAssumption {
            assumption_id: a.required_string("assumption_id")?,
            content: a.optional_string("content")?.unwrap_or_default(),
            justification: a.optional_string("justification")?.unwrap_or_default(),
            impact_on_model: a.required_string("impact_on_model")?,
            extra: a.rest(),
        })
    })?;
    let uncertainty_sources = f.optional_list("uncertainty_sources", |mut u| {
        Ok(UncertaintySource {
            source_id: u.required_string("source_id")?,
            description: u.optional_string("description")?.unwrap_or_default(),
            affected_elements: u.string_list("affected_elements")?,
            handling_strategy: u.optional_string("handling_strategy")?.unwrap_or_default(),
            extra: u.rest(),
        })
    })?;
    let trade_off_analysis = match f.optional_object("trade_off_analysis")? {
        None => TradeOffAnalysis::default(),
        Some(mut t) => TradeOffAnalysis {
            secondary_objectives: t.optional_list("secondary_objectives", |o| Ok(o.map.clone()))?,
            soft_constraints: t.optional_list("soft_constraints", |o| Ok(o.map.clone()))?,
            extra: t.rest(),
        },
    };
    let sensitivity_factors = f.optional_list("sensitivity_factors", |mut s| {
        Ok(SensitivityFactor {
            param_id: s.required_string("param_id")?,
            justification: s.optional_string("justification")?.unwrap_or_default(),
            extra: s.rest(),
        })
    })?;
    Ok(ExtendedAnalysis {
        description,
        key_assumptions,
        uncertainty_sources,
        trade_off_analysis,
        sensitivity_factors,
        extra: f.rest(),
    })
}

/// Cursor over a JSON object that tracks which keys were consumed, so the
/// remainder can be kept as opaque annotations.
struct Fields<'a> {
    path: String,
    map: &'a Map<String, Value>,
    taken: HashSet<&'a str>,
}

impl<'a> Fields<'a> {
    fn object(value: &'a Value, path: &str) -> Result<Self> {
        let map = value
            .as_object()
            .ok_or_else(|| BlueprintError::schema(display_path(path), "expected an object"))?;
        Ok(Self { path: path.to_string(), map, taken: HashSet::new() })
    }

    fn child(&self, key: &str) -> String {
        if self.path.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.path)
        }
    }

    fn has(&self, key: &str) -> bool {
        self.map.contains_key(key)
    }

    fn take(&mut self, key: &str) -> Option<&'a Value> {
        let (k, v) = self.map.get_key_value(key)?;
        self.taken.insert(k.as_str());
        if v.is_null() {
            None
        } else {
            Some(v)
        }
    }

    fn required(&mut self, key: &str) -> Result<&'a Value> {
        let path = self.child(key);
        self.take(key).ok_or_else(|| BlueprintError::schema(path, "required field is missing"))
    }

    fn required_string(&mut self, key: &str) -> Result<String> {
        let path = self.child(key);
        scalar_text(self.required(key)?).ok_or_else(|| BlueprintError::schema(path, "expected a string"))
    }

    fn optional_string(&mut self, key: &str) -> Result<Option<String>> {
        let path = self.child(key);
        match self.take(key) {
            None => Ok(None),
            Some(v) => scalar_text(v).map(Some).ok_or_else(|| BlueprintError::schema(path, "expected a string")),
        }
    }

    fn required_object(&mut self, key: &str) -> Result<Fields<'a>> {
        let path = self.child(key);
        let v = self.required(key)?;
        Fields::object(v, &path)
    }

    fn optional_object(&mut self, key: &str) -> Result<Option<Fields<'a>>> {
        let path = self.child(key);
        self.take(key).map(|v| Fields::object(v, &path)).transpose()
    }

    fn list<T>(&self, key: &str, items: &'a Value, mut each: impl FnMut(Fields<'a>) -> Result<T>) -> Result<Vec<T>> {
        let path = self.child(key);
        let arr = items.as_array().ok_or_else(|| BlueprintError::schema(path.clone(), "expected a list"))?;
        arr.iter()
            .enumerate()
            .map(|(i, item)| each(Fields::object(item, &format!("{path}[{i}]"))?))
            .collect()
    }

    fn required_list<T>(&mut self, key: &str, each: impl FnMut(Fields<'a>) -> Result<T>) -> Result<Vec<T>> {
        let items = self.required(key)?;
        self.list(key, items, each)
    }

    fn optional_list<T>(&mut self, key: &str, each: impl FnMut(Fields<'a>) -> Result<T>) -> Result<Vec<T>> {
        match self.take(key) {
            None => Ok(Vec::new()),
            Some(items) => self.list(key, items, each),
        }
    }

    fn string_list(&mut self, key: &str) -> Result<Vec<String>> {
        let path = self.child(key);
        match self.take(key) {
            None => Ok(Vec::new()),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| scalar_text(v).ok_or_else(|| BlueprintError::schema(path.clone(), "expected strings")))
                .collect(),
            Some(v) => scalar_text(v)
                .map(|s| vec![s])
                .ok_or_else(|| BlueprintError::schema(path, "expected a list of strings")),
        }
    }

    /// Shapes arrive either as a list of set names or as text like `[G, T]`.
    fn shape(&mut self, key: &str) -> Result<Vec<String>> {
        let path = self.child(key);
        match self.take(key) {
            None => Ok(Vec::new()),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| scalar_text(v).ok_or_else(|| BlueprintError::schema(path.clone(), "expected set names")))
                .collect(),
            Some(Value::String(text)) => Ok(parse_shape_text(text)),
            Some(_) => Err(BlueprintError::schema(path, "expected a list of set names")),
        }
    }

    fn rest(&self) -> Map<String, Value> {
        self.map
            .iter()
            .filter(|(k, _)| !self.taken.contains(k.as_str()))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }
}

fn display_path(path: &str) -> String {
    if path.is_empty() {
        "$".to_string()
    } else {
        path.to_string()
    }
}

fn scalar_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

/// `"[G, T]"` → `["G", "T"]`; `"scalar"` and `""` → `[]`.
pub fn parse_shape_text(text: &str) -> Vec<String> {
    let inner = text.trim().trim_start_matches(['[', '(']).trim_end_matches([']', ')']);
    if inner.trim().is_empty() || matches!(inner.trim().to_ascii_lowercase().as_str(), "scalar" | "1" | "none") {
        return Vec::new();
    }
    inner
        .split([',', '×', 'x'])
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Finding {
    pub severity: Severity,
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn has_errors(&self) -> bool {
        self.findings.iter().any(|f| f.severity == Severity::Error)
    }

    pub fn errors(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.severity == Severity::Error)
    }
}

/// Checks uniqueness and cross-reference invariants. Findings come back
/// sorted so the report does not depend on traversal order.
pub fn validate_blueprint(bp: &ModelingBlueprint) -> ValidationReport {
    let core = &bp.core_model_elements;
    let mut findings = Vec::new();
    let mut push = |severity, path: String, message: String| findings.push(Finding { severity, path, message });

    for key in bp.extra.keys() {
        push(Severity::Warning, key.clone(), format!("unexpected top-level block `{key}`"));
    }

    if core.decision_variables.is_empty() && core.constraints.is_empty() {
        push(Severity::Error, "core_model_elements".into(), "empty core model".into());
    } else if core.decision_variables.is_empty() {
        push(Severity::Error, "core_model_elements.decision_variables".into(), "no decision variables".into());
    } else if core.constraints.is_empty() {
        push(Severity::Warning, "core_model_elements.constraints".into(), "no constraints".into());
    }

    duplicates(core.decision_variables.iter().map(|v| v.name.as_str()), "decision_variables", "variable name", &mut push);
    duplicates(core.parameters.iter().map(|p| p.param_id.as_str()), "parameters", "param_id", &mut push);
    duplicates(core.constraints.iter().map(|c| c.constraint_id.as_str()), "constraints", "constraint_id", &mut push);

    for (i, p) in core.parameters.iter().enumerate() {
        if p.source_reference.trim().is_empty() {
            push(
                Severity::Error,
                format!("core_model_elements.parameters[{i}].source_reference"),
                format!("parameter `{}` has no source reference", p.param_id),
            );
        }
    }
    if core.objective_function.expression.trim().is_empty() {
        push(Severity::Warning, "core_model_elements.objective_function.expression".into(), "empty objective".into());
    }

    let param_ids: HashSet<&str> = core.parameters.iter().map(|p| p.param_id.as_str()).collect();
    let element_ids = element_ids(bp);
    let ext = &bp.extended_analysis;
    for (i, s) in ext.sensitivity_factors.iter().enumerate() {
        if !param_ids.contains(s.param_id.as_str()) {
            push(
                Severity::Error,
                format!("{EXTENDED_BLOCK}.sensitivity_factors[{i}]"),
                format!("param_id `{}` does not reference a declared parameter", s.param_id),
            );
        }
    }
    for (i, a) in ext.key_assumptions.iter().enumerate() {
        if !tokens(&a.impact_on_model).any(|t| element_ids.contains(t)) {
            push(
                Severity::Error,
                format!("{EXTENDED_BLOCK}.key_assumptions[{i}].impact_on_model"),
                format!("assumption `{}` does not name a core model element", a.assumption_id),
            );
        }
    }
    for (i, u) in ext.uncertainty_sources.iter().enumerate() {
        for e in &u.affected_elements {
            if !element_ids.contains(e.as_str()) {
                push(
                    Severity::Warning,
                    format!("{EXTENDED_BLOCK}.uncertainty_sources[{i}].affected_elements"),
                    format!("`{e}` is not a core model element"),
                );
            }
        }
    }

    findings.sort();
    ValidationReport { findings }
}

fn duplicates<'a>(
    names: impl Iterator<Item = &'a str>,
    list: &str,
    what: &str,
    push: &mut impl FnMut(Severity, String, String),
) {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for n in names {
        *counts.entry(n).or_default() += 1;
    }
    for (name, n) in counts {
        if n > 1 {
            push(Severity::Error, format!("core_model_elements.{list}"), format!("duplicate {what} `{name}`"));
        }
    }
}

/// Identifiers an extended-analysis entry may point at.
fn element_ids(bp: &ModelingBlueprint) -> BTreeSet<&str> {
    let core = &bp.core_model_elements;
    let mut ids = BTreeSet::new();
    ids.extend(core.decision_variables.iter().map(|v| v.name.as_str()));
    for p in &core.parameters {
        ids.insert(p.param_id.as_str());
        ids.insert(p.name.as_str());
    }
    for c in &core.constraints {
        ids.insert(c.constraint_id.as_str());
        if !c.name.is_empty() {
            ids.insert(c.name.as_str());
        }
    }
    if !core.objective_function.name.is_empty() {
        ids.insert(core.objective_function.name.as_str());
    }
    ids
}

fn tokens(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_')).filter(|t| !t.is_empty())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    pub(crate) fn minimal() -> Value {
        json!({
            "modeling_context": {
                "problem_essence": "x", "engineering_domain": "d",
                "modeling_paradigm": "MILP", "solution_scope": "s"
            },
            "core_model_elements": {
                "decision_variables": [
                    {"name": "x", "description": "", "type": "integer", "domain": "[0, 3]", "shape": "[]"}
                ],
                "parameters": [
                    {"param_id": "PARAM_01", "name": "cap", "value": 3, "unit": "", "description": "",
                     "source_reference": "statement"}
                ],
                "objective_function": {"name": "Obj", "type": "maximize", "expression": "x", "components": []},
                "constraints": [
                    {"constraint_id": "CONST_01", "name": "Cap", "expression": "x <= cap",
                     "category": "Resource Capacity", "description": ""}
                ]
            },
            "extended_analysis_and_robustness": {
                "key_assumptions": [],
                "uncertainty_sources": [],
                "trade_off_analysis": {"secondary_objectives": [], "soft_constraints": []},
                "sensitivity_factors": [{"param_id": "PARAM_01", "justification": "j"}]
            }
        })
    }

    #[test]
    fn parses_minimal_and_validates_clean() {
        let bp = parse_blueprint(&minimal().to_string()).unwrap();
        assert_eq!(bp.core_model_elements.decision_variables[0].var_type, VarType::Integer);
        assert!(bp.core_model_elements.decision_variables[0].shape.is_empty());
        assert!(validate_blueprint(&bp).is_clean());
    }

    #[test]
    fn missing_core_block_is_schema_violation() {
        let mut doc = minimal();
        doc.as_object_mut().unwrap().remove("core_model_elements");
        let err = parse_blueprint(&doc.to_string()).unwrap_err();
        assert_eq!(
            err,
            BlueprintError::SchemaViolation {
                path: "core_model_elements".into(),
                message: "required field is missing".into()
            }
        );
    }

    #[test]
    fn placeholder_value_is_flagged() {
        let mut doc = minimal();
        doc["core_model_elements"]["parameters"][0]["value"] = json!("[...]");
        match parse_blueprint(&doc.to_string()).unwrap_err() {
            BlueprintError::SchemaViolation { path, message } => {
                assert_eq!(path, "core_model_elements.parameters[0].value");
                assert!(message.contains("placeholder"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_json_is_reported() {
        assert!(matches!(parse_blueprint("{not json"), Err(BlueprintError::MalformedDocument(_))));
    }

    #[test]
    fn unknown_fields_survive_round_trip() {
        let mut doc = minimal();
        doc["core_model_elements"]["decision_variables"][0]["note"] = json!({"k": [1, 2]});
        doc["annotations"] = json!("kept");
        let bp = parse_blueprint(&doc.to_string()).unwrap();
        assert_eq!(bp.core_model_elements.decision_variables[0].extra["note"], json!({"k": [1, 2]}));
        let again = parse_blueprint(&to_document(&bp)).unwrap();
        assert_eq!(bp, again);
        let report = validate_blueprint(&bp);
        assert!(!report.has_errors());
        assert_eq!(report.findings[0].severity, Severity::Warning);
    }

    #[test]
    fn dangling_sensitivity_factor_is_error() {
        let mut doc = minimal();
        doc["extended_analysis_and_robustness"]["sensitivity_factors"][0]["param_id"] = json!("PARAM_99");
        let report = validate_blueprint(&parse_blueprint(&doc.to_string()).unwrap());
        let f = report.errors().next().unwrap();
        assert!(f.path.ends_with("sensitivity_factors[0]"));
    }

    #[test]
    fn assumption_must_name_an_element() {
        let mut doc = minimal();
        doc["extended_analysis_and_robustness"]["key_assumptions"] = json!([
            {"assumption_id": "A1", "content": "c", "justification": "j", "impact_on_model": "sets PARAM_01 to 3"},
            {"assumption_id": "A2", "content": "c", "justification": "j", "impact_on_model": "nothing specific"}
        ]);
        let report = validate_blueprint(&parse_blueprint(&doc.to_string()).unwrap());
        let errors: Vec<_> = report.errors().collect();
        assert_eq!(errors.len(), 1);
        assert!(errors[0].path.contains("key_assumptions[1]"));
    }

    #[test]
    fn empty_core_model_is_error() {
        let mut doc = minimal();
        doc["core_model_elements"]["decision_variables"] = json!([]);
        doc["core_model_elements"]["constraints"] = json!([]);
        let report = validate_blueprint(&parse_blueprint(&doc.to_string()).unwrap());
        assert!(report.errors().any(|f| f.message == "empty core model"));
    }

    #[test]
    fn shape_text_forms() {
        assert_eq!(parse_shape_text("[G, T]"), vec!["G", "T"]);
        assert!(parse_shape_text("scalar").is_empty());
        assert!(parse_shape_text("[]").is_empty());
    }

    #[test]
    fn category_matching_is_lenient() {
        assert_eq!(ConstraintCategory::parse("supply_demand balance"), Some(ConstraintCategory::SupplyDemandBalance));
        assert_eq!(ConstraintCategory::parse("physics"), None);
    }
}
