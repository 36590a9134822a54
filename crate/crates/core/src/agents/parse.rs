use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::blueprint::{blueprint_from_value, BlueprintError, ModelingBlueprint};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseError {
    #[error("reply has no fenced block")]
    NoStructuredBlock,
    #[error("fenced block is not a JSON object: {0}")]
    MalformedBlock(String),
    #[error("field `{0}` is missing or has the wrong type")]
    FieldMissing(String),
    #[error("confidence {0} is outside [0, 1]")]
    ConfidenceOutOfRange(f64),
    #[error("field `{field}` = {value} is outside [0, 10]")]
    FieldOutOfRange { field: String, value: f64 },
    #[error(transparent)]
    Blueprint(#[from] BlueprintError),
}

impl ParseError {
    pub fn label(&self) -> &'static str {
        match self {
            Self::NoStructuredBlock => "NoStructuredBlock",
            Self::MalformedBlock(_) => "MalformedBlock",
            Self::FieldMissing(_) => "FieldMissing",
            Self::ConfidenceOutOfRange(_) => "ConfidenceOutOfRange",
            Self::FieldOutOfRange { .. } => "FieldOutOfRange",
            Self::Blueprint(e) => e.label(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FencedBlock {
    /// Info string after the opening fence, e.g. `json`.
    pub lang: String,
    pub body: String,
    /// Number of further fenced blocks in the reply.
    pub ignored: usize,
}

impl FencedBlock {
    pub fn warning(&self) -> Option<String> {
        (self.ignored > 0).then(|| format!("reply has {} fenced blocks; only the first was used", self.ignored + 1))
    }
}

fn fence_of(line: &str) -> Option<&str> {
    line.trim_start().strip_prefix("```").map(str::trim)
}

/// The first ``` fenced block of `text`. An unterminated block runs to the end.
pub fn first_fenced_block(text: &str) -> Result<FencedBlock, ParseError> {
    let mut blocks: Vec<(String, Vec<&str>)> = Vec::new();
    let mut open: Option<(String, Vec<&str>)> = None;
    for line in text.lines() {
        match (open.take(), fence_of(line)) {
            (None, Some(lang)) => open = Some((lang.to_string(), Vec::new())),
            (None, None) => {}
            (Some(block), Some(_)) => blocks.push(block),
            (Some((lang, mut body)), None) => {
                body.push(line);
                open = Some((lang, body));
            }
        }
    }
    blocks.extend(open);
    let count = blocks.len();
    let (lang, body) = blocks.into_iter().next().ok_or(ParseError::NoStructuredBlock)?;
    Ok(FencedBlock { lang, body: body.join("\n"), ignored: count - 1 })
}

/// Code from a modeler reply.
pub fn extract_code(text: &str) -> Result<FencedBlock, ParseError> {
    first_fenced_block(text)
}

fn json_object(text: &str) -> Result<(Map<String, Value>, Option<String>), ParseError> {
    let block = first_fenced_block(text)?;
    match serde_json::from_str::<Value>(&block.body) {
        Ok(Value::Object(map)) => Ok((map, block.warning())),
        Ok(other) => Err(ParseError::MalformedBlock(format!("expected an object, found {other}"))),
        Err(e) => Err(ParseError::MalformedBlock(e.to_string())),
    }
}

fn field<'a>(map: &'a Map<String, Value>, name: &str) -> Result<&'a Value, ParseError> {
    map.get(name).ok_or_else(|| ParseError::FieldMissing(name.to_string()))
}

fn bool_field(map: &Map<String, Value>, name: &str) -> Result<bool, ParseError> {
    field(map, name)?.as_bool().ok_or_else(|| ParseError::FieldMissing(name.to_string()))
}

fn text_field(map: &Map<String, Value>, name: &str) -> Result<String, ParseError> {
    field(map, name)?.as_str().map(str::to_string).ok_or_else(|| ParseError::FieldMissing(name.to_string()))
}

fn number_field(map: &Map<String, Value>, name: &str) -> Result<f64, ParseError> {
    field(map, name)?.as_f64().ok_or_else(|| ParseError::FieldMissing(name.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierVerdict {
    pub mismatch_detected: bool,
    pub mismatch_reason: String,
    pub suggestion: String,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl VerifierVerdict {
    pub fn passed(&self) -> bool {
        !self.mismatch_detected
    }
}

pub fn parse_verifier_verdict(text: &str) -> Result<VerifierVerdict, ParseError> {
    let (map, warning) = json_object(text)?;
    let confidence = number_field(&map, "confidence")?;
    if !(0.0..=1.0).contains(&confidence) {
        return Err(ParseError::ConfidenceOutOfRange(confidence));
    }
    Ok(VerifierVerdict {
        mismatch_detected: bool_field(&map, "mismatch_detected")?,
        mismatch_reason: text_field(&map, "mismatch_reason")?,
        suggestion: text_field(&map, "suggestion")?,
        confidence,
        warning,
    })
}

/// Blueprint from an analyzer reply, with a warning when extra blocks were ignored.
pub fn parse_blueprint_response(text: &str) -> Result<(ModelingBlueprint, Option<String>), ParseError> {
    let block = first_fenced_block(text)?;
    let value: Value =
        serde_json::from_str(&block.body).map_err(|e| BlueprintError::MalformedDocument(e.to_string()))?;
    Ok((blueprint_from_value(&value)?, block.warning()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct DimensionScores {
    pub IE: f64,
    pub DR: f64,
    pub MO: f64,
    pub UH: f64,
}

impl DimensionScores {
    pub fn values(&self) -> [f64; 4] {
        [self.IE, self.DR, self.MO, self.UH]
    }

    pub fn average(&self) -> f64 {
        self.values().iter().sum::<f64>() / 4.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatorVerdict {
    pub scores: DimensionScores,
    pub restart: bool,
    pub commentary: String,
    /// What the judge said about feasibility, if anything; never authoritative.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub claimed_feasible: Option<bool>,
}

pub fn parse_evaluator_verdict(text: &str) -> Result<EvaluatorVerdict, ParseError> {
    let (map, _) = json_object(text)?;
    let scores = field(&map, "scores")?.as_object().ok_or_else(|| ParseError::FieldMissing("scores".into()))?;
    let mut vals = [0.0; 4];
    for (slot, name) in vals.iter_mut().zip(["IE", "DR", "MO", "UH"]) {
        let v = number_field(scores, name).map_err(|_| ParseError::FieldMissing(format!("scores.{name}")))?;
        if !(0.0..=10.0).contains(&v) {
            return Err(ParseError::FieldOutOfRange { field: format!("scores.{name}"), value: v });
        }
        *slot = v;
    }
    let [ie, dr, mo, uh] = vals;
    Ok(EvaluatorVerdict {
        scores: DimensionScores { IE: ie, DR: dr, MO: mo, UH: uh },
        restart: bool_field(&map, "restart")?,
        commentary: map.get("commentary").and_then(Value::as_str).unwrap_or_default().to_string(),
        claimed_feasible: map.get("feasible").and_then(|v| v.as_bool().or_else(|| v.as_i64().map(|i| i != 0))),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_pass() {
        let reply = "Looks fine.\n```json\n{\"mismatch_detected\": false, \"mismatch_reason\": \"\", \"suggestion\": \"none\", \"confidence\": 0.9}\n```";
        let v = parse_verifier_verdict(reply).unwrap();
        assert!(v.passed());
        assert_eq!(v.confidence, 0.9);
    }

    #[test]
    fn verdict_errors() {
        assert_eq!(parse_verifier_verdict("no block here"), Err(ParseError::NoStructuredBlock));
        let high = "```json\n{\"mismatch_detected\": true, \"mismatch_reason\": \"r\", \"suggestion\": \"s\", \"confidence\": 1.5}\n```";
        assert_eq!(parse_verifier_verdict(high), Err(ParseError::ConfidenceOutOfRange(1.5)));
        let partial = "```json\n{\"mismatch_detected\": true, \"confidence\": 0.5}\n```";
        assert_eq!(parse_verifier_verdict(partial), Err(ParseError::FieldMissing("mismatch_reason".into())));
    }

    #[test]
    fn first_of_two_blocks_with_warning() {
        let text = "```python\nprint(1)\n```\nand\n```json\n{}\n```\n";
        let b = first_fenced_block(text).unwrap();
        assert_eq!((b.lang.as_str(), b.body.as_str(), b.ignored), ("python", "print(1)", 1));
        assert!(b.warning().unwrap().contains("2 fenced blocks"));
    }

    #[test]
    fn evaluator_scores_are_bounded() {
        let ok = "```json\n{\"scores\": {\"IE\": 8, \"DR\": 7, \"MO\": 6, \"UH\": 5}, \"restart\": false, \"commentary\": \"c\"}\n```";
        let v = parse_evaluator_verdict(ok).unwrap();
        assert_eq!(v.scores.average(), 6.5);
        let bad = ok.replace("\"IE\": 8", "\"IE\": 11");
        assert_eq!(
            parse_evaluator_verdict(&bad),
            Err(ParseError::FieldOutOfRange { field: "scores.IE".into(), value: 11.0 })
        );
    }
}
