//! Dense numeric tensors of rank 0..=3, stored row-major.
//!
//! Parameter values and variable assignments both use this representation.
//! On the wire a tensor is a JSON number or a nested JSON list.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

/// Largest nesting depth accepted for numeric data (scalar, vector, matrix, 3-tensor).
pub const MAX_RANK: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("placeholder data `{0}` is not a value")]
    Placeholder(String),
    #[error("nested lists have inconsistent lengths")]
    Ragged,
    #[error("nesting deeper than {MAX_RANK} levels")]
    TooDeep,
    #[error("non-numeric entry `{0}`")]
    NotNumeric(String),
    #[error("data length {len} does not match shape {shape:?}")]
    ShapeMismatch { shape: Vec<usize>, len: usize },
}

impl Tensor {
    pub fn scalar(value: f64) -> Self {
        Self { shape: Vec::new(), data: vec![value] }
    }

    pub fn vector(values: Vec<f64>) -> Self {
        Self { shape: vec![values.len()], data: values }
    }

    pub fn from_shape(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        let len: usize = shape.iter().product();
        if shape.len() > MAX_RANK {
            return Err(TensorError::TooDeep);
        }
        if len != data.len() {
            return Err(TensorError::ShapeMismatch { shape, len: data.len() });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self { shape, data: vec![0.0; len] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row-major offset of a multi-index, or `None` when out of range.
    pub fn offset(&self, index: &[usize]) -> Option<usize> {
        if index.len() != self.shape.len() {
            return None;
        }
        let mut off = 0;
        for (i, (&ix, &dim)) in index.iter().zip(&self.shape).enumerate() {
            if ix >= dim {
                return None;
            }
            off = if i == 0 { ix } else { off * dim + ix };
        }
        Some(off)
    }

    pub fn get(&self, index: &[usize]) -> Option<f64> {
        self.offset(index).map(|o| self.data[o])
    }

    /// Parses a JSON number, numeric string, or nested list.
    pub fn from_json(value: &Value) -> Result<Self, TensorError> {
        let mut shape = Vec::new();
        let mut data = Vec::new();
        collect(value, 0, &mut shape, &mut data)?;
        Ok(Self { shape, data })
    }

    pub fn to_json(&self) -> Value {
        fn build(shape: &[usize], data: &[f64]) -> Value {
            match shape.split_first() {
                None => number(data[0]),
                Some((&n, rest)) => {
                    let stride: usize = rest.iter().product();
                    Value::Array((0..n).map(|i| build(rest, &data[i * stride..(i + 1) * stride])).collect())
                }
            }
        }
        build(&self.shape, &self.data)
    }

    /// Element-wise comparison within a relative tolerance (absolute near zero).
    pub fn approx_eq(&self, other: &Tensor, rel: f64) -> bool {
        self.shape == other.shape
            && self.data.iter().zip(&other.data).all(|(a, b)| {
                let scale = a.abs().max(b.abs()).max(1.0);
                (a - b).abs() <= rel * scale
            })
    }
}

fn number(x: f64) -> Value {
    if x.is_finite() && x.fract() == 0.0 && x.abs() < 9.0e15 {
        Value::from(x as i64)
    } else {
        serde_json::Number::from_f64(x).map(Value::Number).unwrap_or(Value::Null)
    }
}

/// True for strings an LLM uses in place of data: `...`, `[...]`, `…`.
pub fn is_placeholder(text: &str) -> bool {
    text.contains("...") || text.contains('…')
}

fn collect(value: &Value, depth: usize, shape: &mut Vec<usize>, data: &mut Vec<f64>) -> Result<(), TensorError> {
    match value {
        Value::Number(n) => {
            if depth != shape.len() {
                return Err(TensorError::Ragged);
            }
            data.push(n.as_f64().ok_or_else(|| TensorError::NotNumeric(n.to_string()))?);
            Ok(())
        }
        Value::String(s) => {
            if is_placeholder(s) {
                return Err(TensorError::Placeholder(s.clone()));
            }
            let trimmed = s.trim();
            if trimmed.starts_with('[') {
                let parsed: Value =
                    serde_json::from_str(trimmed).map_err(|_| TensorError::NotNumeric(s.clone()))?;
                return collect(&parsed, depth, shape, data);
            }
            let x: f64 = trimmed.parse().map_err(|_| TensorError::NotNumeric(s.clone()))?;
            collect(&number(x), depth, shape, data)
        }
        Value::Array(items) => {
            if depth >= MAX_RANK {
                return Err(TensorError::TooDeep);
            }
            if depth == shape.len() {
                if !data.is_empty() {
                    return Err(TensorError::Ragged);
                }
                shape.push(items.len());
            } else if shape[depth] != items.len() {
                return Err(TensorError::Ragged);
            }
            for item in items {
                collect(item, depth + 1, shape, data)?;
            }
            Ok(())
        }
        other => Err(TensorError::NotNumeric(other.to_string())),
    }
}

impl Serialize for Tensor {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Tensor {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = Value::deserialize(deserializer)?;
        Tensor::from_json(&value).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn parses_nested_lists() {
        let t = Tensor::from_json(&json!([[1, 2], [3, 4]])).unwrap();
        assert_eq!(t.shape(), &[2, 2]);
        assert_eq!(t.get(&[1, 0]), Some(3.0));
        assert_eq!(t.to_json(), json!([[1, 2], [3, 4]]));
    }

    #[test]
    fn rejects_ragged_and_deep() {
        assert_eq!(Tensor::from_json(&json!([[1, 2], [3]])), Err(TensorError::Ragged));
        assert_eq!(Tensor::from_json(&json!([1, [2]])), Err(TensorError::Ragged));
        assert_eq!(Tensor::from_json(&json!([[[[1]]]])), Err(TensorError::TooDeep));
    }

    #[test]
    fn placeholder_strings_are_rejected() {
        assert!(matches!(Tensor::from_json(&json!("[...]")), Err(TensorError::Placeholder(_))));
        assert!(matches!(Tensor::from_json(&json!([1, "..."])), Err(TensorError::Placeholder(_))));
    }

    #[test]
    fn numeric_strings_are_accepted() {
        assert_eq!(Tensor::from_json(&json!("50000")).unwrap(), Tensor::scalar(50000.0));
        assert_eq!(Tensor::from_json(&json!("[1, 2.5]")).unwrap(), Tensor::vector(vec![1.0, 2.5]));
    }
}
