//! Flat parameter vectors exchanged between vehicles and the RSU.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("shape mismatch: {left} vs {right}")]
    ShapeMismatch { left: ShapeTag, right: ShapeTag },
    #[error("parameter vector has {actual} values but shape {shape} needs {expected}")]
    LengthMismatch {
        shape: ShapeTag,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite value in {context}")]
    NonFinite { context: String },
}

/// One dense layer: `inputs x outputs` weights stored row-major, followed
/// by `outputs` biases.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
}

impl LayerShape {
    pub fn weight_len(&self) -> usize {
        self.inputs * self.outputs
    }

    pub fn param_len(&self) -> usize {
        self.weight_len() + self.outputs
    }
}

/// Layer dimensions of a model, in forward order.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ShapeTag(pub Vec<LayerShape>);

impl ShapeTag {
    pub fn dense(dims: &[usize]) -> Self {
        Self(
            dims.windows(2)
                .map(|w| LayerShape {
                    inputs: w[0],
                    outputs: w[1],
                })
                .collect(),
        )
    }

    pub fn param_len(&self) -> usize {
        self.0.iter().map(LayerShape::param_len).sum()
    }

    /// Start offset of each layer's block in the flat vector.
    pub fn offsets(&self) -> Vec<usize> {
        self.0
            .iter()
            .scan(0, |acc, layer| {
                let start = *acc;
                *acc += layer.param_len();
                Some(start)
            })
            .collect()
    }
}

impl fmt::Display for ShapeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut dims = self.0.first().map(|l| l.inputs.to_string()).unwrap_or_default();
        for layer in &self.0 {
            dims.push_str(&format!("->{}", layer.outputs));
        }
        write!(f, "[{dims}]")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    values: Vec<f64>,
    shape: ShapeTag,
}

impl ModelParams {
    pub fn new(values: Vec<f64>, shape: ShapeTag) -> Result<Self, ModelError> {
        let expected = shape.param_len();
        if values.len() != expected {
            return Err(ModelError::LengthMismatch {
                shape,
                expected,
                actual: values.len(),
            });
        }
        let params = Self { values, shape };
        params.ensure_finite("parameters")?;
        Ok(params)
    }

    pub fn zeros(shape: ShapeTag) -> Self {
        Self {
            values: vec![0.0; shape.param_len()],
            shape,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn shape(&self) -> &ShapeTag {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ensure_finite(&self, context: &str) -> Result<(), ModelError> {
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(ModelError::NonFinite {
                context: context.to_string(),
            })
        }
    }

    fn check_shape(&self, other: &ModelParams) -> Result<(), ModelError> {
        if self.shape != other.shape {
            return Err(ModelError::ShapeMismatch {
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn scale(&self, factor: f64) -> Result<ModelParams, ModelError> {
        let out = Self {
            values: self.values.iter().map(|v| v * factor).collect(),
            shape: self.shape.clone(),
        };
        out.ensure_finite("scaled parameters")?;
        Ok(out)
    }

    pub fn add(&self, other: &ModelParams) -> Result<ModelParams, ModelError> {
        self.combine(1.0, other, 1.0)
    }

    /// `a * self + b * other`, elementwise.
    pub fn combine(&self, a: f64, other: &ModelParams, b: f64) -> Result<ModelParams, ModelError> {
        self.check_shape(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        let out = Self {
            values,
            shape: self.shape.clone(),
        };
        out.ensure_finite("combined parameters")?;
        Ok(out)
    }
}
