use serde::{Deserialize, Serialize};

use super::BackboneError;
use crate::tensor::{Matrix, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

impl LayerShape {
    pub fn num_params(&self) -> usize {
        self.outputs * (self.inputs + 1)
    }
}

/// Layer layout of a backbone; also the JSON sidecar of a checkpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeManifest {
    pub layers: Vec<LayerShape>,
}

impl ShapeManifest {
    /// `input → hidden… → embed`, tanh on hidden layers, linear output.
    pub fn mlp(input_dim: usize, hidden: &[usize], embed_dim: usize) -> Self {
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(input_dim);
        widths.extend_from_slice(hidden);
        widths.push(embed_dim);
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| LayerShape {
                inputs: w[0],
                outputs: w[1],
                activation: if i == last {
                    Activation::Linear
                } else {
                    Activation::Tanh
                },
            })
            .collect();
        Self { layers }
    }

    pub fn validate(&self) -> Result<(), BackboneError> {
        if self.layers.is_empty() {
            return Err(BackboneError::InvalidShape("no layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.inputs == 0 || l.outputs == 0 {
                return Err(BackboneError::InvalidShape(format!(
                    "layer {i} has a zero width"
                )));
            }
        }
        for (i, w) in self.layers.windows(2).enumerate() {
            if w[0].outputs != w[1].inputs {
                return Err(BackboneError::InvalidShape(format!(
                    "layer {i} outputs {} but layer {} takes {}",
                    w[0].outputs,
                    i + 1,
                    w[1].inputs
                )));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn embed_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(LayerShape::num_params).sum()
    }

    /// Input width followed by every layer's output width.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.outputs))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `outputs × inputs`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn shape(&self) -> LayerShape {
        LayerShape {
            inputs: self.weight.cols(),
            outputs: self.weight.rows(),
            activation: self.activation,
        }
    }
}

/// Backbone weights. The final layer output is projected onto the unit
/// sphere by the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneParams {
    layers: Vec<Layer>,
}

impl BackboneParams {
    pub fn new(layers: Vec<Layer>) -> Result<Self, BackboneError> {
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weight.rows() {
                return Err(BackboneError::InvalidShape(format!(
                    "layer {i}: {} biases for {} outputs",
                    l.bias.len(),
                    l.weight.rows()
                )));
            }
            if !l.weight.is_finite() || l.bias.iter().any(|b| !b.is_finite()) {
                return Err(BackboneError::NonFinite);
            }
        }
        let params = Self { layers };
        params.shape().validate()?;
        Ok(params)
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(shape: &ShapeManifest, rng: &mut Rng) -> Result<Self, BackboneError> {
        shape.validate()?;
        let layers = shape
            .layers
            .iter()
            .map(|l| {
                let limit = (6.0 / (l.inputs + l.outputs) as f64).sqrt();
                Layer {
                    weight: Matrix::from_fn(l.outputs, l.inputs, |_, _| {
                        (2.0 * rng.uniform() - 1.0) * limit
                    }),
                    bias: vec![0.0; l.outputs],
                    activation: l.activation,
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn shape(&self) -> ShapeManifest {
        ShapeManifest {
            layers: self.layers.iter().map(Layer::shape).collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn embed_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weight.rows()
    }

    /// Layer by layer: weight (row-major) then bias.
    pub fn flatten(&self) -> ParamVector {
        let shape = self.shape();
        let mut values = Vec::with_capacity(shape.num_params());
        for l in &self.layers {
            values.extend_from_slice(l.weight.as_slice());
            values.extend_from_slice(&l.bias);
        }
        ParamVector { values, shape }
    }

    pub fn from_flat(flat: &ParamVector) -> Result<Self, BackboneError> {
        flat.shape.validate()?;
        if flat.values.len() != flat.shape.num_params() {
            return Err(BackboneError::ShapeMismatch {
                expected: flat.shape.num_params(),
                found: flat.values.len(),
            });
        }
        let mut offset = 0;
        let mut layers = Vec::with_capacity(flat.shape.layers.len());
        for l in &flat.shape.layers {
            let nw = l.inputs * l.outputs;
            let weight = Matrix::from_vec(
                l.outputs,
                l.inputs,
                flat.values[offset..offset + nw].to_vec(),
            )
            .map_err(|_| BackboneError::NonFinite)?;
            offset += nw;
            let bias = flat.values[offset..offset + l.outputs].to_vec();
            offset += l.outputs;
            layers.push(Layer {
                weight,
                bias,
                activation: l.activation,
            });
        }
        Self::new(layers)
    }
}

/// Flat parameter vector with its layer layout, the unit of averaging.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    shape: ShapeManifest,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, shape: ShapeManifest) -> Result<Self, BackboneError> {
        if values.len() != shape.num_params() {
            return Err(BackboneError::ShapeMismatch {
                expected: shape.num_params(),
                found: values.len(),
            });
        }
        Ok(Self { values, shape })
    }

    pub fn zeros(shape: ShapeManifest) -> Self {
        Self {
            values: vec![0.0; shape.num_params()],
            shape,
        }
    }

    pub fn shape(&self) -> &ShapeManifest {
        &self.shape
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `self += s · other`.
    pub fn axpy(&mut self, s: f64, other: &ParamVector) {
        assert_eq!(self.len(), other.len(), "parameter length mismatch");
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += s * b;
        }
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        crate::tensor::dot(&self.values, &other.values)
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn sub(&self, other: &ParamVector) -> ParamVector {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }
}
