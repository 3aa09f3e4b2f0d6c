use log::warn;

use super::{Activation, BackboneError, BackboneParams, ParamVector};
use crate::tensor::Matrix;

/// Pre-projection norms below this are treated as degenerate.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Intermediates kept by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct Tape {
    /// `activations[0]` is the input, `activations[l]` the output of layer `l`.
    activations: Vec<Matrix>,
    norms: Vec<f64>,
    z: Matrix,
    degenerate: Vec<usize>,
}

impl Tape {
    /// Columns whose pre-projection norm vanished and were replaced by `e₁`.
    pub fn degenerate_columns(&self) -> &[usize] {
        &self.degenerate
    }

    pub fn embeddings(&self) -> &Matrix {
        &self.z
    }

    pub fn pre_projection(&self) -> &Matrix {
        &self.activations[self.activations.len() - 1]
    }
}

/// Runs the MLP on the columns of `x` and projects each output onto the
/// unit sphere.
pub fn forward(params: &BackboneParams, x: &Matrix) -> Result<(Matrix, Tape), BackboneError> {
    if x.rows() != params.input_dim() {
        return Err(BackboneError::InputDim {
            expected: params.input_dim(),
            found: x.rows(),
        });
    }
    let mut activations = Vec::with_capacity(params.layers().len() + 1);
    activations.push(x.clone());
    for layer in params.layers() {
        let prev = &activations[activations.len() - 1];
        let mut out = layer.weight.matmul(prev);
        let cols = out.cols();
        for (i, b) in layer.bias.iter().enumerate() {
            let row = &mut out.as_mut_slice()[i * cols..(i + 1) * cols];
            for v in row.iter_mut() {
                *v += b;
                if layer.activation == Activation::Tanh {
                    *v = v.tanh();
                }
            }
        }
        activations.push(out);
    }

    let y = &activations[activations.len() - 1];
    let norms = y.column_norms();
    if let Some(column) = norms.iter().position(|n| !n.is_finite()) {
        return Err(BackboneError::NonFiniteOutput { column });
    }
    let mut z = y.clone();
    let mut degenerate = Vec::new();
    let (d, m) = z.shape();
    for j in 0..m {
        if norms[j] < DEGENERATE_NORM {
            degenerate.push(j);
            for i in 0..d {
                z[(i, j)] = if i == 0 { 1.0 } else { 0.0 };
            }
        } else {
            let inv = 1.0 / norms[j];
            for i in 0..d {
                z[(i, j)] *= inv;
            }
        }
    }
    if !degenerate.is_empty() {
        warn!(
            "degenerate embedding: {} column(s) with norm < {DEGENERATE_NORM:e} replaced by e1",
            degenerate.len()
        );
    }
    let tape = Tape {
        activations,
        norms,
        z: z.clone(),
        degenerate,
    };
    Ok((z, tape))
}

/// Jacobian of `y ↦ y/‖y‖`: `(I − ẑẑᵀ)/‖y‖`.
pub fn sphere_projection_jacobian(y: &[f64]) -> Matrix {
    let norm = crate::tensor::dot(y, y).sqrt();
    let n = y.len();
    Matrix::from_fn(n, n, |i, j| {
        let delta = if i == j { 1.0 } else { 0.0 };
        (delta - y[i] * y[j] / (norm * norm)) / norm
    })
}

/// Backpropagates `dL/dZ` to a gradient over the flattened parameters.
pub fn backward(
    params: &BackboneParams,
    tape: &Tape,
    grad_z: &Matrix,
) -> Result<ParamVector, BackboneError> {
    let (d, m) = tape.z.shape();
    if grad_z.shape() != (d, m) {
        return Err(BackboneError::GradientShape {
            expected: (d, m),
            found: grad_z.shape(),
        });
    }
    if tape.activations.len() != params.layers().len() + 1 {
        return Err(BackboneError::TapeMismatch);
    }

    // Through the projection, column by column.
    let mut delta = Matrix::zeros(d, m);
    let mut is_degenerate = vec![false; m];
    for &j in &tape.degenerate {
        is_degenerate[j] = true;
    }
    for j in 0..m {
        if is_degenerate[j] {
            continue;
        }
        let mut radial = 0.0;
        for i in 0..d {
            radial += tape.z[(i, j)] * grad_z[(i, j)];
        }
        let inv = 1.0 / tape.norms[j];
        for i in 0..d {
            delta[(i, j)] = (grad_z[(i, j)] - tape.z[(i, j)] * radial) * inv;
        }
    }

    let layers = params.layers();
    let mut grads: Vec<(Matrix, Vec<f64>)> = Vec::with_capacity(layers.len());
    for (l, layer) in layers.iter().enumerate().rev() {
        let out = &tape.activations[l + 1];
        if layer.activation == Activation::Tanh {
            for (g, a) in delta.as_mut_slice().iter_mut().zip(out.as_slice()) {
                *g *= 1.0 - a * a;
            }
        }
        let input = &tape.activations[l];
        let grad_w = delta.matmul_transpose(input);
        let grad_b: Vec<f64> = (0..delta.rows())
            .map(|i| delta.row(i).iter().sum())
            .collect();
        if l > 0 {
            delta = layer.weight.transpose_matmul(&delta);
        }
        grads.push((grad_w, grad_b));
    }
    grads.reverse();

    let shape = params.shape();
    let mut values = Vec::with_capacity(shape.num_params());
    for (w, b) in grads {
        values.extend_from_slice(w.as_slice());
        values.extend_from_slice(&b);
    }
    ParamVector::new(values, shape)
}
