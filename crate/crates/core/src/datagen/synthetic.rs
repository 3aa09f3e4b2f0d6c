use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, Provenance};
use crate::tensor::{dot, Matrix, Rng};

/// Union-of-subspaces generator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub per_class_dim: usize,
    pub samples_per_class: usize,
    pub ambient_dim: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 4,
            per_class_dim: 2,
            samples_per_class: 200,
            ambient_dim: 20,
            noise_sigma: 0.05,
            seed: 0,
        }
    }
}

/// Class `k` samples are `U_k c + σ n` with `c ~ N(0, I_p)`, `n ~ N(0, I_D)`
/// and the `U_k` blocks of one orthonormal `D × Kp` basis.
///
/// Draw order is fixed: the basis first, then per sample `c` followed by
/// `n`. The noise draw happens even when `σ = 0`, so datasets differing only
/// in `σ` share their bases and coefficients.
pub fn gen_union_of_subspaces(spec: &SyntheticSpec) -> Result<Dataset, DataError> {
    let &SyntheticSpec {
        classes,
        per_class_dim,
        samples_per_class,
        ambient_dim,
        noise_sigma,
        seed,
    } = spec;
    if classes == 0 || per_class_dim == 0 || samples_per_class == 0 {
        return Err(DataError::InvalidSpec(
            "classes, per_class_dim and samples_per_class must be positive".into(),
        ));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(DataError::InvalidSpec(format!("noise_sigma {noise_sigma}")));
    }
    if classes * per_class_dim > ambient_dim {
        return Err(DataError::Dimension {
            classes,
            per_class_dim,
            ambient_dim,
        });
    }

    let mut rng = Rng::new(seed);
    let basis = orthonormal_columns(ambient_dim, classes * per_class_dim, &mut rng);

    let total = classes * samples_per_class;
    let mut x = Matrix::zeros(ambient_dim, total);
    let mut labels = Vec::with_capacity(total);
    let mut coeffs = vec![0.0; per_class_dim];
    for k in 0..classes {
        for s in 0..samples_per_class {
            let col = k * samples_per_class + s;
            coeffs.iter_mut().for_each(|c| *c = rng.normal());
            for i in 0..ambient_dim {
                let mut v = 0.0;
                for (q, c) in coeffs.iter().enumerate() {
                    v += basis[k * per_class_dim + q][i] * c;
                }
                x[(i, col)] = v;
            }
            for i in 0..ambient_dim {
                x[(i, col)] += noise_sigma * rng.normal();
            }
            labels.push(k);
        }
    }
    Dataset::new(x, labels, classes, Provenance::Synthetic)
}

/// Gaussian columns orthonormalized by modified Gram–Schmidt with one
/// re-orthogonalization pass.
fn orthonormal_columns(rows: usize, cols: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(cols);
    while out.len() < cols {
        let mut v: Vec<f64> = (0..rows).map(|_| rng.normal()).collect();
        for _ in 0..2 {
            for u in &out {
                let p = dot(u, &v);
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
            }
        }
        let n = dot(&v, &v).sqrt();
        // A draw that is numerically inside the span so far is discarded.
        if n > 1e-8 {
            v.iter_mut().for_each(|a| *a /= n);
            out.push(v);
        }
    }
    out
}
