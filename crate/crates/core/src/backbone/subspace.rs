use super::BackboneError;
use crate::mcr2::RepresentationBatch;
use crate::tensor::{sym_eig, Matrix};

/// Eigenvalues below this fraction of the largest are outside a class subspace.
pub const SUBSPACE_RANK_TOL: f64 = 1e-6;

/// Per-class principal subspaces fitted from training embeddings.
#[derive(Debug, Clone)]
pub struct SubspaceClassifier {
    /// `d × r_k` orthonormal basis per class.
    bases: Vec<Matrix>,
}

impl SubspaceClassifier {
    pub fn fit(train: &RepresentationBatch) -> Result<Self, BackboneError> {
        let mut bases = Vec::with_capacity(train.num_classes());
        for (k, idx) in train.class_indices().iter().enumerate() {
            if idx.is_empty() {
                return Err(BackboneError::EmptyTrainingClass(k));
            }
            let zk = train.z().select_columns(idx);
            let eig = sym_eig(&zk.outer_gram()).map_err(BackboneError::Linalg)?;
            let top = eig.values[0].max(0.0);
            let rank = eig
                .values
                .iter()
                .take_while(|&&v| top > 0.0 && v >= SUBSPACE_RANK_TOL * top)
                .count();
            let keep: Vec<usize> = (0..rank).collect();
            bases.push(eig.vectors.select_columns(&keep));
        }
        Ok(Self { bases })
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.bases.iter().map(Matrix::cols).collect()
    }

    /// Class maximizing `‖P_k z‖`; ties go to the lower class index.
    pub fn predict(&self, z: &Matrix) -> Vec<usize> {
        let energies: Vec<Matrix> = self.bases.iter().map(|b| b.transpose_matmul(z)).collect();
        (0..z.cols())
            .map(|j| {
                let mut best = 0;
                let mut best_energy = f64::NEG_INFINITY;
                for (k, e) in energies.iter().enumerate() {
                    let energy: f64 = (0..e.rows()).map(|i| e[(i, j)] * e[(i, j)]).sum();
                    if energy > best_energy {
                        best = k;
                        best_energy = energy;
                    }
                }
                best
            })
            .collect()
    }
}

pub fn nearest_subspace_classify(
    train: &RepresentationBatch,
    test: &Matrix,
) -> Result<Vec<usize>, BackboneError> {
    Ok(SubspaceClassifier::fit(train)?.predict(test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthogonal_lines() {
        let z = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0], &[0.0, 0.0]]).unwrap();
        let train = RepresentationBatch::new(z, vec![1, 0], 2).unwrap();
        let e1 = Matrix::from_vec(3, 1, vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(nearest_subspace_classify(&train, &e1).unwrap(), vec![1]);
    }

    #[test]
    fn training_point_maps_to_own_class() {
        let z = Matrix::from_rows(&[
            &[1.0, 0.5, 0.0, 0.0],
            &[0.0, 0.5, 0.0, 0.0],
            &[0.0, 0.0, 1.0, 0.2],
            &[0.0, 0.0, 0.0, 0.9],
        ])
        .unwrap();
        let train = RepresentationBatch::new(z.clone(), vec![0, 0, 1, 1], 2).unwrap();
        let clf = SubspaceClassifier::fit(&train).unwrap();
        assert_eq!(clf.ranks(), vec![2, 2]);
        assert_eq!(clf.predict(&z), vec![0, 0, 1, 1]);
    }

    #[test]
    fn empty_class_is_an_error() {
        let train = RepresentationBatch::new(Matrix::identity(2), vec![0, 0], 3).unwrap();
        assert!(matches!(
            SubspaceClassifier::fit(&train),
            Err(BackboneError::EmptyTrainingClass(1))
        ));
    }
}
