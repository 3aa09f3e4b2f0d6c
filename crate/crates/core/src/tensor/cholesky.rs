use super::{LinalgError, Matrix, SYMMETRY_TOL};

/// Pivots at or below this value are treated as loss of definiteness.
const MIN_PIVOT: f64 = 1e-300;

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdFactor {
    lower: Matrix,
}

impl SpdFactor {
    pub fn dim(&self) -> usize {
        self.lower.rows()
    }

    pub fn lower(&self) -> &Matrix {
        &self.lower
    }

    /// Reconstructs `L Lᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        self.lower.matmul_transpose(&self.lower)
    }
}

pub fn cholesky(a: &Matrix) -> Result<SpdFactor, LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::NotSquare {
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    if !a.is_symmetric(SYMMETRY_TOL) {
        return Err(LinalgError::NotSymmetric);
    }
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut diag = a[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if diag.is_nan() || diag <= MIN_PIVOT {
            return Err(LinalgError::NotPositiveDefinite {
                index: j,
                pivot: diag,
            });
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            let (ri, rj) = (l.row(i), l.row(j));
            for k in 0..j {
                s -= ri[k] * rj[k];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(SpdFactor { lower: l })
}

/// `ln det A = 2 Σ ln L_ii`.
pub fn logdet_spd(factor: &SpdFactor) -> f64 {
    let l = &factor.lower;
    2.0 * (0..l.rows()).map(|i| l[(i, i)].ln()).sum::<f64>()
}

/// Solves `A X = B` by forward then backward substitution.
pub fn solve_spd(factor: &SpdFactor, b: &Matrix) -> Result<Matrix, LinalgError> {
    let n = factor.dim();
    if b.rows() != n {
        return Err(LinalgError::DimensionMismatch {
            expected: n,
            found: b.rows(),
        });
    }
    let l = &factor.lower;
    let m = b.cols();
    let mut x = b.clone();
    // L Y = B
    for i in 0..n {
        for k in 0..i {
            let lik = l[(i, k)];
            if lik == 0.0 {
                continue;
            }
            for j in 0..m {
                let v = x[(k, j)];
                x[(i, j)] -= lik * v;
            }
        }
        let lii = l[(i, i)];
        for j in 0..m {
            x[(i, j)] /= lii;
        }
    }
    // Lᵀ X = Y
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            let lki = l[(k, i)];
            if lki == 0.0 {
                continue;
            }
            for j in 0..m {
                let v = x[(k, j)];
                x[(i, j)] -= lki * v;
            }
        }
        let lii = l[(i, i)];
        for j in 0..m {
            x[(i, j)] /= lii;
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{sym_eig, Rng};

    fn random_spd(n: usize, seed: u64) -> Matrix {
        let mut rng = Rng::new(seed);
        let g = Matrix::from_fn(n, n, |_, _| rng.normal());
        g.outer_gram().shifted_identity(1.0)
    }

    #[test]
    fn identity_factor_is_identity() {
        let f = cholesky(&Matrix::identity(3)).unwrap();
        assert_eq!(f.lower(), &Matrix::identity(3));
    }

    #[test]
    fn two_by_two_closed_form() {
        let a = Matrix::from_rows(&[&[4.0, 2.0], &[2.0, 3.0]]).unwrap();
        let f = cholesky(&a).unwrap();
        let l = f.lower();
        assert_eq!(l[(0, 0)], 2.0);
        assert_eq!(l[(0, 1)], 0.0);
        assert_eq!(l[(1, 0)], 1.0);
        assert!((l[(1, 1)] - 2f64.sqrt()).abs() < 1e-15);
        assert!(f.reconstruct().sub(&a).frobenius_norm() <= 1e-10 * a.frobenius_norm());
    }

    #[test]
    fn random_spd_reconstructs() {
        let a = random_spd(5, 42);
        let f = cholesky(&a).unwrap();
        let err = f.reconstruct().sub(&a).frobenius_norm() / a.frobenius_norm();
        assert!(err < 1e-10, "relative error {err}");
    }

    #[test]
    fn rejects_indefinite_and_asymmetric() {
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[2.0, 1.0]]).unwrap();
        assert!(matches!(
            cholesky(&a),
            Err(LinalgError::NotPositiveDefinite { index: 1, .. })
        ));
        let b = Matrix::from_rows(&[&[1.0, 0.5], &[0.0, 1.0]]).unwrap();
        assert_eq!(cholesky(&b), Err(LinalgError::NotSymmetric));
        let c = Matrix::zeros(2, 3);
        assert!(matches!(cholesky(&c), Err(LinalgError::NotSquare { .. })));
        assert!(matches!(
            cholesky(&Matrix::zeros(2, 2)),
            Err(LinalgError::NotPositiveDefinite { index: 0, .. })
        ));
    }

    #[test]
    fn logdet_trivial_cases() {
        let f = cholesky(&Matrix::identity(4)).unwrap();
        assert_eq!(logdet_spd(&f), 0.0);
        let f = cholesky(&Matrix::identity(2).scale(2.0)).unwrap();
        assert!((logdet_spd(&f) - 2.0 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn logdet_matches_eigenvalue_product() {
        let a = random_spd(6, 7);
        let expected: f64 = sym_eig(&a).unwrap().values.iter().map(|l| l.ln()).sum();
        let got = logdet_spd(&cholesky(&a).unwrap());
        assert!(
            (got - expected).abs() <= 1e-9 * expected.abs(),
            "{got} vs {expected}"
        );
    }

    #[test]
    fn solve_trivial_and_residual() {
        let mut rng = Rng::new(3);
        let b = Matrix::from_fn(4, 3, |_, _| rng.normal());
        let x = solve_spd(&cholesky(&Matrix::identity(4)).unwrap(), &b).unwrap();
        assert_eq!(x, b);

        let x = solve_spd(
            &cholesky(&Matrix::identity(3).scale(2.0)).unwrap(),
            &Matrix::identity(3),
        )
        .unwrap();
        assert!(x.sub(&Matrix::identity(3).scale(0.5)).max_abs() < 1e-15);

        let a = random_spd(6, 9);
        let b = Matrix::from_fn(6, 4, |_, _| rng.normal());
        let x = solve_spd(&cholesky(&a).unwrap(), &b).unwrap();
        let res = a.matmul(&x).sub(&b).frobenius_norm() / b.frobenius_norm();
        assert!(res < 1e-9, "residual {res}");
    }

    #[test]
    fn solve_rejects_wrong_rows() {
        let f = cholesky(&Matrix::identity(3)).unwrap();
        assert_eq!(
            solve_spd(&f, &Matrix::zeros(2, 2)),
            Err(LinalgError::DimensionMismatch {
                expected: 3,
                found: 2
            })
        );
    }
}
