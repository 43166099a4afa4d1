//! Small symmetric solves used by the preconditioners (R×R systems).

use nalgebra::DMatrix;

use crate::tensor::Matrix;

/// Lower Cholesky factor of a symmetric matrix, stored row-major.
pub(crate) struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    /// Returns `None` when the matrix is not numerically positive definite.
    pub(crate) fn factor(s: &Matrix) -> Option<Self> {
        let n = s.rows();
        debug_assert_eq!(n, s.cols());
        let mut l = vec![0.0; n * n];
        let scale = (0..n).map(|i| s[(i, i)].abs()).fold(0.0, f64::max);
        for i in 0..n {
            for j in 0..=i {
                let mut sum = s[(i, j)];
                for k in 0..j {
                    sum -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if !(sum > scale * 1e-14) {
                        return None;
                    }
                    l[i * n + i] = sum.sqrt();
                } else {
                    l[i * n + j] = sum / l[j * n + j];
                }
            }
        }
        Some(Self { n, l })
    }

    /// Solves `S x = b` in place.
    pub(crate) fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let mut v = b[i];
            for k in 0..i {
                v -= self.l[i * n + k] * b[k];
            }
            b[i] = v / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut v = b[i];
            for k in i + 1..n {
                v -= self.l[k * n + i] * b[k];
            }
            b[i] = v / self.l[i * n + i];
        }
    }
}

/// Minimum-norm least-squares solve `S x = b` through the SVD.
pub(crate) fn pseudo_solve(s: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = s.rows();
    let m = DMatrix::from_column_slice(n, n, s.data());
    let svd = m.svd(true, true);
    let tol = svd.singular_values.max() * n as f64 * f64::EPSILON;
    let rhs = nalgebra::DVector::from_column_slice(b);
    match svd.solve(&rhs, tol) {
        Ok(x) => x.iter().copied().collect(),
        Err(_) => vec![0.0; n],
    }
}

/// Computes `G S^{-1}` for symmetric `S` by solving one R×R system per row
/// of `G`. `Err(())` means the factorization failed.
pub(crate) fn right_solve_spd(g: &Matrix, s: &Matrix) -> Result<Matrix, ()> {
    let chol = Cholesky::factor(s).ok_or(())?;
    Ok(map_rows(g, |row| chol.solve_in_place(row)))
}

pub(crate) fn right_pseudo_solve(g: &Matrix, s: &Matrix) -> Matrix {
    map_rows(g, |row| {
        let x = pseudo_solve(s, row);
        row.copy_from_slice(&x);
    })
}

fn map_rows(g: &Matrix, mut f: impl FnMut(&mut [f64])) -> Matrix {
    let (rows, cols) = (g.rows(), g.cols());
    let mut out = Matrix::zeros(rows, cols);
    let mut buf = vec![0.0; cols];
    for i in 0..rows {
        for (j, b) in buf.iter_mut().enumerate() {
            *b = g[(i, j)];
        }
        f(&mut buf);
        for (j, &b) in buf.iter().enumerate() {
            out[(i, j)] = b;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_solves_spd() {
        let s = Matrix::from_rows(&[&[4.0, 1.0], &[1.0, 3.0]]).unwrap();
        let chol = Cholesky::factor(&s).unwrap();
        let mut b = vec![1.0, 2.0];
        chol.solve_in_place(&mut b);
        assert!((4.0 * b[0] + b[1] - 1.0).abs() < 1e-14);
        assert!((b[0] + 3.0 * b[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn cholesky_rejects_singular() {
        let s = Matrix::from_rows(&[&[1.0, 1.0], &[1.0, 1.0]]).unwrap();
        assert!(Cholesky::factor(&s).is_none());
        let x = pseudo_solve(&s, &[2.0, 2.0]);
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }
}
