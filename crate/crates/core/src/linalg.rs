//! Small dense linear-algebra helpers shared by the estimators and monitors.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest accepted condition number of `Z'Z`.
pub const MAX_CONDITION: f64 = 1e12;

/// Running `Z'Z` and `Z'Y` sums, updated one row at a time.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalEquations {
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    rows: usize,
}

impl NormalEquations {
    pub fn new(dim: usize) -> Self {
        Self {
            xtx: DMatrix::zeros(dim, dim),
            xty: DVector::zeros(dim),
            rows: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.xty.len()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn push(&mut self, row: &[f64], y: f64) {
        let d = self.dim();
        debug_assert_eq!(row.len(), d);
        for j in 0..d {
            let rj = row[j];
            self.xty[j] += rj * y;
            for i in j..d {
                self.xtx[(i, j)] += row[i] * rj;
            }
        }
        self.rows += 1;
    }

    /// Full symmetric `Z'Z`.
    pub fn gram(&self) -> DMatrix<f64> {
        let mut g = self.xtx.clone();
        let d = self.dim();
        for j in 0..d {
            for i in 0..j {
                g[(i, j)] = g[(j, i)];
            }
        }
        g
    }

    pub fn xty(&self) -> &DVector<f64> {
        &self.xty
    }

    /// Solve `(Z'Z) theta = Z'Y` by Cholesky.
    pub fn solve(&self, op: &'static str) -> Result<DVector<f64>> {
        let g = self.gram();
        match g.clone().cholesky() {
            Some(ch) => Ok(ch.solve(&self.xty)),
            None => Err(Error::IllConditioned {
                op,
                condition: condition_symmetric(&g),
            }),
        }
    }
}

/// Ratio of extreme eigenvalue magnitudes of a symmetric matrix.
pub fn condition_symmetric(m: &DMatrix<f64>) -> f64 {
    let ev = m.clone().symmetric_eigenvalues();
    let max = ev.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let min = ev.iter().fold(f64::INFINITY, |acc, v| acc.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Least squares by Householder QR. Returns the solution and the condition
/// number of `Z'Z` (the square of that of `R`).
pub fn lstsq_qr(z: &DMatrix<f64>, y: &DVector<f64>, op: &'static str) -> Result<(DVector<f64>, f64)> {
    let cols = z.ncols();
    if z.nrows() < cols {
        return Err(Error::IllConditioned {
            op,
            condition: f64::INFINITY,
        });
    }
    let qr = z.clone().qr();
    let r = qr.r();
    let sv = r.clone().singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let condition = if smin > 0.0 {
        (smax / smin).powi(2)
    } else {
        f64::INFINITY
    };
    if !(condition < MAX_CONDITION) {
        return Err(Error::IllConditioned { op, condition });
    }
    let mut qty = y.clone();
    qr.q_tr_mul(&mut qty);
    let rhs = qty.rows(0, cols).into_owned();
    let theta = r.solve_upper_triangular(&rhs).ok_or(Error::IllConditioned { op, condition })?;
    Ok((theta, condition))
}

/// Symmetric positive semidefinite square root via eigendecomposition.
///
/// Accepts matrices symmetric to within `1e-10` (relative to the largest
/// entry) with eigenvalues no lower than `-1e-8`; slightly negative
/// eigenvalues are clamped to zero.
pub fn matrix_sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::NotPsd(format!("matrix is {}x{}", m.nrows(), m.ncols())));
    }
    let scale = m.amax().max(1.0);
    let asym = (m - m.transpose()).amax();
    if asym > 1e-10 * scale {
        return Err(Error::NotPsd(format!("asymmetry {asym:.3e}")));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let min = eig.eigenvalues.min();
    if min < -1e-8 {
        return Err(Error::NotPsd(format!("smallest eigenvalue {min:.3e}")));
    }
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    let s = v * DMatrix::from_diagonal(&roots) * v.transpose();
    Ok((&s + s.transpose()) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sqrt_examples() {
        let i = DMatrix::<f64>::identity(3, 3);
        assert!((matrix_sqrt_psd(&i).unwrap() - &i).amax() < 1e-15);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let s = matrix_sqrt_psd(&d).unwrap();
        let e = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]));
        assert!((s - e).amax() < 1e-14);
    }

    #[test]
    fn sqrt_rejects_bad_input() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matrix_sqrt_psd(&asym).is_err());
        let indef = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matrix_sqrt_psd(&indef).is_err());
        let tiny_neg = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-9]);
        let s = matrix_sqrt_psd(&tiny_neg).unwrap();
        assert_eq!(s[(1, 1)], 0.0);
    }

    #[test]
    fn qr_matches_noiseless_model() {
        let z = DMatrix::from_fn(50, 3, |i, j| ((i * 7 + j * 3) % 11) as f64 + (j as f64) * 0.1 * i as f64);
        let theta = DVector::from_vec(vec![1.5, -2.0, 0.25]);
        let y = &z * &theta;
        let (est, cond) = lstsq_qr(&z, &y, "test").unwrap();
        assert!((est - theta).amax() < 1e-10);
        assert!(cond.is_finite());
    }

    #[test]
    fn qr_flags_collinear_design() {
        let z = DMatrix::from_fn(20, 2, |i, _| i as f64);
        let y = DVector::from_fn(20, |i, _| i as f64);
        assert!(matches!(lstsq_qr(&z, &y, "test"), Err(Error::IllConditioned { .. })));
    }

    proptest! {
        #[test]
        fn sqrt_round_trip(entries in proptest::collection::vec(-3.0f64..3.0, 16)) {
            let a = DMatrix::from_vec(4, 4, entries);
            let m = &a * a.transpose();
            let s = matrix_sqrt_psd(&m).unwrap();
            prop_assert!((&s * &s - &m).amax() < 1e-8);
            prop_assert!((&s - s.transpose()).amax() == 0.0);
        }

        #[test]
        fn accumulator_matches_batch(rows in proptest::collection::vec(proptest::collection::vec(-2.0f64..2.0, 4), 6..40)) {
            let mut ne = NormalEquations::new(3);
            for r in &rows {
                ne.push(&r[..3], r[3]);
            }
            let z = DMatrix::from_fn(rows.len(), 3, |i, j| rows[i][j]);
            let y = DVector::from_fn(rows.len(), |i, _| rows[i][3]);
            prop_assert!((ne.gram() - z.transpose() * &z).amax() < 1e-12);
            prop_assert!((ne.xty() - z.transpose() * &y).amax() < 1e-12);
        }
    }
}
