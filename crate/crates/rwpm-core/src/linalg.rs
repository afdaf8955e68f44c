//! Dense LU factorization with partial pivoting, used by the closed-form
//! diffusion solve. Factor once, back-substitute per right-hand-side column;
//! the inverse is never formed.

use ndarray::Array2;

use crate::error::{Error, Result};

pub struct LuFactors {
    /// Combined L (unit lower) and U, in place.
    lu: Array2<f64>,
    /// Row permutation applied during pivoting.
    perm: Vec<usize>,
}

pub fn lu_factor(a: &Array2<f64>) -> Result<LuFactors> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Size(format!(
            "LU needs a square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    let mut lu = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot_val = lu[(col, col)].abs();
        for r in col + 1..n {
            let v = lu[(r, col)].abs();
            if v > pivot_val {
                pivot_val = v;
                pivot_row = r;
            }
        }
        if !pivot_val.is_finite() || pivot_val < 1e-300 {
            return Err(Error::Numerical(format!(
                "singular or non-finite pivot at column {col}"
            )));
        }
        if pivot_row != col {
            perm.swap(col, pivot_row);
            for c in 0..n {
                let tmp = lu[(col, c)];
                lu[(col, c)] = lu[(pivot_row, c)];
                lu[(pivot_row, c)] = tmp;
            }
        }
        let inv_pivot = 1.0 / lu[(col, col)];
        for r in col + 1..n {
            let factor = lu[(r, col)] * inv_pivot;
            lu[(r, col)] = factor;
            if factor != 0.0 {
                for c in col + 1..n {
                    lu[(r, c)] -= factor * lu[(col, c)];
                }
            }
        }
    }
    Ok(LuFactors { lu, perm })
}

impl LuFactors {
    /// Solve A x = b for one right-hand side.
    pub fn solve_vec(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.lu.nrows();
        if b.len() != n {
            return Err(Error::Size(format!("rhs length {} != {}", b.len(), n)));
        }
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        // forward: L y = P b
        for i in 1..n {
            let mut sum = x[i];
            for j in 0..i {
                sum -= self.lu[(i, j)] * x[j];
            }
            x[i] = sum;
        }
        // backward: U x = y
        for i in (0..n).rev() {
            let mut sum = x[i];
            for j in i + 1..n {
                sum -= self.lu[(i, j)] * x[j];
            }
            x[i] = sum / self.lu[(i, i)];
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite solve result".into()));
        }
        Ok(x)
    }

    /// Solve A X = B column by column.
    pub fn solve_matrix(&self, b: &Array2<f64>) -> Result<Array2<f64>> {
        let n = self.lu.nrows();
        if b.nrows() != n {
            return Err(Error::Size(format!("rhs has {} rows, expected {n}", b.nrows())));
        }
        let d = b.ncols();
        let mut out = Array2::<f64>::zeros((n, d));
        let mut col = vec![0.0; n];
        for c in 0..d {
            for i in 0..n {
                col[i] = b[(i, c)];
            }
            let x = self.solve_vec(&col)?;
            for i in 0..n {
                out[(i, c)] = x[i];
            }
        }
        Ok(out)
    }
}
