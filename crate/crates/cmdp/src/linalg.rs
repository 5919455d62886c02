//! Dense LU factorization with partial pivoting, sized for tabular MDP work.

use crate::error::{Error, Result};

/// LU factors of a square matrix, stored in-place with a row permutation.
pub struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl Lu {
    /// Factorizes `a` (row-major, n x n). Fails on numerically singular input.
    pub fn factor(a: &[f64], n: usize) -> Result<Lu> {
        assert_eq!(a.len(), n * n);
        let mut lu = a.to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        for col in 0..n {
            let mut pivot_row = col;
            let mut pivot_val = lu[col * n + col].abs();
            for row in (col + 1)..n {
                let v = lu[row * n + col].abs();
                if v > pivot_val {
                    pivot_val = v;
                    pivot_row = row;
                }
            }
            if pivot_val < 1e-300 {
                return Err(Error::internal(format!(
                    "LU factorization hit a zero pivot at column {col}"
                )));
            }
            if pivot_row != col {
                for k in 0..n {
                    lu.swap(col * n + k, pivot_row * n + k);
                }
                perm.swap(col, pivot_row);
            }
            let inv = 1.0 / lu[col * n + col];
            for row in (col + 1)..n {
                let f = lu[row * n + col] * inv;
                lu[row * n + col] = f;
                for k in (col + 1)..n {
                    lu[row * n + k] -= f * lu[col * n + k];
                }
            }
        }
        Ok(Lu { n, lu, perm })
    }

    /// Solves A x = b for one right-hand side.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 1..n {
            let mut acc = x[i];
            for k in 0..i {
                acc -= self.lu[i * n + k] * x[k];
            }
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for k in (i + 1)..n {
                acc -= self.lu[i * n + k] * x[k];
            }
            x[i] = acc / self.lu[i * n + i];
        }
        x
    }
}

/// Solves A x = b and applies iterative refinement until the residual
/// infinity-norm drops below `tol` (or a few refinement rounds pass).
pub fn solve_refined(a: &[f64], n: usize, b: &[f64], tol: f64) -> Result<Vec<f64>> {
    let lu = Lu::factor(a, n)?;
    let mut x = lu.solve(b);
    for _ in 0..4 {
        let mut resid = vec![0.0; n];
        let mut worst = 0.0f64;
        for i in 0..n {
            let mut acc = b[i];
            for k in 0..n {
                acc -= a[i * n + k] * x[k];
            }
            resid[i] = acc;
            worst = worst.max(acc.abs());
        }
        if worst <= tol {
            return Ok(x);
        }
        let dx = lu.solve(&resid);
        for i in 0..n {
            x[i] += dx[i];
        }
    }
    // Final residual check after refinement rounds.
    let mut worst = 0.0f64;
    for i in 0..n {
        let mut acc = b[i];
        for k in 0..n {
            acc -= a[i * n + k] * x[k];
        }
        worst = worst.max(acc.abs());
    }
    if worst <= tol {
        Ok(x)
    } else {
        Err(Error::internal(format!(
            "linear solve residual {worst:.3e} exceeds tolerance {tol:.1e}"
        )))
    }
}
