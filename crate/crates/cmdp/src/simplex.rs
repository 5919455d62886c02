//! Self-contained dense two-phase simplex with Bland's rule.
//!
//! Sized for desk-scale LPs (tens of rows). The tableau keeps the artificial
//! columns so row prices (duals) can be read off the objective row at the end.

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct LpSolution {
    /// Primal values for the structural variables.
    pub x: Vec<f64>,
    pub objective: f64,
    /// Row prices y with objective = y . rhs at optimality (equality-form max).
    pub duals: Vec<f64>,
    pub feasible: bool,
    /// True when some basic variable sits at (numerical) zero, i.e. multiple
    /// optimal bases may exist.
    pub degenerate: bool,
}

/// Maximizes `obj . x` subject to `A x = rhs`, `x >= 0`, where `a` is
/// row-major with `rows * cols` entries. Rows with negative rhs are negated
/// internally, so callers may pass any sign.
pub fn solve_equality_form(
    a: &[f64],
    rhs: &[f64],
    obj: &[f64],
    rows: usize,
    cols: usize,
) -> Result<LpSolution> {
    assert_eq!(a.len(), rows * cols);
    assert_eq!(rhs.len(), rows);
    assert_eq!(obj.len(), cols);

    // Tableau layout: structural columns, then one artificial per row, then rhs.
    let width = cols + rows + 1;
    let mut t = vec![0.0; rows * width];
    let mut row_sign = vec![1.0; rows];
    for r in 0..rows {
        let sign = if rhs[r] < 0.0 { -1.0 } else { 1.0 };
        row_sign[r] = sign;
        for c in 0..cols {
            t[r * width + c] = sign * a[r * cols + c];
        }
        t[r * width + cols + r] = 1.0;
        t[r * width + width - 1] = sign * rhs[r];
    }
    let mut basis: Vec<usize> = (cols..cols + rows).collect();

    // Phase 1: minimize the artificial sum, i.e. maximize its negation. The
    // objective row holds reduced costs c_bar = c - y A for the current basis.
    let mut z = vec![0.0; width];
    for c in 0..cols {
        let mut acc = 0.0;
        for r in 0..rows {
            acc += t[r * width + c];
        }
        z[c] = acc; // c_j = 0, y = -1 per row initially
    }
    let mut z_rhs = 0.0;
    for r in 0..rows {
        z_rhs += t[r * width + width - 1];
    }
    run_simplex(
        &mut t,
        &mut z,
        &mut z_rhs,
        &mut basis,
        rows,
        width,
        cols + rows,
    )?;
    if z_rhs > 1e-7 {
        return Ok(LpSolution {
            x: vec![0.0; cols],
            objective: 0.0,
            duals: vec![0.0; rows],
            feasible: false,
            degenerate: false,
        });
    }
    // Drive any artificial still in the basis out with a degenerate pivot, or
    // detect a redundant row if its row is entirely zero on structural columns.
    for r in 0..rows {
        if basis[r] >= cols {
            let mut entering = None;
            for c in 0..cols {
                if t[r * width + c].abs() > PIVOT_TOL {
                    entering = Some(c);
                    break;
                }
            }
            if let Some(c) = entering {
                pivot(&mut t, &mut z, &mut z_rhs, &mut basis, rows, width, r, c);
            }
            // A redundant row keeps its artificial basic at value zero; it is
            // harmless because the rhs is zero there.
        }
    }

    // Phase 2: original objective. Rebuild the reduced-cost row from scratch.
    let mut cost = vec![0.0; width - 1];
    cost[..cols].copy_from_slice(obj);
    let mut y_row = vec![0.0; rows];
    // reduced costs: c_bar = c - c_B B^-1 A; with the tableau already in
    // basis form, c_bar_j = c_j - sum_r c_{basis[r]} t[r][j].
    for (r, &bv) in basis.iter().enumerate() {
        let cb = if bv < cols { obj[bv] } else { 0.0 };
        y_row[r] = cb;
    }
    for cidx in 0..width - 1 {
        let mut acc = cost[cidx];
        for r in 0..rows {
            acc -= y_row[r] * t[r * width + cidx];
        }
        z[cidx] = acc;
    }
    z_rhs = 0.0;
    for r in 0..rows {
        z_rhs -= y_row[r] * t[r * width + width - 1];
    }
    // Artificial columns are banned from entering in phase 2.
    run_simplex(&mut t, &mut z, &mut z_rhs, &mut basis, rows, width, cols)?;

    let mut x = vec![0.0; cols];
    let mut degenerate = false;
    for r in 0..rows {
        let val = t[r * width + width - 1];
        if val.abs() <= 1e-10 {
            degenerate = true;
        }
        if basis[r] < cols {
            x[basis[r]] = val;
        }
    }
    let objective: f64 = obj.iter().zip(&x).map(|(c, v)| c * v).sum();
    // Duals: the reduced cost of artificial r is 0 - y_r (times the row sign
    // applied at setup).
    let mut duals = vec![0.0; rows];
    for r in 0..rows {
        duals[r] = -z[cols + r] * row_sign[r];
    }
    Ok(LpSolution {
        x,
        objective,
        duals,
        feasible: true,
        degenerate,
    })
}

/// Bland's rule simplex loop over the first `enterable` columns.
fn run_simplex(
    t: &mut [f64],
    z: &mut [f64],
    z_rhs: &mut f64,
    basis: &mut [usize],
    rows: usize,
    width: usize,
    enterable: usize,
) -> Result<()> {
    let mut iters = 0usize;
    let iter_cap = 50_000 + 200 * rows * enterable;
    loop {
        iters += 1;
        if iters > iter_cap {
            return Err(Error::internal("simplex exceeded its iteration cap"));
        }
        // Bland: smallest-index improving column.
        let mut entering = None;
        for c in 0..enterable {
            if basis.contains(&c) {
                continue;
            }
            if z[c] > COST_TOL {
                entering = Some(c);
                break;
            }
        }
        let Some(col) = entering else {
            return Ok(());
        };
        // Ratio test; ties resolved toward the smallest basic variable index.
        let mut leave: Option<(usize, f64)> = None;
        for r in 0..rows {
            let coeff = t[r * width + col];
            if coeff > PIVOT_TOL {
                let ratio = t[r * width + width - 1] / coeff;
                match leave {
                    None => leave = Some((r, ratio)),
                    Some((br, bratio)) => {
                        if ratio < bratio - 1e-12
                            || ((ratio - bratio).abs() <= 1e-12 && basis[r] < basis[br])
                        {
                            leave = Some((r, ratio));
                        }
                    }
                }
            }
        }
        let Some((row, _)) = leave else {
            return Err(Error::internal(
                "simplex detected an unbounded direction on a compact feasible set",
            ));
        };
        pivot(t, z, z_rhs, basis, rows, width, row, col);
    }
}

#[allow(clippy::too_many_arguments)]
fn pivot(
    t: &mut [f64],
    z: &mut [f64],
    z_rhs: &mut f64,
    basis: &mut [usize],
    rows: usize,
    width: usize,
    row: usize,
    col: usize,
) {
    let inv = 1.0 / t[row * width + col];
    for c in 0..width {
        t[row * width + c] *= inv;
    }
    t[row * width + col] = 1.0;
    for r in 0..rows {
        if r == row {
            continue;
        }
        let f = t[r * width + col];
        if f == 0.0 {
            continue;
        }
        for c in 0..width {
            t[r * width + c] -= f * t[row * width + c];
        }
        t[r * width + col] = 0.0;
    }
    let f = z[col];
    if f != 0.0 {
        for c in 0..width - 1 {
            z[c] -= f * t[row * width + c];
        }
        // z_rhs tracks the negated objective, so it row-reduces like z.
        *z_rhs -= f * t[row * width + width - 1];
        z[col] = 0.0;
    }
    basis[row] = col;
}
