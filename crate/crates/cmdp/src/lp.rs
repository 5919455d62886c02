//! Exact CMDP solver over occupancy measures.
//!
//! The LP maximizes `sum mu(s,a) r(s,a)` over the occupancy polytope
//! (flow-conservation rows) intersected with the single constraint row
//! `sum mu(s,a) c(s,a) >= b`. Ground-truth values, the optimal policy, the
//! optimal Lagrange multiplier, and the Slater constant all come from here.

use crate::error::Result;
use crate::mdp::{value_iteration, Cmdp, OccupancyMeasure, Policy};
use crate::simplex::solve_equality_form;
use serde::{Deserialize, Serialize};

/// Absolute feasibility / optimality tolerance of the oracle.
pub const ORACLE_TOL: f64 = 1e-8;

/// Output of [`solve_cmdp_exact`]. When `feasible` is false the remaining
/// fields are zeroed placeholders.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CmdpSolution {
    pub optimal_value: f64,
    pub mu_star: OccupancyMeasure,
    pub policy: Policy,
    pub lambda_star: f64,
    pub feasible: bool,
    pub constraint_value: f64,
    /// Set when the final LP basis was degenerate (multiple optimal bases).
    pub degenerate: bool,
}

/// Solves the CMDP exactly via the occupancy-measure LP.
///
/// The returned policy is `pi(a|s) = mu(s,a) / sum_a mu(s,a)` (uniform on
/// zero-mass states). `lambda_star` is the smallest optimal multiplier of the
/// constraint row, which makes the output deterministic on degenerate LPs.
pub fn solve_cmdp_exact(cmdp: &Cmdp) -> Result<CmdpSolution> {
    cmdp.validate()?;
    let s_count = cmdp.num_states;
    let a_count = cmdp.num_actions;
    let n_mu = s_count * a_count;
    let cols = n_mu + 1; // mu variables plus the constraint-row surplus
    let rows = s_count + 1;

    let mut a = vec![0.0; rows * cols];
    let mut rhs = vec![0.0; rows];
    // Flow rows: sum_a mu(s,a) - gamma * sum_{s',a'} P(s|s',a') mu(s',a') = rho(s).
    for s in 0..s_count {
        for sp in 0..s_count {
            for ap in 0..a_count {
                let col = sp * a_count + ap;
                let mut coeff = -cmdp.gamma * cmdp.p_row(sp, ap)[s];
                if sp == s {
                    coeff += 1.0;
                }
                a[s * cols + col] += coeff;
            }
        }
        rhs[s] = cmdp.rho[s];
    }
    // Constraint row: c . mu - surplus = b.
    let c_row = s_count;
    for col in 0..n_mu {
        a[c_row * cols + col] = cmdp.constraints[col];
    }
    a[c_row * cols + n_mu] = -1.0;
    rhs[c_row] = cmdp.b;

    let mut obj = vec![0.0; cols];
    obj[..n_mu].copy_from_slice(&cmdp.rewards);

    let lp = solve_equality_form(&a, &rhs, &obj, rows, cols)?;
    if !lp.feasible {
        return Ok(CmdpSolution {
            optimal_value: 0.0,
            mu_star: OccupancyMeasure {
                num_states: s_count,
                num_actions: a_count,
                mu: vec![0.0; n_mu],
            },
            policy: Policy::uniform(s_count, a_count),
            lambda_star: 0.0,
            feasible: false,
            constraint_value: 0.0,
            degenerate: false,
        });
    }

    let mu: Vec<f64> = lp.x[..n_mu].iter().map(|&v| v.max(0.0)).collect();
    let mut probs = vec![0.0; n_mu];
    for s in 0..s_count {
        let mass: f64 = (0..a_count).map(|act| mu[s * a_count + act]).sum();
        if mass <= 1e-12 {
            for act in 0..a_count {
                probs[s * a_count + act] = 1.0 / a_count as f64;
            }
        } else {
            for act in 0..a_count {
                probs[s * a_count + act] = mu[s * a_count + act] / mass;
            }
        }
    }
    for s in 0..s_count {
        let sum: f64 = probs[s * a_count..(s + 1) * a_count].iter().sum();
        for act in 0..a_count {
            probs[s * a_count + act] /= sum;
        }
    }
    let constraint_value: f64 = mu.iter().zip(&cmdp.constraints).map(|(m, c)| m * c).sum();

    // The simplex dual prices the rhs: dV*/db = y_c, and lambda* = -dV*/db.
    // On degenerate LPs that dual need not be the smallest optimal
    // multiplier, so shrink it by bisection on the (convex, piecewise-linear)
    // Lagrangian dual: the smallest optimal multiplier is the left edge of
    // the interval where L(lambda) equals the LP optimum.
    let lambda_simplex = (-lp.duals[c_row]).max(0.0);
    let lambda_star = smallest_optimal_multiplier(cmdp, lp.objective, lambda_simplex)?;

    Ok(CmdpSolution {
        optimal_value: lp.objective,
        mu_star: OccupancyMeasure {
            num_states: s_count,
            num_actions: a_count,
            mu,
        },
        policy: Policy::new(s_count, a_count, probs)?,
        lambda_star,
        feasible: true,
        constraint_value,
        degenerate: lp.degenerate,
    })
}

/// Convenience: solve with the threshold replaced by `b_override`.
pub fn solve_cmdp_with_threshold(cmdp: &Cmdp, b_override: f64) -> Result<CmdpSolution> {
    let mut modified = cmdp.clone();
    modified.b = b_override;
    solve_cmdp_exact(&modified)
}

fn smallest_optimal_multiplier(cmdp: &Cmdp, optimum: f64, anchor: f64) -> Result<f64> {
    let scale = 1.0 + optimum.abs() + cmdp.r_max / (1.0 - cmdp.gamma);
    let slack = 1e-9 * scale + 1e-9;
    if lagrangian_value(cmdp, 0.0)? <= optimum + slack {
        return Ok(0.0);
    }
    // L is non-increasing on [0, anchor] and L(anchor) ~= optimum, so the
    // predicate L(lambda) <= optimum + slack is monotone here.
    let mut lo = 0.0f64;
    let mut hi = anchor.max(1e-12);
    if lagrangian_value(cmdp, hi)? > optimum + slack {
        // The simplex dual under-priced the row (degenerate vertex); grow the
        // bracket geometrically. The dual bound caps any optimal multiplier.
        let cap = 4.0 * (1.0 + cmdp.r_max) / ((1.0 - cmdp.gamma) * 1e-6);
        while lagrangian_value(cmdp, hi)? > optimum + slack {
            hi *= 2.0;
            if hi > cap {
                return Ok(anchor);
            }
        }
    }
    for _ in 0..200 {
        if hi - lo <= 1e-11 * (1.0 + hi) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if lagrangian_value(cmdp, mid)? <= optimum + slack {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Slater constant: `max_pi V_c^pi(rho) - b`, computed by value iteration on
/// the constraint reward. Negative means the problem is infeasible.
pub fn slater_constant(cmdp: &Cmdp) -> Result<f64> {
    let sol = value_iteration(
        &cmdp.transitions,
        cmdp.num_states,
        cmdp.num_actions,
        &cmdp.constraints,
        cmdp.gamma,
        1e-9,
    )?;
    let max_vc: f64 = sol.v_star.iter().zip(&cmdp.rho).map(|(v, p)| v * p).sum();
    Ok(max_vc - cmdp.b)
}

/// Lagrangian dual function: `max_pi [ V_r^pi + lambda (V_c^pi - b) ]`,
/// evaluated by value iteration on the combined reward `r + lambda c`.
pub fn lagrangian_value(cmdp: &Cmdp, lambda: f64) -> Result<f64> {
    if lambda < 0.0 {
        return Err(crate::error::Error::input("lambda must be nonnegative"));
    }
    let reward: Vec<f64> = cmdp
        .rewards
        .iter()
        .zip(&cmdp.constraints)
        .map(|(r, c)| r + lambda * c)
        .collect();
    let sol = value_iteration(
        &cmdp.transitions,
        cmdp.num_states,
        cmdp.num_actions,
        &reward,
        cmdp.gamma,
        1e-9,
    )?;
    let v: f64 = sol.v_star.iter().zip(&cmdp.rho).map(|(v, p)| v * p).sum();
    Ok(v - lambda * cmdp.b)
}
