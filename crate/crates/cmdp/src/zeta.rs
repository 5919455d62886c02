//! Doubling estimator for the Slater constant from generative-model queries.
//!
//! Round `i` targets the scale `zeta_i = 2^{-i} / (1 - gamma)`: it draws a
//! fresh empirical model sized for that scale, plans on the constraint
//! reward, and halts as soon as the measured margin `|V_hat - b|` clears
//! `9 zeta_i`. Each round uses fresh samples; nothing is reused.

use crate::error::{Error, Result};
use crate::mdp::value_iteration;
use crate::sampling::{build_empirical_model, GenerativeModel};
use serde::{Deserialize, Serialize};

/// One executed round of the doubling scheme.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZetaRound {
    pub round: usize,
    pub zeta_i: f64,
    pub n_i: u64,
    /// Empirical optimal constraint value at rho for this round's model.
    pub v_hat_star: f64,
}

/// Estimator output. When `halted` is false the budget ran out with the stop
/// rule never firing (the margin is indistinguishable from zero at the scales
/// probed); `zeta_hat` then holds the last measured margin.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZetaEstimate {
    pub zeta_hat: f64,
    pub halted: bool,
    pub rounds_used: usize,
    pub total_queries: u64,
    pub per_round: Vec<ZetaRound>,
}

/// The stop rule: halt at round scale `zeta_i` once `|v_hat - b| >= 9 zeta_i`.
pub fn stop_rule(v_hat_star: f64, b: f64, zeta_i: f64) -> bool {
    (v_hat_star - b).abs() >= 9.0 * zeta_i
}

/// Per-pair sample count for round `i`:
/// `N_i = ceil( kappa * C_i / ((1-gamma)^3 zeta_i^2) )` with
/// `C_i = ln( 2 S A (i+1)^2 / ((1-gamma) zeta_i delta) )`. The log uses
/// `(i+1)^2` so round zero is well-defined; `kappa` absorbs the analysis
/// constant.
pub fn round_sample_size(
    i: usize,
    num_states: usize,
    num_actions: usize,
    gamma: f64,
    delta: f64,
    kappa: f64,
) -> u64 {
    let one_minus = 1.0 - gamma;
    let zeta_i = 2f64.powi(-(i as i32)) / one_minus;
    let c_i = (2.0 * (num_states * num_actions) as f64 * ((i + 1) * (i + 1)) as f64
        / (one_minus * zeta_i * delta))
        .ln();
    let n = kappa * c_i / (one_minus.powi(3) * zeta_i * zeta_i);
    (n.ceil() as u64).max(1)
}

/// Runs the doubling procedure against a generative model. Query accounting
/// is exact: `total_queries = sum_i N_i * S * A` over executed rounds.
pub fn estimate_zeta(
    gm: &mut GenerativeModel,
    b: f64,
    delta: f64,
    kappa: f64,
    max_rounds: usize,
) -> Result<ZetaEstimate> {
    if !(0.0 < delta && delta < 1.0) {
        return Err(Error::input("delta must lie in (0, 1)"));
    }
    if !(kappa > 0.0) {
        return Err(Error::input("kappa must be positive"));
    }
    if max_rounds == 0 {
        return Err(Error::input("max_rounds must be at least 1"));
    }
    let s_count = gm.num_states();
    let a_count = gm.num_actions();
    let gamma = gm.known().gamma;
    let one_minus = 1.0 - gamma;
    let queries_before = gm.query_count;
    let mut per_round = Vec::new();
    let mut last_margin = 0.0;
    for i in 0..max_rounds {
        let zeta_i = 2f64.powi(-(i as i32)) / one_minus;
        let n_i = round_sample_size(i, s_count, a_count, gamma, delta, kappa);
        let emp = build_empirical_model(gm, n_i, 0.0, b, 0)?;
        let constraints = gm.known().constraints.to_vec();
        let rho = gm.known().rho.to_vec();
        let sol = value_iteration(&emp.p_hat, s_count, a_count, &constraints, gamma, 1e-9)?;
        let v_hat_star: f64 = sol.v_star.iter().zip(&rho).map(|(v, p)| v * p).sum();
        per_round.push(ZetaRound {
            round: i,
            zeta_i,
            n_i,
            v_hat_star,
        });
        last_margin = (v_hat_star - b).abs();
        if stop_rule(v_hat_star, b, zeta_i) {
            return Ok(ZetaEstimate {
                zeta_hat: last_margin,
                halted: true,
                rounds_used: i + 1,
                total_queries: gm.query_count - queries_before,
                per_round,
            });
        }
    }
    Ok(ZetaEstimate {
        zeta_hat: last_margin,
        halted: false,
        rounds_used: max_rounds,
        total_queries: gm.query_count - queries_before,
        per_round,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_support::t1;

    #[test]
    fn stop_rule_arithmetic() {
        // b = 0.5, V_hat = 0.9, zeta_i = 0.04: |0.4| >= 0.36, so halt.
        assert!(stop_rule(0.9, 0.5, 0.04));
        assert!(!stop_rule(0.9, 0.5, 0.05));
    }

    #[test]
    fn stop_rule_is_monotone_in_the_margin() {
        for k in 0..50 {
            let margin = 0.01 * k as f64;
            if stop_rule(0.5 + margin, 0.5, 0.02) {
                assert!(stop_rule(0.5 + margin + 0.1, 0.5, 0.02));
                assert!(stop_rule(0.5 - margin - 0.1, 0.5, 0.02));
            }
        }
    }

    #[test]
    fn t1_halts_with_exact_estimate() {
        // Deterministic transitions make every round's planner exact:
        // max V_c = 1, b = 0.9, so the rule fires at the first i with
        // zeta_i = 2^{1-i} <= 1/90, i.e. i = 8, and zeta_hat = 0.1 exactly.
        let mut gm = GenerativeModel::new(t1(0.9), 3);
        let est = estimate_zeta(&mut gm, 0.9, 0.1, 4.0, 40).unwrap();
        assert!(est.halted);
        assert_eq!(est.rounds_used, 9);
        assert!((est.zeta_hat - 0.1).abs() < 1e-9, "{}", est.zeta_hat);
        // Exact query accounting against the round formula.
        let expected: u64 = (0..9)
            .map(|i| round_sample_size(i, 2, 2, 0.5, 0.1, 4.0) * 4)
            .sum();
        assert_eq!(est.total_queries, expected);
        assert_eq!(gm.query_count, expected);
    }

    #[test]
    fn zero_margin_never_halts() {
        let mut cmdp = t1(0.0);
        cmdp.constraints = vec![0.0; 4];
        let mut gm = GenerativeModel::new(cmdp, 5);
        let est = estimate_zeta(&mut gm, 0.0, 0.1, 1.0, 6).unwrap();
        assert!(!est.halted);
        assert_eq!(est.rounds_used, 6);
        assert_eq!(est.zeta_hat, 0.0);
        assert_eq!(est.per_round.len(), 6);
    }

    #[test]
    fn sample_sizes_grow_with_the_round() {
        let mut prev = 0;
        for i in 0..10 {
            let n = round_sample_size(i, 4, 3, 0.5, 0.1, 4.0);
            assert!(n > prev, "round {i}");
            prev = n;
        }
    }
}
