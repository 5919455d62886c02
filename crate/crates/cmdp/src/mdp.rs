//! Tabular CMDP data model, exact policy evaluation, value iteration, and
//! occupancy-measure machinery.
//!
//! Everything here is a pure function over immutable inputs; all operations
//! are safe to call concurrently.

use crate::error::{Error, Result};
use crate::linalg::Lu;
use serde::{Deserialize, Serialize};

/// Row-sum / distribution tolerance for input validation.
pub const DIST_TOL: f64 = 1e-12;
/// Bellman residual contract for exact policy evaluation.
pub const EVAL_RESIDUAL_TOL: f64 = 1e-10;
/// Flow-conservation residual contract for occupancy measures.
pub const FLOW_RESIDUAL_TOL: f64 = 1e-9;

/// State count above which policy evaluation switches from a dense direct
/// solve to fixed-point iteration. Both meet the same residual contract.
const DIRECT_SOLVE_MAX_STATES: usize = 2000;

/// A tabular constrained MDP: states, actions, transition kernel, reward and
/// constraint reward tables, constraint threshold, initial distribution, and
/// discount factor.
///
/// `transitions` is flattened `[s][a][s']`, `rewards` and `constraints` are
/// flattened `[s][a]`. `r_max`/`c_max` bound the reward tables; they default
/// to 1 but are configurable because the lower-bound instances use constraint
/// rewards outside [0, 1].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Cmdp {
    pub num_states: usize,
    pub num_actions: usize,
    pub gamma: f64,
    pub b: f64,
    pub rho: Vec<f64>,
    pub transitions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub constraints: Vec<f64>,
    pub r_max: f64,
    pub c_max: f64,
}

impl Cmdp {
    #[allow(clippy::too_many_arguments)] // mirrors the defining tuple
    pub fn new(
        num_states: usize,
        num_actions: usize,
        gamma: f64,
        b: f64,
        rho: Vec<f64>,
        transitions: Vec<f64>,
        rewards: Vec<f64>,
        constraints: Vec<f64>,
    ) -> Result<Cmdp> {
        let r_max = rewards.iter().cloned().fold(1.0f64, f64::max);
        let c_max = constraints.iter().cloned().fold(1.0f64, f64::max);
        let cmdp = Cmdp {
            num_states,
            num_actions,
            gamma,
            b,
            rho,
            transitions,
            rewards,
            constraints,
            r_max,
            c_max,
        };
        cmdp.validate()?;
        Ok(cmdp)
    }

    #[inline]
    pub fn sa_index(&self, s: usize, a: usize) -> usize {
        s * self.num_actions + a
    }

    /// Transition row P(.|s,a).
    #[inline]
    pub fn p_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.num_actions + a) * self.num_states;
        &self.transitions[start..start + self.num_states]
    }

    pub fn validate(&self) -> Result<()> {
        let (s_count, a_count) = (self.num_states, self.num_actions);
        if s_count == 0 || a_count == 0 {
            return Err(Error::input("num_states and num_actions must be positive"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::input(format!(
                "gamma must lie in [0, 1), got {}",
                self.gamma
            )));
        }
        if self.rho.len() != s_count {
            return Err(Error::input(format!(
                "rho has {} entries, expected {}",
                self.rho.len(),
                s_count
            )));
        }
        if self.transitions.len() != s_count * a_count * s_count {
            return Err(Error::input(format!(
                "transitions has {} entries, expected {}",
                self.transitions.len(),
                s_count * a_count * s_count
            )));
        }
        for (name, table) in [
            ("rewards", &self.rewards),
            ("constraints", &self.constraints),
        ] {
            if table.len() != s_count * a_count {
                return Err(Error::input(format!(
                    "{name} has {} entries, expected {}",
                    table.len(),
                    s_count * a_count
                )));
            }
        }
        let rho_sum: f64 = self.rho.iter().sum();
        if (rho_sum - 1.0).abs() > DIST_TOL {
            return Err(Error::input(format!("rho sums to {rho_sum}, expected 1")));
        }
        for (s, &p) in self.rho.iter().enumerate() {
            if !(p >= 0.0) {
                return Err(Error::input(format!("rho[{s}] = {p} is negative")));
            }
        }
        for s in 0..s_count {
            for a in 0..a_count {
                let row = self.p_row(s, a);
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > DIST_TOL {
                    return Err(Error::input(format!(
                        "transitions[{s}][{a}]: row sums to {sum}, expected 1"
                    )));
                }
                if let Some((sp, &p)) = row.iter().enumerate().find(|(_, &p)| !(p >= 0.0)) {
                    return Err(Error::input(format!(
                        "transitions[{s}][{a}][{sp}] = {p} is negative"
                    )));
                }
                let idx = self.sa_index(s, a);
                let r = self.rewards[idx];
                if !(0.0..=self.r_max).contains(&r) {
                    return Err(Error::input(format!(
                        "rewards[{s}][{a}] = {r} outside [0, {}]",
                        self.r_max
                    )));
                }
                let c = self.constraints[idx];
                if !(0.0..=self.c_max).contains(&c) {
                    return Err(Error::input(format!(
                        "constraints[{s}][{a}] = {c} outside [0, {}]",
                        self.c_max
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A stationary stochastic policy: `probs` is flattened `[s][a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub num_states: usize,
    pub num_actions: usize,
    pub probs: Vec<f64>,
}

impl Policy {
    pub fn new(num_states: usize, num_actions: usize, probs: Vec<f64>) -> Result<Policy> {
        let p = Policy {
            num_states,
            num_actions,
            probs,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Policy {
        Policy {
            num_states,
            num_actions,
            probs: vec![1.0 / num_actions as f64; num_states * num_actions],
        }
    }

    pub fn deterministic(num_states: usize, num_actions: usize, actions: &[usize]) -> Policy {
        assert_eq!(actions.len(), num_states);
        let mut probs = vec![0.0; num_states * num_actions];
        for (s, &a) in actions.iter().enumerate() {
            probs[s * num_actions + a] = 1.0;
        }
        Policy {
            num_states,
            num_actions,
            probs,
        }
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.num_actions + a]
    }

    pub fn validate(&self) -> Result<()> {
        if self.probs.len() != self.num_states * self.num_actions {
            return Err(Error::input("policy table has wrong shape"));
        }
        for s in 0..self.num_states {
            let row = &self.probs[s * self.num_actions..(s + 1) * self.num_actions];
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > DIST_TOL {
                return Err(Error::input(format!(
                    "policy row {s} sums to {sum}, expected 1"
                )));
            }
            if row.iter().any(|&p| !(p >= 0.0)) {
                return Err(Error::input(format!("policy row {s} has a negative entry")));
            }
        }
        Ok(())
    }
}

/// A weighted list of policies; the value of the mixture is the weighted
/// average of member values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixturePolicy {
    pub members: Vec<(f64, Policy)>,
}

impl MixturePolicy {
    pub fn new(members: Vec<(f64, Policy)>) -> Result<MixturePolicy> {
        let m = MixturePolicy { members };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.members.is_empty() {
            return Err(Error::input("mixture policy has no members"));
        }
        let sum: f64 = self.members.iter().map(|(w, _)| *w).sum();
        if (sum - 1.0).abs() > DIST_TOL {
            return Err(Error::input(format!(
                "mixture weights sum to {sum}, expected 1"
            )));
        }
        if self.members.iter().any(|(w, _)| *w < 0.0) {
            return Err(Error::input("mixture weights must be nonnegative"));
        }
        Ok(())
    }
}

/// Reward and constraint values of a policy at the initial distribution,
/// with the per-state value arrays kept for diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValuePair {
    pub v_reward: f64,
    pub v_constraint: f64,
    pub reward_values: Vec<f64>,
    pub constraint_values: Vec<f64>,
}

/// Discounted state-action visitation mass; flattened `[s][a]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OccupancyMeasure {
    pub num_states: usize,
    pub num_actions: usize,
    pub mu: Vec<f64>,
}

impl OccupancyMeasure {
    pub fn total_mass(&self) -> f64 {
        self.mu.iter().sum()
    }
}

fn check_dims(cmdp: &Cmdp, policy: &Policy) -> Result<()> {
    if cmdp.num_states != policy.num_states || cmdp.num_actions != policy.num_actions {
        return Err(Error::input(format!(
            "dimension mismatch: cmdp is {}x{}, policy is {}x{}",
            cmdp.num_states, cmdp.num_actions, policy.num_states, policy.num_actions
        )));
    }
    Ok(())
}

/// Builds the policy transition matrix P_pi (row-major S x S) and the
/// policy-averaged reward vectors.
fn policy_kernel(cmdp: &Cmdp, policy: &Policy) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let s_count = cmdp.num_states;
    let a_count = cmdp.num_actions;
    let mut p_pi = vec![0.0; s_count * s_count];
    let mut r_pi = vec![0.0; s_count];
    let mut c_pi = vec![0.0; s_count];
    for s in 0..s_count {
        for a in 0..a_count {
            let w = policy.prob(s, a);
            if w == 0.0 {
                continue;
            }
            let idx = cmdp.sa_index(s, a);
            r_pi[s] += w * cmdp.rewards[idx];
            c_pi[s] += w * cmdp.constraints[idx];
            let row = cmdp.p_row(s, a);
            for sp in 0..s_count {
                p_pi[s * s_count + sp] += w * row[sp];
            }
        }
    }
    (p_pi, r_pi, c_pi)
}

fn bellman_residual(gamma: f64, p_pi: &[f64], r_pi: &[f64], v: &[f64]) -> f64 {
    let n = r_pi.len();
    let mut worst = 0.0f64;
    for s in 0..n {
        let mut next = 0.0;
        for sp in 0..n {
            next += p_pi[s * n + sp] * v[sp];
        }
        worst = worst.max((v[s] - r_pi[s] - gamma * next).abs());
    }
    worst
}

fn eval_one_channel(gamma: f64, p_pi: &[f64], r_pi: &[f64], lu: Option<&Lu>) -> Result<Vec<f64>> {
    let n = r_pi.len();
    if let Some(lu) = lu {
        let mut v = lu.solve(r_pi);
        // One refinement round keeps the residual near machine precision even
        // for gamma close to 1.
        for _ in 0..3 {
            if bellman_residual(gamma, p_pi, r_pi, &v) <= EVAL_RESIDUAL_TOL {
                return Ok(v);
            }
            let mut resid = vec![0.0; n];
            for s in 0..n {
                let mut next = 0.0;
                for sp in 0..n {
                    next += p_pi[s * n + sp] * v[sp];
                }
                resid[s] = r_pi[s] + gamma * next - v[s];
            }
            let dv = lu.solve(&resid);
            for s in 0..n {
                v[s] += dv[s];
            }
        }
        if bellman_residual(gamma, p_pi, r_pi, &v) <= EVAL_RESIDUAL_TOL {
            return Ok(v);
        }
        return Err(Error::internal(
            "policy evaluation failed to reach the residual tolerance",
        ));
    }
    // Iterative evaluation for large instances: stop once the guaranteed
    // residual gamma * ||V' - V|| falls below the contract.
    let mut v = vec![0.0; n];
    let mut v_next = vec![0.0; n];
    for _ in 0..50_000_000u64 {
        let mut diff = 0.0f64;
        for s in 0..n {
            let mut next = 0.0;
            for sp in 0..n {
                next += p_pi[s * n + sp] * v[sp];
            }
            v_next[s] = r_pi[s] + gamma * next;
            diff = diff.max((v_next[s] - v[s]).abs());
        }
        std::mem::swap(&mut v, &mut v_next);
        if gamma * diff <= EVAL_RESIDUAL_TOL || diff == 0.0 {
            return Ok(v);
        }
    }
    Err(Error::internal(
        "iterative policy evaluation did not converge",
    ))
}

/// Exact policy evaluation for both reward channels: solves
/// (I - gamma P_pi) V = r_pi and the analogue for the constraint reward.
/// The returned values satisfy a per-state Bellman residual of at most 1e-10.
pub fn evaluate_policy(cmdp: &Cmdp, policy: &Policy) -> Result<ValuePair> {
    check_dims(cmdp, policy)?;
    let n = cmdp.num_states;
    let (p_pi, r_pi, c_pi) = policy_kernel(cmdp, policy);
    let lu = if n <= DIRECT_SOLVE_MAX_STATES {
        let mut a = vec![0.0; n * n];
        for s in 0..n {
            for sp in 0..n {
                a[s * n + sp] = -cmdp.gamma * p_pi[s * n + sp];
            }
            a[s * n + s] += 1.0;
        }
        Some(Lu::factor(&a, n)?)
    } else {
        None
    };
    let v_r = eval_one_channel(cmdp.gamma, &p_pi, &r_pi, lu.as_ref())?;
    let v_c = eval_one_channel(cmdp.gamma, &p_pi, &c_pi, lu.as_ref())?;
    let at_rho = |v: &[f64]| v.iter().zip(&cmdp.rho).map(|(x, p)| x * p).sum::<f64>();
    Ok(ValuePair {
        v_reward: at_rho(&v_r),
        v_constraint: at_rho(&v_c),
        reward_values: v_r,
        constraint_values: v_c,
    })
}

/// Output of [`value_iteration`].
#[derive(Debug, Clone)]
pub struct ViSolution {
    /// Flattened `[s][a]` optimal action values.
    pub q_star: Vec<f64>,
    pub v_star: Vec<f64>,
    pub greedy: Policy,
    pub sweeps: usize,
}

/// Unconstrained MDP planner: value iteration over an arbitrary reward table.
///
/// Exits once the successive-iterate gap satisfies
/// `||V_k - V_{k-1}||_inf <= tol * (1 - gamma) / (2 gamma)`, which guarantees
/// `||V - V*||_inf <= tol`. Greedy ties break toward the lowest action index.
pub fn value_iteration(
    transitions: &[f64],
    num_states: usize,
    num_actions: usize,
    reward: &[f64],
    gamma: f64,
    tol: f64,
) -> Result<ViSolution> {
    value_iteration_warm(
        transitions,
        num_states,
        num_actions,
        reward,
        gamma,
        tol,
        None,
    )
}

/// [`value_iteration`] with an optional warm-start value vector. The stop
/// criterion certifies accuracy regardless of the starting point.
pub fn value_iteration_warm(
    transitions: &[f64],
    num_states: usize,
    num_actions: usize,
    reward: &[f64],
    gamma: f64,
    tol: f64,
    warm_v: Option<&[f64]>,
) -> Result<ViSolution> {
    if tol <= 0.0 {
        return Err(Error::input("value iteration tolerance must be positive"));
    }
    if reward.iter().any(|r| !r.is_finite()) {
        return Err(Error::input(
            "value iteration reward table has a non-finite entry",
        ));
    }
    if reward.len() != num_states * num_actions
        || transitions.len() != num_states * num_actions * num_states
    {
        return Err(Error::input("value iteration input shapes disagree"));
    }
    let stop = if gamma > 0.0 {
        tol * (1.0 - gamma) / (2.0 * gamma)
    } else {
        f64::INFINITY
    };
    let mut v: Vec<f64> = match warm_v {
        Some(w) => w.to_vec(),
        None => vec![0.0; num_states],
    };
    let mut q = vec![0.0; num_states * num_actions];
    let mut sweeps = 0usize;
    const SWEEP_CAP: usize = 20_000_000;
    loop {
        sweeps += 1;
        let mut diff = 0.0f64;
        for s in 0..num_states {
            let mut best = f64::NEG_INFINITY;
            for a in 0..num_actions {
                let idx = s * num_actions + a;
                let row = &transitions[idx * num_states..(idx + 1) * num_states];
                let mut next = 0.0;
                for sp in 0..num_states {
                    next += row[sp] * v[sp];
                }
                let qa = reward[idx] + gamma * next;
                q[idx] = qa;
                if qa > best {
                    best = qa;
                }
            }
            diff = diff.max((best - v[s]).abs());
            v[s] = best;
        }
        if diff <= stop {
            break;
        }
        if sweeps >= SWEEP_CAP {
            return Err(Error::internal(format!(
                "value iteration did not converge within {SWEEP_CAP} sweeps"
            )));
        }
    }
    // One more Q refresh against the final V so that V*(s) = max_a Q*(s,a)
    // holds exactly, then extract the greedy policy.
    let mut actions = vec![0usize; num_states];
    for s in 0..num_states {
        let mut best = f64::NEG_INFINITY;
        let mut best_a = 0usize;
        for a in 0..num_actions {
            let idx = s * num_actions + a;
            let row = &transitions[idx * num_states..(idx + 1) * num_states];
            let mut next = 0.0;
            for sp in 0..num_states {
                next += row[sp] * v[sp];
            }
            let qa = reward[idx] + gamma * next;
            q[idx] = qa;
            if qa > best {
                best = qa;
                best_a = a;
            }
        }
        v[s] = best;
        actions[s] = best_a;
    }
    Ok(ViSolution {
        q_star: q,
        v_star: v,
        greedy: Policy::deterministic(num_states, num_actions, &actions),
        sweeps,
    })
}

/// Discounted occupancy measure of a policy: solves the flow system
/// `m(s) = rho(s) + gamma * sum_{s',a'} P(s|s',a') pi(a'|s') m(s')` and
/// splits state mass across actions by the policy.
pub fn occupancy_measure(cmdp: &Cmdp, policy: &Policy) -> Result<OccupancyMeasure> {
    check_dims(cmdp, policy)?;
    let n = cmdp.num_states;
    let (p_pi, _, _) = policy_kernel(cmdp, policy);
    // (I - gamma P_pi^T) m = rho
    let mut a = vec![0.0; n * n];
    for s in 0..n {
        for sp in 0..n {
            a[sp * n + s] = -cmdp.gamma * p_pi[s * n + sp];
        }
    }
    for s in 0..n {
        a[s * n + s] += 1.0;
    }
    let m = crate::linalg::solve_refined(&a, n, &cmdp.rho, 1e-12)?;
    let mut mu = vec![0.0; n * cmdp.num_actions];
    for s in 0..n {
        let mass = m[s];
        for act in 0..cmdp.num_actions {
            let v = policy.prob(s, act) * mass;
            mu[s * cmdp.num_actions + act] = if v < 0.0 {
                if v < -DIST_TOL {
                    return Err(Error::internal(format!(
                        "occupancy mass mu[{s}][{act}] = {v} is negative beyond tolerance"
                    )));
                }
                0.0
            } else {
                v
            };
        }
    }
    let occ = OccupancyMeasure {
        num_states: n,
        num_actions: cmdp.num_actions,
        mu,
    };
    let resid = flow_residual(cmdp, &occ);
    if resid > FLOW_RESIDUAL_TOL {
        return Err(Error::internal(format!(
            "occupancy flow residual {resid:.3e} exceeds {FLOW_RESIDUAL_TOL:.1e}"
        )));
    }
    Ok(occ)
}

/// Max per-state residual of the occupancy flow constraints.
pub fn flow_residual(cmdp: &Cmdp, occ: &OccupancyMeasure) -> f64 {
    let n = cmdp.num_states;
    let a_count = cmdp.num_actions;
    let mut worst = 0.0f64;
    for s in 0..n {
        let out: f64 = (0..a_count).map(|a| occ.mu[s * a_count + a]).sum();
        let mut inflow = 0.0;
        for sp in 0..n {
            for ap in 0..a_count {
                inflow += cmdp.p_row(sp, ap)[s] * occ.mu[sp * a_count + ap];
            }
        }
        worst = worst.max((out - cmdp.rho[s] - cmdp.gamma * inflow).abs());
    }
    worst
}

/// `V = sum_{s,a} mu(s,a) reward(s,a)`.
pub fn value_from_occupancy(occ: &OccupancyMeasure, reward: &[f64]) -> Result<f64> {
    if reward.len() != occ.mu.len() {
        return Err(Error::input(format!(
            "occupancy has {} entries but reward table has {}",
            occ.mu.len(),
            reward.len()
        )));
    }
    Ok(occ.mu.iter().zip(reward).map(|(m, r)| m * r).sum())
}

/// Collapses a mixture into one stationary policy via occupancy averaging:
/// `pi(a|s)` proportional to `sum_k w_k mu^{pi_k}(s,a)`. Value-preserving by
/// linearity of occupancy measures; states with no mass get the uniform row.
pub fn collapse_mixture(cmdp: &Cmdp, mix: &MixturePolicy) -> Result<Policy> {
    mix.validate()?;
    let n = cmdp.num_states;
    let a_count = cmdp.num_actions;
    let mut total = vec![0.0; n * a_count];
    for (w, member) in &mix.members {
        if *w == 0.0 {
            continue;
        }
        let occ = occupancy_measure(cmdp, member)?;
        for (t, m) in total.iter_mut().zip(&occ.mu) {
            *t += w * m;
        }
    }
    let mut probs = vec![0.0; n * a_count];
    for s in 0..n {
        let row = &total[s * a_count..(s + 1) * a_count];
        let mass: f64 = row.iter().sum();
        if mass <= 1e-300 {
            for a in 0..a_count {
                probs[s * a_count + a] = 1.0 / a_count as f64;
            }
        } else {
            for a in 0..a_count {
                probs[s * a_count + a] = row[a] / mass;
            }
        }
    }
    // Renormalize away rounding dust so the policy invariant holds exactly.
    for s in 0..n {
        let sum: f64 = probs[s * a_count..(s + 1) * a_count].iter().sum();
        for a in 0..a_count {
            probs[s * a_count + a] /= sum;
        }
    }
    Policy::new(n, a_count, probs)
}

/// Value of a mixture policy: the weighted average of member values.
pub fn mixture_value(cmdp: &Cmdp, mix: &MixturePolicy) -> Result<ValuePair> {
    mix.validate()?;
    let n = cmdp.num_states;
    let mut out = ValuePair {
        v_reward: 0.0,
        v_constraint: 0.0,
        reward_values: vec![0.0; n],
        constraint_values: vec![0.0; n],
    };
    for (w, member) in &mix.members {
        if *w == 0.0 {
            continue;
        }
        let vp = evaluate_policy(cmdp, member)?;
        out.v_reward += w * vp.v_reward;
        out.v_constraint += w * vp.v_constraint;
        for s in 0..n {
            out.reward_values[s] += w * vp.reward_values[s];
            out.constraint_values[s] += w * vp.constraint_values[s];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_support::{random_policy, t1, tiny_single};

    #[test]
    fn single_state_geometric_series() {
        let cmdp = tiny_single();
        let pol = Policy::deterministic(1, 1, &[0]);
        let vp = evaluate_policy(&cmdp, &pol).unwrap();
        assert!((vp.v_reward - 2.0).abs() < 1e-12);
        assert!((vp.v_constraint - 0.0).abs() < 1e-12);
    }

    #[test]
    fn t1_always_a0() {
        let cmdp = t1(0.9);
        let pol = Policy::deterministic(2, 2, &[0, 0]);
        let vp = evaluate_policy(&cmdp, &pol).unwrap();
        assert!((vp.v_reward - 2.0).abs() < 1e-12);
        assert!(vp.v_constraint.abs() < 1e-12);
    }

    #[test]
    fn t1_interior_policy_closed_form() {
        // p = pi(a0|s0): V_r = p/(1-0.5p), V_c = (1-p)/(1-0.5p).
        let cmdp = t1(0.9);
        let p = 2.0 / 11.0;
        let pol = Policy::new(2, 2, vec![p, 1.0 - p, 1.0, 0.0]).unwrap();
        let vp = evaluate_policy(&cmdp, &pol).unwrap();
        let v_r = p / (1.0 - 0.5 * p);
        let v_c = (1.0 - p) / (1.0 - 0.5 * p);
        assert!((v_r - 0.2).abs() < 1e-15);
        assert!((v_c - 0.9).abs() < 1e-15);
        assert!((vp.v_reward - v_r).abs() < 1e-12);
        assert!((vp.v_constraint - v_c).abs() < 1e-12);
    }

    #[test]
    fn vi_single_state() {
        let cmdp = tiny_single();
        let sol =
            value_iteration(&cmdp.transitions, 1, 1, &cmdp.rewards, cmdp.gamma, 1e-10).unwrap();
        assert!((sol.v_star[0] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn vi_t1_reward_channel() {
        let cmdp = t1(0.9);
        let sol =
            value_iteration(&cmdp.transitions, 2, 2, &cmdp.rewards, cmdp.gamma, 1e-10).unwrap();
        assert!((sol.v_star[0] - 2.0).abs() < 1e-10);
        assert_eq!(sol.greedy.prob(0, 0), 1.0);
    }

    #[test]
    fn vi_t1_constraint_channel_matches_policy_enumeration() {
        // Oracle: exhaustive evaluation of the four deterministic policies.
        let cmdp = t1(0.9);
        let mut best = f64::NEG_INFINITY;
        for a0 in 0..2 {
            for a1 in 0..2 {
                let pol = Policy::deterministic(2, 2, &[a0, a1]);
                let vp = evaluate_policy(&cmdp, &pol).unwrap();
                best = best.max(vp.v_constraint);
            }
        }
        let sol = value_iteration(
            &cmdp.transitions,
            2,
            2,
            &cmdp.constraints,
            cmdp.gamma,
            1e-10,
        )
        .unwrap();
        assert!((best - 1.0).abs() < 1e-10);
        assert!((sol.v_star[0] - best).abs() < 1e-9);
        assert_eq!(sol.greedy.prob(0, 1), 1.0, "greedy must pick a1 at s0");
    }

    #[test]
    fn vi_consistency_v_equals_max_q() {
        let cmdp = crate::harness::random_cmdp(6, 3, 0.9, 11, 0.0).unwrap();
        let tol = 1e-9;
        let sol = value_iteration(&cmdp.transitions, 6, 3, &cmdp.rewards, cmdp.gamma, tol).unwrap();
        for s in 0..6 {
            let max_q = (0..3)
                .map(|a| sol.q_star[s * 3 + a])
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((sol.v_star[s] - max_q).abs() <= 2.0 * tol);
        }
    }

    #[test]
    fn vi_rejects_bad_input() {
        let cmdp = tiny_single();
        let r = vec![f64::NAN];
        assert!(value_iteration(&cmdp.transitions, 1, 1, &r, 0.5, 1e-9).is_err());
    }

    #[test]
    fn occupancy_single_state() {
        let cmdp = tiny_single();
        let occ = occupancy_measure(&cmdp, &Policy::deterministic(1, 1, &[0])).unwrap();
        assert!((occ.mu[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn occupancy_t1_cases() {
        let cmdp = t1(0.9);
        let occ = occupancy_measure(&cmdp, &Policy::deterministic(2, 2, &[0, 0])).unwrap();
        assert!((occ.mu[0] - 2.0).abs() < 1e-12);
        assert!(occ.mu[1].abs() < 1e-12 && occ.mu[2].abs() < 1e-12 && occ.mu[3].abs() < 1e-12);

        let p = 2.0 / 11.0;
        let pol = Policy::new(2, 2, vec![p, 1.0 - p, 1.0, 0.0]).unwrap();
        let occ = occupancy_measure(&cmdp, &pol).unwrap();
        assert!((value_from_occupancy(&occ, &cmdp.rewards).unwrap() - 0.2).abs() < 1e-12);
        assert!((value_from_occupancy(&occ, &cmdp.constraints).unwrap() - 0.9).abs() < 1e-12);
        assert!((occ.total_mass() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn value_from_occupancy_trivia() {
        let occ = OccupancyMeasure {
            num_states: 1,
            num_actions: 1,
            mu: vec![2.0],
        };
        assert_eq!(value_from_occupancy(&occ, &[1.0]).unwrap(), 2.0);
        assert_eq!(value_from_occupancy(&occ, &[0.0]).unwrap(), 0.0);
        assert!(value_from_occupancy(&occ, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn occupancy_duality_on_random_pairs() {
        // value_from_occupancy(occupancy(pi), r) == evaluate_policy(pi).v_reward
        for seed in 0..100u64 {
            let s_count = 2 + (seed % 5) as usize;
            let a_count = 2 + (seed % 3) as usize;
            let cmdp = crate::harness::random_cmdp(s_count, a_count, 0.9, seed, 0.0).unwrap();
            let pol = random_policy(s_count, a_count, seed ^ 0xABCD);
            let occ = occupancy_measure(&cmdp, &pol).unwrap();
            let vp = evaluate_policy(&cmdp, &pol).unwrap();
            let via_mu = value_from_occupancy(&occ, &cmdp.rewards).unwrap();
            assert!(
                (via_mu - vp.v_reward).abs() < 1e-8,
                "seed {seed}: {via_mu} vs {}",
                vp.v_reward
            );
            assert!((occ.total_mass() - 1.0 / (1.0 - cmdp.gamma)).abs() < 1e-9);
            assert!(flow_residual(&cmdp, &occ) <= FLOW_RESIDUAL_TOL);
        }
    }

    #[test]
    fn bellman_residual_contract_on_random_pairs() {
        for seed in 0..25u64 {
            let cmdp = crate::harness::random_cmdp(7, 3, 0.95, seed, 0.0).unwrap();
            let pol = random_policy(7, 3, seed ^ 0x77);
            let (p_pi, r_pi, c_pi) = policy_kernel(&cmdp, &pol);
            let vp = evaluate_policy(&cmdp, &pol).unwrap();
            assert!(bellman_residual(cmdp.gamma, &p_pi, &r_pi, &vp.reward_values) <= 1e-10);
            assert!(bellman_residual(cmdp.gamma, &p_pi, &c_pi, &vp.constraint_values) <= 1e-10);
        }
    }

    #[test]
    fn collapse_identity_and_average() {
        let cmdp = t1(0.9);
        let a0 = Policy::deterministic(2, 2, &[0, 0]);
        let a1 = Policy::deterministic(2, 2, &[1, 0]);

        let single = MixturePolicy::new(vec![(1.0, a0.clone())]).unwrap();
        let collapsed = collapse_mixture(&cmdp, &single).unwrap();
        // Rows with positive occupancy mass reproduce the member policy.
        assert_eq!(collapsed.prob(0, 0), 1.0);

        let mix = MixturePolicy::new(vec![(0.5, a0.clone()), (0.5, a1.clone())]).unwrap();
        let collapsed = collapse_mixture(&cmdp, &mix).unwrap();
        let vp = evaluate_policy(&cmdp, &collapsed).unwrap();
        let avg = mixture_value(&cmdp, &mix).unwrap();
        assert!((vp.v_reward - 1.0).abs() < 1e-8, "got {}", vp.v_reward);
        assert!((vp.v_reward - avg.v_reward).abs() < 1e-8);
        assert!((vp.v_constraint - avg.v_constraint).abs() < 1e-8);

        let degenerate = MixturePolicy::new(vec![(1.0, a0.clone()), (0.0, a1)]).unwrap();
        let collapsed = collapse_mixture(&cmdp, &degenerate).unwrap();
        assert_eq!(collapsed.prob(0, 0), 1.0);
    }

    #[test]
    fn mixture_linearity_on_random_instances() {
        for seed in 0..20u64 {
            let cmdp = crate::harness::random_cmdp(5, 3, 0.85, seed, 0.0).unwrap();
            let m1 = random_policy(5, 3, seed ^ 0x1);
            let m2 = random_policy(5, 3, seed ^ 0x2);
            let m3 = random_policy(5, 3, seed ^ 0x3);
            let mix = MixturePolicy::new(vec![(0.2, m1), (0.5, m2), (0.3, m3)]).unwrap();
            let direct = mixture_value(&cmdp, &mix).unwrap();
            let collapsed =
                evaluate_policy(&cmdp, &collapse_mixture(&cmdp, &mix).unwrap()).unwrap();
            assert!((direct.v_reward - collapsed.v_reward).abs() < 1e-8);
            assert!((direct.v_constraint - collapsed.v_constraint).abs() < 1e-8);
        }
    }

    #[test]
    fn iterative_evaluation_meets_the_same_residual_contract() {
        // Above the direct-solve size cutoff the evaluator switches to
        // fixed-point iteration; the residual contract is unchanged.
        let n = DIRECT_SOLVE_MAX_STATES + 50;
        let cmdp = crate::harness::random_cmdp(n, 2, 0.5, 1, 0.0).unwrap();
        let pol = Policy::uniform(n, 2);
        let vp = evaluate_policy(&cmdp, &pol).unwrap();
        let (p_pi, r_pi, c_pi) = policy_kernel(&cmdp, &pol);
        assert!(bellman_residual(cmdp.gamma, &p_pi, &r_pi, &vp.reward_values) <= 1e-10);
        assert!(bellman_residual(cmdp.gamma, &p_pi, &c_pi, &vp.constraint_values) <= 1e-10);
    }

    #[test]
    fn dimension_mismatch_is_input_error() {
        let cmdp = t1(0.9);
        let pol = Policy::uniform(3, 2);
        assert!(matches!(
            evaluate_policy(&cmdp, &pol),
            Err(crate::error::Error::Input(_))
        ));
    }
}
