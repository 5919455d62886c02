//! Epsilon-net dual descent with best-response primal updates, plus the
//! parameter presets for the relaxed- and strict-feasibility regimes.
//!
//! One iteration solves the unconstrained MDP with reward `r_p + lambda_t c`
//! (the best response), then takes a projected, rounded dual gradient step:
//! `lambda_{t+1} = Round_net[ clip_{[0,U]}( lambda_t - eta (V_c - b') ) ]`.
//! The output is the uniform mixture of the primal iterates.
//!
//! Because the best response is piecewise-constant in lambda (the Lagrangian
//! is a max of finitely many lines), the loop caches certified
//! lambda-segments: once the same greedy policy is optimal at two lambdas it
//! is optimal on the whole interval between them, so long runs cost one
//! planner solve per segment discovery rather than per iteration.

use crate::error::{Error, Result};
use crate::mdp::{
    collapse_mixture, evaluate_policy, value_iteration_warm, Cmdp, MixturePolicy, Policy,
};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// One-dimensional epsilon-net `{0, eps_l, 2 eps_l, ..., U}` over the dual
/// variable. `U` is appended as the final point when it is not a multiple of
/// `eps_l`. The grid is implied, never materialized.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpsilonNet {
    pub eps_l: f64,
    pub cap: f64,
    k_max: u64,
    has_cap_point: bool,
}

impl EpsilonNet {
    pub fn new(cap: f64, eps_l: f64) -> Result<EpsilonNet> {
        if !(eps_l > 0.0) {
            return Err(Error::input("epsilon-net resolution must be positive"));
        }
        if !(cap > 0.0) || eps_l > cap * (1.0 + 1e-12) {
            return Err(Error::input("epsilon-net needs 0 < eps_l <= U"));
        }
        let k_max = (cap / eps_l + 1e-9).floor() as u64;
        let has_cap_point = cap - k_max as f64 * eps_l > 1e-9 * eps_l.max(cap * 1e-12);
        Ok(EpsilonNet {
            eps_l,
            cap,
            k_max,
            has_cap_point,
        })
    }

    /// Number of grid points.
    pub fn len(&self) -> u64 {
        self.k_max + 1 + self.has_cap_point as u64
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// The grid points in increasing order. Only sensible for small nets.
    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.k_max)
            .map(move |k| k as f64 * self.eps_l)
            .chain(self.has_cap_point.then_some(self.cap))
    }

    /// Rounds a value already inside `[0, U]` to the nearest grid point,
    /// ties toward the smaller point.
    pub fn round(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, self.cap);
        let k = ((x / self.eps_l).floor() as u64).min(self.k_max);
        let lo = k as f64 * self.eps_l;
        let hi = if k < self.k_max {
            (k + 1) as f64 * self.eps_l
        } else {
            self.cap
        };
        let hi = hi.min(self.cap);
        if x - lo <= hi - x {
            lo
        } else {
            hi
        }
    }

    /// Whether `x` sits on the grid (up to floating-point dust).
    pub fn contains(&self, x: f64) -> bool {
        (x - self.round(x)).abs() <= 1e-9 * self.eps_l.max(1.0)
    }
}

/// Which preset produced a configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PdMode {
    Relaxed,
    Strict,
    Manual,
}

/// All Algorithm parameters: dual cap `U`, net resolution, iteration count,
/// step size, shifted threshold, perturbation magnitude, and target error.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PdConfig {
    pub u: f64,
    pub eps_l: f64,
    pub t: u64,
    pub eta: f64,
    pub b_prime: f64,
    pub omega: f64,
    pub eps_opt: f64,
    pub mode: PdMode,
}

impl PdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.u > 0.0) || !(self.eps_l > 0.0) || self.eps_l > self.u * (1.0 + 1e-12) {
            return Err(Error::input("PdConfig needs 0 < eps_l <= U"));
        }
        if self.t == 0 {
            return Err(Error::input("PdConfig needs T >= 1"));
        }
        if !(self.eta > 0.0) {
            return Err(Error::input("PdConfig needs eta > 0"));
        }
        if self.omega < 0.0 {
            return Err(Error::input("PdConfig needs omega >= 0"));
        }
        Ok(())
    }

    /// Planner tolerance that keeps the primal error negligible against
    /// `eps_opt`.
    pub fn planner_tol(&self) -> f64 {
        (1e-10f64).min(self.eps_opt / 10.0)
    }

    /// Caps the iteration count, recomputing the step size and net
    /// resolution for the capped horizon: the schedule balances the
    /// `T^{3/2} eps_l` and `sqrt(T)` dual-regret terms, and shortening T by
    /// a factor k holds that balance with an eps_l coarser by sqrt(k).
    /// Returns true when the cap actually bit.
    pub fn apply_t_cap(&mut self, cap: u64, gamma: f64) -> bool {
        if self.t <= cap {
            return false;
        }
        let scale = (self.t as f64 / cap.max(1) as f64).sqrt();
        self.t = cap.max(1);
        self.eta = self.u * (1.0 - gamma) / (self.t as f64).sqrt();
        self.eps_l = (self.eps_l * scale).min(self.u / 8.0);
        true
    }
}

/// The iteration schedule from the primal-dual guarantee: given `U > |l*|`,
/// `T = 4U^2 / (eps_opt^2 (1-gamma)^2) * [1 + 1/(U - l*)^2]`,
/// `eta = U (1-gamma) / sqrt(T)`, and
/// `eps_l = eps_opt^2 (1-gamma)^2 (U - l*) / (6U)`.
pub fn dual_descent_schedule(
    u: f64,
    lambda_star: f64,
    eps_opt: f64,
    gamma: f64,
) -> Result<(u64, f64, f64)> {
    if !(u > lambda_star) {
        return Err(Error::input(format!(
            "dual cap U = {u} must exceed lambda* = {lambda_star}"
        )));
    }
    if !(eps_opt > 0.0) {
        return Err(Error::input("eps_opt must be positive"));
    }
    let gap = u - lambda_star;
    let one_minus = 1.0 - gamma;
    let t_real =
        (4.0 * u * u / (eps_opt * eps_opt * one_minus * one_minus)) * (1.0 + 1.0 / (gap * gap));
    let t = if t_real >= u64::MAX as f64 {
        u64::MAX
    } else {
        t_real.ceil() as u64
    }
    .max(1);
    let eta = u * one_minus / (t as f64).sqrt();
    let eps_l = eps_opt * eps_opt * one_minus * one_minus * gap / (6.0 * u);
    Ok((t, eta, eps_l))
}

/// Relaxed-feasibility preset: `b' = b - 3e/8`, `omega = e(1-gamma)/8`,
/// `U = 32 / (5 e (1-gamma))`, `eps_opt = e/4`, schedule from
/// [`dual_descent_schedule`] with `lambda*` replaced by `U/2`. Also returns the
/// recommended per-pair sample count `ceil(kappa ln(1/delta) / ((1-gamma)^3 e^2))`.
pub fn preset_relaxed(
    epsilon: f64,
    delta: f64,
    gamma: f64,
    b: f64,
    kappa: f64,
) -> Result<(PdConfig, u64)> {
    check_epsilon_delta(epsilon, delta, gamma)?;
    let one_minus = 1.0 - gamma;
    let eps_opt = epsilon / 4.0;
    let u = 32.0 / (5.0 * epsilon * one_minus);
    let (t, eta, eps_l) = dual_descent_schedule(u, u / 2.0, eps_opt, gamma)?;
    let cfg = PdConfig {
        u,
        eps_l,
        t,
        eta,
        b_prime: b - 3.0 * epsilon / 8.0,
        omega: epsilon * one_minus / 8.0,
        eps_opt,
        mode: PdMode::Relaxed,
    };
    let n = recommended_n(kappa, delta, one_minus.powi(3) * epsilon * epsilon);
    Ok((cfg, n))
}

/// Strict-feasibility preset: `Delta = e(1-gamma)zeta/40`, `b' = b + Delta`,
/// `omega = e(1-gamma)/10`, `U = 8/(zeta(1-gamma))`, `eps_opt = Delta/5`,
/// schedule with `lambda* -> U/2`. Recommended
/// `N = ceil(kappa ln(1/delta) / ((1-gamma)^5 zeta^2 e^2))`.
pub fn preset_strict(
    epsilon: f64,
    delta: f64,
    gamma: f64,
    b: f64,
    zeta: f64,
    kappa: f64,
) -> Result<(PdConfig, u64)> {
    check_epsilon_delta(epsilon, delta, gamma)?;
    if !(zeta > 0.0) {
        return Err(Error::input(
            "strict preset needs zeta > 0; estimate it first if unknown",
        ));
    }
    let one_minus = 1.0 - gamma;
    let delta_b = epsilon * one_minus * zeta / 40.0;
    let eps_opt = delta_b / 5.0;
    let u = 8.0 / (zeta * one_minus);
    let (t, eta, eps_l) = dual_descent_schedule(u, u / 2.0, eps_opt, gamma)?;
    let cfg = PdConfig {
        u,
        eps_l,
        t,
        eta,
        b_prime: b + delta_b,
        omega: epsilon * one_minus / 10.0,
        eps_opt,
        mode: PdMode::Strict,
    };
    let n = recommended_n(
        kappa,
        delta,
        one_minus.powi(5) * zeta * zeta * epsilon * epsilon,
    );
    Ok((cfg, n))
}

fn check_epsilon_delta(epsilon: f64, delta: f64, gamma: f64) -> Result<()> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::input("gamma must lie in [0, 1)"));
    }
    let eps_max = 1.0 / (1.0 - gamma);
    if !(epsilon > 0.0) || epsilon > eps_max * (1.0 + 1e-12) {
        return Err(Error::input(format!(
            "epsilon must lie in (0, {eps_max}], got {epsilon}"
        )));
    }
    if !(0.0 < delta && delta < 1.0) {
        return Err(Error::input("delta must lie in (0, 1)"));
    }
    Ok(())
}

fn recommended_n(kappa: f64, delta: f64, denom: f64) -> u64 {
    let n = kappa * (1.0 / delta).ln() / denom;
    if n >= u64::MAX as f64 {
        u64::MAX
    } else {
        (n.ceil() as u64).max(1)
    }
}

/// One dual update: gradient step on the constraint violation, projection
/// onto `[0, U]`, then rounding onto the net (ties toward the smaller point).
pub fn dual_step(lambda_t: f64, eta: f64, v_c_hat: f64, b_prime: f64, net: &EpsilonNet) -> f64 {
    let pre = lambda_t - eta * (v_c_hat - b_prime);
    net.round(pre.clamp(0.0, net.cap))
}

/// Dual iterate trajectory with the per-iteration empirical values of the
/// best responses. Empty when trace recording was disabled.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DualTrace {
    pub lambdas: Vec<f64>,
    pub v_reward_hat: Vec<f64>,
    pub v_constraint_hat: Vec<f64>,
}

impl DualTrace {
    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }
}

/// Dual regret `R^d(lambda, T) = sum_t (lambda_t - lambda)(V_c_t - b')`.
/// Diagnostic only; compare against [`dual_regret_bound`].
pub fn dual_regret(trace: &DualTrace, lambda: f64, b_prime: f64) -> f64 {
    trace
        .lambdas
        .iter()
        .zip(&trace.v_constraint_hat)
        .map(|(lt, vc)| (lt - lambda) * (vc - b_prime))
        .sum()
}

/// The proof-side bound
/// `T^{3/2} (eps_l^2 + 2 eps_l U) / (2U(1-gamma)) + U sqrt(T) / (1-gamma)`.
pub fn dual_regret_bound(t: u64, eps_l: f64, u: f64, gamma: f64) -> f64 {
    let tf = t as f64;
    tf.powf(1.5) * (eps_l * eps_l + 2.0 * eps_l * u) / (2.0 * u * (1.0 - gamma))
        + u * tf.sqrt() / (1.0 - gamma)
}

/// Minimum over states of the margin between the best and second-best action
/// value. Returns +infinity when there is a single action (vacuous condition).
pub fn gap_margin(q_star: &[f64], num_states: usize, num_actions: usize) -> Result<f64> {
    if num_actions == 0 || q_star.len() != num_states * num_actions {
        return Err(Error::input("gap_margin input shapes disagree"));
    }
    if num_actions == 1 {
        return Ok(f64::INFINITY);
    }
    let mut margin = f64::INFINITY;
    for s in 0..num_states {
        let row = &q_star[s * num_actions..(s + 1) * num_actions];
        let mut best = f64::NEG_INFINITY;
        let mut second = f64::NEG_INFINITY;
        for &q in row {
            if q > best {
                second = best;
                best = q;
            } else if q > second {
                second = q;
            }
        }
        margin = margin.min(best - second);
    }
    Ok(margin.max(0.0))
}

/// Options for [`run_primal_dual`]. Trace recording costs three floats per
/// iteration; disable it for schedule-sized horizons.
#[derive(Debug, Clone, Copy)]
pub struct PdOptions {
    pub record_trace: bool,
}

impl Default for PdOptions {
    fn default() -> Self {
        PdOptions { record_trace: true }
    }
}

/// Result of a primal-dual run. The mixture aggregates the `T` uniform
/// members by distinct policy (weights are visit counts over `T`), which is
/// value-equivalent to the flat listing by linearity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PdResult {
    pub mixture: MixturePolicy,
    pub trace: DualTrace,
    pub collapsed: Policy,
    /// Empirical (model the run was given) values of the mixture at rho.
    pub v_reward_hat: f64,
    pub v_constraint_hat: f64,
    pub t_executed: u64,
    pub final_lambda: f64,
    /// Mean dual iterate over the whole run.
    pub avg_lambda: f64,
    /// Mean dual iterate over the terminal window (the closing cycle when
    /// one was detected, else the trace tail). A value pinned near `U`
    /// alongside a violated constraint marks a run whose empirical CMDP was
    /// likely infeasible at `b'`; the planner itself never checks.
    pub tail_avg_lambda: f64,
    /// Running dual regrets at the two comparators used by the guarantee.
    pub dual_regret_at_zero: f64,
    pub dual_regret_at_u: f64,
    /// Planner solves actually performed (cache discoveries).
    pub planner_solves: u64,
}

struct CachedResponse {
    policy: Policy,
    v_rp: f64,
    v_c: f64,
    q: Vec<f64>,
}

/// Best-response cache over certified lambda-segments. A greedy policy
/// optimal at two lambdas is optimal between them, because every policy's
/// Lagrangian value is affine in lambda and the upper envelope is convex.
struct ResponseCache {
    points: Vec<(f64, usize)>,
    responses: Vec<CachedResponse>,
    by_actions: HashMap<Vec<u16>, usize>,
    combined_reward: Vec<f64>,
    planner_solves: u64,
    /// Recently certified closed segments `[lo, hi] -> response index`. The
    /// dual orbit alternates between a handful of segments, so this answers
    /// almost every iteration without touching the sorted point list. Entries
    /// never go stale: a point can only be inserted where a query missed,
    /// and queries inside a certified segment always hit.
    hot: [(f64, f64, usize); 2],
}

impl ResponseCache {
    fn new(pairs: usize) -> ResponseCache {
        ResponseCache {
            points: Vec::new(),
            responses: Vec::new(),
            by_actions: HashMap::new(),
            combined_reward: vec![0.0; pairs],
            planner_solves: 0,
            hot: [(f64::NAN, f64::NAN, 0); 2],
        }
    }

    #[inline]
    fn query(&mut self, emp: &Cmdp, lambda: f64, planner_tol: f64, t: u64) -> Result<usize> {
        for &(lo, hi, idx) in &self.hot {
            if lambda >= lo && lambda <= hi {
                return Ok(idx);
            }
        }
        self.query_slow(emp, lambda, planner_tol, t)
    }

    fn query_slow(&mut self, emp: &Cmdp, lambda: f64, planner_tol: f64, t: u64) -> Result<usize> {
        let pos = self.points.partition_point(|(l, _)| *l < lambda);
        if pos < self.points.len() && self.points[pos].0 == lambda {
            return Ok(self.points[pos].1);
        }
        let left = pos.checked_sub(1).map(|i| self.points[i]);
        let right = self.points.get(pos).copied();
        if let (Some((ll, li)), Some((rl, ri))) = (left, right) {
            if li == ri {
                self.hot[1] = self.hot[0];
                self.hot[0] = (ll, rl, li);
                return Ok(li);
            }
        }
        // Cache miss: solve the unconstrained MDP with reward r_p + lambda c,
        // warm-starting from the nearest certified neighbor.
        let warm = match (left, right) {
            (Some((ll, li)), Some((rl, ri))) => {
                Some(if lambda - ll <= rl - lambda { li } else { ri })
            }
            (Some((_, li)), None) => Some(li),
            (None, Some((_, ri))) => Some(ri),
            (None, None) => None,
        };
        for (i, out) in self.combined_reward.iter_mut().enumerate() {
            *out = emp.rewards[i] + lambda * emp.constraints[i];
        }
        let warm_v: Option<Vec<f64>> = warm.map(|w| {
            let resp = &self.responses[w];
            let a_count = emp.num_actions;
            (0..emp.num_states)
                .map(|s| {
                    resp.q[s * a_count..(s + 1) * a_count]
                        .iter()
                        .cloned()
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .collect()
        });
        let sol = value_iteration_warm(
            &emp.transitions,
            emp.num_states,
            emp.num_actions,
            &self.combined_reward,
            emp.gamma,
            planner_tol,
            warm_v.as_deref(),
        )
        .map_err(|e| {
            let when = if t == u64::MAX {
                "during the cycle tail".to_string()
            } else {
                format!("at iteration {t}")
            };
            Error::internal(format!(
                "primal planner failed {when} (lambda = {lambda}): {e}"
            ))
        })?;
        self.planner_solves += 1;
        let actions: Vec<u16> = (0..emp.num_states)
            .map(|s| {
                (0..emp.num_actions)
                    .find(|&a| sol.greedy.prob(s, a) == 1.0)
                    .unwrap_or(0) as u16
            })
            .collect();
        let idx = match self.by_actions.get(&actions) {
            Some(&i) => {
                self.responses[i].q.copy_from_slice(&sol.q_star);
                i
            }
            None => {
                let vp = evaluate_policy(emp, &sol.greedy)?;
                let idx = self.responses.len();
                self.by_actions.insert(actions, idx);
                self.responses.push(CachedResponse {
                    policy: sol.greedy,
                    v_rp: vp.v_reward,
                    v_c: vp.v_constraint,
                    q: sol.q_star,
                });
                idx
            }
        };
        self.points.insert(pos, (lambda, idx));
        Ok(idx)
    }
}

/// Running accumulators of the dual loop. The two regret comparators derive
/// from these at the end:
/// `R^d(0,T) = sum_lambda_grad` and
/// `R^d(U,T) = sum_lambda_grad - U (sum_v_c - T b')`.
struct LoopState {
    lambda: f64,
    t: u64,
    counts: Vec<u64>,
    sum_v_rp: f64,
    sum_v_c: f64,
    sum_lambda: f64,
    sum_lambda_grad: f64,
    /// Best available tail-window average of lambda (set by the cycle tail).
    tail_avg_lambda: Option<f64>,
}

impl LoopState {
    fn bump(&mut self, idx: usize, v_rp: f64, v_c: f64, b_prime: f64) {
        if self.counts.len() <= idx {
            self.counts.resize(idx + 1, 0);
        }
        self.counts[idx] += 1;
        self.sum_v_rp += v_rp;
        self.sum_v_c += v_c;
        self.sum_lambda += self.lambda;
        self.sum_lambda_grad += self.lambda * (v_c - b_prime);
    }
}

/// First-visit bookkeeping for cycle detection: the loop index, the response
/// chosen at this lambda, and the prefix sums *before* this step.
struct Visit {
    t: u64,
    idx: u32,
    sum_v_rp: f64,
    sum_v_c: f64,
    sum_lambda: f64,
    sum_lambda_grad: f64,
}

/// Entry cap for cycle detection (memory bound); past it the loop still
/// checks for closure against recorded states but records no new ones.
const CYCLE_TABLE_CAP: usize = 1 << 20;

/// Finishes the horizon after the dual walk closed a cycle at `first`:
/// scales the cycle's sums and visit counts by the number of remaining full
/// periods, then replays the leftover partial period.
#[allow(clippy::too_many_arguments)]
fn run_cycle_tail(
    first: &Visit,
    visit_index: &HashMap<u64, u32>,
    visits: &[Visit],
    cache: &mut ResponseCache,
    emp: &Cmdp,
    cfg: &PdConfig,
    planner_tol: f64,
    net: &EpsilonNet,
    state: &mut LoopState,
) -> Result<()> {
    let period = state.t - first.t;
    debug_assert!(period > 0);
    let cycle_v_rp = state.sum_v_rp - first.sum_v_rp;
    let cycle_v_c = state.sum_v_c - first.sum_v_c;
    let cycle_lambda = state.sum_lambda - first.sum_lambda;
    let cycle_lg = state.sum_lambda_grad - first.sum_lambda_grad;
    let remaining = cfg.t - state.t;
    let full_cycles = remaining / period;
    let rem = remaining % period;

    fn lookup(
        visit_index: &HashMap<u64, u32>,
        visits: &[Visit],
        cache: &mut ResponseCache,
        emp: &Cmdp,
        planner_tol: f64,
        lambda: f64,
    ) -> Result<usize> {
        match visit_index.get(&lambda.to_bits()) {
            Some(&ei) => Ok(visits[ei as usize].idx as usize),
            None => cache.query(emp, lambda, planner_tol, u64::MAX),
        }
    }

    // One pass around the cycle tallies the per-policy visit counts.
    let mut cycle_counts: Vec<u64> = vec![0; cache.responses.len()];
    let mut lam = state.lambda;
    for _ in 0..period {
        let idx = lookup(visit_index, visits, cache, emp, planner_tol, lam)?;
        if cycle_counts.len() <= idx {
            cycle_counts.resize(idx + 1, 0);
        }
        cycle_counts[idx] += 1;
        let v_c = cache.responses[idx].v_c;
        lam = dual_step(lam, cfg.eta, v_c, cfg.b_prime, net);
    }
    debug_assert_eq!(lam.to_bits(), state.lambda.to_bits());

    state.sum_v_rp += full_cycles as f64 * cycle_v_rp;
    state.sum_v_c += full_cycles as f64 * cycle_v_c;
    state.sum_lambda += full_cycles as f64 * cycle_lambda;
    state.sum_lambda_grad += full_cycles as f64 * cycle_lg;
    // The asymptotic regime is exactly the cycle, so its mean lambda is the
    // tail-window average.
    state.tail_avg_lambda = Some(cycle_lambda / period as f64);
    if state.counts.len() < cycle_counts.len() {
        state.counts.resize(cycle_counts.len(), 0);
    }
    for (total, c) in state.counts.iter_mut().zip(&cycle_counts) {
        *total += full_cycles * *c;
    }
    for _ in 0..rem {
        let idx = lookup(visit_index, visits, cache, emp, planner_tol, state.lambda)?;
        let (v_rp, v_c) = {
            let r = &cache.responses[idx];
            (r.v_rp, r.v_c)
        };
        state.bump(idx, v_rp, v_c, cfg.b_prime);
        state.lambda = dual_step(state.lambda, cfg.eta, v_c, cfg.b_prime, net);
    }
    state.t = cfg.t;
    Ok(())
}

/// Runs the primal-dual loop on an empirical CMDP (any [`Cmdp`] whose
/// threshold field holds `b'` and whose rewards are the perturbed ones).
///
/// Exactly `cfg.t` best-response solves happen logically; physically the
/// segment cache answers repeated lambdas, and — when the trace is off — the
/// loop detects that the dual walk (a deterministic self-map of the
/// epsilon-net) has entered a cycle and finishes the horizon by cycle
/// algebra. Deterministic given its inputs.
pub fn run_primal_dual(
    emp: &Cmdp,
    cfg: &PdConfig,
    planner_tol: f64,
    opts: &PdOptions,
) -> Result<PdResult> {
    cfg.validate()?;
    emp.validate()?;
    if !(planner_tol > 0.0) {
        return Err(Error::input("planner tolerance must be positive"));
    }
    let net = EpsilonNet::new(cfg.u, cfg.eps_l)?;
    let mut cache = ResponseCache::new(emp.num_states * emp.num_actions);
    let mut trace = DualTrace::default();
    if opts.record_trace {
        let cap = usize::try_from(cfg.t).unwrap_or(usize::MAX).min(1 << 28);
        trace.lambdas.reserve(cap);
        trace.v_reward_hat.reserve(cap);
        trace.v_constraint_hat.reserve(cap);
    }
    let mut state = LoopState {
        lambda: 0.0,
        t: 0,
        counts: Vec::new(),
        sum_v_rp: 0.0,
        sum_v_c: 0.0,
        sum_lambda: 0.0,
        sum_lambda_grad: 0.0,
        tail_avg_lambda: None,
    };
    let mut visit_index: HashMap<u64, u32> = HashMap::new();
    let mut visits: Vec<Visit> = Vec::new();
    while state.t < cfg.t {
        if !opts.record_trace {
            let bits = state.lambda.to_bits();
            match visit_index.get(&bits).copied() {
                Some(ei) => {
                    run_cycle_tail(
                        &visits[ei as usize],
                        &visit_index,
                        &visits,
                        &mut cache,
                        emp,
                        cfg,
                        planner_tol,
                        &net,
                        &mut state,
                    )?;
                    break;
                }
                None if visits.len() < CYCLE_TABLE_CAP => {
                    visit_index.insert(bits, visits.len() as u32);
                    // idx is patched right after the query below.
                    visits.push(Visit {
                        t: state.t,
                        idx: 0,
                        sum_v_rp: state.sum_v_rp,
                        sum_v_c: state.sum_v_c,
                        sum_lambda: state.sum_lambda,
                        sum_lambda_grad: state.sum_lambda_grad,
                    });
                }
                None => {}
            }
        }
        let idx = cache.query(emp, state.lambda, planner_tol, state.t)?;
        if let Some(last) = visits.last_mut() {
            if last.t == state.t {
                last.idx = idx as u32;
            }
        }
        let (v_rp, v_c) = {
            let r = &cache.responses[idx];
            (r.v_rp, r.v_c)
        };
        if opts.record_trace {
            trace.lambdas.push(state.lambda);
            trace.v_reward_hat.push(v_rp);
            trace.v_constraint_hat.push(v_c);
        }
        state.bump(idx, v_rp, v_c, cfg.b_prime);
        state.lambda = dual_step(state.lambda, cfg.eta, v_c, cfg.b_prime, &net);
        state.t += 1;
    }
    drop(visit_index);
    drop(visits);
    let counts = state.counts;
    let lambda = state.lambda;
    let sum_v_rp = state.sum_v_rp;
    let sum_v_c = state.sum_v_c;
    let regret_zero = state.sum_lambda_grad;
    let regret_u = state.sum_lambda_grad - cfg.u * (state.sum_v_c - cfg.t as f64 * cfg.b_prime);
    let t_f = cfg.t as f64;
    let avg_lambda = state.sum_lambda / t_f;
    let tail_avg_lambda = state.tail_avg_lambda.unwrap_or_else(|| {
        if trace.is_empty() {
            avg_lambda
        } else {
            let window = trace.len().min(1024).max(1);
            let tail = &trace.lambdas[trace.len() - window..];
            tail.iter().sum::<f64>() / window as f64
        }
    });
    let members: Vec<(f64, Policy)> = counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(i, &c)| (c as f64 / t_f, cache.responses[i].policy.clone()))
        .collect();
    let mixture = MixturePolicy::new(members)?;
    let collapsed = collapse_mixture(emp, &mixture)?;
    Ok(PdResult {
        mixture,
        trace,
        collapsed,
        v_reward_hat: sum_v_rp / t_f,
        v_constraint_hat: sum_v_c / t_f,
        t_executed: cfg.t,
        final_lambda: lambda,
        avg_lambda,
        tail_avg_lambda,
        dual_regret_at_zero: regret_zero,
        dual_regret_at_u: regret_u,
        planner_solves: cache.planner_solves,
    })
}
