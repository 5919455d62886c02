//! Generative-model access, empirical model construction, and reward
//! perturbation.
//!
//! Next-state draws are counter-based per state-action pair: the k-th draw
//! for `(s,a)` is a pure function of `(master_seed, s, a, k)`, so sampling
//! across pairs can run in parallel without changing any count. The
//! perturbation stream is keyed separately from the transition stream so the
//! two can be varied independently.

use crate::error::{Error, Result};
use crate::mdp::Cmdp;
use crate::par;
use crate::rng::Stream;
use serde::{Deserialize, Serialize};

const TRANSITION_TAG: u64 = 0x7452_414e_5321; // stream domain separators
const PERTURB_TAG: u64 = 0x5045_5254_5542;

/// Sampling oracle over a hidden true CMDP. Planner-facing code only ever
/// sees next-state draws; `query_count` tracks the exact number issued.
#[derive(Debug, Clone)]
pub struct GenerativeModel {
    truth: Cmdp,
    pub master_seed: u64,
    pub query_count: u64,
    /// Per-(s,a) stream positions, flattened `[s][a]`.
    positions: Vec<u64>,
}

impl GenerativeModel {
    pub fn new(truth: Cmdp, master_seed: u64) -> GenerativeModel {
        let n = truth.num_states * truth.num_actions;
        GenerativeModel {
            truth,
            master_seed,
            query_count: 0,
            positions: vec![0; n],
        }
    }

    pub fn num_states(&self) -> usize {
        self.truth.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.truth.num_actions
    }

    /// Known quantities of the problem: everything except the transitions.
    /// (Rewards are treated as known; only the transition kernel is
    /// estimated from samples.)
    pub fn known(&self) -> KnownQuantities<'_> {
        KnownQuantities {
            gamma: self.truth.gamma,
            b: self.truth.b,
            rho: &self.truth.rho,
            rewards: &self.truth.rewards,
            constraints: &self.truth.constraints,
            r_max: self.truth.r_max,
            c_max: self.truth.c_max,
        }
    }

    fn stream(&self) -> Stream {
        Stream::new(self.master_seed, TRANSITION_TAG)
    }

    /// One sample of the next state from P(.|s,a).
    pub fn sample_next_state(&mut self, s: usize, a: usize) -> Result<usize> {
        if s >= self.truth.num_states || a >= self.truth.num_actions {
            return Err(Error::input(format!(
                "state-action ({s},{a}) out of range for a {}x{} model",
                self.truth.num_states, self.truth.num_actions
            )));
        }
        let idx = s * self.truth.num_actions + a;
        let k = self.positions[idx];
        let next = self
            .stream()
            .substream(s as u64, a as u64)
            .categorical_at(k, self.truth.p_row(s, a));
        self.positions[idx] = k + 1;
        self.query_count += 1;
        Ok(next)
    }
}

/// Borrowed view of the known parts of the problem.
pub struct KnownQuantities<'a> {
    pub gamma: f64,
    pub b: f64,
    pub rho: &'a [f64],
    pub rewards: &'a [f64],
    pub constraints: &'a [f64],
    pub r_max: f64,
    pub c_max: f64,
}

/// Plug-in model built from `N` draws per state-action pair, plus the
/// perturbed rewards and the shifted threshold that define the empirical
/// CMDP the primal-dual algorithm runs on.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmpiricalModel {
    pub num_states: usize,
    pub num_actions: usize,
    /// Flattened `[s][a][s']` transition counts; each row sums to `n_per_sa`.
    pub counts: Vec<u64>,
    pub n_per_sa: u64,
    /// `counts / N`, flattened like `counts`.
    pub p_hat: Vec<f64>,
    /// Perturbed rewards `r + xi`, `xi ~ U[0, omega]` i.i.d.
    pub r_p: Vec<f64>,
    pub omega: f64,
    pub b_prime: f64,
    pub master_seed: u64,
    pub perturb_seed: u64,
    pub gamma: f64,
    pub rho: Vec<f64>,
    pub constraints: Vec<f64>,
    pub c_max: f64,
}

impl EmpiricalModel {
    /// The empirical CMDP `(S, A, P_hat, r_p, c, b', rho, gamma)` as a
    /// planner-ready [`Cmdp`].
    pub fn to_cmdp(&self) -> Result<Cmdp> {
        let r_max = self.r_p.iter().cloned().fold(1.0, f64::max);
        let cmdp = Cmdp {
            num_states: self.num_states,
            num_actions: self.num_actions,
            gamma: self.gamma,
            b: self.b_prime,
            rho: self.rho.clone(),
            transitions: self.p_hat.clone(),
            rewards: self.r_p.clone(),
            constraints: self.constraints.clone(),
            r_max,
            c_max: self.c_max,
        };
        cmdp.validate()?;
        Ok(cmdp)
    }
}

/// Adds i.i.d. uniform `[0, omega]` offsets to a reward table,
/// deterministically in `seed`.
pub fn perturb_rewards(rewards: &[f64], omega: f64, seed: u64) -> Result<Vec<f64>> {
    if omega < 0.0 {
        return Err(Error::input("perturbation magnitude omega must be >= 0"));
    }
    if omega == 0.0 {
        return Ok(rewards.to_vec());
    }
    let stream = Stream::new(seed, PERTURB_TAG);
    Ok(rewards
        .iter()
        .enumerate()
        .map(|(i, &r)| r + omega * stream.f64_at(i as u64))
        .collect())
}

/// Algorithm lines 2-4: collect `N` samples per state-action pair, form the
/// plug-in `P_hat`, perturb the rewards, and assemble the empirical CMDP data.
///
/// Issues exactly `N * S * A` new queries. Distinct `(s,a)` pairs are drawn
/// in parallel; the counter-based streams make the result independent of
/// scheduling and bit-identical to a sequential pass.
pub fn build_empirical_model(
    gm: &mut GenerativeModel,
    n: u64,
    omega: f64,
    b_prime: f64,
    perturb_seed: u64,
) -> Result<EmpiricalModel> {
    if n == 0 {
        return Err(Error::input(
            "empirical model needs at least one sample per pair",
        ));
    }
    if omega < 0.0 {
        return Err(Error::input("perturbation magnitude omega must be >= 0"));
    }
    let s_count = gm.truth.num_states;
    let a_count = gm.truth.num_actions;
    let pairs = s_count * a_count;
    let stream = gm.stream();

    let per_pair: Vec<Vec<u64>> = {
        let truth = &gm.truth;
        let positions = &gm.positions;
        par::map_indexed(pairs, move |idx| {
            let s = idx / a_count;
            let a = idx % a_count;
            let sub = stream.substream(s as u64, a as u64);
            let row = truth.p_row(s, a);
            let start = positions[idx];
            let mut counts = vec![0u64; s_count];
            for k in start..start + n {
                counts[sub.categorical_at(k, row)] += 1;
            }
            counts
        })
    };

    let mut counts = vec![0u64; pairs * s_count];
    let mut p_hat = vec![0.0; pairs * s_count];
    for (idx, row) in per_pair.iter().enumerate() {
        for sp in 0..s_count {
            counts[idx * s_count + sp] = row[sp];
            p_hat[idx * s_count + sp] = row[sp] as f64 / n as f64;
        }
        gm.positions[idx] += n;
    }
    gm.query_count += n * pairs as u64;

    let r_p = perturb_rewards(&gm.truth.rewards, omega, perturb_seed)?;
    Ok(EmpiricalModel {
        num_states: s_count,
        num_actions: a_count,
        counts,
        n_per_sa: n,
        p_hat,
        r_p,
        omega,
        b_prime,
        master_seed: gm.master_seed,
        perturb_seed,
        gamma: gm.truth.gamma,
        rho: gm.truth.rho.clone(),
        constraints: gm.truth.constraints.clone(),
        c_max: gm.truth.c_max,
    })
}
