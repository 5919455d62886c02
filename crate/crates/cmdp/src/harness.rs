//! Random-instance generation and the end-to-end experiment sweep.
//!
//! A sweep cell is one `(seed, N)` pair: draw an empirical model, run the
//! primal-dual algorithm with the mode's preset, evaluate the returned
//! mixture on the *true* model, and record the outcome. Cells are
//! independent and run on the worker pool; results are gathered in schedule
//! order regardless of completion order, and the CSV writer is deterministic
//! by default so identical configs produce byte-identical files.

use crate::error::{Error, Result};
use crate::lp::{slater_constant, solve_cmdp_exact};
use crate::mdp::{mixture_value, Cmdp};
use crate::par;
use crate::plot::median;
use crate::primal_dual::{preset_relaxed, preset_strict, run_primal_dual, PdMode, PdOptions};
use crate::rng::{Cursor, Stream};
use crate::sampling::{build_empirical_model, GenerativeModel};
use crate::zeta::estimate_zeta;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::time::Instant;

const RANDOM_CMDP_TAG: u64 = 0x0052_414e_0044;
const PERTURB_SEED_TAG: u64 = 0x5045_5254;

/// Generates a random CMDP: Dirichlet(1) transition rows and initial
/// distribution, i.i.d. uniform rewards and constraint rewards in [0, 1],
/// and the threshold placed so the Slater constant equals `slater_min`.
pub fn random_cmdp(
    num_states: usize,
    num_actions: usize,
    gamma: f64,
    seed: u64,
    slater_min: f64,
) -> Result<Cmdp> {
    if num_states == 0 || num_actions == 0 {
        return Err(Error::input(
            "random_cmdp needs at least one state and action",
        ));
    }
    if slater_min < 0.0 {
        return Err(Error::input("slater_min must be nonnegative"));
    }
    let mut cur = Cursor::new(Stream::new(seed, RANDOM_CMDP_TAG));
    let pairs = num_states * num_actions;
    let mut transitions = vec![0.0; pairs * num_states];
    for row in transitions.chunks_mut(num_states) {
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = cur.next_exp().max(1e-12);
            total += *v;
        }
        let mut acc = 0.0;
        for v in row.iter_mut().take(num_states - 1) {
            *v /= total;
            acc += *v;
        }
        row[num_states - 1] = 1.0 - acc; // exact row sum
    }
    let mut rho = vec![0.0; num_states];
    let mut total = 0.0;
    for v in rho.iter_mut() {
        *v = cur.next_exp().max(1e-12);
        total += *v;
    }
    let mut acc = 0.0;
    for v in rho.iter_mut().take(num_states - 1) {
        *v /= total;
        acc += *v;
    }
    rho[num_states - 1] = 1.0 - acc;
    let rewards: Vec<f64> = (0..pairs).map(|_| cur.next_f64()).collect();
    let constraints: Vec<f64> = (0..pairs).map(|_| cur.next_f64()).collect();

    let mut cmdp = Cmdp::new(
        num_states,
        num_actions,
        gamma,
        0.0,
        rho,
        transitions,
        rewards,
        constraints,
    )?;
    let max_vc = slater_constant(&cmdp)? + cmdp.b;
    // Range check: the most- and least-constraint-achieving policies bound
    // what slater_min can be.
    let neg_c: Vec<f64> = cmdp.constraints.iter().map(|c| -c).collect();
    let vi = crate::mdp::value_iteration(
        &cmdp.transitions,
        num_states,
        num_actions,
        &neg_c,
        gamma,
        1e-9,
    )?;
    let min_vc: f64 = -vi
        .v_star
        .iter()
        .zip(&cmdp.rho)
        .map(|(v, p)| v * p)
        .sum::<f64>();
    if slater_min > max_vc - min_vc + 1e-9 {
        return Err(Error::input(format!(
            "slater_min = {slater_min} exceeds the achievable constraint-value range {:.6}",
            max_vc - min_vc
        )));
    }
    cmdp.b = max_vc - slater_min;
    Ok(cmdp)
}

/// How the per-run accuracy target is chosen across the N schedule.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonSpec {
    /// One epsilon for every cell.
    Fixed(f64),
    /// Invert the preset's recommended-N formula:
    /// `eps(N) = sqrt(kappa ln(1/delta) / ((1-gamma)^3 N))` (relaxed) or
    /// `sqrt(kappa ln(1/delta) / ((1-gamma)^5 zeta^2 N))` (strict), clamped
    /// into `(0, 1/(1-gamma)]`.
    FromSampleSize { kappa: f64 },
}

/// Where strict mode gets its Slater constant.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZetaSpec {
    /// Exact value from the LP-oracle side (value iteration on c).
    Oracle,
    Known(f64),
    /// Per-cell doubling estimation; its queries are charged to the cell.
    Estimated {
        kappa: f64,
        max_rounds: usize,
    },
}

/// Wall-time column policy. `Deterministic` writes zeros so identical
/// configurations yield byte-identical CSVs; `WallClock` opts into real
/// timings at the cost of reproducible bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimingMode {
    Deterministic,
    WallClock,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepParams {
    pub mode: PdMode,
    pub epsilon: EpsilonSpec,
    pub delta: f64,
    pub n_schedule: Vec<u64>,
    pub seeds: Vec<u64>,
    pub t_cap: Option<u64>,
    pub zeta: ZetaSpec,
    pub timing: TimingMode,
}

impl SweepParams {
    pub fn validate(&self) -> Result<()> {
        if self.mode == PdMode::Manual {
            return Err(Error::input("sweeps need a preset mode: relaxed or strict"));
        }
        if !(0.0 < self.delta && self.delta < 1.0) {
            return Err(Error::input("delta must lie in (0, 1)"));
        }
        if self.seeds.is_empty() {
            return Err(Error::input("seed list must be nonempty"));
        }
        if !self.n_schedule.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::input("N schedule must be strictly increasing"));
        }
        if self.n_schedule.contains(&0) {
            return Err(Error::input("N schedule entries must be positive"));
        }
        Ok(())
    }
}

/// One sweep cell's outcome, evaluated against the ground-truth CMDP.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub n: u64,
    pub queries_used: u64,
    pub v_reward_true: f64,
    pub v_constraint_true: f64,
    pub v_reward_opt: f64,
    pub reward_gap: f64,
    /// `max(0, b - V_c)` against the true threshold.
    pub constraint_violation: f64,
    pub relaxed_ok: bool,
    pub strict_ok: bool,
    pub wall_time_s: f64,
}

/// Per-N aggregate appended to the CSV as comment lines.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateRow {
    pub n: u64,
    pub runs: usize,
    pub failures: usize,
    pub relaxed_ok_freq: f64,
    pub strict_ok_freq: f64,
    pub median_reward_gap: f64,
    pub median_constraint_violation: f64,
    pub median_max_gap_violation: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub records: Vec<RunRecord>,
    pub aggregates: Vec<AggregateRow>,
    /// (seed, n, message) for cells that failed; the sweep continues past them.
    pub failures: Vec<(u64, u64, String)>,
    pub warnings: Vec<String>,
}

/// Accuracy target for one cell.
pub fn derive_epsilon(
    mode: PdMode,
    spec: &EpsilonSpec,
    delta: f64,
    gamma: f64,
    zeta: f64,
    n: u64,
) -> f64 {
    let eps_max = 1.0 / (1.0 - gamma);
    match *spec {
        EpsilonSpec::Fixed(e) => e.min(eps_max),
        EpsilonSpec::FromSampleSize { kappa } => {
            let one_minus = 1.0 - gamma;
            let denom = match mode {
                PdMode::Strict => one_minus.powi(5) * zeta * zeta * n as f64,
                _ => one_minus.powi(3) * n as f64,
            };
            let eps = (kappa * (1.0 / delta).ln() / denom).sqrt();
            eps.clamp(1e-9, eps_max)
        }
    }
}

fn run_cell(
    truth: &Cmdp,
    v_reward_opt: f64,
    params: &SweepParams,
    oracle_zeta: f64,
    seed: u64,
    n: u64,
) -> Result<(RunRecord, Option<String>)> {
    let start = Instant::now();
    let mut gm = GenerativeModel::new(truth.clone(), seed);
    let zeta = match params.zeta {
        ZetaSpec::Oracle => oracle_zeta,
        ZetaSpec::Known(z) => z,
        ZetaSpec::Estimated { kappa, max_rounds } => {
            let est = estimate_zeta(&mut gm, truth.b, params.delta, kappa, max_rounds)?;
            if !est.halted {
                return Err(Error::internal(format!(
                    "zeta estimator did not halt within {max_rounds} rounds"
                )));
            }
            est.zeta_hat
        }
    };
    let epsilon = derive_epsilon(
        params.mode,
        &params.epsilon,
        params.delta,
        truth.gamma,
        zeta,
        n,
    );
    let (mut cfg, _recommended_n) = match params.mode {
        PdMode::Relaxed => preset_relaxed(epsilon, params.delta, truth.gamma, truth.b, 1.0)?,
        PdMode::Strict => preset_strict(epsilon, params.delta, truth.gamma, truth.b, zeta, 1.0)?,
        PdMode::Manual => unreachable!("validated earlier"),
    };
    if let Some(cap) = params.t_cap {
        cfg.apply_t_cap(cap, truth.gamma);
    }
    let perturb_seed = Stream::new(seed, PERTURB_SEED_TAG).u64_at(0);
    let emp = build_empirical_model(&mut gm, n, cfg.omega, cfg.b_prime, perturb_seed)?;
    let m_hat = emp.to_cmdp()?;
    let res = run_primal_dual(
        &m_hat,
        &cfg,
        cfg.planner_tol(),
        &PdOptions {
            record_trace: false,
        },
    )?;
    // Success is judged on the ground-truth model, never the empirical one.
    let true_values = mixture_value(truth, &res.mixture)?;
    let reward_gap = v_reward_opt - true_values.v_reward;
    let constraint_violation = (truth.b - true_values.v_constraint).max(0.0);
    let relaxed_ok = true_values.v_reward >= v_reward_opt - epsilon
        && true_values.v_constraint >= truth.b - epsilon;
    let strict_ok =
        true_values.v_reward >= v_reward_opt - epsilon && true_values.v_constraint >= truth.b;
    // Infeasibility diagnostic: the planner never checks feasibility, but a
    // dual tail pinned at the cap with the constraint still violated means
    // the empirical CMDP most likely had no feasible policy at b'.
    let flag = if res.tail_avg_lambda >= 0.95 * cfg.u && constraint_violation > 0.0 {
        Some(format!(
            "seed={seed} n={n}: dual tail average {:.3} sits at the cap U={} with the              constraint still violated; the empirical CMDP was likely infeasible at b'={}",
            res.tail_avg_lambda, cfg.u, cfg.b_prime
        ))
    } else {
        None
    };
    Ok((
        RunRecord {
            seed,
            n,
            queries_used: gm.query_count,
            v_reward_true: true_values.v_reward,
            v_constraint_true: true_values.v_constraint,
            v_reward_opt,
            reward_gap,
            constraint_violation,
            relaxed_ok,
            strict_ok,
            wall_time_s: start.elapsed().as_secs_f64(),
        },
        flag,
    ))
}

/// Runs the full `(seed, N)` grid against one ground-truth CMDP.
pub fn run_sweep_on(truth: &Cmdp, params: &SweepParams) -> Result<SweepOutcome> {
    params.validate()?;
    truth.validate()?;
    let oracle = solve_cmdp_exact(truth)?;
    if !oracle.feasible {
        return Err(Error::input(
            "the ground-truth CMDP is infeasible; no optimum to compare against",
        ));
    }
    let oracle_zeta = slater_constant(truth)?;
    let mut warnings = Vec::new();
    // Warn once per N about capped schedules.
    if let Some(cap) = params.t_cap {
        for &n in &params.n_schedule {
            let epsilon = derive_epsilon(
                params.mode,
                &params.epsilon,
                params.delta,
                truth.gamma,
                match params.zeta {
                    ZetaSpec::Known(z) => z,
                    _ => oracle_zeta,
                },
                n,
            );
            let preset = match params.mode {
                PdMode::Relaxed => preset_relaxed(epsilon, params.delta, truth.gamma, truth.b, 1.0),
                _ => preset_strict(
                    epsilon,
                    params.delta,
                    truth.gamma,
                    truth.b,
                    oracle_zeta.max(1e-9),
                    1.0,
                ),
            };
            if let Ok((cfg, _)) = preset {
                if cfg.t > cap {
                    warnings.push(format!(
                        "n={n}: schedule T={} exceeds the cap; running T={cap} with eta recomputed",
                        cfg.t
                    ));
                }
            }
        }
    }

    let cells: Vec<(u64, u64)> = params
        .n_schedule
        .iter()
        .flat_map(|&n| params.seeds.iter().map(move |&s| (s, n)))
        .collect();
    let results: Vec<Result<(RunRecord, Option<String>)>> = par::map_slice(&cells, |&(seed, n)| {
        run_cell(truth, oracle.optimal_value, params, oracle_zeta, seed, n)
    });

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for ((seed, n), res) in cells.into_iter().zip(results) {
        match res {
            Ok((r, flag)) => {
                records.push(r);
                warnings.extend(flag);
            }
            Err(e) => failures.push((seed, n, e.to_string())),
        }
    }
    let mut aggregates = Vec::new();
    for &n in &params.n_schedule {
        let rows: Vec<&RunRecord> = records.iter().filter(|r| r.n == n).collect();
        let failed = failures.iter().filter(|f| f.1 == n).count();
        if rows.is_empty() {
            aggregates.push(AggregateRow {
                n,
                runs: 0,
                failures: failed,
                relaxed_ok_freq: 0.0,
                strict_ok_freq: 0.0,
                median_reward_gap: f64::NAN,
                median_constraint_violation: f64::NAN,
                median_max_gap_violation: f64::NAN,
            });
            continue;
        }
        let count = rows.len() as f64;
        let gaps: Vec<f64> = rows.iter().map(|r| r.reward_gap).collect();
        let viols: Vec<f64> = rows.iter().map(|r| r.constraint_violation).collect();
        let maxes: Vec<f64> = rows
            .iter()
            .map(|r| r.reward_gap.max(r.constraint_violation))
            .collect();
        aggregates.push(AggregateRow {
            n,
            runs: rows.len(),
            failures: failed,
            relaxed_ok_freq: rows.iter().filter(|r| r.relaxed_ok).count() as f64 / count,
            strict_ok_freq: rows.iter().filter(|r| r.strict_ok).count() as f64 / count,
            median_reward_gap: median(&gaps).unwrap(),
            median_constraint_violation: median(&viols).unwrap(),
            median_max_gap_violation: median(&maxes).unwrap(),
        });
    }
    Ok(SweepOutcome {
        records,
        aggregates,
        failures,
        warnings,
    })
}

pub const CSV_HEADER: &str = "seed,n,queries_used,v_reward_true,v_constraint_true,v_reward_opt,reward_gap,constraint_violation,relaxed_ok,strict_ok,wall_time_s";

/// Writes the sweep CSV: one row per record, then per-N aggregates and any
/// failures as `#`-prefixed comment lines.
pub fn write_csv<W: Write>(mut out: W, outcome: &SweepOutcome, timing: TimingMode) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in &outcome.records {
        let wall = match timing {
            TimingMode::Deterministic => 0.0,
            TimingMode::WallClock => r.wall_time_s,
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.seed,
            r.n,
            r.queries_used,
            r.v_reward_true,
            r.v_constraint_true,
            r.v_reward_opt,
            r.reward_gap,
            r.constraint_violation,
            r.relaxed_ok,
            r.strict_ok,
            wall
        )?;
    }
    for a in &outcome.aggregates {
        writeln!(
            out,
            "# aggregate n={} runs={} failures={} relaxed_ok_freq={} strict_ok_freq={} median_reward_gap={} median_constraint_violation={} median_max_gap_violation={}",
            a.n,
            a.runs,
            a.failures,
            a.relaxed_ok_freq,
            a.strict_ok_freq,
            a.median_reward_gap,
            a.median_constraint_violation,
            a.median_max_gap_violation
        )?;
    }
    for (seed, n, msg) in &outcome.failures {
        writeln!(out, "# failure seed={seed} n={n} msg={msg}")?;
    }
    Ok(())
}

/// Serializes a sweep to CSV bytes (deterministic under
/// [`TimingMode::Deterministic`]).
pub fn csv_bytes(outcome: &SweepOutcome, timing: TimingMode) -> Vec<u8> {
    let mut buf = Vec::new();
    write_csv(&mut buf, outcome, timing).expect("writing to a Vec cannot fail");
    buf
}

/// Where the experiment model comes from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSource {
    File {
        path: String,
    },
    Random {
        num_states: usize,
        num_actions: usize,
        gamma: f64,
        seed: u64,
        slater_min: f64,
    },
    HardInstance {
        m: usize,
        num_actions: usize,
        gamma: f64,
        b: f64,
        zeta: f64,
        /// `None` builds the null instance; `Some((i, a))` the alternative.
        variant: Option<(usize, usize)>,
    },
}

impl ModelSource {
    pub fn resolve(&self) -> Result<Cmdp> {
        match self {
            ModelSource::File { path } => crate::io::load_cmdp(std::path::Path::new(path)),
            ModelSource::Random {
                num_states,
                num_actions,
                gamma,
                seed,
                slater_min,
            } => random_cmdp(*num_states, *num_actions, *gamma, *seed, *slater_min),
            ModelSource::HardInstance {
                m,
                num_actions,
                gamma,
                b,
                zeta,
                variant,
            } => {
                let params = crate::hard_instance::HardInstanceParams::with_defaults(
                    *m,
                    *num_actions,
                    *gamma,
                    *b,
                    *zeta,
                );
                let v = match variant {
                    None => crate::hard_instance::InstanceVariant::Null,
                    Some((i, a)) => {
                        crate::hard_instance::InstanceVariant::Alternative { i: *i, a: *a }
                    }
                };
                crate::hard_instance::build_hard_instance(&params, v)
            }
        }
    }
}

/// The JSON experiment configuration consumed by the `sweep` CLI verb.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub mode: PdMode,
    pub model: ModelSource,
    /// Fixed accuracy target; when absent, epsilon is derived per N.
    pub epsilon: Option<f64>,
    /// Constant for the derived-epsilon formula (default 4).
    pub kappa: Option<f64>,
    pub delta: f64,
    pub n_schedule: Vec<u64>,
    pub seeds: Vec<u64>,
    pub t_cap: Option<u64>,
    /// Known Slater constant; when absent strict mode asks the oracle.
    pub zeta: Option<f64>,
    /// Switch strict mode to the doubling estimator.
    pub estimate_zeta: Option<EstimateZetaConfig>,
    pub timing: Option<TimingMode>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateZetaConfig {
    pub kappa: f64,
    pub max_rounds: usize,
}

impl ExperimentConfig {
    pub fn to_sweep_params(&self) -> SweepParams {
        let epsilon = match self.epsilon {
            Some(e) => EpsilonSpec::Fixed(e),
            None => EpsilonSpec::FromSampleSize {
                kappa: self.kappa.unwrap_or(4.0),
            },
        };
        let zeta = match (&self.estimate_zeta, self.zeta) {
            (Some(est), _) => ZetaSpec::Estimated {
                kappa: est.kappa,
                max_rounds: est.max_rounds,
            },
            (None, Some(z)) => ZetaSpec::Known(z),
            (None, None) => ZetaSpec::Oracle,
        };
        SweepParams {
            mode: self.mode,
            epsilon,
            delta: self.delta,
            n_schedule: self.n_schedule.clone(),
            seeds: self.seeds.clone(),
            t_cap: self.t_cap,
            zeta,
            timing: self.timing.unwrap_or(TimingMode::Deterministic),
        }
    }

    pub fn run(&self) -> Result<SweepOutcome> {
        let truth = self.model.resolve()?;
        run_sweep_on(&truth, &self.to_sweep_params())
    }
}
