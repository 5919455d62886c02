//! `cmdp` — command-line front end for the constrained-MDP planning lab.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use cmdp::hard_instance::{
    build_hard_instance, closed_form_optima, validate_params, verify_slater, HardInstanceParams,
    InstanceVariant, ValidationOutcome,
};
use cmdp::harness::{csv_bytes, ExperimentConfig, TimingMode};
use cmdp::io::{load_cmdp, load_emp, save_cmdp, save_emp};
use cmdp::lp::solve_cmdp_with_threshold;
use cmdp::primal_dual::{
    preset_relaxed, preset_strict, run_primal_dual, PdConfig, PdMode, PdOptions, PdResult,
};
use cmdp::sampling::{build_empirical_model, GenerativeModel};
use cmdp::zeta::estimate_zeta;
use serde::Serialize;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "cmdp",
    about = "Constrained-MDP planning laboratory: exact solving, generative-model sampling, primal-dual planning, hard instances, and experiment sweeps",
    version
)]
struct Cli {
    /// Base seed used by verbs that draw randomness.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for parallel sections (0 = library default).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Directory for outputs with relative paths.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a CMDP exactly and print the solution as JSON.
    Solve(SolveArgs),
    /// Draw N samples per state-action pair and write an empirical model.
    Sample(SampleArgs),
    /// Run the primal-dual algorithm on an empirical model.
    RunPd(RunPdArgs),
    /// Generate a lower-bound hard instance (and optionally its report).
    HardInstance(HardInstanceArgs),
    /// Estimate the Slater constant by the doubling procedure.
    EstimateZeta(EstimateZetaArgs),
    /// Run a (seed, N) experiment sweep from a JSON config.
    Sweep(SweepArgs),
    /// Render the log-log medians plot for a sweep CSV.
    Plot(PlotArgs),
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    model: PathBuf,
    /// Solve with this threshold instead of the model's b.
    #[arg(long)]
    b_override: Option<f64>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    model: PathBuf,
    /// Samples per state-action pair.
    #[arg(long)]
    n: u64,
    /// Reward perturbation magnitude.
    #[arg(long, default_value_t = 0.0)]
    omega: f64,
    /// Shifted constraint threshold b' (defaults to the model's b).
    #[arg(long)]
    b_prime: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunPdArgs {
    /// Empirical model produced by `sample`.
    #[arg(long)]
    emp: PathBuf,
    #[arg(long, value_parser = parse_mode)]
    mode: PdMode,
    /// Accuracy target for the preset modes.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    /// Slater constant for strict mode (defaults to the oracle value).
    #[arg(long)]
    zeta: Option<f64>,
    /// Cap on the iteration count (eta is recomputed for the capped horizon).
    #[arg(long)]
    t_cap: Option<u64>,
    /// Manual mode parameters: U, eps_l, T, eta.
    #[arg(long)]
    u: Option<f64>,
    #[arg(long)]
    eps_l: Option<f64>,
    #[arg(long)]
    t: Option<u64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long, default_value_t = 0.01)]
    eps_opt: f64,
    /// Skip recording the full dual trace.
    #[arg(long)]
    no_trace: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct HardInstanceArgs {
    /// Tree depth m (S = 2^m - 1 core states).
    #[arg(long)]
    m: usize,
    #[arg(long, default_value_t = 2)]
    actions: usize,
    #[arg(long)]
    gamma: f64,
    #[arg(long)]
    b: f64,
    #[arg(long)]
    zeta: f64,
    /// "null" or "i,a" for the alternative that perturbs row (s~_i, a).
    #[arg(long, default_value = "null")]
    variant: String,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print derived quantities and closed-form optima as JSON.
    #[arg(long)]
    report: bool,
}

#[derive(Args)]
struct EstimateZetaArgs {
    #[arg(long)]
    model: PathBuf,
    /// Threshold to measure the margin against (defaults to the model's b).
    #[arg(long)]
    b: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    /// Multiplier for the per-round sample-size formula.
    #[arg(long, default_value_t = 4.0)]
    kappa: f64,
    #[arg(long, default_value_t = 30)]
    max_rounds: usize,
}

#[derive(Args)]
struct SweepArgs {
    /// JSON experiment configuration (ExperimentConfig schema).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Record real wall-clock times instead of deterministic zeros.
    #[arg(long)]
    wall_clock: bool,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    csv: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn parse_mode(s: &str) -> Result<PdMode, String> {
    match s {
        "relaxed" => Ok(PdMode::Relaxed),
        "strict" => Ok(PdMode::Strict),
        "manual" => Ok(PdMode::Manual),
        other => Err(format!("unknown mode '{other}' (relaxed|strict|manual)")),
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if cli.threads > 0 {
        configure_threads(cli.threads)?;
    }
    match &cli.command {
        Command::Solve(args) => cmd_solve(&cli, args),
        Command::Sample(args) => cmd_sample(&cli, args),
        Command::RunPd(args) => cmd_run_pd(&cli, args),
        Command::HardInstance(args) => cmd_hard_instance(&cli, args),
        Command::EstimateZeta(args) => cmd_estimate_zeta(&cli, args),
        Command::Sweep(args) => cmd_sweep(&cli, args),
        Command::Plot(args) => cmd_plot(&cli, args),
    }
}

#[cfg(feature = "parallel")]
fn configure_threads(n: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring the worker pool")
}

#[cfg(not(feature = "parallel"))]
fn configure_threads(_n: usize) -> Result<()> {
    eprintln!("warning: built without the parallel feature; --threads is ignored");
    Ok(())
}

fn resolve_out(cli: &Cli, path: &PathBuf) -> PathBuf {
    match (&cli.out_dir, path.is_relative()) {
        (Some(dir), true) => dir.join(path),
        _ => path.clone(),
    }
}

fn cmd_solve(_cli: &Cli, args: &SolveArgs) -> Result<()> {
    let cmdp = load_cmdp(&args.model)?;
    let b = args.b_override.unwrap_or(cmdp.b);
    let sol = solve_cmdp_with_threshold(&cmdp, b)?;
    println!("{}", serde_json::to_string_pretty(&sol)?);
    Ok(())
}

fn cmd_sample(cli: &Cli, args: &SampleArgs) -> Result<()> {
    let truth = load_cmdp(&args.model)?;
    let b_prime = args.b_prime.unwrap_or(truth.b);
    let mut gm = GenerativeModel::new(truth.clone(), cli.seed);
    let perturb_seed = cli.seed.wrapping_add(1);
    let emp = build_empirical_model(&mut gm, args.n, args.omega, b_prime, perturb_seed)?;
    let out = resolve_out(cli, &args.out);
    save_emp(&emp, &truth, &out)?;
    eprintln!(
        "wrote {} ({} samples per pair, {} queries)",
        out.display(),
        args.n,
        gm.query_count
    );
    Ok(())
}

#[derive(Serialize)]
struct RunPdOutput {
    config: PdConfig,
    t_capped: bool,
    result: PdResult,
}

fn cmd_run_pd(cli: &Cli, args: &RunPdArgs) -> Result<()> {
    let (emp, truth) = load_emp(&args.emp)?;
    let m_hat = emp.to_cmdp()?;
    let (mut cfg, recommended_n) = match args.mode {
        PdMode::Relaxed => {
            let eps = args
                .epsilon
                .ok_or_else(|| anyhow!("--epsilon is required in relaxed mode"))?;
            preset_relaxed(eps, args.delta, truth.gamma, truth.b, 4.0)?
        }
        PdMode::Strict => {
            let eps = args
                .epsilon
                .ok_or_else(|| anyhow!("--epsilon is required in strict mode"))?;
            let zeta = match args.zeta {
                Some(z) => z,
                None => cmdp::lp::slater_constant(&truth)?,
            };
            preset_strict(eps, args.delta, truth.gamma, truth.b, zeta, 4.0)?
        }
        PdMode::Manual => {
            let (Some(u), Some(eps_l), Some(t), Some(eta)) = (args.u, args.eps_l, args.t, args.eta)
            else {
                bail!("manual mode requires --u, --eps-l, --t, and --eta");
            };
            (
                PdConfig {
                    u,
                    eps_l,
                    t,
                    eta,
                    b_prime: emp.b_prime,
                    omega: emp.omega,
                    eps_opt: args.eps_opt,
                    mode: PdMode::Manual,
                },
                0,
            )
        }
    };
    if args.mode != PdMode::Manual {
        // The empirical file is the source of truth for what was actually
        // drawn; the preset's b' and omega only apply if sampling used them.
        if (cfg.b_prime - emp.b_prime).abs() > 1e-12 {
            eprintln!(
                "note: running with the sampled b' = {}; the preset would have used b' = {} \
                 (re-run `sample --b-prime` to match)",
                emp.b_prime, cfg.b_prime
            );
        }
        if (cfg.omega - emp.omega).abs() > 1e-12 {
            eprintln!(
                "note: running with the sampled omega = {}; the preset would have used {}",
                emp.omega, cfg.omega
            );
        }
        cfg.b_prime = emp.b_prime;
        cfg.omega = emp.omega;
        if recommended_n > 0 && emp.n_per_sa < recommended_n {
            eprintln!(
                "note: empirical model has N={} per pair; the preset recommends about {recommended_n}",
                emp.n_per_sa
            );
        }
    }
    let mut t_capped = false;
    if let Some(cap) = args.t_cap {
        t_capped = cfg.apply_t_cap(cap, truth.gamma);
        if t_capped {
            eprintln!("warning: T capped to {cap}; eta recomputed for the shorter horizon");
        }
    }
    let res = run_primal_dual(
        &m_hat,
        &cfg,
        cfg.planner_tol(),
        &PdOptions {
            record_trace: !args.no_trace,
        },
    )?;
    let out = resolve_out(cli, &args.out);
    std::fs::write(
        &out,
        serde_json::to_string(&RunPdOutput {
            config: cfg,
            t_capped,
            result: res,
        })?,
    )?;
    eprintln!("wrote {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct HardInstanceReport {
    params: HardInstanceParams,
    derived: cmdp::hard_instance::DerivedQuantities,
    total_states: usize,
    v_null: f64,
    v_alt: f64,
    measured_slater: f64,
}

fn cmd_hard_instance(cli: &Cli, args: &HardInstanceArgs) -> Result<()> {
    let params =
        HardInstanceParams::with_defaults(args.m, args.actions, args.gamma, args.b, args.zeta);
    let variant = if args.variant == "null" {
        InstanceVariant::Null
    } else {
        let (i, a) = args
            .variant
            .split_once(',')
            .ok_or_else(|| anyhow!("--variant must be 'null' or 'i,a'"))?;
        InstanceVariant::Alternative {
            i: i.trim().parse().context("parsing variant index i")?,
            a: a.trim().parse().context("parsing variant action a")?,
        }
    };
    let cmdp = build_hard_instance(&params, variant)?;
    if let Some(out) = &args.out {
        let out = resolve_out(cli, out);
        save_cmdp(&cmdp, &out)?;
        eprintln!("wrote {} ({} states)", out.display(), cmdp.num_states);
    }
    if args.report {
        let derived = match validate_params(&params) {
            ValidationOutcome::Valid(d) => d,
            ValidationOutcome::Invalid(v) => bail!("invalid parameters: {}", v.join("; ")),
        };
        let (v_null, v_alt) = closed_form_optima(&params)?;
        let report = HardInstanceReport {
            total_states: params.total_states(),
            measured_slater: verify_slater(&params)?,
            params,
            derived,
            v_null,
            v_alt,
        };
        println!("{}", serde_json::to_string_pretty(&report)?);
    }
    Ok(())
}

fn cmd_estimate_zeta(cli: &Cli, args: &EstimateZetaArgs) -> Result<()> {
    let truth = load_cmdp(&args.model)?;
    let b = args.b.unwrap_or(truth.b);
    let mut gm = GenerativeModel::new(truth, cli.seed);
    let est = estimate_zeta(&mut gm, b, args.delta, args.kappa, args.max_rounds)?;
    println!("{}", serde_json::to_string_pretty(&est)?);
    Ok(())
}

fn cmd_sweep(cli: &Cli, args: &SweepArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let mut config: ExperimentConfig = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", args.config.display()))?;
    if args.wall_clock {
        config.timing = Some(TimingMode::WallClock);
    }
    let outcome = config.run()?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    let timing = config.timing.unwrap_or(TimingMode::Deterministic);
    let out = resolve_out(cli, &args.out);
    std::fs::write(&out, csv_bytes(&outcome, timing))?;
    eprintln!(
        "wrote {} ({} records, {} failures)",
        out.display(),
        outcome.records.len(),
        outcome.failures.len()
    );
    Ok(())
}

fn cmd_plot(cli: &Cli, args: &PlotArgs) -> Result<()> {
    let out = resolve_out(cli, &args.out);
    cmdp::plot::emit_plot(&args.csv, &out)?;
    eprintln!("wrote {}", out.display());
    Ok(())
}
