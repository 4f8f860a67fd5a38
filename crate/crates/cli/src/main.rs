use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cablp_core::harness::{
    emit_plot_data, read_runs_csv, run_cell, run_experiment, ExperimentConfig, SeedSpec, SweepSummary,
};
use cablp_core::orchestrator::{minimal_feasible_n, plan_parameters, run_phase1, PlanInputs, PlanMode};
use cablp_core::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "cablp", version, about = "Continuum-armed bandits with few linear parameters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds, or `master:count` for derived seeds.
    #[arg(long)]
    seeds: Option<String>,
    /// Comma-separated horizons.
    #[arg(long)]
    horizons: Option<String>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Declared conditioning level for `--mode theory`.
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Theory,
    Practical,
}

#[derive(Subcommand)]
enum Command {
    /// One run at the first horizon and seed (or the ones given).
    Run(Common),
    /// Every (horizon, seed) cell, with summary, fit and chart.
    Sweep(Common),
    /// Phase 1 only: measurements and subspace estimate.
    Recover(Common),
    /// Monte Carlo estimate of the conditioning level of the environment.
    Conditioning {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 50_000)]
        samples: usize,
    },
    /// Echo the theory-mode parameter plan for each horizon.
    Plan(Common),
    /// Fit the regret exponent from a runs.csv.
    Fit {
        #[arg(long)]
        runs: PathBuf,
    },
    /// Chart from a runs.csv or summary.json.
    Plot {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Config(Error),
    Run(Error),
    FailedCells(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_) | Error::Json(_) | Error::Csv(_) | Error::InvalidParameter(_) => Failure::Config(e),
            e => Failure::Run(e),
        }
    }
}

fn parse_list(text: &str) -> Result<Vec<u64>, Error> {
    text.split(',')
        .map(|s| {
            let s = s.trim();
            s.parse::<f64>()
                .ok()
                .filter(|v| *v >= 0.0 && v.fract() == 0.0)
                .map(|v| v as u64)
                .ok_or_else(|| Error::InvalidParameter(format!("not a non-negative integer: {s:?}")))
        })
        .collect()
}

fn parse_seeds(text: &str) -> Result<SeedSpec, Error> {
    if let Some((master, count)) = text.split_once(':') {
        let parsed = (master.trim().parse(), count.trim().parse());
        if let (Ok(master), Ok(count)) = parsed {
            return Ok(SeedSpec::Derived { master, count });
        }
        return Err(Error::InvalidParameter(format!("bad seed spec {text:?}")));
    }
    Ok(SeedSpec::List(parse_list(text)?))
}

fn load(common: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg: ExperimentConfig = serde_json::from_str(&fs::read_to_string(&common.config)?)?;
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if let Some(s) = &common.seeds {
        cfg.seeds = parse_seeds(s)?;
    }
    if let Some(h) = &common.horizons {
        cfg.horizons = parse_list(h)?;
    }
    match (common.mode, common.alpha) {
        (Some(ModeArg::Theory), Some(alpha)) => cfg.mode = PlanMode::Theory { alpha },
        (Some(ModeArg::Theory), None) => {
            if !matches!(cfg.mode, PlanMode::Theory { .. }) {
                return Err(Error::InvalidParameter("--mode theory needs --alpha".into()));
            }
        }
        (Some(ModeArg::Practical), _) => {
            if !matches!(cfg.mode, PlanMode::Practical(_)) {
                return Err(Error::InvalidParameter(
                    "--mode practical needs a practical plan in the config".into(),
                ));
            }
        }
        (None, Some(alpha)) => {
            if let PlanMode::Theory { alpha: a } = &mut cfg.mode {
                *a = alpha;
            }
        }
        (None, None) => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn cmd_run(common: &Common) -> Result<(), Failure> {
    let cfg = load(common).map_err(Failure::Config)?;
    let (n, seed) = (cfg.horizons[0], cfg.seeds.seeds()[0]);
    let rec = run_cell(&cfg, n, seed).map_err(Failure::Run)?;
    let out = &cfg.output_dir;
    write_json(&out.join("run.json"), &rec)?;
    fs::write(out.join("trace.csv"), rec.trace_csv()).map_err(Error::from)?;
    fs::write(out.join("phase2.csv"), rec.phase2_csv()).map_err(Error::from)?;
    println!(
        "n={} seed={} R={:.6} R1={:.6} R2={:.6} R3={:.6} subspace_err={:.6} n1={}",
        rec.n, rec.env_seed, rec.total_regret, rec.r1, rec.r2, rec.r3, rec.subspace_err, rec.phase1_rounds
    );
    Ok(())
}

fn cmd_sweep(common: &Common) -> Result<(), Failure> {
    let cfg = load(common).map_err(Failure::Config)?;
    let summary = run_experiment(&cfg)?;
    if summary.aggregates.iter().any(|a| a.mean_total > 0.0) {
        emit_plot_data(&summary, &cfg.output_dir, "regret")?;
    }
    print_summary(&summary);
    if summary.failed_cells > 0 {
        return Err(Failure::FailedCells(summary.failed_cells));
    }
    Ok(())
}

fn print_summary(summary: &SweepSummary) {
    for a in &summary.aggregates {
        println!(
            "n={} runs={} mean_R={:.4} se={:.4} R1={:.4} R2={:.4} R3={:.4} subspace_err={:.4}",
            a.n, a.runs, a.mean_total, a.se_total, a.mean_r1, a.mean_r2, a.mean_r3, a.mean_subspace_err
        );
    }
    match &summary.fit {
        Some(f) => println!("exponent={:.4} intercept={:.4} r2={:.4}", f.slope, f.intercept, f.r_squared),
        None => println!("exponent=n/a (needs 3 horizons with data)"),
    }
    if summary.failed_cells > 0 {
        println!("failed_cells={}", summary.failed_cells);
    }
}

fn cmd_recover(common: &Common) -> Result<(), Failure> {
    let cfg = load(common).map_err(Failure::Config)?;
    let PlanMode::Practical(plan) = cfg.mode else {
        return Err(Failure::Config(Error::InvalidParameter(
            "recover needs a practical plan".into(),
        )));
    };
    let seed = cfg.seeds.seeds()[0];
    let mut env = cfg.environment.with_seed(seed).build().map_err(Failure::Config)?;
    let sampling = plan.sampling_plan();
    sampling.validate(env.d(), env.nu()).map_err(Failure::Config)?;
    env.set_budget(sampling.budget());
    let p1 = run_phase1(
        &mut env,
        &sampling,
        plan.lambda,
        &cfg.constants,
        &cfg.solver,
        cablp_core::harness::algorithm_seed(seed),
    )
    .map_err(Failure::Run)?;
    let summary = p1.result.summary(Some(env.a()));
    let record = serde_json::json!({
        "seed": seed,
        "lambda": p1.lambda,
        "recovery": summary,
        "a_hat": p1.result.a_hat,
        "measurements": p1.bundle,
    });
    write_json(&cfg.output_dir.join("recovery.json"), &record)?;
    println!(
        "queries={} lambda={:.6e} subspace_err={} converged={}",
        env.query_count(),
        p1.lambda,
        summary.subspace_error.map_or("n/a".into(), |e| format!("{e:.6}")),
        summary.converged
    );
    Ok(())
}

fn cmd_conditioning(common: &Common, samples: usize) -> Result<(), Failure> {
    let cfg = load(common).map_err(Failure::Config)?;
    let env = cfg.environment.with_seed(cfg.seeds.seeds()[0]).build().map_err(Failure::Config)?;
    let report = env.estimate_conditioning(samples).map_err(Failure::Config)?;
    println!("{}", serde_json::to_string_pretty(&report).map_err(Error::from)?);
    Ok(())
}

fn cmd_plan(common: &Common) -> Result<(), Failure> {
    let cfg = load(common).map_err(Failure::Config)?;
    let PlanMode::Theory { alpha } = cfg.mode else {
        return Err(Failure::Config(Error::InvalidParameter(
            "plan needs theory mode (--mode theory --alpha A)".into(),
        )));
    };
    let env = cfg.environment.build().map_err(Failure::Config)?;
    let mut plans = Vec::new();
    for &n in &cfg.horizons {
        let inputs = PlanInputs {
            n,
            d: env.d(),
            k: env.k(),
            sigma: env.sigma(),
            c2: env.c2(),
            alpha,
            nu: env.nu(),
        };
        let entry = match plan_parameters(&inputs, &cfg.constants) {
            Ok(tp) => {
                let minimal = (!tp.feasible).then(|| minimal_feasible_n(&inputs, &cfg.constants)).flatten();
                serde_json::json!({ "params": tp, "minimal_feasible_n": minimal })
            }
            Err(e) => serde_json::json!({ "n": n, "status": e.status(), "error": e.to_string() }),
        };
        plans.push(entry);
    }
    println!("{}", serde_json::to_string_pretty(&plans).map_err(Error::from)?);
    Ok(())
}

fn summary_from(path: &Path) -> Result<SweepSummary, Error> {
    if path.extension().is_some_and(|e| e == "json") {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    } else {
        Ok(SweepSummary::from_cells(read_runs_csv(path)?))
    }
}

fn cmd_fit(runs: &Path) -> Result<(), Failure> {
    let summary = summary_from(runs).map_err(Failure::Config)?;
    print_summary(&summary);
    if summary.fit.is_none() {
        return Err(Failure::Run(Error::NoData));
    }
    Ok(())
}

fn cmd_plot(runs: &Path, out: &Path) -> Result<(), Failure> {
    let summary = summary_from(runs).map_err(Failure::Config)?;
    let path = emit_plot_data(&summary, out, "regret").map_err(Failure::Run)?;
    println!("{}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(c) => cmd_run(c),
        Command::Sweep(c) => cmd_sweep(c),
        Command::Recover(c) => cmd_recover(c),
        Command::Conditioning { common, samples } => cmd_conditioning(common, *samples),
        Command::Plan(c) => cmd_plan(c),
        Command::Fit { runs } => cmd_fit(runs),
        Command::Plot { runs, out } => cmd_plot(runs, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e} [{}]", e.status());
            ExitCode::from(2)
        }
        Err(Failure::FailedCells(n)) => {
            eprintln!("{n} cell(s) failed; see runs.csv");
            ExitCode::from(2)
        }
    }
}
