use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mlsa_core::bench::{
    compare, plan_cell, run_replications, write_bias_csv, BenchRecord, BiasStudy, CellKind,
    CompareOptions,
};
use mlsa_core::config::{Algorithm, ExperimentConfig, Fraction, Target};
use mlsa_core::rng::SeedTree;
use mlsa_core::Error;

#[derive(Debug, Parser)]
#[command(
    name = "mlsa",
    version,
    about = "Stochastic approximation of VaR and ES"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory for CSV and report files.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Restrict to these algorithms (sa, nsa, mlsa).
    #[arg(long, global = true, value_delimiter = ',')]
    algo: Vec<Algorithm>,

    /// Restrict to these risk measures (var, es).
    #[arg(long, global = true, value_delimiter = ',')]
    target: Vec<Target>,

    /// Accuracy grid, e.g. `1/32,1/64`.
    #[arg(long, global = true, value_delimiter = ',')]
    eps: Vec<Fraction>,

    /// Number of replications per cell.
    #[arg(long, global = true)]
    reps: Option<u64>,

    /// Run replications in parallel and do not report runtimes as timings.
    #[arg(long, global = true)]
    no_timing: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// One run at the first selected accuracy; prints the estimate and its cost.
    Estimate,
    /// Prints the iteration budgets for every selected accuracy.
    Tune,
    /// Nested SA weak-error study over the configured bias parameters.
    BiasStudy,
    /// RMSE and runtime of every algorithm over the accuracy grid.
    Compare,
}

fn load(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config <path> is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(reps) = cli.reps {
        cfg.replications = reps;
        if let Some(b) = cfg.bias_study.as_mut() {
            b.replications = Some(reps);
        }
    }
    if !cli.algo.is_empty() {
        cfg.algorithms = cli.algo.clone();
    }
    if !cli.target.is_empty() {
        cfg.targets = cli.target.clone();
    }
    if !cli.eps.is_empty() {
        cfg.epsilons = cli.eps.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn estimate(cfg: &ExperimentConfig) -> Result<String, Error> {
    let model = cfg.model.build()?;
    let (algorithm, target, eps) = (cfg.algorithms[0], cfg.targets[0], cfg.epsilons[0].value());
    let plan = plan_cell(cfg, &model, algorithm, target, eps)?;
    let seeds = SeedTree::new(cfg.seed);
    let reps = run_replications(&model, &plan, &seeds, 1, false);
    let run = reps.runs.into_iter().next().expect("one replication")?;
    let mut s = String::new();
    let _ = writeln!(s, "model      {}", model.name());
    let _ = writeln!(s, "algorithm  {algorithm} ({target} tuning), eps = {eps}");
    let _ = writeln!(s, "VaR        {:.6}", run.estimate.xi);
    let _ = writeln!(s, "ES         {:.6}", run.estimate.chi);
    if let Some(t) = model.analytic_truth() {
        let _ = writeln!(s, "exact      VaR {:.6}, ES {:.6}", t.xi, t.chi);
    }
    let _ = writeln!(s, "iterations {}", run.iterations);
    let _ = writeln!(s, "cost       {}", run.inner_draws);
    let _ = writeln!(s, "time       {:.3} s", run.wall_time.as_secs_f64());
    Ok(s)
}

fn tune(cfg: &ExperimentConfig, out: &std::path::Path) -> Result<String, Error> {
    let model = cfg.model.build()?;
    std::fs::create_dir_all(out)?;
    let path = out.join("tune.csv");
    let mut csv = String::from("algorithm,target,epsilon,level,h,iterations,cost,cost_share\n");
    let mut s = String::new();
    for &algorithm in &cfg.algorithms {
        for &target in &cfg.targets {
            for eps in &cfg.epsilons {
                let plan = plan_cell(cfg, &model, algorithm, target, eps.value())?;
                let _ = writeln!(
                    s,
                    "{algorithm}/{target} eps = {eps}: gamma_n = {}/({} + n^{}), total cost {}",
                    plan.schedule.gamma1,
                    plan.schedule.offset,
                    plan.schedule.beta,
                    plan.cost()
                );
                let rows: Vec<(u32, f64, u64, u64)> = match &plan.kind {
                    CellKind::Sa { iterations } => vec![(0, 0.0, *iterations, *iterations)],
                    CellKind::Nsa { bias, iterations } => {
                        vec![(0, bias.h(), *iterations, iterations * bias.inner_count())]
                    }
                    CellKind::Mlsa { allocation } => {
                        for w in &allocation.warnings {
                            let _ = writeln!(s, "  warning: {w}");
                        }
                        allocation
                            .budgets
                            .iter()
                            .enumerate()
                            .map(|(l, &n)| {
                                let l = l as u32;
                                (
                                    l,
                                    allocation.ladder.h(l),
                                    n,
                                    n * allocation.ladder.inner_count(l),
                                )
                            })
                            .collect()
                    }
                };
                let total = plan.cost() as f64;
                let _ = writeln!(
                    s,
                    "  {:>5} {:>12} {:>12} {:>10}",
                    "level", "h", "N", "share"
                );
                for (l, h, n, cost) in rows {
                    let share = cost as f64 / total;
                    let _ = writeln!(s, "  {l:>5} {h:>12.6} {n:>12} {share:>10.4}");
                    let _ = writeln!(
                        csv,
                        "{algorithm},{target},{},{l},{h},{n},{cost},{share}",
                        eps.value()
                    );
                }
            }
        }
    }
    std::fs::write(&path, csv)?;
    let _ = writeln!(s, "wrote {}", path.display());
    Ok(s)
}

fn bias_study(
    cfg: &ExperimentConfig,
    out: &std::path::Path,
    parallel: bool,
) -> Result<String, Error> {
    let model = cfg.model.build()?;
    let study = BiasStudy::from_config(cfg, parallel)?;
    let rows = study.run(&model)?;
    std::fs::create_dir_all(out)?;
    let path = out.join("bias_study.csv");
    write_bias_csv(&rows, &path)?;
    let mut s = format!(
        "{:>10} {:>12} {:>12} {:>12} {:>12} {:>6}\n",
        "h", "xi - xi*", "chi - chi*", "/h (xi)", "/h (chi)", "reps"
    );
    for r in &rows {
        let _ = writeln!(
            s,
            "{:>10.6} {:>12.5} {:>12.5} {:>12.4} {:>12.4} {:>6}",
            r.h,
            r.mean_xi_error,
            r.mean_chi_error,
            r.rescaled_xi_error,
            r.rescaled_chi_error,
            r.replications
        );
    }
    let _ = writeln!(s, "wrote {}", path.display());
    Ok(s)
}

enum Outcome {
    Done(String),
    Diverged(String),
}

fn run(cli: &Cli) -> Result<Outcome, Error> {
    let cfg = load(cli)?;
    match cli.command {
        Command::Estimate => estimate(&cfg).map(Outcome::Done),
        Command::Tune => tune(&cfg, &cli.out).map(Outcome::Done),
        Command::BiasStudy => bias_study(&cfg, &cli.out, cli.no_timing).map(Outcome::Done),
        Command::Compare => {
            let report = compare(
                &cfg,
                CompareOptions {
                    timing: !cli.no_timing,
                },
            )?;
            report.write_all(&cli.out)?;
            let mut text = report.render();
            let _ = writeln!(text, "wrote {}", cli.out.display());
            let bad: Vec<&BenchRecord> = report.divergence_dominated();
            if bad.is_empty() {
                Ok(Outcome::Done(text))
            } else {
                for r in bad {
                    let _ = writeln!(
                        text,
                        "divergence-dominated cell: {}/{} eps = {} ({} of {} diverged)",
                        r.algorithm,
                        r.target,
                        r.epsilon,
                        r.diverged,
                        r.diverged + r.replications
                    );
                }
                Ok(Outcome::Diverged(text))
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Outcome::Done(text)) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Ok(Outcome::Diverged(text)) => {
            print!("{text}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Diverged { .. } => 3,
                Error::Io(_) => 1,
                _ => 2,
            })
        }
    }
}
