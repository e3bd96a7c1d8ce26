//! Replicated experiments: RMSE and runtime per accuracy, bias studies,
//! log-log slope fits and CSV/text reports.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::config::{Algorithm, ExperimentConfig, InitConfig, ScheduleRow, Target};
use crate::engine::{run_mlsa, run_nested_sa, run_sa, LevelInit, SaRunResult, StepSchedule};
use crate::error::{Error, Result};
use crate::measures::EstimatePair;
use crate::models::{AnyModel, LossModel};
use crate::rng::SeedTree;
use crate::samplers::{BiasParam, CoupledSampler, LevelLadder};
use crate::tuning::{es_allocation, level_count, nsa_tuning, var_allocation, Allocation};
use crate::with_model;

/// Root-mean-square deviation of `estimates` from `truth`.
pub fn rmse(estimates: &[f64], truth: f64) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::Empty("estimates"));
    }
    let ss: f64 = estimates.iter().map(|e| (e - truth).powi(2)).sum();
    Ok((ss / estimates.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

impl SlopeFit {
    /// `exp(intercept) x^slope`.
    pub fn predict(&self, x: f64) -> f64 {
        (self.intercept + self.slope * x.ln()).exp()
    }

    /// The `x` at which the fitted line reaches `y`.
    pub fn solve(&self, y: f64) -> f64 {
        ((y.ln() - self.intercept) / self.slope).exp()
    }
}

/// Ordinary least squares of `ln y` on `ln x`.
pub fn fit_loglog_slope(xs: &[f64], ys: &[f64]) -> Result<SlopeFit> {
    if xs.len() != ys.len() {
        return Err(Error::invalid("ys", "must have as many points as xs"));
    }
    if xs.len() < 3 {
        return Err(Error::invalid("xs", "a slope fit needs at least 3 points"));
    }
    if let Some(v) = xs.iter().chain(ys).find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::invalid("xs/ys", format!("{v} is not positive")));
    }
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("xs", "all abscissae coincide"));
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        (sxy * sxy / (sxx * syy)).min(1.0)
    };
    Ok(SlopeFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    })
}

/// How one replication of a cell is run.
#[derive(Debug, Clone, PartialEq)]
pub enum CellKind {
    Sa { iterations: u64 },
    Nsa { bias: BiasParam, iterations: u64 },
    Mlsa { allocation: Allocation },
}

/// Fully resolved parameters of one `(algorithm, target, epsilon)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellPlan {
    pub algorithm: Algorithm,
    pub target: Target,
    pub epsilon: f64,
    pub schedule: StepSchedule,
    pub init: EstimatePair,
    pub kind: CellKind,
}

impl CellPlan {
    /// Simulation cost of one replication: exact draws for SA, inner payoffs otherwise.
    pub fn cost(&self) -> u64 {
        match &self.kind {
            CellKind::Sa { iterations } => *iterations,
            CellKind::Nsa { bias, iterations } => iterations * bias.inner_count(),
            CellKind::Mlsa { allocation } => allocation.cost(),
        }
    }
}

fn ladder_for(row: &ScheduleRow, m: u64, epsilon: f64) -> Result<LevelLadder> {
    let h0 = row.h0.ok_or_else(|| {
        Error::Config(format!("multilevel schedule at eps = {epsilon} has no h0"))
    })?;
    let h0 = BiasParam::from_h(h0.value())?;
    let levels = match row.levels {
        Some(l) => l,
        None => level_count(h0, m, epsilon)?,
    };
    LevelLadder::new(h0, m, levels)
}

/// Resolves the schedule, budgets and initial values of one cell.
pub fn plan_cell(
    cfg: &ExperimentConfig,
    model: &AnyModel,
    algorithm: Algorithm,
    target: Target,
    epsilon: f64,
) -> Result<CellPlan> {
    let row = cfg.schedule_for(algorithm, target, epsilon)?;
    let schedule = StepSchedule::new(row.gamma1, cfg.beta, row.offset)?;
    let kind = match algorithm {
        Algorithm::Sa => CellKind::Sa {
            iterations: nsa_tuning(epsilon, cfg.beta)?.1,
        },
        Algorithm::Nsa => {
            let (bias, iterations) = nsa_tuning(epsilon, cfg.beta)?;
            CellKind::Nsa { bias, iterations }
        }
        Algorithm::Mlsa => {
            let ladder = ladder_for(&row, cfg.m, epsilon)?;
            let calibration = cfg.calibration.for_target(target);
            let allocation = match target {
                Target::Var => var_allocation(
                    epsilon,
                    cfg.beta,
                    ladder,
                    cfg.scenario,
                    row.gamma1,
                    calibration,
                )?,
                Target::Es => es_allocation(epsilon, ladder, calibration)?,
            };
            CellKind::Mlsa { allocation }
        }
    };
    Ok(CellPlan {
        algorithm,
        target,
        epsilon,
        schedule,
        init: cfg.init.resolve(model)?,
        kind,
    })
}

/// Runs replication `replication` of `plan` on the stream keyed by `(seed, replication)`.
pub fn run_cell_replication<M: LossModel>(
    model: &M,
    plan: &CellPlan,
    seeds: &SeedTree,
    replication: u64,
) -> Result<SaRunResult> {
    let seed = seeds.replication(replication);
    let level = model.risk_level();
    match &plan.kind {
        CellKind::Sa { iterations } => {
            if !model.supports_exact_loss() {
                return Err(Error::Config(
                    "classical SA needs an exact loss sampler".into(),
                ));
            }
            let draw = |rng: &mut _| model.draw_exact_loss(rng).unwrap_or(f64::NAN);
            run_sa(
                draw,
                *iterations,
                &plan.schedule,
                plan.init,
                level,
                &mut seed.single(),
            )
        }
        CellKind::Nsa { bias, iterations } => run_nested_sa(
            model,
            *bias,
            *iterations,
            &plan.schedule,
            plan.init,
            level,
            &mut seed.single(),
        ),
        CellKind::Mlsa { allocation } => {
            let inits = vec![LevelInit::both(plan.init); allocation.budgets.len()];
            run_mlsa(
                model,
                &allocation.ladder,
                &allocation.budgets,
                &plan.schedule,
                &inits,
                level,
                &seed,
            )
            .map(|run| run.result)
        }
    }
}

/// Outcome of every replication of a cell, in replication order.
#[derive(Debug, Clone, PartialEq)]
pub struct Replications {
    pub runs: Vec<Result<SaRunResult>>,
}

impl Replications {
    pub fn successes(&self) -> impl Iterator<Item = &SaRunResult> {
        self.runs.iter().filter_map(|r| r.as_ref().ok())
    }

    pub fn diverged(&self) -> usize {
        self.runs
            .iter()
            .filter(|r| r.as_ref().is_err_and(Error::is_divergence))
            .count()
    }

    /// The first non-divergence error, which aborts the experiment.
    pub fn hard_error(&self) -> Option<&Error> {
        self.runs
            .iter()
            .filter_map(|r| r.as_ref().err())
            .find(|e| !e.is_divergence())
    }
}

fn for_each_replication<T: Send>(
    replications: u64,
    parallel: bool,
    job: impl Fn(u64) -> T + Sync + Send,
) -> Vec<T> {
    #[cfg(feature = "parallel")]
    if parallel {
        use rayon::prelude::*;
        return (0..replications).into_par_iter().map(job).collect();
    }
    let _ = parallel;
    (0..replications).map(job).collect()
}

/// Runs `replications` independent replications of `plan`.
///
/// Results depend only on `(seeds, replication index)`, so running them in
/// parallel changes nothing but wall time.
pub fn run_replications(
    model: &AnyModel,
    plan: &CellPlan,
    seeds: &SeedTree,
    replications: u64,
    parallel: bool,
) -> Replications {
    let runs = with_model!(model, m => for_each_replication(replications, parallel, |r| {
        run_cell_replication(m, plan, seeds, r)
    }));
    Replications { runs }
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRecord {
    pub algorithm: Algorithm,
    pub target: Target,
    pub epsilon: f64,
    /// `None` when every replication diverged.
    pub rmse: Option<f64>,
    pub mean_runtime_s: Option<f64>,
    pub mean_cost: f64,
    /// Replications that finished.
    pub replications: u64,
    pub diverged: u64,
}

impl BenchRecord {
    pub fn summarize(plan: &CellPlan, reps: &Replications, truth: EstimatePair) -> Result<Self> {
        if let Some(e) = reps.hard_error() {
            return Err(e.clone());
        }
        let ok: Vec<&SaRunResult> = reps.successes().collect();
        let estimates: Vec<f64> = ok.iter().map(|r| plan.target.pick(r.estimate)).collect();
        let diverged = reps.diverged() as u64;
        if diverged > 0 {
            log::warn!(
                "{}/{} eps = {}: {diverged} of {} replications diverged and were excluded",
                plan.algorithm,
                plan.target,
                plan.epsilon,
                reps.runs.len()
            );
        }
        let mean = |v: Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        Ok(Self {
            algorithm: plan.algorithm,
            target: plan.target,
            epsilon: plan.epsilon,
            rmse: rmse(&estimates, plan.target.pick(truth)).ok(),
            mean_runtime_s: mean(ok.iter().map(|r| r.wall_time.as_secs_f64()).collect()),
            mean_cost: mean(ok.iter().map(|r| r.inner_draws as f64).collect()).unwrap_or(0.0),
            replications: ok.len() as u64,
            diverged,
        })
    }

    /// More than half of the replications diverged.
    pub fn divergence_dominated(&self) -> bool {
        self.diverged > self.replications
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SlopeKind {
    RuntimeVsEpsilon,
    RuntimeVsRmse,
    RmseVsEpsilon,
}

impl SlopeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SlopeKind::RuntimeVsEpsilon => "runtime_vs_epsilon",
            SlopeKind::RuntimeVsRmse => "runtime_vs_rmse",
            SlopeKind::RmseVsEpsilon => "rmse_vs_epsilon",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeRow {
    pub algorithm: Algorithm,
    pub target: Target,
    pub kind: SlopeKind,
    pub fit: SlopeFit,
    pub points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompareOptions {
    /// Measure wall time on one thread; when false, replications run in parallel.
    pub timing: bool,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self { timing: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub model: &'static str,
    pub truth: EstimatePair,
    pub records: Vec<BenchRecord>,
    pub slopes: Vec<SlopeRow>,
    pub timing: bool,
}

fn model_truth(model: &AnyModel) -> Result<EstimatePair> {
    model.analytic_truth().ok_or_else(|| {
        Error::Config(format!(
            "model `{}` has no closed-form (VaR, ES)",
            model.name()
        ))
    })
}

/// Runs every configured `(algorithm, target, epsilon)` cell.
pub fn compare(cfg: &ExperimentConfig, opts: CompareOptions) -> Result<CompareReport> {
    cfg.validate()?;
    let model = cfg.model.build()?;
    let truth = model_truth(&model)?;
    let seeds = SeedTree::new(cfg.seed);
    let mut records = Vec::new();
    for &algorithm in &cfg.algorithms {
        for &target in &cfg.targets {
            for eps in &cfg.epsilons {
                let plan = plan_cell(cfg, &model, algorithm, target, eps.value())?;
                log::info!(
                    "running {algorithm}/{target} eps = {eps}, cost {}",
                    plan.cost()
                );
                let reps = run_replications(&model, &plan, &seeds, cfg.replications, !opts.timing);
                records.push(BenchRecord::summarize(&plan, &reps, truth)?);
            }
        }
    }
    let slopes = fit_slopes(&records);
    Ok(CompareReport {
        model: model.name(),
        truth,
        records,
        slopes,
        timing: opts.timing,
    })
}

/// Slope fits per algorithm and target, skipping cells that fully diverged.
pub fn fit_slopes(records: &[BenchRecord]) -> Vec<SlopeRow> {
    let mut out = Vec::new();
    for algorithm in Algorithm::ALL {
        for target in Target::ALL {
            let cells: Vec<&BenchRecord> = records
                .iter()
                .filter(|r| r.algorithm == algorithm && r.target == target)
                .filter(|r| r.rmse.is_some_and(|e| e > 0.0))
                .collect();
            let eps: Vec<f64> = cells.iter().map(|r| r.epsilon).collect();
            let err: Vec<f64> = cells.iter().filter_map(|r| r.rmse).collect();
            let time: Vec<f64> = cells.iter().filter_map(|r| r.mean_runtime_s).collect();
            let mut push = |kind, xs: &[f64], ys: &[f64]| {
                if let Ok(fit) = fit_loglog_slope(xs, ys) {
                    out.push(SlopeRow {
                        algorithm,
                        target,
                        kind,
                        fit,
                        points: xs.len(),
                    });
                }
            };
            push(SlopeKind::RmseVsEpsilon, &eps, &err);
            if time.len() == cells.len() {
                push(SlopeKind::RuntimeVsEpsilon, &eps, &time);
                push(SlopeKind::RuntimeVsRmse, &err, &time);
            }
        }
    }
    out
}

impl CompareReport {
    pub fn slope(&self, algorithm: Algorithm, target: Target, kind: SlopeKind) -> Option<SlopeFit> {
        self.slopes
            .iter()
            .find(|s| s.algorithm == algorithm && s.target == target && s.kind == kind)
            .map(|s| s.fit)
    }

    pub fn divergence_dominated(&self) -> Vec<&BenchRecord> {
        self.records
            .iter()
            .filter(|r| r.divergence_dominated())
            .collect()
    }

    /// Fixed-column comparison table.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "algorithm",
            "target",
            "epsilon",
            "rmse",
            "mean_runtime_s",
            "mean_cost",
            "replications",
        ])?;
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
        for r in &self.records {
            w.write_record([
                r.algorithm.as_str().to_string(),
                r.target.as_str().to_string(),
                r.epsilon.to_string(),
                opt(r.rmse),
                opt(r.mean_runtime_s),
                r.mean_cost.to_string(),
                r.replications.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_slopes_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "algorithm",
            "target",
            "fit",
            "slope",
            "intercept",
            "r_squared",
            "points",
        ])?;
        for s in &self.slopes {
            w.write_record([
                s.algorithm.as_str().to_string(),
                s.target.as_str().to_string(),
                s.kind.as_str().to_string(),
                s.fit.slope.to_string(),
                s.fit.intercept.to_string(),
                s.fit.r_squared.to_string(),
                s.points.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "model {}: VaR = {:.6}, ES = {:.6}",
            self.model, self.truth.xi, self.truth.chi
        );
        if !self.timing {
            let _ = writeln!(
                s,
                "timing disabled: runtimes were measured under parallel load"
            );
        }
        let _ = writeln!(
            s,
            "\n{:<5} {:<4} {:>10} {:>12} {:>12} {:>14} {:>5} {:>5}",
            "algo", "tgt", "epsilon", "rmse", "runtime_s", "cost", "reps", "div"
        );
        for r in &self.records {
            let _ = writeln!(
                s,
                "{:<5} {:<4} {:>10.6} {:>12} {:>12} {:>14.0} {:>5} {:>5}",
                r.algorithm.as_str(),
                r.target.as_str(),
                r.epsilon,
                r.rmse.map_or("missing".into(), |e| format!("{e:.3e}")),
                r.mean_runtime_s
                    .map_or("missing".into(), |t| format!("{t:.3e}")),
                r.mean_cost,
                r.replications,
                r.diverged
            );
        }
        let _ = writeln!(s, "\nlog-log slopes");
        for f in &self.slopes {
            let _ = writeln!(
                s,
                "{:<5} {:<4} {:<20} {:>8.3}  (r2 = {:.3}, {} points)",
                f.algorithm.as_str(),
                f.target.as_str(),
                f.kind.as_str(),
                f.fit.slope,
                f.fit.r_squared,
                f.points
            );
        }
        s
    }

    /// Writes `compare.csv`, `slopes.csv` and `report.txt` into `dir`.
    pub fn write_all(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_csv(&dir.join("compare.csv"))?;
        self.write_slopes_csv(&dir.join("slopes.csv"))?;
        std::fs::write(dir.join("report.txt"), self.render())?;
        Ok(())
    }
}

/// Mean centered errors of nested SA at one bias parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BiasRow {
    pub h: f64,
    pub mean_xi_error: f64,
    pub mean_chi_error: f64,
    pub rescaled_xi_error: f64,
    pub rescaled_chi_error: f64,
    pub replications: u64,
    pub diverged: u64,
}

/// Settings of a weak-error study.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasStudy {
    pub h: Vec<BiasParam>,
    pub iterations: u64,
    pub schedule: StepSchedule,
    pub init: InitConfig,
    pub replications: u64,
    pub seed: u64,
    pub parallel: bool,
}

impl BiasStudy {
    pub fn from_config(cfg: &ExperimentConfig, parallel: bool) -> Result<Self> {
        let b = cfg
            .bias_study
            .as_ref()
            .ok_or_else(|| Error::Config("no [bias_study] section".into()))?;
        Ok(Self {
            h: b.h
                .iter()
                .map(|h| BiasParam::from_h(h.value()))
                .collect::<Result<_>>()?,
            iterations: b.iterations,
            schedule: StepSchedule::new(b.gamma1, 1.0, b.offset)?,
            init: cfg.init,
            replications: cfg.bias_replications(),
            seed: cfg.seed,
            parallel,
        })
    }

    /// Runs `replications` nested chains per bias parameter and averages
    /// their terminal iterates.
    pub fn run(&self, model: &AnyModel) -> Result<Vec<BiasRow>> {
        let truth = model_truth(model)?;
        let init = self.init.resolve(model)?;
        let seeds = SeedTree::new(self.seed);
        let level = model.risk_level();
        let mut rows = Vec::with_capacity(self.h.len());
        for &bias in &self.h {
            let runs = with_model!(model, m => for_each_replication(self.replications, self.parallel, |r| {
                let mut rng = seeds.replication(r).single();
                run_nested_sa(m, bias, self.iterations, &self.schedule, init, level, &mut rng)
            }));
            let reps = Replications { runs };
            if let Some(e) = reps.hard_error() {
                return Err(e.clone());
            }
            let ok: Vec<&SaRunResult> = reps.successes().collect();
            if ok.is_empty() {
                return Err(Error::Config(format!(
                    "every replication at h = {} diverged",
                    bias.h()
                )));
            }
            let n = ok.len() as f64;
            let dxi = ok.iter().map(|r| r.estimate.xi).sum::<f64>() / n - truth.xi;
            let dchi = ok.iter().map(|r| r.estimate.chi).sum::<f64>() / n - truth.chi;
            rows.push(BiasRow {
                h: bias.h(),
                mean_xi_error: dxi,
                mean_chi_error: dchi,
                rescaled_xi_error: dxi / bias.h(),
                rescaled_chi_error: dchi / bias.h(),
                replications: ok.len() as u64,
                diverged: reps.diverged() as u64,
            });
        }
        Ok(rows)
    }
}

pub fn write_bias_csv(rows: &[BiasRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Sample statistics of the level difference `X_{h_l} - X_{h_{l-1}}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevelVariance {
    pub level: u32,
    pub h: f64,
    pub mean: f64,
    pub variance: f64,
}

/// Mean and variance of the coupled level differences at levels `1..=L`,
/// `pairs` draws each, level `l` on stream `l` of `seed`.
pub fn level_variances<M: LossModel>(
    model: &M,
    ladder: &LevelLadder,
    pairs: u64,
    seed: u64,
) -> Result<Vec<LevelVariance>> {
    if pairs < 2 {
        return Err(Error::invalid("pairs", "at least two pairs are needed"));
    }
    let seeds = SeedTree::new(seed).replication(0);
    (1..=ladder.levels())
        .map(|level| {
            let mut sampler = CoupledSampler::new(model, *ladder, level)?;
            let mut rng = seeds.level(level);
            let (mut mean, mut m2) = (0.0, 0.0);
            for i in 1..=pairs {
                let pair = sampler.sample(&mut rng);
                let d = pair.fine - pair.coarse;
                let delta = d - mean;
                mean += delta / i as f64;
                m2 += delta * (d - mean);
            }
            Ok(LevelVariance {
                level,
                h: ladder.h(level),
                mean,
                variance: m2 / (pairs - 1) as f64,
            })
        })
        .collect()
}

/// Smallest calibration in `candidates` whose pilot RMSE is at most
/// `factor * epsilon` for `target` at every pilot accuracy; `None` if none qualifies.
pub fn pilot_calibration(
    cfg: &ExperimentConfig,
    target: Target,
    epsilons: &[f64],
    candidates: &[f64],
    factor: f64,
    replications: u64,
) -> Result<Option<f64>> {
    let model = cfg.model.build()?;
    let truth = model_truth(&model)?;
    let seeds = SeedTree::new(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    for &c in candidates {
        let mut trial = cfg.clone();
        match target {
            Target::Var => trial.calibration.var = c,
            Target::Es => trial.calibration.es = c,
        }
        let mut ok = true;
        for &eps in epsilons {
            let plan = plan_cell(&trial, &model, Algorithm::Mlsa, target, eps)?;
            let reps = run_replications(&model, &plan, &seeds, replications, true);
            let rec = BenchRecord::summarize(&plan, &reps, truth)?;
            log::info!("pilot {target} K = {c} eps = {eps}: rmse {:?}", rec.rmse);
            if !rec.rmse.is_some_and(|e| e <= factor * eps) {
                ok = false;
                break;
            }
        }
        if ok {
            return Ok(Some(c));
        }
    }
    Ok(None)
}
