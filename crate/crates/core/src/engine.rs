//! Two-time-scale stochastic approximation of (VaR, ES).
//!
//! The VaR iterate moves with the step sequence `gamma_n`, the ES iterate with
//! `1/n`, so `chi_n` is the running mean of the objective's integrand
//! evaluated along the VaR path. Three drivers share one recursion:
//! classical SA on exact losses, nested SA on `X_h`, and multilevel SA which
//! telescopes nested chains over a geometric bias ladder.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{h1, h2, EstimatePair, RiskLevel};
use crate::models::LossModel;
use crate::rng::{ReplicationSeed, StreamRng};
use crate::samplers::{BiasParam, CoupledSampler, LevelLadder, NestedSampler};

/// Runs abort once `|xi|` exceeds this bound.
pub const DIVERGENCE_BOUND: f64 = 1e9;

/// Learning rate `gamma_n = gamma1 / (offset + n^beta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub gamma1: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub offset: f64,
}

fn default_beta() -> f64 {
    1.0
}

impl StepSchedule {
    pub fn new(gamma1: f64, beta: f64, offset: f64) -> Result<Self> {
        let schedule = Self {
            gamma1,
            beta,
            offset,
        };
        schedule.validate()?;
        Ok(schedule)
    }

    /// `gamma1 / (offset + n)`.
    pub fn harmonic(gamma1: f64, offset: f64) -> Result<Self> {
        Self::new(gamma1, 1.0, offset)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma1 > 0.0 && self.gamma1.is_finite()) {
            return Err(Error::invalid(
                "gamma1",
                format!("{} must be positive", self.gamma1),
            ));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::invalid(
                "beta",
                format!("{} is not in (0, 1]", self.beta),
            ));
        }
        if !(self.offset >= 0.0 && self.offset.is_finite()) {
            return Err(Error::invalid(
                "offset",
                format!("{} must be >= 0", self.offset),
            ));
        }
        Ok(())
    }

    /// Step `gamma_n` for `n >= 1`.
    #[inline]
    pub fn gamma(&self, n: u64) -> f64 {
        let n = n as f64;
        let denom = if self.beta == 1.0 {
            n
        } else {
            n.powf(self.beta)
        };
        self.gamma1 / (self.offset + denom)
    }
}

/// One (VaR, ES) chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmChain {
    state: EstimatePair,
    steps: u64,
}

impl RmChain {
    pub fn new(init: EstimatePair) -> Self {
        Self {
            state: init,
            steps: 0,
        }
    }

    pub fn state(&self) -> EstimatePair {
        self.state
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Consumes the loss sample `x` with step `gamma`, using `1/(n+1)` for ES.
    #[inline]
    pub fn step_with(&mut self, x: f64, gamma: f64, level: RiskLevel) -> Result<()> {
        let EstimatePair { xi, chi } = self.state;
        let next = self.steps + 1;
        let new_xi = xi - gamma * h1(xi, x, level);
        let new_chi = chi - h2(xi, chi, x, level) / next as f64;
        debug_assert!(
            (new_xi - xi).abs()
                <= level.k_alpha() * gamma * (1.0 + 1e-12) + 4.0 * f64::EPSILON * xi.abs(),
            "VaR step exceeds k_alpha * gamma"
        );
        if !(new_xi.is_finite() && new_chi.is_finite()) || new_xi.abs() > DIVERGENCE_BOUND {
            return Err(Error::Diverged {
                iteration: next,
                xi: new_xi,
                chi: new_chi,
            });
        }
        self.state = EstimatePair::new(new_xi, new_chi);
        self.steps = next;
        Ok(())
    }

    #[inline]
    pub fn step(&mut self, x: f64, schedule: &StepSchedule, level: RiskLevel) -> Result<()> {
        let gamma = schedule.gamma(self.steps + 1);
        self.step_with(x, gamma, level)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaRunResult {
    pub estimate: EstimatePair,
    pub iterations: u64,
    /// Simulation cost: exact-loss draws for SA, inner payoffs otherwise.
    pub inner_draws: u64,
    pub wall_time: Duration,
}

/// Wall clock that degrades to zero on targets without a monotonic clock.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Stopwatch {
    #[cfg(not(target_arch = "wasm32"))]
    start: std::time::Instant,
}

impl Stopwatch {
    pub(crate) fn start() -> Self {
        Self {
            #[cfg(not(target_arch = "wasm32"))]
            start: std::time::Instant::now(),
        }
    }

    pub(crate) fn elapsed(&self) -> Duration {
        #[cfg(not(target_arch = "wasm32"))]
        {
            self.start.elapsed()
        }
        #[cfg(target_arch = "wasm32")]
        {
            Duration::ZERO
        }
    }
}

fn check_run(n: u64, init: EstimatePair) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("n", "at least one iteration is required"));
    }
    init.ensure_finite().map(|_| ())
}

fn drive(
    n: u64,
    schedule: &StepSchedule,
    init: EstimatePair,
    level: RiskLevel,
    rng: &mut StreamRng,
    mut draw: impl FnMut(&mut StreamRng) -> f64,
) -> Result<EstimatePair> {
    let mut chain = RmChain::new(init);
    for _ in 0..n {
        let x = draw(rng);
        chain.step(x, schedule, level)?;
    }
    Ok(chain.state())
}

/// Classical SA driven by an exact loss generator.
pub fn run_sa(
    loss: impl FnMut(&mut StreamRng) -> f64,
    n: u64,
    schedule: &StepSchedule,
    init: EstimatePair,
    level: RiskLevel,
    rng: &mut StreamRng,
) -> Result<SaRunResult> {
    check_run(n, init)?;
    let clock = Stopwatch::start();
    let estimate = drive(n, schedule, init, level, rng, loss)?;
    Ok(SaRunResult {
        estimate,
        iterations: n,
        inner_draws: n,
        wall_time: clock.elapsed(),
    })
}

/// Nested SA: the recursion fed with `X_h` samples.
pub fn run_nested_sa<M: LossModel>(
    model: &M,
    bias: BiasParam,
    n: u64,
    schedule: &StepSchedule,
    init: EstimatePair,
    level: RiskLevel,
    rng: &mut StreamRng,
) -> Result<SaRunResult> {
    check_run(n, init)?;
    let clock = Stopwatch::start();
    let mut sampler = NestedSampler::new(model, bias);
    let estimate = drive(n, schedule, init, level, rng, |r| sampler.sample(r))?;
    Ok(SaRunResult {
        estimate,
        iterations: n,
        inner_draws: sampler.inner_draws(),
        wall_time: clock.elapsed(),
    })
}

/// Initial values of the two chains at one level; `coarse` is unused at level 0.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LevelInit {
    pub coarse: EstimatePair,
    pub fine: EstimatePair,
}

impl LevelInit {
    pub fn both(init: EstimatePair) -> Self {
        Self {
            coarse: init,
            fine: init,
        }
    }
}

/// Terminal iterates of one level of the multilevel scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelOutcome {
    pub level: u32,
    pub fine: EstimatePair,
    /// `None` at level 0.
    pub coarse: Option<EstimatePair>,
    pub iterations: u64,
    pub inner_draws: u64,
}

impl LevelOutcome {
    /// Contribution to the telescoping sum.
    pub fn correction(&self) -> EstimatePair {
        match self.coarse {
            Some(coarse) => self.fine - coarse,
            None => self.fine,
        }
    }
}

/// Runs level `level` of the multilevel scheme for `n` steps on `rng`.
///
/// Level 0 is a nested chain at bias `h_0`; higher levels run a coarse and a
/// fine chain fed by the same coupled samples and the same step sequence.
#[allow(clippy::too_many_arguments)]
pub fn run_mlsa_level<M: LossModel>(
    model: &M,
    ladder: &LevelLadder,
    level: u32,
    n: u64,
    schedule: &StepSchedule,
    init: LevelInit,
    risk: RiskLevel,
    rng: &mut StreamRng,
) -> Result<LevelOutcome> {
    check_run(n, init.fine)?;
    if level == 0 {
        let mut sampler = NestedSampler::new(model, ladder.h0());
        let fine = drive(n, schedule, init.fine, risk, rng, |r| sampler.sample(r))?;
        return Ok(LevelOutcome {
            level,
            fine,
            coarse: None,
            iterations: n,
            inner_draws: sampler.inner_draws(),
        });
    }
    init.coarse.ensure_finite()?;
    let mut sampler = CoupledSampler::new(model, *ladder, level)?;
    let mut coarse = RmChain::new(init.coarse);
    let mut fine = RmChain::new(init.fine);
    for k in 1..=n {
        let pair = sampler.sample(rng);
        let gamma = schedule.gamma(k);
        coarse.step_with(pair.coarse, gamma, risk)?;
        fine.step_with(pair.fine, gamma, risk)?;
    }
    Ok(LevelOutcome {
        level,
        fine: fine.state(),
        coarse: Some(coarse.state()),
        iterations: n,
        inner_draws: sampler.inner_draws(),
    })
}

/// Sums level corrections in level order, whatever order they were computed in.
pub fn combine_levels(outcomes: &[LevelOutcome]) -> EstimatePair {
    let mut sorted: Vec<&LevelOutcome> = outcomes.iter().collect();
    sorted.sort_by_key(|o| o.level);
    sorted
        .into_iter()
        .fold(EstimatePair::ZERO, |acc, o| acc + o.correction())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlsaRun {
    pub result: SaRunResult,
    pub levels: Vec<LevelOutcome>,
}

/// Multilevel SA over `ladder` with per-level budgets `N_0..=N_L`.
///
/// Level `l` draws from `seed.level(l)`, so levels are independent and the
/// outcome does not depend on execution order.
#[allow(clippy::too_many_arguments)]
pub fn run_mlsa<M: LossModel>(
    model: &M,
    ladder: &LevelLadder,
    budgets: &[u64],
    schedule: &StepSchedule,
    inits: &[LevelInit],
    risk: RiskLevel,
    seed: &ReplicationSeed,
) -> Result<MlsaRun> {
    let expected = ladder.levels() as usize + 1;
    if budgets.len() != expected {
        return Err(Error::invalid(
            "budgets",
            format!(
                "expected {expected} per-level budgets, got {}",
                budgets.len()
            ),
        ));
    }
    if inits.len() != expected {
        return Err(Error::invalid(
            "inits",
            format!(
                "expected {expected} per-level initialisations, got {}",
                inits.len()
            ),
        ));
    }
    if let Some(l) = budgets.iter().position(|&n| n == 0) {
        return Err(Error::invalid(
            "budgets",
            format!("level {l} has no iterations"),
        ));
    }
    let clock = Stopwatch::start();
    let mut levels = Vec::with_capacity(expected);
    for l in 0..=ladder.levels() {
        let mut rng = seed.level(l);
        let i = l as usize;
        levels.push(run_mlsa_level(
            model, ladder, l, budgets[i], schedule, inits[i], risk, &mut rng,
        )?);
    }
    let estimate = combine_levels(&levels);
    Ok(MlsaRun {
        result: SaRunResult {
            estimate,
            iterations: budgets.iter().sum(),
            inner_draws: levels.iter().map(|o| o.inner_draws).sum(),
            wall_time: clock.elapsed(),
        },
        levels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::v_integrand;
    use crate::models::{option_phi, OptionModel, OptionParams};
    use crate::rng::SeedTree;
    use crate::samplers::sample_nested;

    fn option_model() -> OptionModel {
        OptionModel::new(OptionParams::new(0.5, 0.975).unwrap()).unwrap()
    }

    fn level(alpha: f64) -> RiskLevel {
        RiskLevel::new(alpha).unwrap()
    }

    #[test]
    fn schedule_validation_and_values() {
        assert!(StepSchedule::new(0.0, 1.0, 0.0).is_err());
        assert!(StepSchedule::new(1.0, 0.0, 0.0).is_err());
        assert!(StepSchedule::new(1.0, 1.5, 0.0).is_err());
        assert!(StepSchedule::new(1.0, 1.0, -1.0).is_err());
        let s = StepSchedule::harmonic(1.0, 100.0).unwrap();
        assert_eq!(s.gamma(1), 1.0 / 101.0);
        let s = StepSchedule::new(2.0, 0.5, 0.0).unwrap();
        assert_eq!(s.gamma(4), 1.0);
    }

    #[test]
    fn schedule_non_increasing() {
        for s in [
            StepSchedule::new(0.1, 1.0, 1e4).unwrap(),
            StepSchedule::new(3.0, 0.6, 0.0).unwrap(),
            StepSchedule::new(1.0, 0.75, 7.5).unwrap(),
        ] {
            let mut prev = f64::INFINITY;
            for n in 1..10_000 {
                let g = s.gamma(n);
                assert!(g > 0.0 && g <= prev);
                prev = g;
            }
        }
    }

    #[test]
    fn single_step_identity() {
        let lv = level(0.9);
        let init = EstimatePair::new(0.4, 0.0);
        let mut rng = StreamRng::from_seed_u64(1);
        let mut probe = rng.clone();
        let sched = StepSchedule::harmonic(7.0, 0.0).unwrap();
        let out = run_sa(|r| r.standard_normal(), 1, &sched, init, lv, &mut rng).unwrap();
        let x = probe.standard_normal();
        assert_eq!(out.estimate.chi, v_integrand(0.4, x, lv));
        assert_eq!(out.inner_draws, 1);
    }

    #[test]
    fn zero_stream_fixed_point() {
        let lv = level(0.5);
        let sched = StepSchedule::harmonic(1.0, 0.0).unwrap();
        let mut rng = StreamRng::from_seed_u64(1);
        let out = run_sa(|_| 0.0, 1000, &sched, EstimatePair::ZERO, lv, &mut rng).unwrap();
        // the VaR iterate oscillates around 0 within one step size
        assert!(out.estimate.xi.abs() <= 1.0);
        assert!(out.estimate.chi.abs() < 0.01, "{}", out.estimate.chi);
    }

    #[test]
    fn zero_iterations_rejected() {
        let sched = StepSchedule::harmonic(1.0, 0.0).unwrap();
        let mut rng = StreamRng::from_seed_u64(1);
        assert!(run_sa(|_| 0.0, 0, &sched, EstimatePair::ZERO, level(0.5), &mut rng).is_err());
        let bad = EstimatePair::new(f64::NAN, 0.0);
        assert!(run_sa(|_| 0.0, 3, &sched, bad, level(0.5), &mut rng).is_err());
    }

    #[test]
    fn divergence_is_reported_with_iteration() {
        let sched = StepSchedule::harmonic(1.0, 0.0).unwrap();
        let mut rng = StreamRng::from_seed_u64(1);
        let mut k = 0u64;
        let err = run_sa(
            |_| {
                k += 1;
                if k == 5 {
                    f64::INFINITY
                } else {
                    0.0
                }
            },
            10,
            &sched,
            EstimatePair::ZERO,
            level(0.5),
            &mut rng,
        )
        .unwrap_err();
        assert!(
            matches!(err, Error::Diverged { iteration: 5, .. }),
            "{err:?}"
        );

        let huge = StepSchedule::harmonic(1e12, 0.0).unwrap();
        let err = run_sa(
            |_| 1e20,
            10,
            &huge,
            EstimatePair::ZERO,
            level(0.5),
            &mut rng,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Diverged { iteration: 1, .. }));
    }

    #[test]
    fn chi_is_running_mean_of_integrand() {
        let lv = level(0.975);
        let sched = StepSchedule::harmonic(1.0, 100.0).unwrap();
        let mut chain = RmChain::new(EstimatePair::ZERO);
        let mut rng = StreamRng::from_seed_u64(3);
        let mut terms = 0.0;
        let n = 50_000;
        for _ in 0..n {
            let x = 0.5 * (rng.standard_normal().powi(2) - 1.0);
            terms += v_integrand(chain.state().xi, x, lv);
            chain.step(x, &sched, lv).unwrap();
        }
        let mean = terms / n as f64;
        assert!((chain.state().chi - mean).abs() <= 1e-10 * mean.abs());
    }

    #[test]
    fn var_step_bounded_by_k_alpha() {
        let lv = level(0.975);
        let sched = StepSchedule::harmonic(2.0, 10.0).unwrap();
        let mut chain = RmChain::new(EstimatePair::ZERO);
        let mut rng = StreamRng::from_seed_u64(3);
        for n in 1..20_000u64 {
            let before = chain.state().xi;
            chain.step(rng.standard_normal() * 3.0, &sched, lv).unwrap();
            assert!(
                (chain.state().xi - before).abs() <= lv.k_alpha() * sched.gamma(n) * (1.0 + 1e-12)
            );
        }
    }

    #[test]
    fn nested_with_one_inner_draw_equals_sa() {
        let model = option_model();
        let lv = model.risk_level();
        let sched = StepSchedule::harmonic(1.0, 100.0).unwrap();
        let tree = SeedTree::new(2024);
        let p = *model.params();
        let sa = run_sa(
            |r| {
                let y = r.standard_normal();
                let z = r.standard_normal();
                -1.0 - option_phi(y, z, &p)
            },
            20_000,
            &sched,
            EstimatePair::ZERO,
            lv,
            &mut tree.replication(0).single(),
        )
        .unwrap();
        let nsa = run_nested_sa(
            &model,
            BiasParam::new(1).unwrap(),
            20_000,
            &sched,
            EstimatePair::ZERO,
            lv,
            &mut tree.replication(0).single(),
        )
        .unwrap();
        assert_eq!(sa.estimate.xi.to_bits(), nsa.estimate.xi.to_bits());
        assert_eq!(sa.estimate.chi.to_bits(), nsa.estimate.chi.to_bits());
        assert_eq!(nsa.inner_draws, 20_000);
    }

    #[test]
    fn nested_sa_accepts_sampler_closure() {
        let model = option_model();
        let bias = BiasParam::new(5).unwrap();
        let sched = StepSchedule::harmonic(1.0, 100.0).unwrap();
        let lv = model.risk_level();
        let a = run_nested_sa(
            &model,
            bias,
            3000,
            &sched,
            EstimatePair::ZERO,
            lv,
            &mut StreamRng::from_seed_u64(4),
        )
        .unwrap();
        let b = run_sa(
            |r| sample_nested(&model, bias, r),
            3000,
            &sched,
            EstimatePair::ZERO,
            lv,
            &mut StreamRng::from_seed_u64(4),
        )
        .unwrap();
        assert_eq!(a.estimate, b.estimate);
        assert_eq!(a.inner_draws, 15_000);
    }

    #[test]
    fn mlsa_without_corrections_equals_nsa() {
        let model = option_model();
        let lv = model.risk_level();
        let sched = StepSchedule::harmonic(1.0, 100.0).unwrap();
        let ladder = LevelLadder::new(BiasParam::new(8).unwrap(), 2, 0).unwrap();
        let seed = SeedTree::new(9).replication(4);
        let ml = run_mlsa(
            &model,
            &ladder,
            &[5000],
            &sched,
            &[LevelInit::default()],
            lv,
            &seed,
        )
        .unwrap();
        let nsa = run_nested_sa(
            &model,
            ladder.h0(),
            5000,
            &sched,
            EstimatePair::ZERO,
            lv,
            &mut seed.single(),
        )
        .unwrap();
        assert_eq!(ml.result.estimate.xi.to_bits(), nsa.estimate.xi.to_bits());
        assert_eq!(ml.result.estimate.chi.to_bits(), nsa.estimate.chi.to_bits());
    }

    #[test]
    fn identical_coarse_and_fine_cancel() {
        let model = option_model();
        let lv = model.risk_level();
        let sched = StepSchedule::harmonic(1.0, 100.0).unwrap();
        let ladder = LevelLadder::degenerate(BiasParam::new(4).unwrap(), 3).unwrap();
        let seed = SeedTree::new(5).replication(0);
        let inits = vec![LevelInit::default(); 4];
        let ml = run_mlsa(
            &model,
            &ladder,
            &[4000, 2000, 1000, 500],
            &sched,
            &inits,
            lv,
            &seed,
        )
        .unwrap();
        for o in &ml.levels[1..] {
            assert_eq!(o.correction(), EstimatePair::ZERO);
        }
        assert_eq!(ml.result.estimate, ml.levels[0].fine);
    }

    #[test]
    fn mlsa_cost_and_level_order() {
        let model = option_model();
        let lv = model.risk_level();
        let sched = StepSchedule::harmonic(1.0, 100.0).unwrap();
        let ladder = LevelLadder::new(BiasParam::new(3).unwrap(), 2, 3).unwrap();
        let budgets = [800u64, 400, 200, 100];
        let inits = vec![LevelInit::default(); 4];
        let seed = SeedTree::new(31).replication(2);
        let ml = run_mlsa(&model, &ladder, &budgets, &sched, &inits, lv, &seed).unwrap();
        let expected_cost: u64 = budgets
            .iter()
            .enumerate()
            .map(|(l, n)| n * ladder.inner_count(l as u32))
            .sum();
        assert_eq!(ml.result.inner_draws, expected_cost);

        let mut reversed = Vec::new();
        for l in (0..=3u32).rev() {
            reversed.push(
                run_mlsa_level(
                    &model,
                    &ladder,
                    l,
                    budgets[l as usize],
                    &sched,
                    inits[0],
                    lv,
                    &mut seed.level(l),
                )
                .unwrap(),
            );
        }
        let combined = combine_levels(&reversed);
        assert_eq!(combined.xi.to_bits(), ml.result.estimate.xi.to_bits());
        assert_eq!(combined.chi.to_bits(), ml.result.estimate.chi.to_bits());
    }

    #[test]
    fn mlsa_rejects_bad_budgets() {
        let model = option_model();
        let lv = model.risk_level();
        let sched = StepSchedule::harmonic(1.0, 100.0).unwrap();
        let ladder = LevelLadder::new(BiasParam::new(3).unwrap(), 2, 1).unwrap();
        let seed = SeedTree::new(1).replication(0);
        let inits = vec![LevelInit::default(); 2];
        assert!(run_mlsa(&model, &ladder, &[10], &sched, &inits, lv, &seed).is_err());
        assert!(run_mlsa(&model, &ladder, &[10, 0], &sched, &inits, lv, &seed).is_err());
        assert!(run_mlsa(&model, &ladder, &[10, 5], &sched, &inits[..1], lv, &seed).is_err());
    }
}
