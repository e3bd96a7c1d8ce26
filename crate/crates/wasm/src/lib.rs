//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Each exported function takes plain numbers and returns a JSON string;
//! the same functions are callable natively for testing.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use mlsa_core::bench::{fit_loglog_slope, level_variances, LevelVariance};
use mlsa_core::engine::{RmChain, StepSchedule};
use mlsa_core::measures::EstimatePair;
use mlsa_core::models::{option_truth, LossModel, OptionModel, OptionParams};
use mlsa_core::rng::StreamRng;
use mlsa_core::samplers::{BiasParam, LevelLadder, NestedSampler};
use mlsa_core::tuning::{es_allocation, level_count, var_allocation, Scenario};
use mlsa_core::{Error, Result};

/// Upper bound on recorded trace points and on simulated work per call.
const MAX_POINTS: u64 = 2000;
const MAX_DRAWS: u64 = 400_000_000;

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string(value).map_err(|e| Error::Config(e.to_string()))
}

fn budget_check(draws: u64) -> Result<()> {
    if draws > MAX_DRAWS {
        return Err(Error::Config(format!(
            "{draws} inner draws requested; the demo caps a call at {MAX_DRAWS}"
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct AllocationRow {
    level: u32,
    h: f64,
    iterations: u64,
    cost_share: f64,
}

#[derive(Serialize)]
struct AllocationTable {
    levels: u32,
    cost: u64,
    rows: Vec<AllocationRow>,
    warnings: Vec<String>,
}

/// Multilevel budgets for accuracy `epsilon` on the ladder `1/k0, 1/(k0 m), ...`.
pub fn allocation_table(
    epsilon: f64,
    k0: u64,
    m: u64,
    target: &str,
    p_star: f64,
    gamma1: f64,
    calibration: f64,
) -> Result<String> {
    let h0 = BiasParam::new(k0)?;
    let ladder = LevelLadder::new(h0, m, level_count(h0, m, epsilon)?)?;
    let allocation = match target {
        "var" => var_allocation(
            epsilon,
            1.0,
            ladder,
            Scenario::FiniteMoment { p_star },
            gamma1,
            calibration,
        )?,
        "es" => es_allocation(epsilon, ladder, calibration)?,
        other => return Err(Error::Config(format!("unknown target `{other}`"))),
    };
    let shares = allocation.cost_shares();
    let rows = allocation
        .budgets
        .iter()
        .zip(shares)
        .enumerate()
        .map(|(l, (&iterations, cost_share))| AllocationRow {
            level: l as u32,
            h: ladder.h(l as u32),
            iterations,
            cost_share,
        })
        .collect();
    to_json(&AllocationTable {
        levels: ladder.levels(),
        cost: allocation.cost(),
        rows,
        warnings: allocation.warnings,
    })
}

#[derive(Serialize)]
struct TracePoint {
    step: u64,
    xi: f64,
    chi: f64,
}

#[derive(Serialize)]
struct Trace {
    truth: EstimatePair,
    points: Vec<TracePoint>,
}

/// Iterates of one nested SA chain on the option model, sampled at up to
/// `points` evenly spaced steps.
#[allow(clippy::too_many_arguments)]
pub fn chain_trace(
    delta: f64,
    alpha: f64,
    k: u64,
    iterations: u64,
    gamma1: f64,
    offset: f64,
    warm_start: bool,
    seed: u64,
    points: u64,
) -> Result<String> {
    let params = OptionParams::new(delta, alpha)?;
    let model = OptionModel::new(params)?;
    let truth = option_truth(&params)?;
    let bias = BiasParam::new(k)?;
    budget_check(iterations.saturating_mul(k))?;
    if iterations == 0 {
        return Err(Error::Config("at least one iteration is needed".into()));
    }
    let schedule = StepSchedule::new(gamma1, 1.0, offset)?;
    let every = (iterations / points.clamp(1, MAX_POINTS)).max(1);
    let mut chain = RmChain::new(if warm_start {
        truth
    } else {
        EstimatePair::ZERO
    });
    let mut sampler = NestedSampler::new(&model, bias);
    let mut rng = StreamRng::from_seed_u64(seed);
    let level = model.risk_level();
    let mut trace = Vec::new();
    for step in 1..=iterations {
        chain.step(sampler.sample(&mut rng), &schedule, level)?;
        if step % every == 0 || step == iterations {
            let s = chain.state();
            trace.push(TracePoint {
                step,
                xi: s.xi,
                chi: s.chi,
            });
        }
    }
    to_json(&Trace {
        truth,
        points: trace,
    })
}

#[derive(Serialize)]
struct Decay {
    rows: Vec<LevelVariance>,
    slope: Option<f64>,
}

/// Variance of coupled level differences on the option model and its
/// log-log slope against `h_l`.
pub fn level_decay(
    delta: f64,
    alpha: f64,
    k0: u64,
    levels: u32,
    pairs: u64,
    seed: u64,
) -> Result<String> {
    let model = OptionModel::new(OptionParams::new(delta, alpha)?)?;
    let ladder = LevelLadder::new(BiasParam::new(k0)?, 2, levels)?;
    let per_pair: u64 = (1..=levels).map(|l| ladder.inner_count(l)).sum();
    budget_check(per_pair.saturating_mul(pairs))?;
    let rows = level_variances(&model, &ladder, pairs, seed)?;
    let hs: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let vs: Vec<f64> = rows.iter().map(|r| r.variance).collect();
    let slope = fit_loglog_slope(&hs, &vs).ok().map(|f| f.slope);
    to_json(&Decay { rows, slope })
}

fn js(result: Result<String>) -> std::result::Result<String, JsError> {
    result.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = allocationTable)]
pub fn allocation_table_js(
    epsilon: f64,
    k0: u32,
    m: u32,
    target: &str,
    p_star: f64,
    gamma1: f64,
    calibration: f64,
) -> std::result::Result<String, JsError> {
    js(allocation_table(
        epsilon,
        k0.into(),
        m.into(),
        target,
        p_star,
        gamma1,
        calibration,
    ))
}

#[wasm_bindgen(js_name = chainTrace)]
#[allow(clippy::too_many_arguments)]
pub fn chain_trace_js(
    delta: f64,
    alpha: f64,
    k: u32,
    iterations: u32,
    gamma1: f64,
    offset: f64,
    warm_start: bool,
    seed: u32,
    points: u32,
) -> std::result::Result<String, JsError> {
    js(chain_trace(
        delta,
        alpha,
        k.into(),
        iterations.into(),
        gamma1,
        offset,
        warm_start,
        seed.into(),
        points.into(),
    ))
}

#[wasm_bindgen(js_name = levelDecay)]
pub fn level_decay_js(
    delta: f64,
    alpha: f64,
    k0: u32,
    levels: u32,
    pairs: u32,
    seed: u32,
) -> std::result::Result<String, JsError> {
    js(level_decay(
        delta,
        alpha,
        k0.into(),
        levels,
        pairs.into(),
        seed.into(),
    ))
}
