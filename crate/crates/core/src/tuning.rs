//! Closed-form parameter choices: nested-SA tuning, the number of levels,
//! the scenario rate `eps(h)` and the per-level iteration budgets of the
//! VaR- and ES-focused multilevel parametrizations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::samplers::{BiasParam, LevelLadder};

/// Regularity assumption on the conditional loss, which fixes how fast the
/// nested VaR bias vanishes with `h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scenario {
    /// Inner error with a finite moment of order `p_star`.
    FiniteMoment { p_star: f64 },
    /// Conditional Gaussian concentration of the inner error.
    GaussianConcentration,
    /// Lipschitz conditional cdf of the inner error.
    LipschitzConditionalCdf,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Scenario::FiniteMoment { p_star } if p_star.is_nan() || p_star <= 1.0 => {
                Err(Error::invalid("p_star", format!("{p_star} must exceed 1")))
            }
            _ => Ok(()),
        }
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(
            "epsilon",
            format!("{epsilon} is not in (0, 1)"),
        ))
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid("beta", format!("{beta} is not in (0, 1]")))
    }
}

fn ceil_count(x: f64) -> Result<u64> {
    if !x.is_finite() || x >= u64::MAX as f64 {
        return Err(Error::invalid(
            "budget",
            format!("{x} is not representable"),
        ));
    }
    Ok(x.ceil() as u64)
}

/// `K = ceil(1/eps)` inner samples and `n = ceil(eps^{-2/beta})` iterations.
pub fn nsa_tuning(epsilon: f64, beta: f64) -> Result<(BiasParam, u64)> {
    check_epsilon(epsilon)?;
    check_beta(beta)?;
    let bias = BiasParam::new(ceil_count(1.0 / epsilon)?)?;
    Ok((bias, ceil_count(epsilon.powf(-2.0 / beta))?))
}

/// `L = ceil(ln(h0/eps) / ln M)`, the fewest levels with `h_L <= eps`.
pub fn level_count(h0: BiasParam, m: u64, epsilon: f64) -> Result<u32> {
    check_epsilon(epsilon)?;
    if m < 2 {
        return Err(Error::invalid("M", format!("{m} must be at least 2")));
    }
    let h0 = h0.h();
    if h0 <= epsilon {
        return Err(Error::invalid(
            "h0",
            format!("h0 = {h0} must exceed eps = {epsilon}; raise h0 or use nested SA"),
        ));
    }
    let ratio = (h0 / epsilon).ln() / (m as f64).ln();
    // Guard against ratios like 2.0000000000000004 from exact powers of M.
    let nearest = ratio.round();
    let levels = if (ratio - nearest).abs() < 1e-12 * nearest.max(1.0) {
        nearest
    } else {
        ratio.ceil()
    };
    Ok(levels as u32)
}

/// Rate `eps(h)` at which the level-`h` VaR error vanishes under `scenario`.
///
/// Under Gaussian concentration `eps(1) = 0`.
pub fn eps_of_h(h: f64, scenario: Scenario) -> Result<f64> {
    if !(h > 0.0 && h <= 1.0) {
        return Err(Error::invalid("h", format!("{h} is not in (0, 1]")));
    }
    scenario.validate()?;
    Ok(match scenario {
        Scenario::FiniteMoment { p_star } => h.powf(p_star / (2.0 * (1.0 + p_star))),
        Scenario::GaussianConcentration => (h * h.ln().abs()).sqrt(),
        Scenario::LipschitzConditionalCdf => h.sqrt(),
    })
}

/// Per-level iteration budgets for a multilevel run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub ladder: LevelLadder,
    pub budgets: Vec<u64>,
    pub calibration: f64,
    /// Non-fatal oddities, e.g. clamped or increasing budgets.
    pub warnings: Vec<String>,
}

impl Allocation {
    /// Total inner draws `sum_l N_l K M^l`.
    pub fn cost(&self) -> u64 {
        self.budgets
            .iter()
            .enumerate()
            .map(|(l, &n)| n * self.ladder.inner_count(l as u32))
            .sum()
    }

    /// Fraction of the total cost spent at each level.
    pub fn cost_shares(&self) -> Vec<f64> {
        let total = self.cost() as f64;
        self.budgets
            .iter()
            .enumerate()
            .map(|(l, &n)| (n * self.ladder.inner_count(l as u32)) as f64 / total)
            .collect()
    }

    fn finish(ladder: LevelLadder, raw: Vec<f64>, calibration: f64) -> Result<Self> {
        let mut warnings = Vec::new();
        let mut budgets = Vec::with_capacity(raw.len());
        for (l, &x) in raw.iter().enumerate() {
            let n = ceil_count(x)?;
            if n == 0 {
                warnings.push(format!("level {l}: formula gives 0 iterations, using 1"));
            }
            budgets.push(n.max(1));
        }
        if budgets.windows(2).any(|w| w[1] > w[0]) {
            warnings.push("budgets are not non-increasing across levels".to_string());
        }
        for w in &warnings {
            log::warn!("{w}");
        }
        Ok(Self {
            ladder,
            budgets,
            calibration,
            warnings,
        })
    }
}

fn check_calibration(calibration: f64) -> Result<()> {
    if calibration > 0.0 && calibration.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(
            "calibration",
            format!("{calibration} must be positive"),
        ))
    }
}

/// VaR-focused budgets
/// `N_l = ceil((K gamma1)^{1/beta} eps^{-2/beta} S^{1/beta} h_l^{1/(1+beta)} eps(h_l)^{1/(1+beta)})`
/// with `S = sum_l h_l^{-beta/(1+beta)} eps(h_l)^{1/(1+beta)}`.
pub fn var_allocation(
    epsilon: f64,
    beta: f64,
    ladder: LevelLadder,
    scenario: Scenario,
    gamma1: f64,
    calibration: f64,
) -> Result<Allocation> {
    check_epsilon(epsilon)?;
    check_beta(beta)?;
    check_calibration(calibration)?;
    if !(gamma1 > 0.0 && gamma1.is_finite()) {
        return Err(Error::invalid(
            "gamma1",
            format!("{gamma1} must be positive"),
        ));
    }
    let e = 1.0 / (1.0 + beta);
    let rates: Vec<(f64, f64)> = (0..=ladder.levels())
        .map(|l| {
            let h = ladder.h(l);
            eps_of_h(h, scenario).map(|r| (h, r))
        })
        .collect::<Result<_>>()?;
    let s: f64 = rates
        .iter()
        .map(|&(h, r)| h.powf(-beta * e) * r.powf(e))
        .sum();
    let front =
        (calibration * gamma1).powf(1.0 / beta) * epsilon.powf(-2.0 / beta) * s.powf(1.0 / beta);
    let raw = rates
        .iter()
        .map(|&(h, r)| front * h.powf(e) * r.powf(e))
        .collect();
    Allocation::finish(ladder, raw, calibration)
}

/// ES-focused budgets `N_l = ceil(K eps^{-2} L h_l)`, clamped to at least 1.
pub fn es_allocation(epsilon: f64, ladder: LevelLadder, calibration: f64) -> Result<Allocation> {
    check_epsilon(epsilon)?;
    check_calibration(calibration)?;
    let big_l = ladder.levels() as f64;
    let raw = (0..=ladder.levels())
        .map(|l| calibration * big_l * ladder.h(l) / (epsilon * epsilon))
        .collect();
    Allocation::finish(ladder, raw, calibration)
}
