//! Loss models of the form `X0 = E[phi(Y, Z) | Y]`.
//!
//! A model supplies the outer factor `Y`, one inner payoff `phi(Y, Z)` per
//! inner draw, and the map from the inner sample mean to the loss. Models
//! whose loss is also directly simulatable, or whose VaR/ES are known in
//! closed form, expose those as well so they can serve as benchmarks.

mod option;
mod swap;

pub use option::{option_exact_loss, option_phi, option_truth, OptionModel, OptionParams};
pub use swap::{
    swap_annuity, swap_exact_loss, swap_nominal, swap_par_strike, swap_phi, swap_truth, SwapModel,
    SwapParams, SwapSpec,
};

use crate::measures::{EstimatePair, RiskLevel};
use crate::rng::StreamRng;

/// Running sum of inner payoffs, optionally with Neumaier compensation.
#[derive(Debug, Clone, Copy, Default)]
pub struct InnerSum {
    sum: f64,
    compensation: f64,
    compensated: bool,
}

impl InnerSum {
    pub fn plain() -> Self {
        Self::default()
    }

    pub fn compensated() -> Self {
        Self {
            compensated: true,
            ..Self::default()
        }
    }

    #[inline]
    pub fn add(&mut self, value: f64) {
        if self.compensated {
            let t = self.sum + value;
            if self.sum.abs() >= value.abs() {
                self.compensation += (self.sum - t) + value;
            } else {
                self.compensation += (value - t) + self.sum;
            }
            self.sum = t;
        } else {
            self.sum += value;
        }
    }

    #[inline]
    pub fn total(&self) -> f64 {
        self.sum + self.compensation
    }
}

/// A loss defined as the conditional expectation of a payoff.
///
/// Implementations must be immutable after construction; all randomness
/// comes from the caller's stream.
pub trait LossModel: Send + Sync {
    type Outer: Copy;

    fn risk_level(&self) -> RiskLevel;

    fn draw_outer(&self, rng: &mut StreamRng) -> Self::Outer;

    /// Draws one inner factor `Z`, independent of `outer`, and returns `phi(outer, Z)`.
    fn inner_payoff(&self, outer: &Self::Outer, rng: &mut StreamRng) -> f64;

    /// Adds `count` fresh inner payoffs to `acc`.
    #[inline]
    fn accumulate_inner(
        &self,
        outer: &Self::Outer,
        count: u64,
        rng: &mut StreamRng,
        acc: &mut InnerSum,
    ) {
        for _ in 0..count {
            acc.add(self.inner_payoff(outer, rng));
        }
    }

    /// Maps an inner sample mean to the loss. Identity unless the model's
    /// loss is an affine transform of the conditional expectation.
    #[inline]
    fn loss_from_inner_mean(&self, mean: f64) -> f64 {
        mean
    }

    /// Draws one exact sample of `X0`, when the model can.
    fn draw_exact_loss(&self, _rng: &mut StreamRng) -> Option<f64> {
        None
    }

    fn supports_exact_loss(&self) -> bool {
        false
    }

    /// Closed-form (VaR, ES) of `X0` at the model's risk level, when known.
    fn analytic_truth(&self) -> Option<EstimatePair> {
        None
    }
}

/// Either of the two case-study models, for configuration-driven dispatch.
#[derive(Debug, Clone)]
pub enum AnyModel {
    Option(OptionModel),
    Swap(SwapModel),
}

impl AnyModel {
    pub fn name(&self) -> &'static str {
        match self {
            AnyModel::Option(_) => "option",
            AnyModel::Swap(_) => "swap",
        }
    }

    pub fn risk_level(&self) -> RiskLevel {
        match self {
            AnyModel::Option(m) => m.risk_level(),
            AnyModel::Swap(m) => m.risk_level(),
        }
    }

    pub fn analytic_truth(&self) -> Option<EstimatePair> {
        match self {
            AnyModel::Option(m) => m.analytic_truth(),
            AnyModel::Swap(m) => m.analytic_truth(),
        }
    }
}

/// Calls `$body` with `$m` bound to the concrete model inside an [`AnyModel`].
#[macro_export]
macro_rules! with_model {
    ($any:expr, $m:ident => $body:expr) => {
        match $any {
            $crate::models::AnyModel::Option($m) => $body,
            $crate::models::AnyModel::Swap($m) => $body,
        }
    };
}
