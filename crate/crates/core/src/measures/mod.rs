//! Rockafellar–Uryasev machinery: the objective `V(xi) = xi + E[(X - xi)^+] / (1 - alpha)`
//! whose minimiser is the VaR and whose minimum is the expected shortfall,
//! together with the two update kernels driving the stochastic approximation.

mod gaussian;

pub use gaussian::{erfc, std_normal_cdf, std_normal_inv_cdf, std_normal_pdf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Confidence level `alpha` in `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct RiskLevel {
    alpha: f64,
}

impl RiskLevel {
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha > 0.0 && alpha < 1.0 {
            Ok(Self { alpha })
        } else {
            Err(Error::invalid("alpha", format!("{alpha} is not in (0, 1)")))
        }
    }

    #[inline]
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `1 / (1 - alpha)`, the weight of the tail indicator in both kernels.
    #[inline]
    pub fn tail_weight(&self) -> f64 {
        1.0 / (1.0 - self.alpha)
    }

    /// `max(1, alpha / (1 - alpha))`: a VaR step never moves by more than
    /// `k_alpha * gamma`.
    pub fn k_alpha(&self) -> f64 {
        (self.alpha / (1.0 - self.alpha)).max(1.0)
    }
}

impl TryFrom<f64> for RiskLevel {
    type Error = Error;

    fn try_from(alpha: f64) -> Result<Self> {
        RiskLevel::new(alpha)
    }
}

impl From<RiskLevel> for f64 {
    fn from(level: RiskLevel) -> f64 {
        level.alpha
    }
}

/// A (VaR, ES) couple, either an iterate or a target value.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EstimatePair {
    pub xi: f64,
    pub chi: f64,
}

impl EstimatePair {
    pub const ZERO: EstimatePair = EstimatePair { xi: 0.0, chi: 0.0 };

    pub fn new(xi: f64, chi: f64) -> Self {
        Self { xi, chi }
    }

    pub fn is_finite(&self) -> bool {
        self.xi.is_finite() && self.chi.is_finite()
    }

    pub fn ensure_finite(self) -> Result<Self> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(Error::invalid(
                "estimate",
                format!("non-finite pair ({}, {})", self.xi, self.chi),
            ))
        }
    }
}

impl std::ops::Sub for EstimatePair {
    type Output = EstimatePair;

    fn sub(self, rhs: EstimatePair) -> EstimatePair {
        EstimatePair::new(self.xi - rhs.xi, self.chi - rhs.chi)
    }
}

impl std::ops::Add for EstimatePair {
    type Output = EstimatePair;

    fn add(self, rhs: EstimatePair) -> EstimatePair {
        EstimatePair::new(self.xi + rhs.xi, self.chi + rhs.chi)
    }
}

/// VaR kernel: `1 - 1{x >= xi} / (1 - alpha)`; its mean is `V'(xi)`.
#[inline]
pub fn h1(xi: f64, x: f64, level: RiskLevel) -> f64 {
    if x >= xi {
        1.0 - level.tail_weight()
    } else {
        1.0
    }
}

/// The integrand of `V` evaluated at one loss sample.
#[inline]
pub fn v_integrand(xi: f64, x: f64, level: RiskLevel) -> f64 {
    xi + (x - xi).max(0.0) * level.tail_weight()
}

/// ES kernel: `chi - (xi + (x - xi)^+ / (1 - alpha))`.
#[inline]
pub fn h2(xi: f64, chi: f64, x: f64, level: RiskLevel) -> f64 {
    chi - v_integrand(xi, x, level)
}

/// Plug-in Monte Carlo estimate of `V(xi)` from loss samples.
pub fn empirical_v(xi: f64, samples: &[f64], level: RiskLevel) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("samples"));
    }
    let excess: f64 = samples.iter().map(|&x| (x - xi).max(0.0)).sum();
    Ok(xi + excess / samples.len() as f64 * level.tail_weight())
}
