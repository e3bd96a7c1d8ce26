use serde::{Deserialize, Serialize};

use super::LossModel;
use crate::error::{Error, Result};
use crate::measures::{std_normal_cdf, std_normal_inv_cdf, EstimatePair, RiskLevel};
use crate::rng::StreamRng;

/// User-facing swap description. Rates per annum, times in years (30/360).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwapSpec {
    pub r: f64,
    pub s0: f64,
    pub kappa: f64,
    pub sigma: f64,
    pub coupon_interval: f64,
    pub maturity: f64,
    pub horizon: f64,
    pub alpha: f64,
    /// Multiplier applied to the nominal; `1e4` reports losses in basis
    /// points of a unit leg value.
    #[serde(default = "default_loss_unit")]
    pub loss_unit: f64,
}

fn default_loss_unit() -> f64 {
    1e4
}

impl SwapSpec {
    /// r = 2%, S0 = 1%, kappa = 12%, sigma = 20%, quarterly coupons over one
    /// year, one-week horizon, alpha = 85%, losses in basis points.
    pub fn reference() -> Self {
        Self {
            r: 0.02,
            s0: 0.01,
            kappa: 0.12,
            sigma: 0.20,
            coupon_interval: 90.0 / 360.0,
            maturity: 1.0,
            horizon: 7.0 / 360.0,
            alpha: 0.85,
            loss_unit: 1e4,
        }
    }
}

/// Validated swap with the quantities every inner sample needs precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct SwapParams {
    spec: SwapSpec,
    level: RiskLevel,
    coupon_dates: Vec<f64>,
    /// `rho_{T_i} Delta_i e^{kappa T_{i-1}}` for i = 1..d
    fixed_weights: Vec<f64>,
    annuity: f64,
    strike: f64,
    nominal: f64,
}

impl SwapParams {
    pub fn new(spec: SwapSpec) -> Result<Self> {
        let level = RiskLevel::new(spec.alpha)?;
        for (name, v) in [
            ("s0", spec.s0),
            ("sigma", spec.sigma),
            ("coupon_interval", spec.coupon_interval),
            ("maturity", spec.maturity),
            ("horizon", spec.horizon),
            ("loss_unit", spec.loss_unit),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, format!("{v} must be positive")));
            }
        }
        if !(spec.r.is_finite() && spec.kappa.is_finite()) {
            return Err(Error::invalid("r/kappa", "must be finite"));
        }
        if spec.horizon >= spec.coupon_interval {
            return Err(Error::invalid(
                "horizon",
                "must be shorter than the coupon interval",
            ));
        }
        let ratio = spec.maturity / spec.coupon_interval;
        let d = ratio.round();
        if (ratio - d).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::invalid(
                "maturity",
                "must be an integer multiple of the coupon interval",
            ));
        }
        let d = d as usize;
        if d < 2 {
            return Err(Error::invalid(
                "maturity",
                "at least two coupon periods are needed (the annuity is empty)",
            ));
        }
        let delta_i = spec.coupon_interval;
        let coupon_dates: Vec<f64> = (1..=d).map(|i| i as f64 * delta_i).collect();
        let discount = |t: f64| (-spec.r * t).exp();
        let fixed_weights: Vec<f64> = coupon_dates
            .iter()
            .map(|&t| discount(t) * delta_i * (spec.kappa * (t - delta_i)).exp())
            .collect();
        let float_leg: f64 = fixed_weights.iter().sum();
        let fixed_leg: f64 = coupon_dates.iter().map(|&t| discount(t) * delta_i).sum();
        let annuity: f64 = fixed_weights[1..].iter().sum();
        Ok(Self {
            spec,
            level,
            coupon_dates,
            annuity,
            strike: spec.s0 * float_leg / fixed_leg,
            nominal: spec.loss_unit / (spec.s0 * float_leg),
            fixed_weights,
        })
    }

    pub fn spec(&self) -> &SwapSpec {
        &self.spec
    }

    pub fn level(&self) -> RiskLevel {
        self.level
    }

    pub fn coupon_count(&self) -> usize {
        self.coupon_dates.len()
    }

    pub fn coupon_dates(&self) -> &[f64] {
        &self.coupon_dates
    }

    /// `N A S0`, the scale of the loss `N A (S_hat_delta - S0)`.
    pub fn loss_scale(&self) -> f64 {
        self.nominal * self.annuity * self.spec.s0
    }

    /// Mark-to-market at inception with the par strike; zero up to rounding.
    pub fn inception_value(&self) -> f64 {
        let s = &self.spec;
        let value: f64 = self
            .coupon_dates
            .iter()
            .map(|&t| {
                (-s.r * t).exp()
                    * s.coupon_interval
                    * ((s.kappa * (t - s.coupon_interval)).exp() * s.s0 - self.strike)
            })
            .sum();
        self.nominal * value
    }
}

pub fn swap_par_strike(p: &SwapParams) -> f64 {
    p.strike
}

pub fn swap_annuity(p: &SwapParams) -> f64 {
    p.annuity
}

pub fn swap_nominal(p: &SwapParams) -> f64 {
    p.nominal
}

/// Closed-form VaR and ES of the short swap position at the horizon.
pub fn swap_truth(p: &SwapParams) -> Result<EstimatePair> {
    let s = &p.spec;
    let alpha = p.level.alpha();
    let vol = s.sigma * s.horizon.sqrt();
    let scale = p.loss_scale();
    let xi = scale * (std_normal_inv_cdf(alpha)? * vol - 0.5 * vol * vol).exp_m1();
    let omega = s.s0 + xi / (p.nominal * p.annuity);
    let eta_minus = ((omega / s.s0).ln() - 0.5 * vol * vol) / vol;
    let chi = scale * (alpha - std_normal_cdf(eta_minus)) / (1.0 - alpha);
    Ok(EstimatePair::new(xi, chi))
}

/// `N S0 sum_{i=2}^{d} rho_{T_i} Delta_i e^{kappa T_{i-1}} (y prod_{j<i} z_j - 1)`.
pub fn swap_phi(y: f64, z: &[f64], p: &SwapParams) -> Result<f64> {
    let d = p.coupon_count();
    if z.len() != d - 1 {
        return Err(Error::invalid(
            "z",
            format!("expected {} inner factors, got {}", d - 1, z.len()),
        ));
    }
    let mut product = 1.0;
    let mut total = 0.0;
    for (w, zj) in p.fixed_weights[1..].iter().zip(z) {
        product *= zj;
        total += w * (y * product - 1.0);
    }
    Ok(p.nominal * p.spec.s0 * total)
}

/// Direct sample of the loss from a standard-normal draw `u`.
pub fn swap_exact_loss(u: f64, p: &SwapParams) -> f64 {
    let vol = p.spec.sigma * p.spec.horizon.sqrt();
    p.loss_scale() * (-0.5 * vol * vol + vol * u).exp_m1()
}

/// Lognormal log-ratio drift and volatility of each inner factor.
#[derive(Debug, Clone, Copy)]
struct LogFactor {
    drift: f64,
    vol: f64,
}

impl LogFactor {
    fn over(sigma: f64, dt: f64) -> Self {
        Self {
            drift: -0.5 * sigma * sigma * dt,
            vol: sigma * dt.sqrt(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SwapModel {
    params: SwapParams,
    outer: LogFactor,
    inner: Vec<LogFactor>,
    /// `N S0 rho_{T_i} Delta_i e^{kappa T_{i-1}}` for i = 2..d
    coefficients: Vec<f64>,
    coefficient_sum: f64,
}

impl SwapModel {
    pub fn new(params: SwapParams) -> Self {
        let s = params.spec;
        let d = params.coupon_count();
        let mut inner = Vec::with_capacity(d - 1);
        inner.push(LogFactor::over(s.sigma, params.coupon_dates[0] - s.horizon));
        for _ in 2..d {
            inner.push(LogFactor::over(s.sigma, s.coupon_interval));
        }
        let coefficients: Vec<f64> = params.fixed_weights[1..]
            .iter()
            .map(|w| params.nominal * s.s0 * w)
            .collect();
        Self {
            outer: LogFactor::over(s.sigma, s.horizon),
            coefficient_sum: coefficients.iter().sum(),
            coefficients,
            inner,
            params,
        }
    }

    pub fn from_spec(spec: SwapSpec) -> Result<Self> {
        Ok(Self::new(SwapParams::new(spec)?))
    }

    pub fn params(&self) -> &SwapParams {
        &self.params
    }
}

impl LossModel for SwapModel {
    type Outer = f64;

    fn risk_level(&self) -> RiskLevel {
        self.params.level
    }

    #[inline]
    fn draw_outer(&self, rng: &mut StreamRng) -> f64 {
        (self.outer.drift + self.outer.vol * rng.standard_normal()).exp()
    }

    #[inline]
    fn inner_payoff(&self, outer: &f64, rng: &mut StreamRng) -> f64 {
        let mut log_product = 0.0;
        let mut weighted = 0.0;
        for (factor, c) in self.inner.iter().zip(&self.coefficients) {
            log_product += factor.drift + factor.vol * rng.standard_normal();
            weighted += c * log_product.exp();
        }
        outer * weighted - self.coefficient_sum
    }

    fn draw_exact_loss(&self, rng: &mut StreamRng) -> Option<f64> {
        Some(swap_exact_loss(rng.standard_normal(), &self.params))
    }

    fn supports_exact_loss(&self) -> bool {
        true
    }

    fn analytic_truth(&self) -> Option<EstimatePair> {
        swap_truth(&self.params).ok()
    }
}
