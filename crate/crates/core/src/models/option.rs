use serde::{Deserialize, Serialize};

use super::LossModel;
use crate::error::{Error, Result};
use crate::measures::{
    std_normal_cdf, std_normal_inv_cdf, std_normal_pdf, EstimatePair, RiskLevel,
};
use crate::rng::StreamRng;

/// Option with payoff `-W_1^2`, revalued at horizon `delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptionParams {
    pub delta: f64,
    pub level: RiskLevel,
}

impl OptionParams {
    pub fn new(delta: f64, alpha: f64) -> Result<Self> {
        let level = RiskLevel::new(alpha)?;
        let params = Self { delta, level };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.delta > 0.0 && self.delta < 1.0 {
            Ok(())
        } else {
            Err(Error::invalid(
                "delta",
                format!("{} is not in (0, 1)", self.delta),
            ))
        }
    }
}

/// `phi(y, z) = -(sqrt(delta) y + sqrt(1 - delta) z)^2`.
pub fn option_phi(y: f64, z: f64, p: &OptionParams) -> f64 {
    let s = p.delta.sqrt() * y + (1.0 - p.delta).sqrt() * z;
    -s * s
}

/// `X0 = delta (y^2 - 1)`, the loss given the outer factor.
pub fn option_exact_loss(y: f64, p: &OptionParams) -> f64 {
    p.delta * (y * y - 1.0)
}

/// Closed-form VaR and ES of `delta (Y^2 - 1)`, `Y ~ N(0, 1)`.
pub fn option_truth(p: &OptionParams) -> Result<EstimatePair> {
    p.validate()?;
    let alpha = p.level.alpha();
    let q = std_normal_inv_cdf((1.0 - alpha) / 2.0)?;
    let xi = p.delta * (q * q - 1.0);
    let mu = (1.0 + xi / p.delta).sqrt();
    let chi = 2.0 * p.delta / (1.0 - alpha)
        * (mu * std_normal_pdf(mu) + std_normal_cdf(-mu) - (1.0 - alpha) / 2.0);
    Ok(EstimatePair::new(xi, chi))
}

#[derive(Debug, Clone)]
pub struct OptionModel {
    params: OptionParams,
    sqrt_delta: f64,
    sqrt_rest: f64,
}

impl OptionModel {
    pub fn new(params: OptionParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            sqrt_delta: params.delta.sqrt(),
            sqrt_rest: (1.0 - params.delta).sqrt(),
        })
    }

    pub fn params(&self) -> &OptionParams {
        &self.params
    }
}

impl LossModel for OptionModel {
    type Outer = f64;

    fn risk_level(&self) -> RiskLevel {
        self.params.level
    }

    #[inline]
    fn draw_outer(&self, rng: &mut StreamRng) -> f64 {
        rng.standard_normal()
    }

    #[inline]
    fn inner_payoff(&self, outer: &f64, rng: &mut StreamRng) -> f64 {
        let s = self.sqrt_delta * outer + self.sqrt_rest * rng.standard_normal();
        -s * s
    }

    /// `X = E[phi] - E[phi | Y] = -1 - E[phi | Y]`.
    #[inline]
    fn loss_from_inner_mean(&self, mean: f64) -> f64 {
        -1.0 - mean
    }

    fn draw_exact_loss(&self, rng: &mut StreamRng) -> Option<f64> {
        let y = rng.standard_normal();
        Some(option_exact_loss(y, &self.params))
    }

    fn supports_exact_loss(&self) -> bool {
        true
    }

    fn analytic_truth(&self) -> Option<EstimatePair> {
        option_truth(&self.params).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::v_integrand;
    use approx::assert_relative_eq;

    fn params(delta: f64) -> OptionParams {
        OptionParams::new(delta, 0.975).unwrap()
    }

    #[test]
    fn phi_examples() {
        assert_eq!(option_phi(0.0, 0.0, &params(0.5)), 0.0);
        assert_relative_eq!(
            option_phi(1.0, 1.0, &params(0.5)),
            -2.0,
            max_relative = 1e-15
        );
        assert_relative_eq!(
            option_phi(2.0, 0.0, &params(0.25)),
            -1.0,
            max_relative = 1e-15
        );
    }

    #[test]
    fn exact_loss_examples() {
        assert_eq!(option_exact_loss(1.0, &params(0.5)), 0.0);
        assert_eq!(option_exact_loss(0.0, &params(0.5)), -0.5);
        assert_eq!(option_exact_loss(3.0, &params(0.25)), 2.0);
    }

    #[test]
    fn invalid_delta() {
        assert!(OptionParams::new(0.0, 0.9).is_err());
        assert!(OptionParams::new(1.0, 0.9).is_err());
    }

    #[test]
    fn truth_matches_reference() {
        // 40-digit evaluation of the closed forms.
        let t = option_truth(&params(0.5)).unwrap();
        assert!((t.xi - 2.011_943_093_657_444).abs() < 1e-10, "{}", t.xi);
        assert!((t.chi - 2.901_128_255_081_342).abs() < 1e-10, "{}", t.chi);
        assert!((t.xi - 2.012).abs() < 5e-4);
        assert!((t.chi - 2.901).abs() < 5e-4);
    }

    #[test]
    fn truth_linear_in_delta() {
        let a = option_truth(&params(0.2)).unwrap();
        let b = option_truth(&params(0.4)).unwrap();
        assert_relative_eq!(b.xi, 2.0 * a.xi, max_relative = 1e-12);
        assert_relative_eq!(b.chi, 2.0 * a.chi, max_relative = 1e-12);
    }

    #[test]
    fn inner_mean_converges_to_exact_loss() {
        let model = OptionModel::new(params(0.5)).unwrap();
        let mut rng = StreamRng::from_seed_u64(5);
        let n = 1_000_000;
        for y in [-2.0, 0.0, 1.0, 3.0] {
            let draws: Vec<f64> = (0..n)
                .map(|_| -1.0 - model.inner_payoff(&y, &mut rng))
                .collect();
            let mean = draws.iter().sum::<f64>() / n as f64;
            let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (var / n as f64).sqrt();
            let exact = option_exact_loss(y, model.params());
            assert!((mean - exact).abs() < 4.0 * se, "y={y}: {mean} vs {exact}");
        }
    }

    #[test]
    fn truth_consistent_with_direct_simulation() {
        let model = OptionModel::new(params(0.5)).unwrap();
        let truth = model.analytic_truth().unwrap();
        let level = model.risk_level();
        let mut rng = StreamRng::from_seed_u64(6);
        let n = 10_000_000u64;
        let (mut s, mut s2, mut above) = (0.0, 0.0, 0u64);
        for _ in 0..n {
            let x = model.draw_exact_loss(&mut rng).unwrap();
            let v = v_integrand(truth.xi, x, level);
            s += v;
            s2 += v * v;
            above += u64::from(x > truth.xi);
        }
        let mean = s / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        assert!(
            (mean - truth.chi).abs() < 4.0 * se,
            "{mean} vs {} (se {se})",
            truth.chi
        );
        let p = above as f64 / n as f64;
        let p_se = (0.025 * 0.975 / n as f64).sqrt();
        assert!((p - 0.025).abs() < 4.0 * p_se);
    }
}
