//! Experiment configuration, read from TOML.
//!
//! Accuracies and bias parameters may be written either as numbers or as
//! fraction strings such as `"1/32"`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::measures::EstimatePair;
use crate::models::{AnyModel, OptionModel, OptionParams, SwapModel, SwapSpec};
use crate::tuning::Scenario;

/// A positive real read from `0.25` or `"1/4"`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
#[serde(into = "f64")]
pub struct Fraction(pub f64);

impl Fraction {
    pub fn value(self) -> f64 {
        self.0
    }
}

impl From<Fraction> for f64 {
    fn from(f: Fraction) -> f64 {
        f.0
    }
}

impl FromStr for Fraction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("`{s}` is neither a number nor a fraction a/b"));
        let s = s.trim();
        let value = match s.split_once('/') {
            Some((a, b)) => {
                let a: f64 = a.trim().parse().map_err(|_| bad())?;
                let b: f64 = b.trim().parse().map_err(|_| bad())?;
                a / b
            }
            None => s.parse().map_err(|_| bad())?,
        };
        if value.is_finite() {
            Ok(Fraction(value))
        } else {
            Err(bad())
        }
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl<'de> Deserialize<'de> for Fraction {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Int(i64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(x) => Ok(Fraction(x)),
            Raw::Int(x) => Ok(Fraction(x as f64)),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Sa,
    Nsa,
    Mlsa,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Sa, Algorithm::Nsa, Algorithm::Mlsa];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Sa => "sa",
            Algorithm::Nsa => "nsa",
            Algorithm::Mlsa => "mlsa",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sa" => Ok(Algorithm::Sa),
            "nsa" => Ok(Algorithm::Nsa),
            "mlsa" => Ok(Algorithm::Mlsa),
            other => Err(Error::Config(format!("unknown algorithm `{other}`"))),
        }
    }
}

/// Which risk measure a run is tuned for and scored on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Var,
    Es,
}

impl Target {
    pub const ALL: [Target; 2] = [Target::Var, Target::Es];

    pub fn as_str(self) -> &'static str {
        match self {
            Target::Var => "var",
            Target::Es => "es",
        }
    }

    pub fn pick(self, pair: EstimatePair) -> f64 {
        match self {
            Target::Var => pair.xi,
            Target::Es => pair.chi,
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "var" => Ok(Target::Var),
            "es" => Ok(Target::Es),
            other => Err(Error::Config(format!("unknown target `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelConfig {
    Option { delta: f64, alpha: f64 },
    Swap(SwapSpec),
}

impl ModelConfig {
    pub fn build(&self) -> Result<AnyModel> {
        match *self {
            ModelConfig::Option { delta, alpha } => Ok(AnyModel::Option(OptionModel::new(
                OptionParams::new(delta, alpha)?,
            )?)),
            ModelConfig::Swap(spec) => Ok(AnyModel::Swap(SwapModel::from_spec(spec)?)),
        }
    }
}

/// Starting point of every chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitConfig {
    /// `"zero"` or `"truth"` (the model's closed-form VaR and ES).
    Named(InitKind),
    Explicit {
        xi: f64,
        chi: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    Zero,
    Truth,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig::Named(InitKind::Zero)
    }
}

impl InitConfig {
    pub fn resolve(&self, model: &AnyModel) -> Result<EstimatePair> {
        match *self {
            InitConfig::Named(InitKind::Zero) => Ok(EstimatePair::ZERO),
            InitConfig::Named(InitKind::Truth) => model.analytic_truth().ok_or_else(|| {
                Error::Config(format!("model `{}` has no closed-form truth", model.name()))
            }),
            InitConfig::Explicit { xi, chi } => EstimatePair::new(xi, chi).ensure_finite(),
        }
    }
}

/// One step-size row. Rows without `epsilon` are defaults for their
/// algorithm and target; rows with it override that accuracy only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleRow {
    pub algorithm: Algorithm,
    pub target: Target,
    #[serde(default)]
    pub epsilon: Option<Fraction>,
    pub gamma1: f64,
    #[serde(default)]
    pub offset: f64,
    /// Coarsest bias parameter (multilevel only).
    #[serde(default)]
    pub h0: Option<Fraction>,
    /// Number of correction levels; computed from `h0` and `epsilon` when absent.
    #[serde(default)]
    pub levels: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    #[serde(default = "one")]
    pub var: f64,
    #[serde(default = "one")]
    pub es: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for Calibration {
    fn default() -> Self {
        Self { var: 1.0, es: 1.0 }
    }
}

impl Calibration {
    pub fn for_target(&self, target: Target) -> f64 {
        match target {
            Target::Var => self.var,
            Target::Es => self.es,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasStudyConfig {
    pub h: Vec<Fraction>,
    pub iterations: u64,
    pub gamma1: f64,
    #[serde(default)]
    pub offset: f64,
    #[serde(default)]
    pub replications: Option<u64>,
}

fn default_replications() -> u64 {
    200
}

fn default_m() -> u64 {
    2
}

fn default_scenario() -> Scenario {
    Scenario::LipschitzConditionalCdf
}

fn default_algorithms() -> Vec<Algorithm> {
    Algorithm::ALL.to_vec()
}

fn default_targets() -> Vec<Target> {
    Target::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_replications")]
    pub replications: u64,
    pub epsilons: Vec<Fraction>,
    #[serde(default = "default_algorithms")]
    pub algorithms: Vec<Algorithm>,
    #[serde(default = "default_targets")]
    pub targets: Vec<Target>,
    #[serde(default = "one")]
    pub beta: f64,
    #[serde(default = "default_m")]
    pub m: u64,
    #[serde(default = "default_scenario")]
    pub scenario: Scenario,
    #[serde(default)]
    pub init: InitConfig,
    #[serde(default)]
    pub calibration: Calibration,
    #[serde(default, rename = "schedule")]
    pub schedules: Vec<ScheduleRow>,
    #[serde(default)]
    pub bias_study: Option<BiasStudyConfig>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |msg: String| Err(Error::Config(msg));
        if self.replications == 0 {
            return cfg_err("replications must be at least 1".into());
        }
        if self.epsilons.is_empty() {
            return cfg_err("the accuracy grid `epsilons` is empty".into());
        }
        for e in &self.epsilons {
            if !(e.0 > 0.0 && e.0 < 1.0) {
                return cfg_err(format!("accuracy {e} is not in (0, 1)"));
            }
        }
        if self.epsilons.windows(2).any(|w| w[1].0 >= w[0].0) {
            return cfg_err("`epsilons` must be strictly decreasing".into());
        }
        if self.algorithms.is_empty() || self.targets.is_empty() {
            return cfg_err("`algorithms` and `targets` must not be empty".into());
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return cfg_err(format!("beta = {} is not in (0, 1]", self.beta));
        }
        if self.m < 2 {
            return cfg_err(format!("m = {} must be at least 2", self.m));
        }
        self.scenario.validate()?;
        for c in [self.calibration.var, self.calibration.es] {
            if !(c > 0.0 && c.is_finite()) {
                return cfg_err(format!("calibration {c} must be positive"));
            }
        }
        for row in &self.schedules {
            if !(row.gamma1 > 0.0 && row.offset >= 0.0) {
                return cfg_err(format!(
                    "schedule for {}/{}: gamma1 must be positive and offset non-negative",
                    row.algorithm, row.target
                ));
            }
        }
        self.model.build()?;
        for &algorithm in &self.algorithms {
            for &target in &self.targets {
                for &eps in &self.epsilons {
                    let row = self.schedule_for(algorithm, target, eps.0)?;
                    if algorithm == Algorithm::Mlsa {
                        let h0 = row.h0.ok_or_else(|| {
                            Error::Config(format!("mlsa/{target} at eps = {eps} has no h0"))
                        })?;
                        if row.levels.is_none() && h0.0 <= eps.0 {
                            return cfg_err(format!(
                                "mlsa/{target} at eps = {eps}: h0 = {h0} must exceed eps"
                            ));
                        }
                    }
                }
            }
        }
        if let Some(b) = &self.bias_study {
            if b.h.is_empty() || b.iterations == 0 || b.gamma1.is_nan() || b.gamma1 <= 0.0 {
                return cfg_err("bias_study needs h values, iterations and gamma1 > 0".into());
            }
        }
        Ok(())
    }

    /// The schedule row for `(algorithm, target, epsilon)`, preferring an
    /// exact accuracy match over the default row.
    pub fn schedule_for(
        &self,
        algorithm: Algorithm,
        target: Target,
        epsilon: f64,
    ) -> Result<ScheduleRow> {
        let matching = |r: &&ScheduleRow| r.algorithm == algorithm && r.target == target;
        let exact = self.schedules.iter().filter(matching).find(|r| {
            r.epsilon
                .is_some_and(|e| (e.0 - epsilon).abs() <= 1e-12 * epsilon)
        });
        let fallback = self
            .schedules
            .iter()
            .filter(matching)
            .find(|r| r.epsilon.is_none());
        exact.or(fallback).copied().ok_or_else(|| {
            Error::Config(format!(
                "no schedule for {algorithm}/{target} at eps = {epsilon}"
            ))
        })
    }

    pub fn bias_replications(&self) -> u64 {
        self.bias_study
            .as_ref()
            .and_then(|b| b.replications)
            .unwrap_or(self.replications)
    }
}
