//! Inner Monte Carlo samplers for the nested loss `X_h` and for the coupled
//! coarse/fine pair `(X_{h_{l-1}}, X_{h_l})` sharing one outer draw.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{InnerSum, LossModel};
use crate::rng::StreamRng;

/// Above this many inner payoffs per sample the sums are compensated.
pub const COMPENSATION_THRESHOLD: u64 = 1 << 16;

/// Bias parameter `h = 1/K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u64", into = "u64")]
pub struct BiasParam {
    k: u64,
}

impl BiasParam {
    pub fn new(k: u64) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("K", "inner sample count must be at least 1"));
        }
        Ok(Self { k })
    }

    /// The bias parameter whose `h` is exactly `h`, when `1/h` is an integer.
    pub fn from_h(h: f64) -> Result<Self> {
        if !(h > 0.0 && h <= 1.0) {
            return Err(Error::invalid("h", format!("{h} is not in (0, 1]")));
        }
        let k = (1.0 / h).round();
        if ((1.0 / h) - k).abs() > 1e-9 * k {
            return Err(Error::invalid("h", format!("1/{h} is not an integer")));
        }
        Self::new(k as u64)
    }

    #[inline]
    pub fn inner_count(&self) -> u64 {
        self.k
    }

    #[inline]
    pub fn h(&self) -> f64 {
        1.0 / self.k as f64
    }
}

impl TryFrom<u64> for BiasParam {
    type Error = Error;

    fn try_from(k: u64) -> Result<Self> {
        BiasParam::new(k)
    }
}

impl From<BiasParam> for u64 {
    fn from(b: BiasParam) -> u64 {
        b.k
    }
}

/// Geometric bias ladder `h_l = h_0 / M^l`, `l = 0..=L`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelLadder {
    h0: BiasParam,
    m: u64,
    levels: u32,
}

impl LevelLadder {
    pub fn new(h0: BiasParam, m: u64, levels: u32) -> Result<Self> {
        if m < 2 {
            return Err(Error::invalid("M", format!("{m} must be at least 2")));
        }
        Self::build(h0, m, levels)
    }

    /// Like [`LevelLadder::new`] but accepts `M = 1`, where the coarse and
    /// fine samples of every pair coincide. Only useful for checking that
    /// multilevel corrections telescope to zero.
    #[doc(hidden)]
    pub fn degenerate(h0: BiasParam, levels: u32) -> Result<Self> {
        Self::build(h0, 1, levels)
    }

    fn build(h0: BiasParam, m: u64, levels: u32) -> Result<Self> {
        m.checked_pow(levels)
            .and_then(|p| p.checked_mul(h0.inner_count()))
            .ok_or_else(|| Error::invalid("levels", "K * M^L overflows u64"))?;
        Ok(Self { h0, m, levels })
    }

    pub fn h0(&self) -> BiasParam {
        self.h0
    }

    pub fn factor(&self) -> u64 {
        self.m
    }

    /// Number of correction levels `L`.
    pub fn levels(&self) -> u32 {
        self.levels
    }

    /// Inner sample count `K M^l` at level `l`.
    pub fn inner_count(&self, level: u32) -> u64 {
        self.h0.inner_count() * self.m.pow(level)
    }

    pub fn bias(&self, level: u32) -> BiasParam {
        BiasParam {
            k: self.inner_count(level),
        }
    }

    pub fn h(&self, level: u32) -> f64 {
        1.0 / self.inner_count(level) as f64
    }
}

fn sum_for(count: u64) -> InnerSum {
    if count > COMPENSATION_THRESHOLD {
        InnerSum::compensated()
    } else {
        InnerSum::plain()
    }
}

/// Draws `X_h`: one outer factor, `K` inner payoffs, their mean mapped to a loss.
pub fn sample_nested<M: LossModel>(model: &M, bias: BiasParam, rng: &mut StreamRng) -> f64 {
    let k = bias.inner_count();
    let outer = model.draw_outer(rng);
    let mut acc = sum_for(k);
    model.accumulate_inner(&outer, k, rng, &mut acc);
    model.loss_from_inner_mean(acc.total() / k as f64)
}

/// A coarse/fine pair of nested losses built on the same outer draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoupledPair {
    pub coarse: f64,
    pub fine: f64,
}

/// Draws `(X_{h_{l-1}}, X_{h_l})` for `1 <= level <= L`.
///
/// The coarse mean uses the first `K M^{l-1}` payoffs; the fine mean is
/// `coarse / M + (sum of the remaining payoffs) / (K M^l)`. The recursion runs
/// on inner means, before the model's mean-to-loss map is applied.
pub fn sample_coupled_pair<M: LossModel>(
    model: &M,
    ladder: &LevelLadder,
    level: u32,
    rng: &mut StreamRng,
) -> Result<CoupledPair> {
    if level == 0 || level > ladder.levels() {
        return Err(Error::invalid(
            "level",
            format!(
                "coupled pairs exist for levels 1..={}, got {level}",
                ladder.levels()
            ),
        ));
    }
    Ok(coupled_pair_unchecked(model, ladder, level, rng))
}

#[inline]
fn coupled_pair_unchecked<M: LossModel>(
    model: &M,
    ladder: &LevelLadder,
    level: u32,
    rng: &mut StreamRng,
) -> CoupledPair {
    let coarse_n = ladder.inner_count(level - 1);
    let fine_n = ladder.inner_count(level);
    let outer = model.draw_outer(rng);

    let mut coarse_acc = sum_for(fine_n);
    model.accumulate_inner(&outer, coarse_n, rng, &mut coarse_acc);
    let coarse_mean = coarse_acc.total() / coarse_n as f64;

    let mut rest_acc = sum_for(fine_n);
    model.accumulate_inner(&outer, fine_n - coarse_n, rng, &mut rest_acc);
    let fine_mean = coarse_mean / ladder.factor() as f64 + rest_acc.total() / fine_n as f64;

    CoupledPair {
        coarse: model.loss_from_inner_mean(coarse_mean),
        fine: model.loss_from_inner_mean(fine_mean),
    }
}

/// [`sample_nested`] with a running count of inner draws.
#[derive(Debug)]
pub struct NestedSampler<'a, M> {
    model: &'a M,
    bias: BiasParam,
    inner_draws: u64,
}

impl<'a, M: LossModel> NestedSampler<'a, M> {
    pub fn new(model: &'a M, bias: BiasParam) -> Self {
        Self {
            model,
            bias,
            inner_draws: 0,
        }
    }

    #[inline]
    pub fn sample(&mut self, rng: &mut StreamRng) -> f64 {
        self.inner_draws += self.bias.inner_count();
        sample_nested(self.model, self.bias, rng)
    }

    pub fn inner_draws(&self) -> u64 {
        self.inner_draws
    }
}

/// [`sample_coupled_pair`] at a fixed level with a running count of inner draws.
#[derive(Debug)]
pub struct CoupledSampler<'a, M> {
    model: &'a M,
    ladder: LevelLadder,
    level: u32,
    inner_draws: u64,
}

impl<'a, M: LossModel> CoupledSampler<'a, M> {
    pub fn new(model: &'a M, ladder: LevelLadder, level: u32) -> Result<Self> {
        if level == 0 || level > ladder.levels() {
            return Err(Error::invalid(
                "level",
                format!("coupled pairs exist for levels 1..={}", ladder.levels()),
            ));
        }
        Ok(Self {
            model,
            ladder,
            level,
            inner_draws: 0,
        })
    }

    #[inline]
    pub fn sample(&mut self, rng: &mut StreamRng) -> CoupledPair {
        self.inner_draws += self.ladder.inner_count(self.level);
        coupled_pair_unchecked(self.model, &self.ladder, self.level, rng)
    }

    pub fn inner_draws(&self) -> u64 {
        self.inner_draws
    }
}
