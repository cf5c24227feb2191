//! Adaptive outer multilevel loop and the single-level nested baseline.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{nested_mc_difference, nested_mc_sample, CorrectionSample, Estimator};
use crate::problem::NestedProblem;
use crate::randomness::StreamKey;
use crate::stats::{fit_log2, LevelStats};

/// Samples handed to one rayon task; fixed so results do not depend on the
/// number of threads.
const CHUNK: u64 = 64;

/// Bias slopes outside this range are treated as pre-asymptotic noise.
const SLOPE_RANGE: (f64, f64) = (-2.0, -0.5);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlmcConfig {
    /// Target root mean square error.
    pub epsilon: f64,
    pub l_min: u32,
    pub l_max: u32,
    /// Pilot samples for every newly added level.
    pub initial_samples: u64,
    pub safety: f64,
    /// Fraction of ε² given to the statistical error.
    pub split: f64,
    pub min_samples: u64,
    /// Number of finest levels the bias regression uses.
    pub bias_window: usize,
    /// Below this many samples a level's variance is floored by extrapolation.
    pub variance_floor_count: u64,
}

impl Default for MlmcConfig {
    fn default() -> Self {
        MlmcConfig {
            epsilon: 0.01,
            l_min: 3,
            l_max: 12,
            initial_samples: 100,
            safety: 1.65,
            split: 0.5,
            min_samples: 2,
            bias_window: 4,
            variance_floor_count: 50,
        }
    }
}

impl MlmcConfig {
    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return fail(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.l_min > self.l_max {
            return fail(format!("l_min {} exceeds l_max {}", self.l_min, self.l_max));
        }
        if self.l_max > 40 {
            return fail(format!("l_max {} is unreasonably deep", self.l_max));
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            return fail(format!("split must lie in (0, 1), got {}", self.split));
        }
        if !(self.safety > 0.0 && self.safety.is_finite()) {
            return fail(format!("safety must be positive, got {}", self.safety));
        }
        if self.initial_samples < 2 || self.min_samples == 0 {
            return fail("need at least 2 pilot samples and a positive sample floor".into());
        }
        if self.bias_window < 2 {
            return fail("bias window must cover at least 2 levels".into());
        }
        Ok(())
    }

    fn bias_target(&self) -> f64 {
        (1.0 - self.split).sqrt() * self.epsilon
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlmcResult {
    pub estimate: f64,
    pub levels: Vec<LevelStats>,
    pub m_per_level: Vec<u64>,
    pub total_cost: u64,
    pub bias_estimate: f64,
    pub statistical_error: f64,
    pub converged: bool,
    pub max_level: u32,
    pub epsilon: f64,
}

/// `Mℓ = ⌈safety · (split ε²)⁻¹ · √(Vℓ/Cℓ) · Σⱼ √(Vⱼ Cⱼ)⌉`, at least `floor`.
pub fn choose_samples(
    variances: &[f64],
    costs: &[f64],
    epsilon: f64,
    split: f64,
    safety: f64,
    floor: u64,
) -> Result<Vec<u64>> {
    if variances.is_empty() || variances.len() != costs.len() {
        return Err(Error::Domain("need one variance and one cost per level".into()));
    }
    if variances.iter().any(|v| !(*v >= 0.0 && v.is_finite())) || costs.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
        return Err(Error::Domain(
            "variances must be non-negative and costs positive".into(),
        ));
    }
    let total: f64 = variances.iter().zip(costs).map(|(v, c)| (v * c).sqrt()).sum();
    let scale = safety / (split * epsilon * epsilon) * total;
    Ok(variances
        .iter()
        .zip(costs)
        .map(|(v, c)| {
            let m = (scale * (v / c).sqrt()).ceil();
            if m.is_finite() && m < u64::MAX as f64 {
                (m as u64).max(floor)
            } else {
                u64::MAX
            }
        })
        .collect())
}

/// Adds `count` samples with indices `start..start + count` to `stats`.
fn extend<F>(stats: &mut LevelStats, start: u64, count: u64, draw: F) -> Result<()>
where
    F: Fn(u64) -> Result<CorrectionSample> + Sync,
{
    let chunks = count.div_ceil(CHUNK);
    let level = stats.level;
    let parts = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let lo = start + c * CHUNK;
            let hi = (lo + CHUNK).min(start + count);
            let mut part = LevelStats::new(level);
            for n in lo..hi {
                let s = draw(n)?;
                part.update(s.value, s.cost);
            }
            Ok(part)
        })
        .collect::<Result<Vec<_>>>()?;
    for p in &parts {
        stats.merge(p);
    }
    Ok(())
}

/// Regression-smoothed estimate of the remaining bias `Σ_{ℓ>L} E[Δℓ]`.
///
/// `|E[Δℓ]|` is fitted as `c 2^{αℓ}` over the finest `window` correction
/// levels (level 0 excluded), the slope is clamped to `[-2, -0.5]` and the
/// geometric tail `m̂_L 2^α / (1 - 2^α)` is returned. With fewer than three
/// usable levels the raw `|mean_L|` and `α = -1` are used.
pub fn estimate_bias(levels: &[LevelStats], window: usize) -> f64 {
    let top = levels.len().saturating_sub(1);
    let lo = levels.len().saturating_sub(window).max(1);
    let points: Vec<(u32, f64)> = levels[lo.min(levels.len())..]
        .iter()
        .map(|s| (s.level, s.abs_mean()))
        .collect();
    let last = match levels.last() {
        Some(s) if top > 0 => s,
        _ => return 0.0,
    };
    let (slope, m_hat) = match fit_log2(&points) {
        Ok(fit) => {
            let slope = fit.slope.clamp(SLOPE_RANGE.0, SLOPE_RANGE.1);
            let n = points.len() as f64;
            let intercept = points.iter().map(|&(l, v)| v.log2() - slope * l as f64).sum::<f64>() / n;
            (slope, (intercept + slope * last.level as f64).exp2())
        }
        Err(_) => (-1.0, last.abs_mean()),
    };
    let r = slope.exp2();
    m_hat * r / (1.0 - r)
}

fn level_variances(levels: &[LevelStats], config: &MlmcConfig) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(levels.len());
    for (l, s) in levels.iter().enumerate() {
        let mut v = s.variance();
        if l >= 1 && s.count() < config.variance_floor_count {
            let lo = out.len().saturating_sub(config.bias_window).max(1);
            let pts: Vec<(u32, f64)> = (lo..l).map(|j| (j as u32, out[j])).collect();
            let extrapolated = match fit_log2(&pts) {
                Ok(fit) => fit.predict(l as u32),
                Err(_) if l >= 2 => 0.5 * out[l - 1],
                Err(_) => 0.0,
            };
            v = v.max(extrapolated);
        }
        out.push(v);
    }
    out
}

fn level_key(seed: u64, level: u32) -> StreamKey {
    StreamKey::root(seed).child(level as u64)
}

fn assemble(levels: Vec<LevelStats>, bias: f64, converged: bool, config: &MlmcConfig) -> MlmcResult {
    let estimate = levels.iter().map(|s| s.sum() / s.count() as f64).sum();
    let statistical_error = levels
        .iter()
        .map(|s| s.variance() / s.count() as f64)
        .sum::<f64>()
        .sqrt();
    MlmcResult {
        estimate,
        m_per_level: levels.iter().map(|s| s.count()).collect(),
        total_cost: levels.iter().map(|s| s.total_cost()).sum(),
        max_level: levels.len() as u32 - 1,
        levels,
        bias_estimate: bias,
        statistical_error,
        converged,
        epsilon: config.epsilon,
    }
}

/// Statistics of `count` correction samples at `level`, drawn with the same
/// stream keys `run_mlmc` uses for that seed.
pub fn level_statistics<P: NestedProblem>(
    problem: &P,
    estimator: &Estimator,
    level: u32,
    count: u64,
    seed: u64,
) -> Result<LevelStats> {
    estimator.check(problem)?;
    let key = level_key(seed, level);
    let mut stats = LevelStats::new(level);
    extend(&mut stats, 0, count, |n| estimator.sample(problem, level, key.child(n)))?;
    Ok(stats)
}

/// Runs the adaptive multilevel estimator of `U₀ = Σℓ E[Δℓ]` to root mean
/// square error `config.epsilon`.
///
/// Levels `0..=l_min` start with a pilot; sample counts are re-allocated
/// from the current variance and cost estimates until no level needs more
/// than 1% extra samples, then finer levels are added while the extrapolated
/// bias exceeds `√(1 - split) ε`. Hitting `l_max` returns an unconverged
/// result.
pub fn run_mlmc<P: NestedProblem>(
    problem: &P,
    estimator: &Estimator,
    config: &MlmcConfig,
    seed: u64,
) -> Result<MlmcResult> {
    config.validate()?;
    estimator.check(problem)?;
    let mut levels: Vec<LevelStats> = (0..=config.l_min).map(LevelStats::new).collect();
    let mut pending: Vec<u64> = vec![config.initial_samples; levels.len()];
    loop {
        for (stats, &add) in levels.iter_mut().zip(&pending) {
            if add > 0 {
                let level = stats.level;
                let key = level_key(seed, level);
                let start = stats.count();
                extend(stats, start, add, |n| estimator.sample(problem, level, key.child(n)))?;
            }
        }
        let variances = level_variances(&levels, config);
        let costs: Vec<f64> = levels.iter().map(|s| s.sample_cost().max(1.0)).collect();
        let target = choose_samples(
            &variances,
            &costs,
            config.epsilon,
            config.split,
            config.safety,
            config.min_samples,
        )?;
        pending = target
            .iter()
            .zip(&levels)
            .map(|(&t, s)| t.saturating_sub(s.count()))
            .collect();
        let settled = pending
            .iter()
            .zip(&levels)
            .all(|(&p, s)| p as f64 <= 0.01 * s.count() as f64);
        if !settled {
            continue;
        }
        let bias = estimate_bias(&levels, config.bias_window);
        if bias <= config.bias_target() {
            return Ok(assemble(levels, bias, true, config));
        }
        let next = levels.len() as u32;
        if next > config.l_max {
            return Ok(assemble(levels, bias, false, config));
        }
        levels.push(LevelStats::new(next));
        pending.push(config.initial_samples);
    }
}

/// Single-level nested Monte Carlo: `M` samples of `max{Û_L(Y_L), π(Y_L)}`
/// with `Û_L` an average of `m0 · 2^L` inner samples.
///
/// `L` is the first level at or above `l_min` whose extrapolated bias, fitted
/// to level differences of the same estimator, is below `√(1 - split) ε`. The
/// level differences are sampled until their standard errors resolve a
/// quarter of that target; this pilot is not included in the reported cost.
/// `M = ⌈safety · V̂ / (split ε²)⌉`.
pub fn nested_mc_baseline<P: NestedProblem>(
    problem: &P,
    m0: u64,
    config: &MlmcConfig,
    seed: u64,
) -> Result<MlmcResult> {
    config.validate()?;
    Estimator::NestedMcDifference { m0 }.check(problem)?;
    let resolution = 0.25 * config.bias_target();
    let pilot_cap = 1 << 22;
    let pilot_seed = StreamKey::root(seed).child(u64::MAX);

    let mut diffs: Vec<LevelStats> = Vec::new();
    let mut chosen = None;
    for level in 0..=config.l_max {
        let key = pilot_seed.child(level as u64);
        let mut stats = LevelStats::new(level);
        extend(&mut stats, 0, config.initial_samples, |n| {
            nested_mc_difference(problem, level, m0, key.child(n))
        })?;
        loop {
            let need = (stats.variance() / (resolution * resolution))
                .ceil()
                .min(pilot_cap as f64) as u64;
            if stats.count() >= need || level == 0 {
                break;
            }
            let start = stats.count();
            extend(&mut stats, start, need - start, |n| {
                nested_mc_difference(problem, level, m0, key.child(n))
            })?;
        }
        diffs.push(stats);
        if level >= config.l_min && estimate_bias(&diffs, config.bias_window) <= config.bias_target() {
            chosen = Some(level);
            break;
        }
    }
    let converged = chosen.is_some();
    let level = chosen.unwrap_or(config.l_max);
    let bias = estimate_bias(&diffs[..=level as usize], config.bias_window);

    let key = level_key(seed, level);
    let mut stats = LevelStats::new(level);
    let mut pending = config.initial_samples;
    while pending > 0 {
        let start = stats.count();
        extend(&mut stats, start, pending, |n| {
            nested_mc_sample(problem, level, m0, key.child(n))
        })?;
        let target = choose_samples(
            &[stats.variance()],
            &[1.0],
            config.epsilon,
            config.split,
            config.safety,
            config.min_samples,
        )?[0];
        pending = target.saturating_sub(stats.count());
    }
    let mut result = assemble(vec![stats], bias, converged, config);
    result.max_level = level;
    Ok(result)
}
