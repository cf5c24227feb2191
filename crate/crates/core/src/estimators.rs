//! Correction-term samplers for the nested expectation
//! `U₀ = E[max{E[X|Y], π(Y)}]`.
//!
//! Every sampler here draws one realization of a multilevel correction term
//! from a [`StreamKey`]. Sub-streams are derived per role so that the two
//! coarse inner estimates, the extra fine-level inner samples and the outer
//! draw of `Y` never share noise, while every representation of `Y` inside
//! one correction sees exactly the same inner noise.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::problem::{InnerSchedule, NestedProblem, YMode, MAX_Y_REPS as MAX_REPS};
use crate::randomness::StreamKey;

/// Child indices of an outer-sample key.
pub mod role {
    /// The two conditionally independent coarse inner estimates.
    pub const COARSE: [u64; 2] = [0, 1];
    /// Inner samples that appear only in the fine estimate.
    pub const FINE: u64 = 2;
    /// The outer draw of `Y`.
    pub const Y: u64 = 3;
}

/// One realization of a correction term and the work it took.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrectionSample {
    pub value: f64,
    pub cost: u64,
}

/// `max{fine, π} - ½ Σᵢ max{coarseᵢ, π}`.
///
/// When `fine` is the midpoint of the coarse values and all three lie on the
/// same side of `π` this is exactly zero.
#[inline]
pub fn antithetic_difference(fine: f64, coarse: [f64; 2], payoff: f64) -> f64 {
    let v = fine.max(payoff) - 0.5 * (coarse[0].max(payoff) + coarse[1].max(payoff));
    debug_check_antithetic(fine, coarse, payoff, v);
    v
}

#[inline]
fn debug_check_antithetic(fine: f64, coarse: [f64; 2], payoff: f64, value: f64) {
    if cfg!(debug_assertions) && fine.is_finite() && coarse.iter().all(|c| c.is_finite()) {
        let mid = 0.5 * (coarse[0] + coarse[1]);
        let all_above = fine >= payoff && coarse.iter().all(|&c| c >= payoff);
        let all_below = fine <= payoff && coarse.iter().all(|&c| c <= payoff);
        if all_below || (all_above && fine == mid) {
            debug_assert_eq!(value, 0.0, "sign-agreement vanishing violated");
        }
        let scale = 1.0 + fine.abs() + coarse[0].abs() + coarse[1].abs() + payoff.abs();
        debug_assert!(
            value.abs() <= (fine - mid).abs() + 0.5 * (coarse[0] - coarse[1]).abs() + 1e-12 * scale,
            "Lipschitz bound violated"
        );
    }
}

/// Generic `g(z̄) - ½ Σ g(zᵢ)` for a function of a vector argument, with
/// `z̄` the midpoint of `z0` and `z1`.
pub fn antithetic_gap<G: Fn(&[f64]) -> f64>(g: G, z0: &[f64], z1: &[f64]) -> f64 {
    let mid: Vec<f64> = z0.iter().zip(z1).map(|(a, b)| 0.5 * (a + b)).collect();
    g(&mid) - 0.5 * (g(z0) + g(z1))
}

/// Adds `M⁻¹ Σₙ Δ_k X⁽ⁿ⁾(y)` for each `y` in `ys` into `acc`.
fn accumulate_dx<P: NestedProblem>(
    problem: &P,
    ys: &[&P::State],
    k: u32,
    m: u64,
    key: StreamKey,
    acc: &mut [f64],
) -> u64 {
    let reps = ys.len();
    debug_assert!(reps <= MAX_REPS);
    let mut sums = [0.0; MAX_REPS];
    let mut draw = [0.0; MAX_REPS];
    let mut cost = 0;
    let key = key.child(k as u64);
    for n in 0..m {
        let mut stream = key.child(n).stream();
        cost += problem.sample_dx(k, ys, &mut stream, &mut draw[..reps]);
        for (s, d) in sums.iter_mut().zip(&draw[..reps]) {
            *s += d;
        }
    }
    let inv = 1.0 / m as f64;
    for (a, s) in acc.iter_mut().zip(&sums[..reps]) {
        *a += s * inv;
    }
    cost
}

/// Plain inner average of `m` samples of `X_k` at `y`.
fn average_x<P: NestedProblem>(problem: &P, y: &P::State, k: u32, m: u64, key: StreamKey) -> (f64, u64) {
    let mut sum = 0.0;
    let mut cost = 0;
    let mut draw = [0.0];
    for n in 0..m {
        let mut stream = key.child(n).stream();
        cost += problem.sample_x(k, &[y], &mut stream, &mut draw);
        sum += draw[0];
    }
    (sum / m as f64, cost)
}

/// Nested Monte Carlo estimate of `E[X | Y = y]` from `m0 · 2^L` samples of `Δ₀X`.
pub fn inner_mc_estimate<P: NestedProblem>(
    problem: &P,
    y: &P::State,
    level: u32,
    m0: u64,
    key: StreamKey,
) -> (f64, u64) {
    let mut acc = [0.0];
    let cost = accumulate_dx(problem, &[y], 0, m0 << level, key, &mut acc);
    (acc[0], cost)
}

/// Antithetic nested Monte Carlo correction at an exactly sampled `y`.
///
/// For ℓ ≥ 1 the two coarse estimates are independent averages of
/// `m0 · 2^(ℓ-1)` samples and the fine estimate is their mean; at ℓ = 0 the
/// term is `max{Û₀(y), π(y)}`.
pub fn antithetic_mc_correction<P: NestedProblem>(
    problem: &P,
    y: &P::State,
    level: u32,
    m0: u64,
    key: StreamKey,
) -> CorrectionSample {
    let payoff = problem.payoff(y);
    if level == 0 {
        let (u, cost) = inner_mc_estimate(problem, y, 0, m0, key.child(role::FINE));
        return CorrectionSample {
            value: u.max(payoff),
            cost,
        };
    }
    let (u0, c0) = inner_mc_estimate(problem, y, level - 1, m0, key.child(role::COARSE[0]));
    let (u1, c1) = inner_mc_estimate(problem, y, level - 1, m0, key.child(role::COARSE[1]));
    CorrectionSample {
        value: antithetic_difference(0.5 * (u0 + u1), [u0, u1], payoff),
        cost: c0 + c1,
    }
}

/// Inner multilevel estimate `Σ_{k≤ℓ} M_{ℓ,k}⁻¹ Σₙ Δ_k X⁽ⁿ⁾(y)`.
pub fn inner_mlmc_estimate<P: NestedProblem>(
    problem: &P,
    y: &P::State,
    level: u32,
    schedule: &InnerSchedule,
    key: StreamKey,
) -> (f64, u64) {
    let mut acc = [0.0];
    let mut cost = 0;
    for k in 0..=level {
        cost += accumulate_dx(problem, &[y], k, schedule.size_unchecked(level, k), key, &mut acc);
    }
    (acc[0], cost)
}

/// Coarse inner MLMC estimates at every representation plus the extra
/// fine-level average at the first `fine_reps` representations.
struct AntitheticInner {
    coarse: [[f64; MAX_REPS]; 2],
    extra: [f64; MAX_REPS],
    cost: u64,
}

fn antithetic_inner<P: NestedProblem>(
    problem: &P,
    ys: &[&P::State],
    fine_reps: usize,
    level: u32,
    schedule: &InnerSchedule,
    key: StreamKey,
) -> AntitheticInner {
    debug_assert!(level >= 1 && fine_reps <= ys.len());
    let reps = ys.len();
    let mut out = AntitheticInner {
        coarse: [[0.0; MAX_REPS]; 2],
        extra: [0.0; MAX_REPS],
        cost: 0,
    };
    for (half, &r) in role::COARSE.iter().enumerate() {
        let half_key = key.child(r);
        for k in 0..level {
            let m = schedule.size_unchecked(level - 1, k);
            out.cost += accumulate_dx(problem, ys, k, m, half_key, &mut out.coarse[half][..reps]);
        }
    }
    out.cost += accumulate_dx(
        problem,
        &ys[..fine_reps],
        level,
        schedule.size_unchecked(level, level),
        key.child(role::FINE),
        &mut out.extra[..fine_reps],
    );
    out
}

/// `max{fine, π} - ½ Σᵢ max{coarseᵢ, π}` where the fine value is the mean of
/// the coarse values plus an extra fine-level term.
pub fn antithetic_ml_value(coarse: [f64; 2], extra: f64, payoff: f64) -> f64 {
    antithetic_difference(0.5 * (coarse[0] + coarse[1]) + extra, coarse, payoff)
}

/// Antithetic multilevel correction at an exactly sampled `y`.
pub fn antithetic_ml_correction<P: NestedProblem>(
    problem: &P,
    y: &P::State,
    level: u32,
    schedule: &InnerSchedule,
    key: StreamKey,
) -> CorrectionSample {
    let payoff = problem.payoff(y);
    if level == 0 {
        let (u, cost) = inner_mlmc_estimate(problem, y, 0, schedule, key.child(role::FINE));
        return CorrectionSample {
            value: u.max(payoff),
            cost,
        };
    }
    let inner = antithetic_inner(problem, &[y], 1, level, schedule, key);
    CorrectionSample {
        value: antithetic_ml_value([inner.coarse[0][0], inner.coarse[1][0]], inner.extra[0], payoff),
        cost: inner.cost,
    }
}

fn level_zero_approx<P: NestedProblem>(
    problem: &P,
    schedule: &InnerSchedule,
    key: StreamKey,
) -> Result<CorrectionSample> {
    let mode = if problem.supports(YMode::SingleApprox) {
        YMode::SingleApprox
    } else {
        YMode::Exact
    };
    let ys = problem.sample_y(0, mode, &mut key.child(role::Y).stream())?;
    let (u, cost) = inner_mlmc_estimate(problem, &ys.fine0, 0, schedule, key.child(role::FINE));
    Ok(CorrectionSample {
        value: u.max(problem.payoff(&ys.fine0)),
        cost: cost + ys.cost,
    })
}

/// Antithetic multilevel correction with a coupled pair `(Y_ℓ, Y_{ℓ-1})`: the
/// fine term is evaluated at `Y_ℓ`, both coarse terms at `Y_{ℓ-1}`.
pub fn antithetic_ml_correction_y<P: NestedProblem>(
    problem: &P,
    level: u32,
    schedule: &InnerSchedule,
    key: StreamKey,
) -> Result<CorrectionSample> {
    problem.require(YMode::CoupledPair)?;
    if level == 0 {
        return level_zero_approx(problem, schedule, key);
    }
    let ys = problem.sample_y(level, YMode::CoupledPair, &mut key.child(role::Y).stream())?;
    let coarse_y = ys.coarse.as_ref().expect("coupled pair without coarse state");
    let inner = antithetic_inner(problem, &[&ys.fine0, coarse_y], 1, level, schedule, key);

    let fine = 0.5 * (inner.coarse[0][0] + inner.coarse[1][0]) + inner.extra[0];
    let pf = problem.payoff(&ys.fine0);
    let pc = problem.payoff(coarse_y);
    let value = fine.max(pf) - 0.5 * (inner.coarse[0][1].max(pc) + inner.coarse[1][1].max(pc));
    Ok(CorrectionSample {
        value,
        cost: inner.cost + ys.cost,
    })
}

/// Doubly antithetic correction: two antithetic fine approximations of `Y`
/// and one coarse approximation,
/// `½ Σᵢ [max{fineᵢ(Y^{f,i}), π(Y^{f,i})} - max{coarseᵢ(Y^c), π(Y^c)}]`.
pub fn doubly_antithetic_correction<P: NestedProblem>(
    problem: &P,
    level: u32,
    schedule: &InnerSchedule,
    key: StreamKey,
) -> Result<CorrectionSample> {
    problem.require(YMode::AntitheticTriple)?;
    if level == 0 {
        return level_zero_approx(problem, schedule, key);
    }
    let ys = problem.sample_y(level, YMode::AntitheticTriple, &mut key.child(role::Y).stream())?;
    let fine1 = ys.fine1.as_ref().expect("antithetic triple without partner");
    let coarse_y = ys.coarse.as_ref().expect("antithetic triple without coarse state");
    let inner = antithetic_inner(problem, &[&ys.fine0, fine1, coarse_y], 2, level, schedule, key);

    let pc = problem.payoff(coarse_y);
    let mut value = 0.0;
    for (i, fy) in [&ys.fine0, fine1].into_iter().enumerate() {
        let fine = 0.5 * (inner.coarse[0][i] + inner.coarse[1][i]) + inner.extra[i];
        value += fine.max(problem.payoff(fy)) - inner.coarse[i][2].max(pc);
    }
    Ok(CorrectionSample {
        value: 0.5 * value,
        cost: inner.cost + ys.cost,
    })
}

fn single_or_exact<P: NestedProblem>(problem: &P) -> YMode {
    if problem.supports(YMode::SingleApprox) {
        YMode::SingleApprox
    } else {
        YMode::Exact
    }
}

/// One sample of `max{Û_L(Y_L), π(Y_L)}` with `Û_L` a plain average of
/// `m0 · 2^L` samples of `X_L`.
pub fn nested_mc_sample<P: NestedProblem>(
    problem: &P,
    level: u32,
    m0: u64,
    key: StreamKey,
) -> Result<CorrectionSample> {
    let ys = problem.sample_y(level, single_or_exact(problem), &mut key.child(role::Y).stream())?;
    let (u, cost) = average_x(problem, &ys.fine0, level, m0 << level, key.child(role::FINE));
    Ok(CorrectionSample {
        value: u.max(problem.payoff(&ys.fine0)),
        cost: cost + ys.cost,
    })
}

/// Difference of consecutive nested Monte Carlo levels with independent inner
/// samples; its mean is the level-to-level change of the single-level
/// estimator's expectation.
pub fn nested_mc_difference<P: NestedProblem>(
    problem: &P,
    level: u32,
    m0: u64,
    key: StreamKey,
) -> Result<CorrectionSample> {
    if level == 0 {
        return nested_mc_sample(problem, 0, m0, key);
    }
    let mode = if problem.supports(YMode::CoupledPair) {
        YMode::CoupledPair
    } else {
        YMode::Exact
    };
    let ys = problem.sample_y(level, mode, &mut key.child(role::Y).stream())?;
    let coarse_y = ys.coarse.as_ref().unwrap_or(&ys.fine0);
    let (uf, cf) = average_x(problem, &ys.fine0, level, m0 << level, key.child(role::FINE));
    let (uc, cc) = average_x(
        problem,
        coarse_y,
        level - 1,
        m0 << (level - 1),
        key.child(role::COARSE[0]),
    );
    Ok(CorrectionSample {
        value: uf.max(problem.payoff(&ys.fine0)) - uc.max(problem.payoff(coarse_y)),
        cost: cf + cc + ys.cost,
    })
}

/// Which correction family the outer multilevel sum is built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Estimator {
    /// Exact `X` and `Y`; antithetic inner Monte Carlo averages.
    AntitheticMc { m0: u64 },
    /// Exact `Y`; antithetic inner multilevel estimates.
    AntitheticMl(InnerSchedule),
    /// Coupled fine/coarse approximations of `Y`.
    AntitheticMlY(InnerSchedule),
    /// Antithetic fine pair and coarse approximation of `Y`.
    DoublyAntithetic(InnerSchedule),
    /// Non-antithetic nested Monte Carlo level differences.
    NestedMcDifference { m0: u64 },
}

impl Estimator {
    pub fn y_mode(&self) -> YMode {
        match self {
            Estimator::AntitheticMc { .. } | Estimator::AntitheticMl(_) => YMode::Exact,
            Estimator::AntitheticMlY(_) => YMode::CoupledPair,
            Estimator::DoublyAntithetic(_) => YMode::AntitheticTriple,
            Estimator::NestedMcDifference { .. } => YMode::SingleApprox,
        }
    }

    pub fn check<P: NestedProblem>(&self, problem: &P) -> Result<()> {
        match self {
            Estimator::NestedMcDifference { .. } => {
                if problem.supports(YMode::SingleApprox) {
                    problem.require(YMode::CoupledPair)
                } else {
                    problem.require(YMode::Exact)
                }
            }
            other => problem.require(other.y_mode()),
        }
    }

    /// Draws one correction sample at `level` from `key`.
    pub fn sample<P: NestedProblem>(&self, problem: &P, level: u32, key: StreamKey) -> Result<CorrectionSample> {
        match *self {
            Estimator::AntitheticMc { m0 } => {
                let ys = problem.sample_y(level, YMode::Exact, &mut key.child(role::Y).stream())?;
                let mut s = antithetic_mc_correction(problem, &ys.fine0, level, m0, key);
                s.cost += ys.cost;
                Ok(s)
            }
            Estimator::AntitheticMl(schedule) => {
                let ys = problem.sample_y(level, YMode::Exact, &mut key.child(role::Y).stream())?;
                let mut s = antithetic_ml_correction(problem, &ys.fine0, level, &schedule, key);
                s.cost += ys.cost;
                Ok(s)
            }
            Estimator::AntitheticMlY(schedule) => antithetic_ml_correction_y(problem, level, &schedule, key),
            Estimator::DoublyAntithetic(schedule) => doubly_antithetic_correction(problem, level, &schedule, key),
            Estimator::NestedMcDifference { m0 } => nested_mc_difference(problem, level, m0, key),
        }
    }
}
