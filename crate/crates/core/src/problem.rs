//! The sampling contract every nested estimator consumes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::randomness::GaussianStream;

/// Most representations of `Y` an estimator evaluates inner samples at.
pub const MAX_Y_REPS: usize = 3;

/// How the outer variable `Y` is to be sampled at a given level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum YMode {
    /// Exact sample of `Y`; the level is ignored.
    Exact,
    /// A single level-ℓ approximation `Y_ℓ`.
    SingleApprox,
    /// `Y_ℓ` together with a coarse `Y_{ℓ-1}` driven by the same noise.
    CoupledPair,
    /// Two antithetic fine approximations and one coarse approximation.
    AntitheticTriple,
}

impl YMode {
    pub fn name(self) -> &'static str {
        match self {
            YMode::Exact => "exact",
            YMode::SingleApprox => "single-approximation",
            YMode::CoupledPair => "coupled-pair",
            YMode::AntitheticTriple => "antithetic-triple",
        }
    }
}

/// One draw of the outer variable in the requested representation.
///
/// `fine1` is present only in antithetic-triple mode; `coarse` is present in
/// coupled-pair and antithetic-triple mode at levels ℓ ≥ 1.
#[derive(Debug, Clone, PartialEq)]
pub struct YBundle<S> {
    pub fine0: S,
    pub fine1: Option<S>,
    pub coarse: Option<S>,
    pub cost: u64,
}

/// A two-stage problem `E[max{E[X|Y], π(Y)}]` exposed through multilevel
/// samplers.
///
/// `sample_dx(k, ys, ..)` must return samples of the inner correction `Δ_k X`
/// with `E[Δ_k X | Y] = E[X_k - X_{k-1} | Y]` (and `Δ_0 X = X_0`), evaluated at
/// every state in `ys` from the *same* inner noise. Evaluating at a single
/// state is the ordinary correction; at several states it yields the double
/// differences needed when `Y` itself is approximated.
///
/// Implementations must be usable from several threads at once.
pub trait NestedProblem: Sync {
    type State: Clone + Send + Sync;

    fn supports(&self, mode: YMode) -> bool;

    fn sample_y(&self, level: u32, mode: YMode, stream: &mut GaussianStream) -> Result<YBundle<Self::State>>;

    /// Writes `Δ_k X` at each of `ys` into `out` and returns the sample cost.
    fn sample_dx(&self, k: u32, ys: &[&Self::State], stream: &mut GaussianStream, out: &mut [f64]) -> u64;

    /// Writes one sample of `X_k` at each of `ys` into `out` (shared noise) and
    /// returns its cost.
    fn sample_x(&self, k: u32, ys: &[&Self::State], stream: &mut GaussianStream, out: &mut [f64]) -> u64;

    fn payoff(&self, y: &Self::State) -> f64;

    fn require(&self, mode: YMode) -> Result<()> {
        if self.supports(mode) {
            Ok(())
        } else {
            Err(Error::Capability(mode.name()))
        }
    }
}

/// Inner sample sizes `M_{ℓ,k} = max{⌈m00 · 2^(ℓ - ζ k)⌉, 1}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnerSchedule {
    pub m00: u64,
    pub zeta: f64,
}

impl Default for InnerSchedule {
    fn default() -> Self {
        InnerSchedule { m00: 16, zeta: 1.0 }
    }
}

impl InnerSchedule {
    pub fn new(m00: u64, zeta: f64) -> Result<Self> {
        if m00 == 0 {
            return Err(Error::Config("m00 must be positive".into()));
        }
        if !(zeta >= 1.0 && zeta.is_finite()) {
            return Err(Error::Config(format!("zeta must be >= 1, got {zeta}")));
        }
        Ok(InnerSchedule { m00, zeta })
    }

    pub fn size(&self, level: u32, k: u32) -> Result<u64> {
        if k > level {
            return Err(Error::Domain(format!("inner level {k} exceeds outer level {level}")));
        }
        Ok(self.size_unchecked(level, k))
    }

    pub(crate) fn size_unchecked(&self, level: u32, k: u32) -> u64 {
        let exponent = level as f64 - self.zeta * k as f64;
        let m = (self.m00 as f64 * exponent.exp2()).ceil();
        if m < 1.0 {
            1
        } else {
            m as u64
        }
    }
}

pub fn inner_sample_size(schedule: &InnerSchedule, level: u32, k: u32) -> Result<u64> {
    schedule.size(level, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_examples() {
        let s = InnerSchedule::new(16, 1.0).unwrap();
        assert_eq!(s.size(3, 2).unwrap(), 32);
        let s = InnerSchedule::new(16, 1.5).unwrap();
        assert_eq!(s.size(2, 2).unwrap(), 8);
        let s = InnerSchedule::new(1, 2.0).unwrap();
        assert_eq!(s.size(1, 1).unwrap(), 1);
        assert!(matches!(s.size(1, 2), Err(Error::Domain(_))));
    }

    #[test]
    fn schedule_rejects_bad_params() {
        assert!(InnerSchedule::new(0, 1.0).is_err());
        assert!(InnerSchedule::new(4, 0.5).is_err());
        assert!(InnerSchedule::new(4, f64::NAN).is_err());
    }

    #[test]
    fn schedule_non_increasing_in_k() {
        for zeta in [1.0, 1.25, 1.5, 2.0] {
            let s = InnerSchedule::new(5, zeta).unwrap();
            for l in 0..12 {
                let sizes: Vec<u64> = (0..=l).map(|k| s.size(l, k).unwrap()).collect();
                assert!(sizes.windows(2).all(|w| w[0] >= w[1]));
                assert!(sizes.iter().all(|&m| m >= 1));
            }
        }
    }
}
