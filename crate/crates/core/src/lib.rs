//! Nested multilevel Monte Carlo for `U₀ = E[max{E[X|Y], π(Y)}]`.
//!
//! The outer multilevel sum is built from antithetic corrections in which the
//! fine inner estimate is the average of two independent coarse estimates, so
//! the max-difference vanishes whenever all three lie on the same side of the
//! payoff. Inner expectations are themselves multilevel estimates, and when
//! `Y` is only available through a discretized path, a coupled fine/coarse
//! pair (or an antithetic fine pair) of `Y` approximations is used.

pub mod driver;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod problem;
pub mod randomness;
pub mod sde;
pub mod stats;

pub use driver::{
    choose_samples, estimate_bias, level_statistics, nested_mc_baseline, run_mlmc, MlmcConfig, MlmcResult,
};
pub use error::{Error, Result};
pub use estimators::{CorrectionSample, Estimator};
pub use experiments::{
    bermudan_config, bermudan_estimator, bermudan_schedule, oracle_level_value, oracle_nested_value, oracle_u0,
    DiscreteNestedSpec, DiscreteProblem,
};
pub use problem::{inner_sample_size, InnerSchedule, NestedProblem, YBundle, YMode};
pub use randomness::{derive_stream, GaussianStream, StreamKey};
pub use sde::{bermudan_problem, BermudanProblem, MarketModel, PathState, Scheme};
pub use stats::{fit_log2, fit_rate, LevelStats, RateField, RateFit};
