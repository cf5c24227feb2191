//! Concrete problem instances: the basket Bermudan configuration and finite
//! discrete problems whose nested values can be enumerated exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::Estimator;
use crate::problem::{InnerSchedule, NestedProblem, YBundle, YMode};
use crate::randomness::GaussianStream;
use crate::sde::{MarketModel, Scheme};

/// Four-asset basket with `r = 0.05`, `T = 2`, `S⁰₀ = 0.2`,
/// `σ⁰ = √(ln 2 / T)`, initial values evenly spaced on `[9.4, 10.6]`,
/// volatilities evenly spaced on `[0.3, 0.4]` and an at-the-money strike.
pub fn bermudan_config() -> MarketModel {
    let d = 4;
    let maturity = 2.0;
    let grid = |lo: f64, hi: f64| -> Vec<f64> { (0..d).map(|i| lo + (hi - lo) * i as f64 / (d - 1) as f64).collect() };
    let assets = grid(9.4, 10.6);
    let strike = assets.iter().sum::<f64>() / d as f64;
    let mut s0 = vec![0.2];
    s0.extend(&assets);
    MarketModel {
        d,
        r: 0.05,
        sigma0: (std::f64::consts::LN_2 / maturity).sqrt(),
        sigma: grid(0.3, 0.4),
        s0,
        maturity,
        strike,
    }
}

/// Inner schedule used for the Bermudan experiments: `M_{ℓ,k} = 4 · 2^{ℓ-k}`.
pub fn bermudan_schedule() -> InnerSchedule {
    InnerSchedule { m00: 4, zeta: 1.0 }
}

/// The correction family matching a discretization scheme: coupled
/// fine/coarse `Y` for Euler, antithetic fine pair for Milstein.
pub fn bermudan_estimator(scheme: Scheme, schedule: InnerSchedule) -> Estimator {
    match scheme {
        Scheme::Euler => Estimator::AntitheticMlY(schedule),
        Scheme::AntitheticMilstein => Estimator::DoublyAntithetic(schedule),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XOutcome {
    pub p: f64,
    pub x: f64,
}

impl XOutcome {
    pub fn new(p: f64, x: f64) -> Self {
        XOutcome { p, x }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct YOutcome {
    pub p: f64,
    pub y: f64,
    pub payoff: f64,
    pub x: Vec<XOutcome>,
}

impl YOutcome {
    pub fn new(p: f64, y: f64, payoff: f64, x: Vec<XOutcome>) -> Self {
        YOutcome { p, y, payoff, x }
    }

    pub fn conditional_mean(&self) -> f64 {
        self.x.iter().map(|o| o.p * o.x).sum()
    }
}

/// How sample cost is reported by [`DiscreteProblem`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostModel {
    /// Emulates a path simulation: `Δ_k X`, `X_k` and `Y_ℓ` cost `2^k` and `2^ℓ`.
    #[default]
    Geometric,
    /// The number of uniforms actually drawn.
    Draws,
}

/// A finite two-stage problem.
///
/// `Y` takes the listed outcomes; given outcome `i`, `X` is drawn from the
/// listed table. Level `k` of the inner variable is
/// `X_k = x + δ_x 2^{-k} + γ s 2^{-qk} + shift`, with `s = ±1` an independent
/// sign and `shift = δ_y 2^{-ℓ}` the offset carried by the level-ℓ
/// approximation of `Y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscreteNestedSpec {
    pub outcomes: Vec<YOutcome>,
    #[serde(default)]
    pub delta_x: f64,
    #[serde(default)]
    pub delta_y: f64,
    /// γ
    #[serde(default)]
    pub x_noise: f64,
    /// q
    #[serde(default = "default_noise_decay")]
    pub noise_decay: f64,
    /// Constant subtracted from every `Δ_k X`, `k ≥ 1`. Breaks telescoping on
    /// purpose; only useful as a negative control.
    #[serde(default)]
    pub coupling_defect: f64,
    #[serde(default)]
    pub cost_model: CostModel,
}

fn default_noise_decay() -> f64 {
    1.0
}

impl DiscreteNestedSpec {
    pub fn new(outcomes: Vec<YOutcome>) -> Self {
        DiscreteNestedSpec {
            outcomes,
            delta_x: 0.0,
            delta_y: 0.0,
            x_noise: 0.0,
            noise_decay: default_noise_decay(),
            coupling_defect: 0.0,
            cost_model: CostModel::Geometric,
        }
    }

    pub fn with_perturbations(mut self, delta_x: f64, delta_y: f64) -> Self {
        self.delta_x = delta_x;
        self.delta_y = delta_y;
        self
    }

    pub fn with_noise(mut self, gamma: f64, decay: f64) -> Self {
        self.x_noise = gamma;
        self.noise_decay = decay;
        self
    }

    pub fn with_coupling_defect(mut self, defect: f64) -> Self {
        self.coupling_defect = defect;
        self
    }

    pub fn with_cost_model(mut self, model: CostModel) -> Self {
        self.cost_model = model;
        self
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        fn probs(ps: impl Iterator<Item = f64>, what: &str) -> Result<()> {
            let mut total = 0.0;
            for p in ps {
                if !(p.is_finite() && p >= 0.0) {
                    return Err(Error::Config(format!("{what} probability {p} is invalid")));
                }
                total += p;
            }
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("{what} probabilities sum to {total}")));
            }
            Ok(())
        }
        if self.outcomes.is_empty() {
            return Err(Error::Config("spec has no outcomes".into()));
        }
        probs(self.outcomes.iter().map(|o| o.p), "y")?;
        for (i, o) in self.outcomes.iter().enumerate() {
            if o.x.is_empty() {
                return Err(Error::Config(format!("outcome {i} has no x values")));
            }
            probs(o.x.iter().map(|x| x.p), "x")?;
            if !o.y.is_finite() || !o.payoff.is_finite() || o.x.iter().any(|x| !x.x.is_finite()) {
                return Err(Error::Config(format!("outcome {i} has a non-finite value")));
            }
        }
        let params = [self.delta_x, self.delta_y, self.x_noise, self.coupling_defect];
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("perturbations must be finite".into()));
        }
        if !(self.noise_decay > 0.0 && self.noise_decay.is_finite()) {
            return Err(Error::Config(format!(
                "noise_decay must be positive, got {}",
                self.noise_decay
            )));
        }
        Ok(())
    }

    /// Five outcomes with conditional means on both sides of the payoff.
    pub fn mixed_signs() -> Self {
        let x = |v: &[(f64, f64)]| v.iter().map(|&(p, x)| XOutcome::new(p, x)).collect();
        DiscreteNestedSpec::new(vec![
            YOutcome::new(0.2, 0.0, 0.3, x(&[(0.5, 1.0), (0.5, -0.6)])),
            YOutcome::new(0.15, 1.0, 0.0, x(&[(0.3, -1.0), (0.7, 0.5)])),
            YOutcome::new(0.25, 2.0, 0.5, x(&[(0.25, 2.0), (0.5, 0.4), (0.25, -0.4)])),
            YOutcome::new(0.3, 3.0, -0.2, x(&[(0.6, -0.5), (0.4, 0.2)])),
            YOutcome::new(0.1, 4.0, 1.0, x(&[(0.5, 3.0), (0.5, -1.4)])),
        ])
        .with_perturbations(0.1, 0.1)
    }

    /// Many outcomes whose conditional means sit close to the payoff, so
    /// antithetic differences are frequently nonzero at low levels.
    pub fn near_kink(outcomes: usize) -> Self {
        let n = outcomes.max(2);
        let list = (0..n)
            .map(|i| {
                let margin = -0.5 + i as f64 / (n - 1) as f64;
                let x = NEAR_KINK_OFFSETS
                    .iter()
                    .map(|o| XOutcome::new(1.0 / NEAR_KINK_OFFSETS.len() as f64, margin + o))
                    .collect();
                YOutcome::new(1.0 / n as f64, i as f64, 0.0, x)
            })
            .collect();
        let mut spec = DiscreteNestedSpec::new(list);
        // keep the outcome probabilities summing to one exactly
        let tail: f64 = spec.outcomes[1..].iter().map(|o| o.p).sum();
        spec.outcomes[0].p = 1.0 - tail;
        spec
    }
}

/// Zero-mean, deliberately irregular spread so inner averages of different
/// sizes do not share lattice points.
const NEAR_KINK_OFFSETS: [f64; 6] = [-1.3, -0.7, -0.2, 0.4, 0.6, 1.2];

/// An outcome index of `Y` with the offset of its level approximation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscreteState {
    pub index: usize,
    pub shift: f64,
}

#[derive(Debug, Clone)]
pub struct DiscreteProblem {
    spec: DiscreteNestedSpec,
    y_cdf: Vec<f64>,
    x_cdf: Vec<Vec<f64>>,
}

fn cumulative(ps: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    ps.map(|p| {
        acc += p;
        acc
    })
    .collect()
}

fn invert(cdf: &[f64], u: f64) -> usize {
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

impl DiscreteProblem {
    pub fn new(spec: DiscreteNestedSpec) -> Result<Self> {
        spec.validate()?;
        let y_cdf = cumulative(spec.outcomes.iter().map(|o| o.p));
        let x_cdf = spec
            .outcomes
            .iter()
            .map(|o| cumulative(o.x.iter().map(|x| x.p)))
            .collect();
        Ok(DiscreteProblem { spec, y_cdf, x_cdf })
    }

    pub fn spec(&self) -> &DiscreteNestedSpec {
        &self.spec
    }

    pub fn state(&self, index: usize, shift: f64) -> DiscreteState {
        DiscreteState { index, shift }
    }

    fn y_shift(&self, level: u32) -> f64 {
        self.spec.delta_y * (-(level as f64)).exp2()
    }

    fn x_level(&self, k: u32, sign: f64) -> f64 {
        let k = k as f64;
        self.spec.delta_x * (-k).exp2() + self.spec.x_noise * sign * (-self.spec.noise_decay * k).exp2()
    }

    /// Draws the shared inner noise: a uniform selecting the `x` row and, when
    /// noise is enabled, a uniform sign.
    fn draw_inner(&self, stream: &mut GaussianStream) -> (f64, f64) {
        let u = stream.next_uniform();
        let sign = if self.spec.x_noise != 0.0 {
            if stream.next_uniform() < 0.5 {
                -1.0
            } else {
                1.0
            }
        } else {
            0.0
        };
        (u, sign)
    }

    fn x_value(&self, y: &DiscreteState, u: f64) -> f64 {
        let row = &self.spec.outcomes[y.index].x;
        row[invert(&self.x_cdf[y.index], u)].x
    }

    fn cost(&self, level: u32, before: u64, stream: &GaussianStream) -> u64 {
        match self.spec.cost_model {
            CostModel::Geometric => 1 << level,
            CostModel::Draws => stream.count() - before,
        }
    }
}

impl NestedProblem for DiscreteProblem {
    type State = DiscreteState;

    fn supports(&self, _mode: YMode) -> bool {
        true
    }

    fn sample_y(&self, level: u32, mode: YMode, stream: &mut GaussianStream) -> Result<YBundle<DiscreteState>> {
        let before = stream.count();
        let index = invert(&self.y_cdf, stream.next_uniform());
        let fine0 = DiscreteState {
            index,
            shift: if mode == YMode::Exact { 0.0 } else { self.y_shift(level) },
        };
        let coarse = match mode {
            YMode::CoupledPair | YMode::AntitheticTriple if level > 0 => Some(DiscreteState {
                index,
                shift: self.y_shift(level - 1),
            }),
            _ => None,
        };
        let fine1 = (mode == YMode::AntitheticTriple).then_some(fine0);
        let cost = match (mode, self.spec.cost_model) {
            (YMode::Exact, CostModel::Geometric) => 1,
            _ => self.cost(level, before, stream),
        };
        Ok(YBundle {
            fine0,
            fine1,
            coarse,
            cost,
        })
    }

    fn sample_dx(&self, k: u32, ys: &[&DiscreteState], stream: &mut GaussianStream, out: &mut [f64]) -> u64 {
        let before = stream.count();
        let (u, sign) = self.draw_inner(stream);
        for (o, y) in out.iter_mut().zip(ys) {
            *o = if k == 0 {
                self.x_value(y, u) + self.x_level(0, sign) + y.shift
            } else {
                self.x_level(k, sign) - self.x_level(k - 1, sign) - self.spec.coupling_defect
            };
        }
        self.cost(k, before, stream)
    }

    fn sample_x(&self, k: u32, ys: &[&DiscreteState], stream: &mut GaussianStream, out: &mut [f64]) -> u64 {
        let before = stream.count();
        let (u, sign) = self.draw_inner(stream);
        for (o, y) in out.iter_mut().zip(ys) {
            *o = self.x_value(y, u) + self.x_level(k, sign) + y.shift;
        }
        self.cost(k, before, stream)
    }

    fn payoff(&self, y: &DiscreteState) -> f64 {
        self.spec.outcomes[y.index].payoff
    }
}

/// `U₀ = Σᵢ pᵢ max{E[X | Y = yᵢ], π(yᵢ)}` at the unperturbed values.
pub fn oracle_u0(spec: &DiscreteNestedSpec) -> f64 {
    spec.outcomes
        .iter()
        .map(|o| o.p * o.conditional_mean().max(o.payoff))
        .sum()
}

/// `Σᵢ pᵢ max{E[X_L | Y_L = yᵢ], π(yᵢ)}`, the value of the level-L problem
/// with exact inner expectations.
pub fn oracle_level_value(spec: &DiscreteNestedSpec, level: u32) -> f64 {
    let shift = (spec.delta_x + spec.delta_y) * (-(level as f64)).exp2();
    spec.outcomes
        .iter()
        .map(|o| o.p * (o.conditional_mean() + shift).max(o.payoff))
        .sum()
}

/// Smallest power of ten that puts every `x` value on an integer lattice.
fn lattice_quantum(spec: &DiscreteNestedSpec) -> Option<f64> {
    (0..=9).map(|j| 10f64.powi(-j)).find(|&q| {
        spec.outcomes
            .iter()
            .flat_map(|o| &o.x)
            .all(|x| ((x.x / q).round() * q - x.x).abs() < 1e-9 * q.max(x.x.abs()))
    })
}

/// Exact `E[max{x̄ₙ + shift, π(Y)}]` where `x̄ₙ` is the mean of `n` independent
/// draws from the conditional table, computed by convolving the lattice
/// distribution of the sum.
///
/// With no inner noise every `Δ_k X`, `k ≥ 1`, is deterministic, so an inner
/// multilevel estimate at level `L` equals such an average over its `k = 0`
/// samples plus `δ_x 2^{-L}`; this gives exact level expectations.
pub fn oracle_nested_value(spec: &DiscreteNestedSpec, n: u64, shift: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::Domain("need at least one inner sample".into()));
    }
    let q = lattice_quantum(spec).ok_or_else(|| Error::Domain("x values are not on a decimal lattice".into()))?;
    let mut total = 0.0;
    for o in &spec.outcomes {
        let steps: Vec<i64> = o.x.iter().map(|x| (x.x / q).round() as i64).collect();
        let lo = *steps.iter().min().unwrap();
        let width = (*steps.iter().max().unwrap() - lo) as usize;
        let support = width * n as usize + 1;
        if support > 50_000_000 {
            return Err(Error::Domain(format!("lattice of {support} points is too large")));
        }
        let mut dist = vec![0.0; support];
        dist[0] = 1.0;
        let mut next = vec![0.0; support];
        for draw in 0..n as usize {
            let reach = width * draw + 1;
            next[..reach + width].iter_mut().for_each(|v| *v = 0.0);
            for (i, &p) in dist[..reach].iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                for (s, x) in steps.iter().zip(&o.x) {
                    next[i + (s - lo) as usize] += p * x.p;
                }
            }
            std::mem::swap(&mut dist, &mut next);
        }
        let inv = 1.0 / n as f64;
        let value: f64 = dist
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(i, &p)| {
                let mean = (i as f64 * inv + lo as f64) * q;
                p * (mean + shift).max(o.payoff)
            })
            .sum();
        total += o.p * value;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::randomness::derive_stream;

    #[test]
    fn bermudan_parameters() {
        let m = bermudan_config();
        assert_eq!(m.strike, 10.0);
        assert_eq!(m.maturity, 2.0);
        assert!((m.sigma0 - 0.58870).abs() < 1e-5);
        assert_eq!(m.s0, vec![0.2, 9.4, 9.8, 10.2, 10.6]);
        assert!((m.sigma[1] - 0.3 - 0.1 / 3.0).abs() < 1e-15);
        assert_eq!(m.sigma[3], 0.4);
        m.validate().unwrap();
    }

    #[test]
    fn two_point_oracle() {
        let spec = DiscreteNestedSpec::new(vec![
            YOutcome::new(0.5, 0.0, 0.0, vec![XOutcome::new(1.0, 1.0)]),
            YOutcome::new(0.5, 1.0, 0.0, vec![XOutcome::new(0.5, 0.0), XOutcome::new(0.5, -2.0)]),
        ]);
        assert_eq!(oracle_u0(&spec), 0.5);
    }

    #[test]
    fn payoff_dominant_oracle() {
        let mut spec = DiscreteNestedSpec::mixed_signs();
        for o in &mut spec.outcomes {
            o.payoff = 5.0;
        }
        assert!((oracle_u0(&spec) - 5.0).abs() < 1e-12);
    }

    // Frozen from an exact rational enumeration done outside this crate.
    #[test]
    fn mixed_signs_frozen_values() {
        let spec = DiscreteNestedSpec::mixed_signs();
        assert!((oracle_u0(&spec) - 0.2575).abs() < 1e-12);
        for (l, v) in [(0, 0.4115), (1, 0.3215), (2, 0.2865), (3, 0.269)] {
            assert!((oracle_level_value(&spec, l) - v).abs() < 1e-12, "level {l}");
        }
        assert!((oracle_level_value(&spec, 60) - oracle_u0(&spec)).abs() < 1e-12);
        let flat = spec.clone().with_perturbations(0.0, 0.0);
        for l in 0..5 {
            assert!((oracle_level_value(&flat, l) - oracle_u0(&flat)).abs() < 1e-15);
        }
    }

    #[test]
    fn nested_oracle_small_cases() {
        let spec = DiscreteNestedSpec::new(vec![YOutcome::new(
            1.0,
            0.0,
            0.0,
            vec![XOutcome::new(0.5, 1.0), XOutcome::new(0.5, -1.0)],
        )]);
        // one draw: ½·1 + ½·0; two draws: ¼·1 + ½·0 + ¼·0
        assert!((oracle_nested_value(&spec, 1, 0.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((oracle_nested_value(&spec, 2, 0.0).unwrap() - 0.25).abs() < 1e-15);
        // E|S_n|/2n for a simple random walk with n = 4: E|S_4| = 1.5
        assert!((oracle_nested_value(&spec, 4, 0.0).unwrap() - 1.5 / 8.0).abs() < 1e-15);
        // large n approaches max{E[X], π}
        let big = oracle_nested_value(&DiscreteNestedSpec::mixed_signs(), 4096, 0.0).unwrap();
        assert!((big - 0.2575).abs() < 0.02, "{big}");
    }

    #[test]
    fn toml_round_trip() {
        let spec = DiscreteNestedSpec::mixed_signs().with_noise(0.2, 0.5);
        let text = spec.to_toml_string();
        assert_eq!(DiscreteNestedSpec::from_toml_str(&text).unwrap(), spec);
    }

    #[test]
    fn toml_rejects_bad_probabilities() {
        let text = "[[outcomes]]\np = 0.5\ny = 0.0\npayoff = 0.0\nx = [{ p = 1.0, x = 1.0 }]\n";
        assert!(matches!(DiscreteNestedSpec::from_toml_str(text), Err(Error::Config(_))));
        assert!(DiscreteNestedSpec::from_toml_str("outcomes = 3").is_err());
    }

    #[test]
    fn sampling_frequencies_match_table() {
        let p = DiscreteProblem::new(DiscreteNestedSpec::mixed_signs()).unwrap();
        let n = 200_000;
        let mut counts = [0usize; 5];
        let mut s = derive_stream(4, &[]);
        for _ in 0..n {
            counts[p.sample_y(0, YMode::Exact, &mut s).unwrap().fine0.index] += 1;
        }
        for (c, o) in counts.iter().zip(&p.spec().outcomes) {
            let f = *c as f64 / n as f64;
            assert!((f - o.p).abs() < 4.0 * (o.p * (1.0 - o.p) / n as f64).sqrt());
        }
    }

    #[test]
    fn telescoping_by_enumeration() {
        // every inner draw u gives Σ_{k≤K} Δ_k X = X_K exactly
        let spec = DiscreteNestedSpec::mixed_signs().with_noise(0.3, 0.75);
        let p = DiscreteProblem::new(spec).unwrap();
        for i in 0..5 {
            let y = p.state(i, 0.0125);
            for seed in 0..50u64 {
                for big_k in 0..6u32 {
                    let mut total = 0.0;
                    let mut out = [0.0];
                    for k in 0..=big_k {
                        p.sample_dx(k, &[&y], &mut derive_stream(seed, &[]), &mut out);
                        total += out[0];
                    }
                    p.sample_x(big_k, &[&y], &mut derive_stream(seed, &[]), &mut out);
                    assert!((total - out[0]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn draws_cost_model_counts_uniforms() {
        let spec = DiscreteNestedSpec::mixed_signs()
            .with_noise(0.1, 1.0)
            .with_cost_model(CostModel::Draws);
        let p = DiscreteProblem::new(spec).unwrap();
        let mut s = derive_stream(0, &[]);
        let y = p.sample_y(4, YMode::AntitheticTriple, &mut s).unwrap();
        assert_eq!(y.cost, 1);
        let mut out = [0.0; 3];
        let c = p.sample_dx(3, &[&y.fine0, &y.fine0, &y.fine0], &mut s, &mut out);
        assert_eq!(c, 2);
        assert_eq!(s.count(), 3);
    }
}
