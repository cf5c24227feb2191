//! Basket market model, Euler and Milstein steps, and the antithetic
//! fine/coarse path coupling used for the two-date Bermudan put.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{NestedProblem, YBundle, YMode, MAX_Y_REPS};
use crate::randomness::GaussianStream;

/// Largest supported number of risky assets.
pub const MAX_ASSETS: usize = 31;
const DIM: usize = MAX_ASSETS + 1;

/// `dS⁰ = σ⁰S⁰dW⁰`, `dSⁱ = rSⁱdt + (σⁱSⁱ + S⁰)dWⁱ` for `i = 1..d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketModel {
    pub d: usize,
    pub r: f64,
    pub sigma0: f64,
    /// σ¹..σᵈ
    pub sigma: Vec<f64>,
    /// S⁰..Sᵈ at time 0
    pub s0: Vec<f64>,
    pub maturity: f64,
    pub strike: f64,
}

impl MarketModel {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d == 0 || self.d > MAX_ASSETS {
            return bad(format!("d must be in 1..={MAX_ASSETS}, got {}", self.d));
        }
        if self.sigma.len() != self.d {
            return bad(format!("expected {} volatilities, got {}", self.d, self.sigma.len()));
        }
        if self.s0.len() != self.d + 1 {
            return bad(format!("expected {} initial values, got {}", self.d + 1, self.s0.len()));
        }
        if !(self.maturity > 0.0 && self.maturity.is_finite()) {
            return bad(format!("maturity must be positive, got {}", self.maturity));
        }
        if !(self.strike > 0.0 && self.strike.is_finite()) {
            return bad(format!("strike must be positive, got {}", self.strike));
        }
        if !self.r.is_finite() || self.s0.iter().any(|v| !v.is_finite()) {
            return bad("rate and initial values must be finite".into());
        }
        if std::iter::once(&self.sigma0)
            .chain(&self.sigma)
            .any(|&s| !(s >= 0.0 && s.is_finite()))
        {
            return bad("volatilities must be non-negative".into());
        }
        Ok(())
    }

    /// True when the `S⁰`-driven cross term of the Milstein update is active,
    /// i.e. the diffusion fields do not commute and dropping the Lévy area
    /// matters.
    pub fn is_non_commutative(&self) -> bool {
        self.sigma0 != 0.0 && self.s0[0] != 0.0
    }

    pub fn exercise_time(&self) -> f64 {
        0.5 * self.maturity
    }

    pub fn initial_state(&self) -> PathState {
        PathState {
            values: self.s0.clone(),
            time: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathState {
    pub values: Vec<f64>,
    pub time: f64,
}

/// In-place Milstein update with the Lévy area set to zero.
#[inline]
pub fn milstein_update(model: &MarketModel, s: &mut [f64], h: f64, dw: &[f64]) {
    let s0 = s[0];
    let w0 = dw[0];
    let cross = 0.5 * model.sigma0 * s0 * w0;
    for i in 1..=model.d {
        let si = s[i];
        let sig = model.sigma[i - 1];
        let diff = sig * si + s0;
        let w = dw[i];
        s[i] = si + model.r * si * h + diff * w + 0.5 * sig * diff * (w * w - h) + cross * w;
    }
    s[0] = s0 + model.sigma0 * s0 * w0 + 0.5 * model.sigma0 * model.sigma0 * s0 * (w0 * w0 - h);
}

/// In-place Euler-Maruyama update.
#[inline]
pub fn euler_update(model: &MarketModel, s: &mut [f64], h: f64, dw: &[f64]) {
    let s0 = s[0];
    for i in 1..=model.d {
        let si = s[i];
        s[i] = si + model.r * si * h + (model.sigma[i - 1] * si + s0) * dw[i];
    }
    s[0] = s0 + model.sigma0 * s0 * dw[0];
}

pub fn milstein_step(model: &MarketModel, state: &PathState, h: f64, dw: &[f64]) -> PathState {
    let mut values = state.values.clone();
    milstein_update(model, &mut values, h, dw);
    PathState {
        values,
        time: state.time + h,
    }
}

pub fn euler_step(model: &MarketModel, state: &PathState, h: f64, dw: &[f64]) -> PathState {
    let mut values = state.values.clone();
    euler_update(model, &mut values, h, dw);
    PathState {
        values,
        time: state.time + h,
    }
}

/// Discounted put on the basket mean, `e^{-rt} max{0, K - d⁻¹ Σᵢ Sⁱ}`.
#[inline]
pub fn payoff_values(model: &MarketModel, t: f64, values: &[f64]) -> f64 {
    let mean = values[1..=model.d].iter().sum::<f64>() / model.d as f64;
    (-model.r * t).exp() * (model.strike - mean).max(0.0)
}

pub fn payoff_pi(model: &MarketModel, t: f64, state: &PathState) -> f64 {
    payoff_values(model, t, &state.values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    Euler,
    AntitheticMilstein,
}

impl Scheme {
    #[inline]
    fn update(self, model: &MarketModel, s: &mut [f64], h: f64, dw: &[f64]) {
        match self {
            Scheme::Euler => euler_update(model, s, h, dw),
            Scheme::AntitheticMilstein => milstein_update(model, s, h, dw),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Fine0,
    Fine1,
    Coarse,
}

/// Advances every path in `paths` over a span of length `span` using `2^level`
/// fine steps. Fine paths take the increments in order (`Fine0`) or with each
/// pair swapped (`Fine1`); coarse paths take the pairwise sums with step `2h`.
/// At level 0 fine paths take a single step and coarse paths are left alone.
/// All paths share one set of increments; returns the number of draws.
fn drive(
    scheme: Scheme,
    model: &MarketModel,
    level: u32,
    span: f64,
    stream: &mut GaussianStream,
    paths: &mut [[f64; DIM]],
    roles: &[Role],
) -> u64 {
    let dim = model.d + 1;
    if level == 0 {
        let mut w = [0.0; DIM];
        stream.fill_gaussian(&mut w[..dim], span.sqrt());
        for (p, &role) in paths.iter_mut().zip(roles) {
            if role != Role::Coarse {
                scheme.update(model, &mut p[..dim], span, &w[..dim]);
            }
        }
        return dim as u64;
    }
    let steps = 1u64 << level;
    let h = span / steps as f64;
    let sq = h.sqrt();
    let mut a = [0.0; DIM];
    let mut b = [0.0; DIM];
    let mut c = [0.0; DIM];
    for _ in 0..steps / 2 {
        stream.fill_gaussian(&mut a[..dim], sq);
        stream.fill_gaussian(&mut b[..dim], sq);
        for j in 0..dim {
            c[j] = a[j] + b[j];
        }
        for (p, &role) in paths.iter_mut().zip(roles) {
            let p = &mut p[..dim];
            match role {
                Role::Fine0 => {
                    scheme.update(model, p, h, &a[..dim]);
                    scheme.update(model, p, h, &b[..dim]);
                }
                Role::Fine1 => {
                    scheme.update(model, p, h, &b[..dim]);
                    scheme.update(model, p, h, &a[..dim]);
                }
                Role::Coarse => scheme.update(model, p, 2.0 * h, &c[..dim]),
            }
        }
    }
    dim as u64 * steps
}

fn load(values: &[f64]) -> [f64; DIM] {
    let mut out = [0.0; DIM];
    out[..values.len()].copy_from_slice(values);
    out
}

/// Starting states for the three coupled paths.
#[derive(Debug, Clone)]
pub struct TripleInit<'a> {
    pub fine0: &'a PathState,
    pub fine1: &'a PathState,
    pub coarse: &'a PathState,
}

/// Simulates two antithetic fine Milstein paths and one coarse path from `t0`
/// to `t1` with `2^level` fine steps. Returns the end states and the number of
/// Gaussian draws.
pub fn simulate_antithetic_triple(
    model: &MarketModel,
    t0: f64,
    t1: f64,
    level: u32,
    init: TripleInit<'_>,
    stream: &mut GaussianStream,
) -> Result<(PathState, PathState, PathState, u64)> {
    if level == 0 {
        return Err(Error::Domain(
            "antithetic coupling needs an even number of fine steps".into(),
        ));
    }
    if t1.partial_cmp(&t0) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::Domain(format!("empty time span [{t0}, {t1}]")));
    }
    if level > 62 {
        return Err(Error::Domain(format!("level {level} too deep")));
    }
    let mut paths = [
        load(&init.fine0.values),
        load(&init.fine1.values),
        load(&init.coarse.values),
    ];
    let roles = [Role::Fine0, Role::Fine1, Role::Coarse];
    let cost = drive(
        Scheme::AntitheticMilstein,
        model,
        level,
        t1 - t0,
        stream,
        &mut paths,
        &roles,
    );
    let dim = model.d + 1;
    let out = |p: &[f64; DIM]| PathState {
        values: p[..dim].to_vec(),
        time: t1,
    };
    Ok((out(&paths[0]), out(&paths[1]), out(&paths[2]), cost))
}

/// The two-date Bermudan put as a nested problem: `Y = S_{T/2}`,
/// `X = π_T(S_T)` and `π(Y) = π_{T/2}(Y)`.
#[derive(Debug, Clone)]
pub struct BermudanProblem {
    model: MarketModel,
    scheme: Scheme,
}

pub fn bermudan_problem(model: MarketModel, scheme: Scheme) -> Result<BermudanProblem> {
    BermudanProblem::new(model, scheme)
}

impl BermudanProblem {
    pub fn new(model: MarketModel, scheme: Scheme) -> Result<Self> {
        model.validate()?;
        Ok(BermudanProblem { model, scheme })
    }

    pub fn model(&self) -> &MarketModel {
        &self.model
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    fn state(&self, p: &[f64; DIM], time: f64) -> PathState {
        PathState {
            values: p[..self.model.d + 1].to_vec(),
            time,
        }
    }
}

impl NestedProblem for BermudanProblem {
    type State = PathState;

    fn supports(&self, mode: YMode) -> bool {
        match mode {
            YMode::Exact => false,
            YMode::SingleApprox | YMode::CoupledPair => true,
            YMode::AntitheticTriple => self.scheme == Scheme::AntitheticMilstein,
        }
    }

    fn sample_y(&self, level: u32, mode: YMode, stream: &mut GaussianStream) -> Result<YBundle<PathState>> {
        self.require(mode)?;
        let t = self.model.exercise_time();
        let start = load(&self.model.s0);
        let mut paths = [start; 3];
        let roles: &[Role] = match (mode, level) {
            (_, 0) | (YMode::SingleApprox, _) => &[Role::Fine0],
            (YMode::CoupledPair, _) => &[Role::Fine0, Role::Coarse],
            _ => &[Role::Fine0, Role::Fine1, Role::Coarse],
        };
        let cost = drive(
            self.scheme,
            &self.model,
            level,
            t,
            stream,
            &mut paths[..roles.len()],
            roles,
        );
        let fine0 = self.state(&paths[0], t);
        let (fine1, coarse) = match (mode, level) {
            (YMode::AntitheticTriple, 0) => (Some(fine0.clone()), None),
            (YMode::AntitheticTriple, _) => (Some(self.state(&paths[1], t)), Some(self.state(&paths[2], t))),
            (YMode::CoupledPair, l) if l > 0 => (None, Some(self.state(&paths[1], t))),
            _ => (None, None),
        };
        Ok(YBundle {
            fine0,
            fine1,
            coarse,
            cost,
        })
    }

    fn sample_dx(&self, k: u32, ys: &[&PathState], stream: &mut GaussianStream, out: &mut [f64]) -> u64 {
        debug_assert!(ys.len() <= MAX_Y_REPS);
        let model = &self.model;
        let t = model.maturity;
        let span = t - model.exercise_time();
        let mut paths = [[0.0; DIM]; 3 * MAX_Y_REPS];
        let mut roles = [Role::Fine0; 3 * MAX_Y_REPS];
        let per = match (k, self.scheme) {
            (0, _) => 1,
            (_, Scheme::Euler) => 2,
            (_, Scheme::AntitheticMilstein) => 3,
        };
        let mut n = 0;
        for y in ys {
            for role in [Role::Fine0, Role::Coarse, Role::Fine1].into_iter().take(per) {
                paths[n] = load(&y.values);
                roles[n] = role;
                n += 1;
            }
        }
        let cost = drive(self.scheme, model, k, span, stream, &mut paths[..n], &roles[..n]);
        for (r, o) in out.iter_mut().enumerate().take(ys.len()) {
            let p = &paths[r * per..(r + 1) * per];
            let pi = |i: usize| payoff_values(model, t, &p[i][..model.d + 1]);
            *o = match per {
                1 => pi(0),
                2 => pi(0) - pi(1),
                _ => 0.5 * (pi(0) + pi(2)) - pi(1),
            };
        }
        cost
    }

    fn sample_x(&self, k: u32, ys: &[&PathState], stream: &mut GaussianStream, out: &mut [f64]) -> u64 {
        debug_assert!(ys.len() <= MAX_Y_REPS);
        let model = &self.model;
        let mut paths = [[0.0; DIM]; MAX_Y_REPS];
        for (p, y) in paths.iter_mut().zip(ys) {
            *p = load(&y.values);
        }
        let roles = [Role::Fine0; MAX_Y_REPS];
        let n = ys.len();
        let cost = drive(
            self.scheme,
            model,
            k,
            model.maturity - model.exercise_time(),
            stream,
            &mut paths[..n],
            &roles[..n],
        );
        for (o, p) in out.iter_mut().zip(&paths[..n]) {
            *o = payoff_values(model, model.maturity, &p[..model.d + 1]);
        }
        cost
    }

    fn payoff(&self, y: &PathState) -> f64 {
        payoff_values(&self.model, self.model.exercise_time(), &y.values)
    }
}
