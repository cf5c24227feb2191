//! End-to-end wiring: every correction family's level means must match
//! differences of exactly enumerated level expectations.

use std::sync::atomic::{AtomicU64, Ordering};

use nested_mlmc::*;

const SAMPLES: u64 = 100_000;

fn spec() -> DiscreteNestedSpec {
    DiscreteNestedSpec::mixed_signs()
}

fn schedule() -> InnerSchedule {
    InnerSchedule::new(2, 1.0).unwrap()
}

/// Exact `E[max{inner estimate at level ℓ, π}]` for each family.
fn level_value(est: &Estimator, level: u32) -> f64 {
    let s = spec();
    let scale = (-(level as f64)).exp2();
    let (n, shift) = match est {
        Estimator::AntitheticMc { m0 } => (m0 << level, s.delta_x),
        Estimator::AntitheticMl(sch) => (sch.size(level, 0).unwrap(), s.delta_x * scale),
        Estimator::AntitheticMlY(sch) | Estimator::DoublyAntithetic(sch) => {
            (sch.size(level, 0).unwrap(), (s.delta_x + s.delta_y) * scale)
        }
        Estimator::NestedMcDifference { m0 } => (m0 << level, (s.delta_x + s.delta_y) * scale),
    };
    oracle_nested_value(&s, n, shift).unwrap()
}

fn z_scores<P: NestedProblem>(p: &P, est: &Estimator, top: u32, seed: u64) -> Vec<f64> {
    (0..=top)
        .map(|level| {
            let stats = level_statistics(p, est, level, SAMPLES, seed).unwrap();
            let expected = if level == 0 {
                level_value(est, 0)
            } else {
                level_value(est, level) - level_value(est, level - 1)
            };
            (stats.mean() - expected) / stats.std_error()
        })
        .collect()
}

fn families() -> Vec<Estimator> {
    vec![
        Estimator::AntitheticMc { m0: 2 },
        Estimator::AntitheticMl(schedule()),
        Estimator::AntitheticMlY(schedule()),
        Estimator::DoublyAntithetic(schedule()),
        Estimator::NestedMcDifference { m0: 2 },
    ]
}

#[test]
fn level_means_match_enumerated_differences() {
    let p = DiscreteProblem::new(spec()).unwrap();
    for (i, est) in families().iter().enumerate() {
        let z = z_scores(&p, est, 4, 40 + i as u64);
        assert!(z.iter().all(|z| z.abs() <= 3.0), "{est:?}: z-scores {z:?}");
    }
}

#[test]
fn broken_coupling_is_detected() {
    let p = DiscreteProblem::new(spec().with_coupling_defect(0.05)).unwrap();
    let z = z_scores(&p, &Estimator::AntitheticMlY(schedule()), 4, 41);
    assert!(z.iter().any(|z| z.abs() > 6.0), "defect went unnoticed: {z:?}");
}

#[test]
fn telescoped_sum_matches_finest_level() {
    let p = DiscreteProblem::new(spec()).unwrap();
    let est = Estimator::AntitheticMlY(schedule());
    let top = 4;
    let mut mean = 0.0;
    let mut var = 0.0;
    for level in 0..=top {
        let s = level_statistics(&p, &est, level, SAMPLES, 43).unwrap();
        mean += s.mean();
        var += s.std_error().powi(2);
    }
    let expected = level_value(&est, top);
    assert!((mean - expected).abs() <= 3.0 * var.sqrt(), "{mean} vs {expected}");
}

/// Counts every draw the wrapped problem takes from its streams.
struct Counting<P> {
    inner: P,
    draws: AtomicU64,
}

impl<P> Counting<P> {
    fn new(inner: P) -> Self {
        Counting {
            inner,
            draws: AtomicU64::new(0),
        }
    }

    fn take(&self) -> u64 {
        self.draws.swap(0, Ordering::SeqCst)
    }

    fn tally(&self, stream: &GaussianStream, before: u64) {
        self.draws.fetch_add(stream.count() - before, Ordering::SeqCst);
    }
}

impl<P: NestedProblem> NestedProblem for Counting<P> {
    type State = P::State;

    fn supports(&self, mode: YMode) -> bool {
        self.inner.supports(mode)
    }

    fn sample_y(&self, level: u32, mode: YMode, stream: &mut GaussianStream) -> Result<YBundle<P::State>> {
        let before = stream.count();
        let out = self.inner.sample_y(level, mode, stream);
        self.tally(stream, before);
        out
    }

    fn sample_dx(&self, k: u32, ys: &[&P::State], stream: &mut GaussianStream, out: &mut [f64]) -> u64 {
        let before = stream.count();
        let cost = self.inner.sample_dx(k, ys, stream, out);
        self.tally(stream, before);
        cost
    }

    fn sample_x(&self, k: u32, ys: &[&P::State], stream: &mut GaussianStream, out: &mut [f64]) -> u64 {
        let before = stream.count();
        let cost = self.inner.sample_x(k, ys, stream, out);
        self.tally(stream, before);
        cost
    }

    fn payoff(&self, y: &P::State) -> f64 {
        self.inner.payoff(y)
    }
}

#[test]
fn reported_cost_equals_draws() {
    for scheme in [Scheme::Euler, Scheme::AntitheticMilstein] {
        let p = Counting::new(BermudanProblem::new(bermudan_config(), scheme).unwrap());
        let mut ests = vec![
            Estimator::AntitheticMlY(bermudan_schedule()),
            Estimator::NestedMcDifference { m0: 2 },
        ];
        if scheme == Scheme::AntitheticMilstein {
            ests.push(Estimator::DoublyAntithetic(bermudan_schedule()));
        }
        for est in &ests {
            for level in 0..5 {
                let s = level_statistics(&p, est, level, 50, 3).unwrap();
                assert_eq!(s.total_cost(), p.take(), "{scheme:?} {est:?} level {level}");
            }
        }
        let est = bermudan_estimator(scheme, bermudan_schedule());
        let r = run_mlmc(&p, &est, &MlmcConfig::default().with_epsilon(0.05), 1).unwrap();
        assert_eq!(r.total_cost, p.take());
    }

    let spec = spec()
        .with_noise(0.1, 1.0)
        .with_cost_model(experiments::CostModel::Draws);
    let p = Counting::new(DiscreteProblem::new(spec).unwrap());
    for est in families() {
        for level in 0..4 {
            let s = level_statistics(&p, &est, level, 200, 5).unwrap();
            assert_eq!(s.total_cost(), p.take(), "{est:?} level {level}");
        }
    }
}

#[test]
fn bermudan_cost_formula() {
    // (d + 1) per step; ΔₖX paths share increments, so each inner sample
    // costs 5 · 2^k and Y costs 5 · 2^ℓ
    let p = BermudanProblem::new(bermudan_config(), Scheme::AntitheticMilstein).unwrap();
    let sch = bermudan_schedule();
    let est = Estimator::DoublyAntithetic(sch);
    for level in 1..=8u32 {
        let inner: u64 = 2
            * (0..level)
                .map(|k| sch.size(level - 1, k).unwrap() * (5 << k))
                .sum::<u64>()
            + sch.size(level, level).unwrap() * (5 << level);
        let expected = inner + (5 << level);
        let got = est.sample(&p, level, StreamKey::root(level as u64)).unwrap().cost;
        assert_eq!(got, expected);
        assert_eq!(got, 20 * (level as u64 + 1) * (1 << level) + 5 * (1 << level));
    }
}

#[test]
fn y_approximate_cost_per_level_is_bounded() {
    let p = BermudanProblem::new(bermudan_config(), Scheme::Euler).unwrap();
    let est = Estimator::AntitheticMlY(InnerSchedule::default());
    let ratios: Vec<f64> = (2..=8u32)
        .map(|l| {
            let c = est.sample(&p, l, StreamKey::root(0)).unwrap().cost as f64;
            c / ((l as f64 + 1.0) * (l as f64).exp2())
        })
        .collect();
    let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().cloned().fold(0.0, f64::max);
    assert!(hi <= 1.1 * lo, "{ratios:?}");
}
