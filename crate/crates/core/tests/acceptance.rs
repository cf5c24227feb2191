//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! Run a subset with `cargo test -p nested-mlmc --test acceptance -- 1 5 9`.

use std::process::ExitCode;
use std::time::Instant;

use nested_mlmc::estimators::antithetic_gap;
use nested_mlmc::*;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Result<Verdict> {
    Ok(Verdict { passed, detail })
}

fn scheme_name(s: Scheme) -> &'static str {
    match s {
        Scheme::Euler => "euler",
        Scheme::AntitheticMilstein => "milstein",
    }
}

fn bermudan(scheme: Scheme) -> (BermudanProblem, Estimator) {
    let p = BermudanProblem::new(bermudan_config(), scheme).expect("valid model");
    (p, bermudan_estimator(scheme, bermudan_schedule()))
}

/// Per-level statistics for levels 2..=8. Low levels get 10⁵ samples so small
/// means are resolved; deep levels get at least 2·10⁴.
fn level_sweep(scheme: Scheme) -> Result<Vec<LevelStats>> {
    let (p, est) = bermudan(scheme);
    let counts = [
        (2, 100_000),
        (3, 100_000),
        (4, 100_000),
        (5, 100_000),
        (6, 40_000),
        (7, 20_000),
        (8, 20_000),
    ];
    counts
        .iter()
        .map(|&(l, n)| level_statistics(&p, &est, l, n, 2024))
        .collect()
}

fn slopes(levels: &[LevelStats], field: RateField, range: (u32, u32)) -> Result<f64> {
    Ok(fit_rate(levels, field, range)?.slope)
}

type SweepCheck = fn(&[(Scheme, Vec<LevelStats>)]) -> Result<Verdict>;

fn criterion_1(sweeps: &[(Scheme, Vec<LevelStats>)]) -> Result<Verdict> {
    let mil = slopes(&sweeps[1].1, RateField::Variance, (2, 8))?;
    let eul = slopes(&sweeps[0].1, RateField::Variance, (2, 8))?;
    verdict(
        mil <= -1.25 && (eul + 1.0).abs() <= 0.25,
        format!("variance slope milstein {mil:.3} (<= -1.25), euler {eul:.3} (-1 ± 0.25)"),
    )
}

fn criterion_2(sweeps: &[(Scheme, Vec<LevelStats>)]) -> Result<Verdict> {
    let eul = slopes(&sweeps[0].1, RateField::AbsMean, (3, 8))?;
    let mil = slopes(&sweeps[1].1, RateField::AbsMean, (3, 8))?;
    verdict(
        (mil + 1.0).abs() <= 0.35 && (eul + 1.0).abs() <= 0.35,
        format!("|mean| slope milstein {mil:.3}, euler {eul:.3} (-1 ± 0.35)"),
    )
}

fn criterion_3(sweeps: &[(Scheme, Vec<LevelStats>)]) -> Result<Verdict> {
    let eul = slopes(&sweeps[0].1, RateField::Kurtosis, (3, 8))?;
    let mil = slopes(&sweeps[1].1, RateField::Kurtosis, (3, 8))?;
    verdict(
        (mil - 0.5).abs() <= 0.35 && eul.abs() <= 0.35,
        format!("kurtosis slope milstein {mil:.3} (0.5 ± 0.35), euler {eul:.3} (0 ± 0.35)"),
    )
}

fn criterion_4() -> Result<Verdict> {
    let mut detail = Vec::new();
    let mut passed = true;
    for scheme in [Scheme::Euler, Scheme::AntitheticMilstein] {
        let (p, est) = bermudan(scheme);
        let mut ratios = Vec::new();
        for level in 2..=10u32 {
            let costs: Vec<u64> = (0..3)
                .map(|n| {
                    est.sample(&p, level, StreamKey::from_path(4, &[level as u64, n]))
                        .map(|s| s.cost)
                })
                .collect::<Result<_>>()?;
            passed &= costs.iter().all(|&c| c == costs[0]);
            ratios.push(costs[0] as f64 / ((level as f64 + 1.0) * (level as f64).exp2()));
        }
        let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ratios.iter().cloned().fold(0.0, f64::max);
        passed &= hi <= 4.0 * lo;
        detail.push(format!("{} cost/((l+1)2^l) in [{lo:.3}, {hi:.3}]", scheme_name(scheme)));
    }
    verdict(passed, detail.join("; "))
}

fn criterion_5() -> Result<Verdict> {
    let spec = DiscreteNestedSpec::mixed_signs();
    let u0 = oracle_u0(&spec);
    let p = DiscreteProblem::new(spec)?;
    let config = MlmcConfig::default().with_epsilon(0.01 * u0.abs());
    let est = Estimator::AntitheticMlY(InnerSchedule::default());
    let mut hits = 0;
    for seed in 0..20 {
        let r = run_mlmc(&p, &est, &config, 500 + seed)?;
        if (r.estimate - u0).abs() <= 3.0 * config.epsilon {
            hits += 1;
        }
    }
    verdict(hits >= 18, format!("{hits}/20 runs within 3ε of U0 = {u0}"))
}

fn reference_value() -> Result<(f64, MlmcResult)> {
    let (p, est) = bermudan(Scheme::AntitheticMilstein);
    let rough = run_mlmc(&p, &est, &MlmcConfig::default().with_epsilon(0.01), 77)?;
    let config = MlmcConfig::default().with_epsilon(0.002 * rough.estimate.abs());
    let r = run_mlmc(&p, &est, &config, 78)?;
    Ok((r.estimate, r))
}

fn criterion_6(u_ref: f64) -> Result<Verdict> {
    let seeds = 8u64;
    let tolerances = [0.08, 0.04, 0.02, 0.01];
    let mut ratios = Vec::new();
    let mut rows = Vec::new();
    for tol in tolerances {
        let eps = tol * u_ref.abs();
        let config = MlmcConfig::default().with_epsilon(eps);
        let mut scaled = [0.0; 2];
        for (i, scheme) in [Scheme::Euler, Scheme::AntitheticMilstein].into_iter().enumerate() {
            let (p, est) = bermudan(scheme);
            for seed in 0..seeds {
                scaled[i] += run_mlmc(&p, &est, &config, 600 + seed)?.total_cost as f64 * eps * eps / seeds as f64;
            }
        }
        ratios.push(scaled[0] / scaled[1]);
        rows.push(format!(
            "{tol}: {:.1}/{:.1}={:.2}",
            scaled[0],
            scaled[1],
            scaled[0] / scaled[1]
        ));
    }
    let increasing = ratios.windows(2).all(|w| w[1] > w[0]);
    let last = *ratios.last().unwrap();
    verdict(
        increasing && last >= 2.0,
        format!("cost·ε² euler/milstein {}", rows.join(", ")),
    )
}

fn criterion_7() -> Result<Verdict> {
    let p = DiscreteProblem::new(DiscreteNestedSpec::near_kink(41))?;
    let est = Estimator::AntitheticMc { m0: 1 };
    let mut probs = Vec::new();
    for level in 1..=6 {
        let s = level_statistics(&p, &est, level, 100_000, 7)?;
        probs.push(s.nonzero() as f64 / s.count() as f64);
    }
    let decreasing = probs.windows(2).all(|w| w[1] < w[0]);
    let shown: Vec<String> = probs.iter().map(|p| format!("{p:.4}")).collect();
    verdict(decreasing, format!("P(Δ != 0) for l = 1..6: {}", shown.join(", ")))
}

fn criterion_8() -> Result<Verdict> {
    let mut stream = derive_stream(8, &[]);
    let pairs = 1_000_000;
    let mut violations = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let dim = 1 + (stream.next_uniform() * 6.0) as usize;
        let mut h = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..=i {
                let v = 2.0 * stream.next_uniform() - 1.0;
                h[i * dim + j] = v;
                h[j * dim + i] = v;
            }
        }
        let b: Vec<f64> = (0..dim).map(|_| stream.next_gaussian()).collect();
        // Frobenius norm bounds the spectral norm of the Hessian
        let bound = h.iter().map(|v| v * v).sum::<f64>().sqrt();
        let g = |z: &[f64]| {
            let mut q = 0.0;
            for i in 0..dim {
                for j in 0..dim {
                    q += z[i] * h[i * dim + j] * z[j];
                }
            }
            0.5 * q + b.iter().zip(z).map(|(a, x)| a * x).sum::<f64>()
        };
        let scale = (3.0 * stream.next_uniform() - 1.5).exp2();
        let z0: Vec<f64> = (0..dim).map(|_| scale * stream.next_gaussian()).collect();
        let z1: Vec<f64> = (0..dim).map(|_| scale * stream.next_gaussian()).collect();
        let gap = antithetic_gap(g, &z0, &z1);
        let dist2: f64 = z0.iter().zip(&z1).map(|(a, b)| (a - b).powi(2)).sum();
        let limit = 0.5 * bound * dist2;
        if gap.abs() > limit {
            violations += 1;
        }
        if limit > 0.0 {
            worst = worst.max(gap.abs() / limit);
        }
    }
    verdict(
        violations == 0,
        format!("{violations} violations in {pairs} pairs, largest |gap|/bound {worst:.3}"),
    )
}

fn criterion_9(u_ref: f64, reference: &MlmcResult) -> Result<Verdict> {
    let (p, est) = bermudan(Scheme::AntitheticMilstein);
    let config = MlmcConfig::default().with_epsilon(0.02 * u_ref.abs());
    let mut hits = 0;
    for seed in 0..20 {
        let r = run_mlmc(&p, &est, &config, 900 + seed)?;
        if (r.estimate - u_ref).abs() <= 3.0 * config.epsilon {
            hits += 1;
        }
    }
    verdict(
        hits >= 18,
        format!(
            "{hits}/20 runs within 3ε of U0_ref = {u_ref:.5} (reference L = {}, cost {})",
            reference.max_level, reference.total_cost
        ),
    )
}

fn report(id: u32, name: &str, started: Instant, outcome: Result<Verdict>) -> bool {
    let secs = started.elapsed().as_secs_f64();
    match outcome {
        Ok(v) => {
            let tag = if v.passed { "PASS" } else { "FAIL" };
            println!("criterion {id} [{tag}] {name}: {} ({secs:.1}s)", v.detail);
            v.passed
        }
        Err(e) => {
            println!("criterion {id} [FAIL] {name}: error {e} ({secs:.1}s)");
            false
        }
    }
}

fn main() -> ExitCode {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wants = |id: u32| selected.is_empty() || selected.contains(&id);
    let mut all = true;

    if wants(4) {
        all &= report(4, "cost law", Instant::now(), criterion_4());
    }
    if wants(7) {
        all &= report(7, "antithetic vanishing", Instant::now(), criterion_7());
    }
    if wants(8) {
        all &= report(8, "smooth antithetic bound", Instant::now(), criterion_8());
    }
    if wants(5) {
        all &= report(5, "oracle correctness", Instant::now(), criterion_5());
    }
    if wants(6) || wants(9) {
        let t = Instant::now();
        match reference_value() {
            Ok((u_ref, reference)) => {
                if wants(9) {
                    all &= report(9, "bermudan self-consistency", t, criterion_9(u_ref, &reference));
                }
                if wants(6) {
                    all &= report(6, "cost scaling ordering", Instant::now(), criterion_6(u_ref));
                }
            }
            Err(e) => {
                for id in [6, 9].into_iter().filter(|&i| wants(i)) {
                    all &= report(id, "reference run", t, Err(e.clone()));
                }
            }
        }
    }
    if wants(1) || wants(2) || wants(3) {
        let t = Instant::now();
        let sweeps: Result<Vec<(Scheme, Vec<LevelStats>)>> = [Scheme::Euler, Scheme::AntitheticMilstein]
            .into_iter()
            .map(|s| level_sweep(s).map(|l| (s, l)))
            .collect();
        match sweeps {
            Ok(sweeps) => {
                for (scheme, levels) in &sweeps {
                    for s in levels {
                        println!(
                            "  {} level {} n {} cost {:.0} mean {:.3e} var {:.3e} kurtosis {:.2}",
                            scheme_name(*scheme),
                            s.level,
                            s.count(),
                            s.sample_cost(),
                            s.mean(),
                            s.variance(),
                            s.kurtosis().unwrap_or(f64::NAN)
                        );
                    }
                }
                let checks: [(u32, &str, SweepCheck); 3] = [
                    (1, "variance rates", criterion_1),
                    (2, "bias rate", criterion_2),
                    (3, "kurtosis growth", criterion_3),
                ];
                for (id, name, check) in checks {
                    if wants(id) {
                        all &= report(id, name, t, check(&sweeps));
                    }
                }
            }
            Err(e) => {
                for id in [1, 2, 3].into_iter().filter(|&i| wants(i)) {
                    all &= report(id, "level sweep", t, Err(e.clone()));
                }
            }
        }
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
