//! The four run modes.

use std::io::Write;
use std::path::Path;

use nested_mlmc::{
    bermudan_estimator, choose_samples, estimate_bias, fit_rate, level_statistics, nested_mc_baseline,
    oracle_nested_value, run_mlmc, BermudanProblem, DiscreteNestedSpec, DiscreteProblem, Estimator, InnerSchedule,
    LevelStats, MlmcResult, NestedProblem, RateField,
};
use serde::Serialize;

use crate::config::{Experiment, Mode, RunConfig};
use crate::CliError;

/// Two-sided z-score above which a level mean disagrees with the oracle.
/// Loose enough for dozens of simultaneous comparisons.
pub const Z_LIMIT: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelRow {
    pub level: u32,
    pub sample_cost: f64,
    pub mean: f64,
    pub abs_mean: f64,
    pub var: f64,
    /// Empty when the level has zero variance.
    pub kurtosis: Option<f64>,
    pub n: u64,
}

impl From<&LevelStats> for LevelRow {
    fn from(s: &LevelStats) -> Self {
        LevelRow {
            level: s.level,
            sample_cost: s.sample_cost(),
            mean: s.mean(),
            abs_mean: s.abs_mean(),
            var: s.variance(),
            kurtosis: s.kurtosis().ok(),
            n: s.count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub tol: f64,
    #[serde(rename = "P")]
    pub p: f64,
    pub cost: u64,
    #[serde(rename = "L")]
    pub l: u32,
    pub bias: f64,
    pub converged: bool,
}

impl From<&MlmcResult> for SweepRow {
    fn from(r: &MlmcResult) -> Self {
        SweepRow {
            tol: r.epsilon,
            p: r.estimate,
            cost: r.total_cost,
            l: r.max_level,
            bias: r.bias_estimate,
            converged: r.converged,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyReport {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Runs the mode recorded in `cfg`. CSV goes to `cfg.output`, or to `out`
/// when no path is set; oracle-check reports always go to `out`.
pub fn execute(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    if let Some(path) = &cfg.output {
        check_writable(path)?;
    }
    match cfg.mode.unwrap_or(Mode::LevelStats) {
        Mode::LevelStats => {
            let rows = level_stats(cfg)?;
            emit(&rows, cfg, out)
        }
        Mode::MlmcSweep => {
            let rows = sweep(cfg, false)?;
            emit(&rows, cfg, out)
        }
        Mode::Baseline => {
            let rows = sweep(cfg, true)?;
            emit(&rows, cfg, out)
        }
        Mode::OracleCheck => {
            let reports = oracle_check(cfg)?;
            let mut text = String::new();
            for r in &reports {
                text += &format!("{} {}: {}\n", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
            }
            out.write_all(text.as_bytes())
                .map_err(|e| CliError::Io(e.to_string()))?;
            let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.name).collect();
            if failed.is_empty() {
                Ok(())
            } else {
                Err(CliError::Failed(format!("failed properties: {}", failed.join(", "))))
            }
        }
    }
}

fn check_writable(path: &Path) -> Result<(), CliError> {
    let parent = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    if !parent.is_dir() {
        return Err(CliError::Io(format!("{}: directory does not exist", parent.display())));
    }
    if path.is_dir() {
        return Err(CliError::Io(format!("{}: is a directory", path.display())));
    }
    Ok(())
}

pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Io(e.to_string()))?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

fn emit<T: Serialize>(rows: &[T], cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let bytes = to_csv(rows)?;
    match &cfg.output {
        Some(path) => std::fs::write(path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display()))),
        None => out.write_all(&bytes).map_err(|e| CliError::Io(e.to_string())),
    }
}

fn bermudan(cfg: &RunConfig) -> Result<(BermudanProblem, Estimator), CliError> {
    let scheme = cfg.experiment.scheme().expect("Bermudan experiment");
    let problem = BermudanProblem::new(cfg.model(), scheme)?;
    Ok((problem, bermudan_estimator(scheme, cfg.schedule())))
}

fn discrete(cfg: &RunConfig) -> Result<(DiscreteProblem, Estimator), CliError> {
    let problem = DiscreteProblem::new(cfg.discrete_spec())?;
    Ok((problem, Estimator::AntitheticMlY(cfg.schedule())))
}

pub fn level_stats(cfg: &RunConfig) -> Result<Vec<LevelRow>, CliError> {
    match cfg.experiment {
        Experiment::DiscreteOracle => {
            let (p, est) = discrete(cfg)?;
            level_rows(&p, &est, cfg)
        }
        _ => {
            let (p, est) = bermudan(cfg)?;
            level_rows(&p, &est, cfg)
        }
    }
}

fn level_rows<P: NestedProblem>(p: &P, est: &Estimator, cfg: &RunConfig) -> Result<Vec<LevelRow>, CliError> {
    cfg.levels
        .iter()
        .map(|level| {
            let s = level_statistics(p, est, level, cfg.samples, cfg.seed)?;
            log::info!(
                "level {level}: mean {:e} var {:e} cost {}",
                s.mean(),
                s.variance(),
                s.sample_cost()
            );
            Ok(LevelRow::from(&s))
        })
        .collect()
}

pub fn sweep(cfg: &RunConfig, baseline: bool) -> Result<Vec<SweepRow>, CliError> {
    match cfg.experiment {
        Experiment::DiscreteOracle => {
            let (p, est) = discrete(cfg)?;
            sweep_rows(&p, &est, cfg, baseline)
        }
        _ => {
            let (p, est) = bermudan(cfg)?;
            sweep_rows(&p, &est, cfg, baseline)
        }
    }
}

fn sweep_rows<P: NestedProblem>(
    p: &P,
    est: &Estimator,
    cfg: &RunConfig,
    baseline: bool,
) -> Result<Vec<SweepRow>, CliError> {
    let mut rows = Vec::new();
    for eps in cfg.epsilons() {
        let mlmc = cfg.mlmc.clone().with_epsilon(eps);
        for rep in 0..cfg.repetitions {
            let seed = cfg.seed.wrapping_add(rep);
            let r = if baseline {
                nested_mc_baseline(p, cfg.baseline_m0, &mlmc, seed)?
            } else {
                run_mlmc(p, est, &mlmc, seed)?
            };
            log::info!(
                "tol {eps:e} seed {seed}: P {:e} cost {} L {}{}",
                r.estimate,
                r.total_cost,
                r.max_level,
                if r.converged { "" } else { " (not converged)" }
            );
            rows.push(SweepRow::from(&r));
        }
    }
    Ok(rows)
}

/// Expected value of the level-ℓ inner estimate inside `max{·, π}` for each
/// correction family, enumerated exactly.
fn family_level_value(spec: &DiscreteNestedSpec, est: &Estimator, level: u32) -> Result<f64, CliError> {
    let scale = (-(level as f64)).exp2();
    let (n, shift) = match est {
        Estimator::AntitheticMc { m0 } => (m0 << level, spec.delta_x),
        Estimator::AntitheticMl(s) => (s.size(level, 0)?, spec.delta_x * scale),
        Estimator::AntitheticMlY(s) | Estimator::DoublyAntithetic(s) => {
            (s.size(level, 0)?, (spec.delta_x + spec.delta_y) * scale)
        }
        Estimator::NestedMcDifference { m0 } => (m0 << level, (spec.delta_x + spec.delta_y) * scale),
    };
    Ok(oracle_nested_value(spec, n, shift)?)
}

fn families(schedule: InnerSchedule) -> Vec<(&'static str, Estimator)> {
    let m0 = schedule.m00;
    vec![
        ("antithetic-mc", Estimator::AntitheticMc { m0 }),
        ("antithetic-ml", Estimator::AntitheticMl(schedule)),
        ("antithetic-ml-approx-y", Estimator::AntitheticMlY(schedule)),
        ("doubly-antithetic", Estimator::DoublyAntithetic(schedule)),
        ("nested-mc", Estimator::NestedMcDifference { m0 }),
    ]
}

/// Checks the discrete problem against its exact oracle:
/// every family's level means match enumerated level differences, the
/// correction variance decays with the level, and the sample allocation
/// meets the variance target at near-minimal cost.
pub fn oracle_check(cfg: &RunConfig) -> Result<Vec<PropertyReport>, CliError> {
    if cfg.experiment != Experiment::DiscreteOracle {
        return Err(CliError::Config(
            "oracle-check needs the discrete-oracle experiment".into(),
        ));
    }
    let spec = cfg.discrete_spec();
    if spec.x_noise != 0.0 {
        return Err(CliError::Config(
            "the exact oracle does not model x-noise; set x_noise = 0".into(),
        ));
    }
    let problem = DiscreteProblem::new(spec.clone())?;
    let schedule = cfg.schedule();

    let mut worst = (0.0_f64, "", 0u32);
    let mut checked = 0;
    let mut primary = Vec::new();
    for (name, est) in families(schedule) {
        for level in cfg.levels.iter() {
            let s = level_statistics(&problem, &est, level, cfg.samples, cfg.seed)?;
            let mut expected = family_level_value(&spec, &est, level)?;
            if level > 0 {
                expected -= family_level_value(&spec, &est, level - 1)?;
            }
            let gap = s.mean() - expected;
            let z = if s.std_error() > 0.0 {
                gap.abs() / s.std_error()
            } else if gap.abs() <= 1e-12 {
                0.0
            } else {
                f64::INFINITY
            };
            log::info!("{name} level {level}: mean {:e} oracle {expected:e} z {z:.2}", s.mean());
            checked += 1;
            if z > worst.0 || worst.1.is_empty() {
                worst = (z, name, level);
            }
            if matches!(est, Estimator::AntitheticMlY(_)) {
                primary.push(s);
            }
        }
    }
    let telescoping = PropertyReport {
        name: "telescoping",
        passed: worst.0 <= Z_LIMIT,
        detail: format!(
            "largest |z| {:.2} ({} level {}) over {checked} level means, limit {Z_LIMIT}",
            worst.0, worst.1, worst.2
        ),
    };

    let corrections: Vec<LevelStats> = primary.iter().filter(|s| s.level > 0).cloned().collect();
    let vanishing = if corrections.iter().all(|s| s.variance() == 0.0) {
        PropertyReport {
            name: "vanishing",
            passed: true,
            detail: "corrections are identically zero".into(),
        }
    } else if corrections.len() < 3 {
        PropertyReport {
            name: "vanishing",
            passed: true,
            detail: "skipped: fewer than 3 correction levels".into(),
        }
    } else {
        let lo = corrections[0].level;
        let hi = corrections[corrections.len() - 1].level;
        match fit_rate(&corrections, RateField::Variance, (lo, hi)) {
            Ok(fit) => PropertyReport {
                name: "vanishing",
                passed: fit.slope <= -0.5,
                detail: format!("variance slope {:.3} over levels {lo}..{hi}, need <= -0.5", fit.slope),
            },
            Err(e) => PropertyReport {
                name: "vanishing",
                passed: false,
                detail: format!("variance fit failed: {e}"),
            },
        }
    };

    let allocation = allocation_report(&primary, cfg)?;
    Ok(vec![telescoping, vanishing, allocation])
}

fn allocation_report(stats: &[LevelStats], cfg: &RunConfig) -> Result<PropertyReport, CliError> {
    let eps = *cfg.epsilons().last().expect("non-empty tolerances");
    let v: Vec<f64> = stats.iter().map(|s| s.variance()).collect();
    let c: Vec<f64> = stats.iter().map(|s| s.sample_cost()).collect();
    let m = cfg.mlmc.clone();
    let n = choose_samples(&v, &c, eps, m.split, m.safety, 1)?;
    let budget = m.split * eps * eps / m.safety;
    let achieved: f64 = v.iter().zip(&n).map(|(v, n)| v / *n as f64).sum();
    let cost: f64 = c.iter().zip(&n).map(|(c, n)| c * *n as f64).sum();
    let optimum = v.iter().zip(&c).map(|(v, c)| (v * c).sqrt()).sum::<f64>().powi(2) / budget;
    let slack: f64 = c.iter().sum();
    let passed = achieved <= budget * (1.0 + 1e-9) && cost <= optimum + slack;
    Ok(PropertyReport {
        name: "allocation",
        passed,
        detail: format!(
            "variance {achieved:.3e} vs target {budget:.3e}, cost {cost:.4e} vs optimum {optimum:.4e} + {slack:.3e}; bias estimate {:.3e}",
            estimate_bias(stats, m.bias_window)
        ),
    })
}
