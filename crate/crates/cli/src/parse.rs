//! Parsers for the compact flag syntaxes.

use std::ops::RangeInclusive;

use crate::CliError;

/// Parses a comma-separated list of strictly positive, strictly decreasing
/// tolerances such as `0.08,0.04,0.02`.
pub fn parse_tolerances(text: &str) -> Result<Vec<f64>, CliError> {
    let values = text
        .split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<f64>()
                .map_err(|_| CliError::Config(format!("bad tolerance {t:?}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    check_tolerances(&values)?;
    Ok(values)
}

pub fn check_tolerances(values: &[f64]) -> Result<(), CliError> {
    if values.is_empty() {
        return Err(CliError::Config("tolerance list is empty".into()));
    }
    if let Some(t) = values.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
        return Err(CliError::Config(format!("tolerance {t} is not positive")));
    }
    if values.windows(2).any(|w| w[1] >= w[0]) {
        return Err(CliError::Config("tolerances must be strictly decreasing".into()));
    }
    Ok(())
}

/// Parses an inclusive level range `A..B` (or `A..=B`), or a single level `A`.
pub fn parse_levels(text: &str) -> Result<RangeInclusive<u32>, CliError> {
    let bad = || CliError::Config(format!("bad level range {text:?}, expected A..B"));
    let level = |s: &str| s.trim().parse::<u32>().map_err(|_| bad());
    let (lo, hi) = match text.split_once("..") {
        Some((a, b)) => (level(a)?, level(b.strip_prefix('=').unwrap_or(b))?),
        None => {
            let l = level(text)?;
            (l, l)
        }
    };
    check_levels(lo, hi)?;
    Ok(lo..=hi)
}

pub fn check_levels(lo: u32, hi: u32) -> Result<(), CliError> {
    if lo > hi {
        return Err(CliError::Config(format!("empty level range {lo}..{hi}")));
    }
    if hi > 30 {
        return Err(CliError::Config(format!("level {hi} is too deep")));
    }
    Ok(())
}
