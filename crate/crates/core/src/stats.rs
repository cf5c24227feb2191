//! Streaming per-level moment accumulation and log2 rate regression.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Running statistics of one level's correction samples.
///
/// Central moments are updated with the single-pass Terriberry/Pébay
/// recurrences; `merge` combines two accumulators as if their samples had
/// been pushed into one. `sum` is kept separately so the level mean is exactly
/// `sum / count` as accumulated.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub level: u32,
    count: u64,
    nonzero: u64,
    sum: f64,
    mean: f64,
    m2: f64,
    m3: f64,
    m4: f64,
    total_cost: u64,
}

impl LevelStats {
    pub fn new(level: u32) -> Self {
        LevelStats {
            level,
            ..Default::default()
        }
    }

    pub fn update(&mut self, value: f64, cost: u64) {
        let n1 = self.count as f64;
        self.count += 1;
        let n = self.count as f64;
        let delta = value - self.mean;
        let delta_n = delta / n;
        let delta_n2 = delta_n * delta_n;
        let term1 = delta * delta_n * n1;
        self.mean += delta_n;
        self.m4 += term1 * delta_n2 * (n * n - 3.0 * n + 3.0) + 6.0 * delta_n2 * self.m2 - 4.0 * delta_n * self.m3;
        self.m3 += term1 * delta_n * (n - 2.0) - 3.0 * delta_n * self.m2;
        self.m2 += term1;
        self.sum += value;
        self.total_cost += cost;
        if value != 0.0 {
            self.nonzero += 1;
        }
    }

    pub fn merge(&mut self, other: &LevelStats) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            let level = self.level;
            *self = other.clone();
            self.level = level;
            return;
        }
        let na = self.count as f64;
        let nb = other.count as f64;
        let n = na + nb;
        let d = other.mean - self.mean;
        let d2 = d * d;
        let m2 = self.m2 + other.m2 + d2 * na * nb / n;
        let m3 =
            self.m3 + other.m3 + d2 * d * na * nb * (na - nb) / (n * n) + 3.0 * d * (na * other.m2 - nb * self.m2) / n;
        let m4 = self.m4
            + other.m4
            + d2 * d2 * na * nb * (na * na - na * nb + nb * nb) / (n * n * n)
            + 6.0 * d2 * (na * na * other.m2 + nb * nb * self.m2) / (n * n)
            + 4.0 * d * (na * other.m3 - nb * self.m3) / n;
        self.mean += d * nb / n;
        self.m2 = m2;
        self.m3 = m3;
        self.m4 = m4;
        self.count += other.count;
        self.nonzero += other.nonzero;
        self.sum += other.sum;
        self.total_cost += other.total_cost;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Number of samples that were not exactly zero.
    pub fn nonzero(&self) -> u64 {
        self.nonzero
    }

    pub fn sum(&self) -> f64 {
        self.sum
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }

    pub fn abs_mean(&self) -> f64 {
        self.mean().abs()
    }

    /// Unbiased sample variance (zero for fewer than two samples).
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / (self.count - 1) as f64).max(0.0)
        }
    }

    /// Standard error of the mean.
    pub fn std_error(&self) -> f64 {
        if self.count == 0 {
            f64::INFINITY
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }

    pub fn total_cost(&self) -> u64 {
        self.total_cost
    }

    /// Average cost per sample.
    pub fn sample_cost(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.total_cost as f64 / self.count as f64
        }
    }

    fn population_m2(&self) -> f64 {
        self.m2 / self.count as f64
    }

    /// Fourth central moment over squared variance (population moments).
    pub fn kurtosis(&self) -> Result<f64> {
        if self.count < 4 {
            return Err(Error::DegenerateStatistics("kurtosis needs at least 4 samples"));
        }
        let m2 = self.population_m2();
        if m2 <= 0.0 {
            return Err(Error::DegenerateStatistics("zero variance"));
        }
        Ok((self.m4 / self.count as f64) / (m2 * m2))
    }

    /// Raw fourth moment `E[x^4]` over squared variance.
    pub fn raw_kurtosis(&self) -> Result<f64> {
        let central = self.kurtosis()?;
        let n = self.count as f64;
        let m2 = self.population_m2();
        let (m3, m4) = (self.m3 / n, self.m4 / n);
        let mu = self.mean;
        let raw4 = m4 + 4.0 * mu * m3 + 6.0 * mu * mu * m2 + mu.powi(4);
        debug_assert!(central.is_finite());
        Ok(raw4 / (m2 * m2))
    }
}

/// Which per-level statistic a rate is fitted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateField {
    AbsMean,
    Variance,
    Cost,
    Kurtosis,
}

impl RateField {
    fn value(self, s: &LevelStats) -> f64 {
        match self {
            RateField::AbsMean => s.abs_mean(),
            RateField::Variance => s.variance(),
            RateField::Cost => s.sample_cost(),
            RateField::Kurtosis => s.kurtosis().unwrap_or(f64::NAN),
        }
    }
}

/// Least-squares line through `(level, log2 value)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual in log2 units.
    pub residual: f64,
    pub level_range: (u32, u32),
}

impl RateFit {
    /// Fitted value `2^(intercept + slope * level)`.
    pub fn predict(&self, level: u32) -> f64 {
        (self.intercept + self.slope * level as f64).exp2()
    }
}

/// Fits `log2(value) = intercept + slope * level` over the given points.
pub fn fit_log2(points: &[(u32, f64)]) -> Result<RateFit> {
    if points.len() < 3 {
        return Err(Error::TooFewLevels(points.len()));
    }
    if let Some(&(level, value)) = points.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::FitDomain { level, value });
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|&(l, _)| l as f64).collect();
    let ys: Vec<f64> = points.iter().map(|&(_, v)| v.log2()).collect();
    let xm = xs.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xm).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateStatistics("rate fit needs distinct levels"));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let rss: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let lo = points.iter().map(|p| p.0).min().unwrap();
    let hi = points.iter().map(|p| p.0).max().unwrap();
    Ok(RateFit {
        slope,
        intercept,
        residual: (rss / n).sqrt(),
        level_range: (lo, hi),
    })
}

/// Fits the log2 decay rate of `field` over levels `range.0..=range.1`.
pub fn fit_rate(stats_by_level: &[LevelStats], field: RateField, range: (u32, u32)) -> Result<RateFit> {
    let points: Vec<(u32, f64)> = stats_by_level
        .iter()
        .filter(|s| s.level >= range.0 && s.level <= range.1)
        .map(|s| (s.level, field.value(s)))
        .collect();
    fit_log2(&points)
}
