//! Declarative run configuration and flag overrides.

use std::fmt;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use nested_mlmc::{
    bermudan_config, bermudan_schedule, DiscreteNestedSpec, InnerSchedule, MarketModel, MlmcConfig, Scheme,
};
use serde::{Deserialize, Serialize};

use crate::parse::{check_levels, check_tolerances, parse_levels, parse_tolerances};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    BermudanEuler,
    #[default]
    BermudanMilstein,
    DiscreteOracle,
}

impl Experiment {
    pub fn scheme(self) -> Option<Scheme> {
        match self {
            Experiment::BermudanEuler => Some(Scheme::Euler),
            Experiment::BermudanMilstein => Some(Scheme::AntitheticMilstein),
            Experiment::DiscreteOracle => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    LevelStats,
    MlmcSweep,
    OracleCheck,
    Baseline,
}

/// Inclusive level range, written `"A..B"` in config files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LevelRange {
    pub lo: u32,
    pub hi: u32,
}

impl LevelRange {
    pub fn iter(self) -> std::ops::RangeInclusive<u32> {
        self.lo..=self.hi
    }
}

impl TryFrom<String> for LevelRange {
    type Error = CliError;

    fn try_from(text: String) -> Result<Self, CliError> {
        let r = parse_levels(&text)?;
        Ok(LevelRange {
            lo: *r.start(),
            hi: *r.end(),
        })
    }
}

impl From<LevelRange> for String {
    fn from(r: LevelRange) -> String {
        r.to_string()
    }
}

impl fmt::Display for LevelRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.lo, self.hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct RunConfig {
    #[serde(default)]
    pub experiment: Experiment,
    /// Overridden by the subcommand.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    #[serde(default)]
    pub seed: u64,
    /// Samples per level for level statistics and oracle checks.
    #[serde(default = "default_samples")]
    pub samples: u64,
    #[serde(default = "default_levels")]
    pub levels: LevelRange,
    #[serde(default = "default_tolerances")]
    pub tolerances: Vec<f64>,
    /// Every tolerance is multiplied by this before use.
    #[serde(default = "default_scale")]
    pub tolerance_scale: f64,
    /// Independent runs per tolerance; run `r` uses seed `seed + r`.
    #[serde(default = "default_repetitions")]
    pub repetitions: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Defaults to `m00 = 4` for the Bermudan experiments and 16 otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<InnerSchedule>,
    /// Inner samples at level 0 for the nested Monte Carlo baseline.
    #[serde(default = "default_baseline_m0")]
    pub baseline_m0: u64,
    #[serde(default)]
    pub mlmc: MlmcConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<MarketModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discrete: Option<DiscreteNestedSpec>,
}

fn default_samples() -> u64 {
    10_000
}

fn default_levels() -> LevelRange {
    LevelRange { lo: 0, hi: 8 }
}

fn default_tolerances() -> Vec<f64> {
    vec![0.08, 0.04, 0.02, 0.01]
}

fn default_scale() -> f64 {
    1.0
}

fn default_repetitions() -> u64 {
    1
}

fn default_baseline_m0() -> u64 {
    4
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            experiment: Experiment::default(),
            mode: None,
            seed: 0,
            samples: default_samples(),
            levels: default_levels(),
            tolerances: default_tolerances(),
            tolerance_scale: default_scale(),
            repetitions: default_repetitions(),
            output: None,
            schedule: None,
            baseline_m0: default_baseline_m0(),
            mlmc: MlmcConfig::default(),
            model: None,
            discrete: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        check_tolerances(&self.tolerances)?;
        check_levels(self.levels.lo, self.levels.hi)?;
        if !(self.tolerance_scale > 0.0 && self.tolerance_scale.is_finite()) {
            return Err(CliError::Config(format!(
                "tolerance scale {} is not positive",
                self.tolerance_scale
            )));
        }
        if self.samples < 2 {
            return Err(CliError::Config("need at least 2 samples per level".into()));
        }
        if self.repetitions == 0 {
            return Err(CliError::Config("need at least one repetition".into()));
        }
        if self.baseline_m0 == 0 {
            return Err(CliError::Config("baseline-m0 must be positive".into()));
        }
        if let Some(s) = self.schedule {
            InnerSchedule::new(s.m00, s.zeta)?;
        }
        self.mlmc.validate()?;
        match self.experiment {
            Experiment::DiscreteOracle => {
                if self.model.is_some() {
                    return Err(CliError::Config(
                        "[model] applies only to the Bermudan experiments".into(),
                    ));
                }
                if let Some(spec) = &self.discrete {
                    spec.validate()?;
                }
            }
            _ => {
                if self.discrete.is_some() {
                    return Err(CliError::Config("[discrete] applies only to discrete-oracle".into()));
                }
                if let Some(m) = &self.model {
                    m.validate()?;
                }
                if self.mode == Some(Mode::OracleCheck) {
                    return Err(CliError::Config(
                        "oracle-check needs the discrete-oracle experiment".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn schedule(&self) -> InnerSchedule {
        self.schedule.unwrap_or_else(|| match self.experiment {
            Experiment::DiscreteOracle => InnerSchedule::default(),
            _ => bermudan_schedule(),
        })
    }

    pub fn model(&self) -> MarketModel {
        self.model.clone().unwrap_or_else(bermudan_config)
    }

    pub fn discrete_spec(&self) -> DiscreteNestedSpec {
        self.discrete.clone().unwrap_or_else(DiscreteNestedSpec::mixed_signs)
    }

    /// Absolute tolerances after scaling.
    pub fn epsilons(&self) -> Vec<f64> {
        self.tolerances.iter().map(|t| t * self.tolerance_scale).collect()
    }
}

/// Per-run flags; any flag given replaces the config file value.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    #[arg(long, value_enum)]
    pub experiment: Option<Experiment>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Samples per level
    #[arg(long)]
    pub samples: Option<u64>,
    /// Inclusive level range, e.g. 0..8
    #[arg(long)]
    pub levels: Option<String>,
    /// Comma-separated decreasing tolerances, e.g. 0.08,0.04,0.02
    #[arg(long)]
    pub tolerances: Option<String>,
    #[arg(long)]
    pub tolerance_scale: Option<f64>,
    #[arg(long)]
    pub repetitions: Option<u64>,
    /// CSV destination; stdout when absent
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub m00: Option<u64>,
    #[arg(long)]
    pub zeta: Option<f64>,
    #[arg(long)]
    pub baseline_m0: Option<u64>,
    #[arg(long)]
    pub l_min: Option<u32>,
    #[arg(long)]
    pub l_max: Option<u32>,
    /// TOML file holding a discrete problem specification
    #[arg(long)]
    pub discrete_spec: Option<PathBuf>,
}

impl Overrides {
    /// Applies the flags on top of `cfg`. Does not validate.
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<(), CliError> {
        if let Some(e) = self.experiment {
            cfg.experiment = e;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(n) = self.samples {
            cfg.samples = n;
        }
        if let Some(text) = &self.levels {
            let r = parse_levels(text)?;
            cfg.levels = LevelRange {
                lo: *r.start(),
                hi: *r.end(),
            };
        }
        if let Some(text) = &self.tolerances {
            cfg.tolerances = parse_tolerances(text)?;
        }
        if let Some(s) = self.tolerance_scale {
            cfg.tolerance_scale = s;
        }
        if let Some(r) = self.repetitions {
            cfg.repetitions = r;
        }
        if let Some(o) = &self.output {
            cfg.output = Some(o.clone());
        }
        if self.m00.is_some() || self.zeta.is_some() {
            let base = cfg.schedule();
            cfg.schedule = Some(InnerSchedule {
                m00: self.m00.unwrap_or(base.m00),
                zeta: self.zeta.unwrap_or(base.zeta),
            });
        }
        if let Some(m) = self.baseline_m0 {
            cfg.baseline_m0 = m;
        }
        if let Some(l) = self.l_min {
            cfg.mlmc.l_min = l;
        }
        if let Some(l) = self.l_max {
            cfg.mlmc.l_max = l;
        }
        if let Some(path) = &self.discrete_spec {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            cfg.discrete = Some(DiscreteNestedSpec::from_toml_str(&text)?);
        }
        Ok(())
    }
}
