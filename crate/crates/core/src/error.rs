use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate statistics: {0}")]
    DegenerateStatistics(&'static str),

    #[error("rate fit needs positive values; level {level} has {value}")]
    FitDomain { level: u32, value: f64 },

    #[error("rate fit needs at least 3 levels, got {0}")]
    TooFewLevels(usize),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("problem does not support {0} sampling of Y")]
    Capability(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
