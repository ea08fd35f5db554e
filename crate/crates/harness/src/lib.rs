//! Scenario runner behind the `darksim` tool: configuration, the scenarios
//! that reproduce each figure, and CSV output.

pub mod config;
pub mod scenarios;
pub mod series;

pub use config::{
    parse_config, parse_config_with, split_override, validate, ConfigError, ExperimentConfig, InitialState, OffsetMode,
    RelaxationSpec, Scenario,
};
pub use scenarios::{
    resolve_relaxation, run, run_scenario, write_outputs, Invariants, Preparation, ScenarioOutput,
};
pub use series::{read_csv, write_csv, ResultSeries, SeriesError};

use dynamics::DynError;
use metrics::MetricsError;
use optctrl::OptError;
use pulses::PulseError;

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "DARKSIM_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    /// a configured value that an inner module rejected
    #[error("rejected setting: {0}")]
    Setting(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl HarnessError {
    /// 2 for configuration problems, 3 for numeric failures, 1 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Setting(_) => 2,
            HarnessError::Numeric(_) => 3,
            HarnessError::Io(_) => 1,
        }
    }
}

impl From<DynError> for HarnessError {
    fn from(e: DynError) -> Self {
        match e {
            DynError::StepTooLarge { .. } | DynError::InvalidConfig(_) | DynError::Infeasible(_) => {
                HarnessError::Setting(e.to_string())
            }
            DynError::Numeric(_) | DynError::Spin(_) => HarnessError::Numeric(e.to_string()),
        }
    }
}

impl From<PulseError> for HarnessError {
    fn from(e: PulseError) -> Self {
        match e {
            PulseError::Dynamics(d) => d.into(),
            PulseError::Io(_) | PulseError::Table { .. } => HarnessError::Io(e.to_string()),
            PulseError::Spin(_) | PulseError::Numeric(_) => HarnessError::Numeric(e.to_string()),
            PulseError::ContractUnsatisfied { .. } | PulseError::UnderSampled { .. } | PulseError::Invalid(_) => {
                HarnessError::Setting(e.to_string())
            }
        }
    }
}

impl From<MetricsError> for HarnessError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Dynamics(d) => d.into(),
            MetricsError::Invalid(_) => HarnessError::Setting(e.to_string()),
            MetricsError::ZeroDeviation { .. } => HarnessError::Numeric(e.to_string()),
        }
    }
}

impl From<OptError> for HarnessError {
    fn from(e: OptError) -> Self {
        match e {
            OptError::Pulse(p) => p.into(),
            OptError::Invalid(_) => HarnessError::Setting(e.to_string()),
            OptError::Spin(_) => HarnessError::Numeric(e.to_string()),
            OptError::Io(_) => HarnessError::Io(e.to_string()),
        }
    }
}

impl From<SeriesError> for HarnessError {
    fn from(e: SeriesError) -> Self {
        match e {
            SeriesError::Io(_) => HarnessError::Io(e.to_string()),
            _ => HarnessError::Numeric(e.to_string()),
        }
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

/// Worker cap from the value of [`THREADS_ENV`]; `None` means automatic.
pub fn parse_threads(value: Option<&str>) -> Result<Option<usize>, ConfigError> {
    let Some(v) = value else { return Ok(None) };
    match v.trim().parse::<usize>() {
        Ok(n) if n >= 1 => Ok(Some(n)),
        _ => Err(ConfigError::Invalid {
            key: THREADS_ENV.into(),
            message: format!("must be a positive integer, got '{v}'"),
            line: None,
        }),
    }
}

/// Sizes the global worker pool from the environment. Call once, before any
/// parallel work.
pub fn configure_threads() -> Result<Option<usize>, HarnessError> {
    let value = std::env::var(THREADS_ENV).ok();
    let n = parse_threads(value.as_deref())?;
    if let Some(n) = n {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| HarnessError::Setting(format!("{THREADS_ENV}: {e}")))?;
    }
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thread_values() {
        assert_eq!(parse_threads(None).unwrap(), None);
        assert_eq!(parse_threads(Some("4")).unwrap(), Some(4));
        for bad in ["0", "-1", "two", ""] {
            let e = parse_threads(Some(bad)).unwrap_err();
            assert_eq!(e.key(), Some(THREADS_ENV));
        }
    }

    #[test]
    fn exit_codes_by_kind() {
        let cfg = HarnessError::Config(ConfigError::MissingKey { key: "scenario".into() });
        assert_eq!(cfg.exit_code(), 2);
        assert_eq!(HarnessError::from(DynError::InvalidConfig("x".into())).exit_code(), 2);
        let num = numlin::NumError::NotHermitian { deviation: 1.0 };
        assert_eq!(HarnessError::from(DynError::Numeric(num)).exit_code(), 3);
        assert_eq!(HarnessError::from(std::io::Error::other("disk")).exit_code(), 1);
    }
}
