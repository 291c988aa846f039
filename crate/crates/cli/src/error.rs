use lnared_core::balance::BalanceError;
use lnared_core::gramian::GramianError;
use lnared_core::network::NetworkError;
use lnared_core::simulate::SimulateError;
use lnared_core::timescale::TimescaleError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("model error: {0}")]
    Model(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("Hankel value tie: {0}")]
    Tie(String),
    #[error("{0}")]
    Other(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Model(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::Tie(_) => 4,
            CliError::Other(_) | CliError::Io { .. } => 5,
        }
    }
}

impl From<NetworkError> for CliError {
    fn from(e: NetworkError) -> Self {
        CliError::Model(e.to_string())
    }
}

impl From<GramianError> for CliError {
    fn from(e: GramianError) -> Self {
        match e {
            GramianError::Infeasible { .. } => CliError::Infeasible(e.to_string()),
            GramianError::NotStable => CliError::Model(e.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<BalanceError> for CliError {
    fn from(e: BalanceError) -> Self {
        match e {
            BalanceError::HankelTie { .. } => CliError::Tie(e.to_string()),
            BalanceError::InvalidKeep(_) => CliError::Config(e.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<SimulateError> for CliError {
    fn from(e: SimulateError) -> Self {
        CliError::Other(e.to_string())
    }
}

impl From<TimescaleError> for CliError {
    fn from(e: TimescaleError) -> Self {
        match e {
            TimescaleError::InvalidPartition(_) => CliError::Config(e.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<lnared_core::linalg::LinalgError> for CliError {
    fn from(e: lnared_core::linalg::LinalgError) -> Self {
        CliError::Other(e.to_string())
    }
}
