//! Orchestration behind the `bpre-ld` binary: config loading, the five
//! subcommands and their CSV tables.

pub mod commands;
pub mod config;
pub mod output;

use bpre_core::Error;

/// A failure carrying its process exit code.
#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("config error: {0}")]
    Config(String),
    #[error("model regime error: {0}")]
    Regime(String),
    #[error("estimation failure: {0}")]
    Estimation(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Regime(_) => 3,
            Failure::Estimation(_) => 4,
            Failure::Io(_) => 1,
        }
    }

    pub fn from_core(e: Error) -> Self {
        match e {
            Error::NotSupercritical { .. } | Error::RhoUnavailable => Failure::Regime(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}
