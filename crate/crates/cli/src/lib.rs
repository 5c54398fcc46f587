//! Library side of the `nvem` command-line tool: configuration handling,
//! dataset ingestion, output writers with provenance stamps, and the
//! subcommand implementations.

pub mod commands;
pub mod config;
pub mod io;

use std::fmt;

#[derive(Debug)]
pub enum AppError {
    Config(String),
    Data(String),
    Numerical(String),
}

impl AppError {
    pub fn config(msg: impl Into<String>) -> Self {
        AppError::Config(msg.into())
    }
    pub fn data(msg: impl Into<String>) -> Self {
        AppError::Data(msg.into())
    }
    pub fn numerical(msg: impl Into<String>) -> Self {
        AppError::Numerical(msg.into())
    }
    pub fn exit_code(&self) -> u8 {
        match self {
            AppError::Config(_) => 2,
            AppError::Data(_) => 3,
            AppError::Numerical(_) => 4,
        }
    }
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AppError::Config(m) => write!(f, "config error: {m}"),
            AppError::Data(m) => write!(f, "data error: {m}"),
            AppError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl std::error::Error for AppError {}
