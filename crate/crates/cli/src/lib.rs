//! Orchestration for the `disk` command: generate, partition, fit, combine,
//! evaluate and risk-study, each reading and writing artifacts under one
//! output directory.

pub mod commands;
pub mod config;

use disk_core::DiskError;

pub use config::RunConfig;

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_CHAIN_ABORT: i32 = 4;

pub fn exit_code(err: &DiskError) -> i32 {
    match err {
        DiskError::Input(_) | DiskError::Parse { .. } | DiskError::Io { .. } => EXIT_INPUT,
        DiskError::Numerical(_) => EXIT_NUMERICAL,
        DiskError::ChainAbort { .. } => EXIT_CHAIN_ABORT,
    }
}
