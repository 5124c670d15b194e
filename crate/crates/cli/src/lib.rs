//! Command-line driver: configuration, subcommands, and report files.

pub mod commands;
pub mod config;

pub use commands::{cmd_calibrate, cmd_characterize, cmd_control, cmd_energy, cmd_report, CliError};
pub use config::{CampaignConfig, ConfigError};
