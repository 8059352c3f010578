//! Library side of the `lanerisk` command-line tool.

pub mod commands;
pub mod config;
pub mod plot;

pub use commands::{cmd_eval, cmd_gen_data, cmd_plot, cmd_simulate, cmd_train};
pub use config::RunConfig;
