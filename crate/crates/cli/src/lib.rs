//! Command-line driver for the grid topology and statistics learning
//! toolkit: grid file formats, a Matpower-subset converter, a sample
//! simulator, single-shot learning runs, and seeded Monte-Carlo campaigns
//! with CSV/plot-script emission.

pub mod campaign;
pub mod commands;
pub mod error;
pub mod formats;
pub mod matpower;
pub mod metrics;
pub mod samples;

pub use commands::run;
pub use error::CliError;
