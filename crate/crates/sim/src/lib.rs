//! Std companion of `bluesim-core`: TOML scenarios, VCD and CSV export,
//! parallel sweeps and the `bluesim` command line.

pub mod cli;
pub mod grid;
pub mod output;
pub mod recipes;
pub mod scenario;
pub mod sweep;
pub mod vcd;
