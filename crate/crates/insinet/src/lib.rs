//! Standard-library companion to `insinet-core`: file formats, run
//! configuration, run directory layout, SVG charts, and the command
//! implementations behind the CLI.

pub mod commands;
pub mod config;
pub mod io;
pub mod plots;
pub mod runs;
