//! Configuration schema and file formats of the command-line driver.

pub mod config;
pub mod io;
