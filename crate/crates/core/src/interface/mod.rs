//! File formats, configuration and the command-line driver.

pub mod cli;
pub mod config;
pub mod export;
pub mod fieldfile;
pub mod intensity_csv;
pub mod summary;
