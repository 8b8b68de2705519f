//! Library surface of the `pkv2` command-line harness: config resolution,
//! the binary weight container, and report types. The binary in `main.rs` is
//! a thin dispatcher over `commands`.

pub mod commands;
pub mod config;
pub mod report;
pub mod weightfile;
