//! `pkv2 rfield`: branch-support coverage map of the configured branch bank.

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, ValueEnum};

use pkv2_core::rfield::{coverage_map, coverage_report, ReportFormat};

use crate::config::resolve_branches;

use super::emit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    /// One digit per cell
    TextGrid,
    /// K_max rows of comma-separated counts
    Csv,
}

#[derive(Debug, Args)]
pub struct RfieldArgs {
    /// Preset name ("pks-default"), JSON module config, or .pkv2 weight file
    #[arg(long, default_value = "pks-default")]
    pub config: String,

    #[arg(long, value_enum, default_value_t = Format::TextGrid)]
    pub format: Format,

    /// Write the document here instead of stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(args: &RfieldArgs) -> Result<u8> {
    let (branches, k_max) = resolve_branches(&args.config)?;
    let map = coverage_map(&branches, k_max)?;
    let doc = coverage_report(
        &map,
        match args.format {
            Format::TextGrid => ReportFormat::TextGrid,
            Format::Csv => ReportFormat::Csv,
        },
    );
    emit(&doc, &args.out)?;
    Ok(0)
}
