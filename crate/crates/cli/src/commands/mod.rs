pub mod bench;
pub mod rfield;
pub mod shapes;
pub mod verify;
pub mod weights;

use std::path::PathBuf;

use anyhow::{Context, Result};

/// Emit a report to stdout, or to `--out` with nothing on stdout.
pub(crate) fn emit(text: &str, out: &Option<PathBuf>) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
