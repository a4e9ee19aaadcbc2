pub mod augment;
pub mod eval;
pub mod gen_dataset;
pub mod mask_dump;
pub mod sdedit_demo;
pub mod train_align;

use std::path::{Path, PathBuf};

use crate::error::CliError;

/// The `--out` directory, which every file-writing subcommand requires.
pub(crate) fn require_out<'a>(
    out: &'a Option<PathBuf>,
    command: &str,
) -> Result<&'a Path, CliError> {
    out.as_deref()
        .ok_or_else(|| CliError::Usage(format!("{command}: --out is required (flag or config)")))
}

pub(crate) fn is_false(b: &bool) -> bool {
    !*b
}
