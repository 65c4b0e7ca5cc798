//! Subcommands of the `mechanic` binary, usable as a library.

pub mod check;
pub mod plot;
pub mod run;

use std::path::{Path, PathBuf};

use mechanic_core::Error as CoreError;

pub use check::{cmd_check, CheckOptions, CheckOutcome, Suite};
pub use plot::{cmd_plot, render_svg, PlotOptions};
pub use run::{cmd_run, cmd_sweep, RunOptions, SweepOutcome};

/// Environment variable that relocates relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "MECHANIC_OUTPUT_ROOT";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

/// File name of the resolved config echo written to every output directory.
pub const CONFIG_ECHO: &str = "config.resolved";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(CoreError::Diverged { .. } | CoreError::NonFinite(_)) => EXIT_DIVERGED,
            _ => EXIT_CONFIG,
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn csv(path: &Path, source: csv::Error) -> Self {
        CliError::Csv {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Resolves `dir` against the output root; absolute paths are kept.
pub fn resolve_output_dir(dir: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if dir.is_relative() => Path::new(&root).join(dir),
        _ => dir.to_path_buf(),
    }
}

pub(crate) fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

pub(crate) fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}
