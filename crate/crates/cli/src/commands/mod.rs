//! Subcommand implementations. Each writes only into its output directory
//! and echoes the effective configuration there.

mod check;
mod deep;
mod gen_data;
mod sweep;

pub use check::cmd_check;
pub use deep::cmd_train_deep;
pub use gen_data::cmd_gen_data;
pub use sweep::cmd_sweep;

use disentangle_core::data::{self, IdxImages};
use disentangle_core::par;

use crate::config::{Command, RunConfig};
use crate::CliError;

pub fn dispatch(cfg: &RunConfig) -> Result<(), CliError> {
    let jobs: usize = cfg.get("jobs")?;
    par::with_jobs(jobs, || match cfg.command {
        Command::Sweep => cmd_sweep(cfg),
        Command::TrainDeep => cmd_train_deep(cfg),
        Command::GenData => cmd_gen_data(cfg),
        Command::Check => cmd_check(cfg),
    })
}

/// `synthetic` selects the bundled glyphs; anything else is an IDX path.
pub(crate) fn load_digits(spec: &str) -> Result<IdxImages, CliError> {
    if spec == "synthetic" {
        Ok(data::synthetic_digits())
    } else {
        data::load_idx_images(std::path::Path::new(spec)).map_err(|e| match e {
            disentangle_core::Error::Io(io) => CliError::Io(format!("reading digits {spec}: {io}")),
            other => CliError::Usage(format!("digits {spec}: {other}")),
        })
    }
}

pub(crate) fn fmt_f64(v: f64) -> String {
    disentangle_core::sweep::fmt_f64(v)
}
