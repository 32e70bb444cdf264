//! Flag definitions. Every flag maps onto a configuration key; flags left
//! unset do not override the config file.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::Command as Cmd;

#[derive(Debug, Parser)]
#[command(name = "disentangle", version, about = "β-VAE disentanglement laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed (`check` also accepts `a..b` or a comma list).
    #[arg(long, global = true)]
    pub seed: Option<String>,
    /// Output directory (default: $DISENTANGLE_OUT, then ./out).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Maximum concurrent workers (0 = all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Named configuration: paper-fig3 or desk.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Extra `key=value` overrides for any configuration key.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// β-sweep of the linear model with monotonicity and extremum checks.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Data dimension N.
        #[arg(long)]
        n: Option<usize>,
        /// Latent dimension k.
        #[arg(long)]
        k: Option<usize>,
        /// Sets every entry of A to this value.
        #[arg(long)]
        a: Option<f64>,
        /// Comma list, or `lo:hi:count:log`.
        #[arg(long, allow_hyphen_values = true)]
        grid: Option<String>,
        /// Hold the decoder at the true mixing matrix.
        #[arg(long)]
        fixed_decoder: bool,
    },
    /// Train and evaluate deep β-VAEs on the localization dataset.
    TrainDeep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        realizations: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Comma list of β values.
        #[arg(long)]
        betas: Option<String>,
        /// Fail instead of generating a missing dataset.
        #[arg(long)]
        no_generate: bool,
    },
    /// Generate the localization dataset.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Number of examples.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Run the self-check suite.
    Check {
        #[command(flatten)]
        common: Common,
        /// Comma list of check groups.
        #[arg(long)]
        only: Option<String>,
    },
}

impl Command {
    pub fn kind(&self) -> Cmd {
        match self {
            Command::Sweep { .. } => Cmd::Sweep,
            Command::TrainDeep { .. } => Cmd::TrainDeep,
            Command::GenData { .. } => Cmd::GenData,
            Command::Check { .. } => Cmd::Check,
        }
    }

    pub fn common(&self) -> &Common {
        match self {
            Command::Sweep { common, .. }
            | Command::TrainDeep { common, .. }
            | Command::GenData { common, .. }
            | Command::Check { common, .. } => common,
        }
    }

    /// Flag overrides as configuration pairs.
    pub fn overrides(&self) -> Result<Vec<(String, String)>, crate::CliError> {
        let c = self.common();
        let mut kv: Vec<(String, String)> = Vec::new();
        let mut push = |k: &str, v: String| kv.push((k.to_string(), v));
        if let Some(p) = &c.preset {
            push("preset", p.clone());
        }
        if let Some(s) = &c.seed {
            push("seed", s.clone());
        }
        if let Some(o) = &c.out {
            push("out", o.display().to_string());
        }
        if let Some(j) = c.jobs {
            push("jobs", j.to_string());
        }
        match self {
            Command::Sweep {
                n,
                k,
                a,
                grid,
                fixed_decoder,
                ..
            } => {
                if let Some(n) = n {
                    push("n", n.to_string());
                }
                if let Some(k) = k {
                    push("k", k.to_string());
                }
                if let Some(a) = a {
                    push("a_diag", a.to_string());
                    push("a_offdiag", a.to_string());
                }
                if let Some(g) = grid {
                    push("grid", g.clone());
                }
                if *fixed_decoder {
                    push("fixed_decoder", "true".into());
                }
            }
            Command::TrainDeep {
                realizations,
                epochs,
                betas,
                no_generate,
                ..
            } => {
                if let Some(r) = realizations {
                    push("realizations", r.to_string());
                }
                if let Some(e) = epochs {
                    push("epochs", e.to_string());
                }
                if let Some(b) = betas {
                    push("betas", b.clone());
                }
                if *no_generate {
                    push("no_generate", "true".into());
                }
            }
            Command::GenData { n, .. } => {
                if let Some(n) = n {
                    push("n", n.to_string());
                }
            }
            Command::Check { only, .. } => {
                if let Some(o) = only {
                    push("only", o.clone());
                }
            }
        }
        for s in &c.set {
            let (k, v) = s.split_once('=').ok_or_else(|| {
                crate::CliError::Usage(format!("--set expects KEY=VALUE, got '{s}'"))
            })?;
            kv.push((k.trim().replace('-', "_"), v.trim().to_string()));
        }
        Ok(kv)
    }
}
