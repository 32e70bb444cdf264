//! Flat `key = value` run configuration.
//!
//! Resolution order, later wins: built-in defaults, preset, config file,
//! command-line flags. Unknown keys are rejected. The effective settings are
//! echoed to `config.resolved`, which can be fed back through `--config`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Sweep,
    TrainDeep,
    GenData,
    Check,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Sweep => "sweep",
            Command::TrainDeep => "train-deep",
            Command::GenData => "gen-data",
            Command::Check => "check",
        }
    }

    fn defaults(self) -> &'static [(&'static str, &'static str)] {
        match self {
            Command::Sweep => &[
                ("seed", "0"),
                ("jobs", "0"),
                ("n", "128"),
                ("k", "2"),
                ("a_diag", "1"),
                ("a_offdiag", "0.5"),
                ("grid", "0.1:10:41:log"),
                ("mode", "reduced"),
                ("fixed_decoder", "false"),
                ("warm_start", "true"),
                ("grad_tol", "1e-9"),
                ("max_iters", "200000"),
                ("restarts", "8"),
                ("init_scale", "0.1"),
                ("signal_subspace", "true"),
                ("monotone_rel", "1e-6"),
                ("envelope_rel", "5e-2"),
                ("argmax_steps", "1"),
                ("max_non_converged", "0.1"),
            ],
            Command::TrainDeep => &[
                ("seed", "0"),
                ("jobs", "0"),
                ("betas", "0.3,1,3"),
                ("realizations", "5"),
                ("epochs", "200"),
                ("lr", "1e-3"),
                ("adam_beta1", "0.9"),
                ("adam_beta2", "0.999"),
                ("adam_eps", "1e-8"),
                ("batch_size", "100"),
                ("mc_samples_eval", "1000"),
                ("hidden", "256,200,200"),
                ("n_samples", "1000"),
                ("digits", "synthetic"),
                ("data_dir", ""),
                ("no_generate", "false"),
                ("recon_images", "4"),
            ],
            Command::GenData => &[
                ("seed", "0"),
                ("jobs", "0"),
                ("n", "1000"),
                ("digits", "synthetic"),
            ],
            Command::Check => &[("seed", "0"), ("jobs", "0"), ("only", "all")],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    PaperFig3,
    Desk,
}

impl FromStr for Preset {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "paper-fig3" => Ok(Preset::PaperFig3),
            "desk" => Ok(Preset::Desk),
            other => Err(CliError::Usage(format!(
                "unknown preset '{other}' (expected paper-fig3 or desk)"
            ))),
        }
    }
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::PaperFig3 => "paper-fig3",
            Preset::Desk => "desk",
        }
    }

    fn values(self, cmd: Command) -> &'static [(&'static str, &'static str)] {
        match (cmd, self) {
            // The analytical sweep is cheap enough that both presets run the
            // full configuration.
            (Command::Sweep, _) => &[
                ("n", "128"),
                ("k", "2"),
                ("a_diag", "1"),
                ("a_offdiag", "0.5"),
                ("grid", "0.1:10:41:log"),
            ],
            (Command::TrainDeep, Preset::Desk) => &[
                ("betas", "0.3,1,3"),
                ("realizations", "5"),
                ("epochs", "200"),
                ("n_samples", "1000"),
            ],
            (Command::TrainDeep, Preset::PaperFig3) => &[
                ("betas", "0.3,1,3"),
                ("realizations", "300"),
                ("epochs", "1000"),
                ("n_samples", "1000"),
            ],
            (Command::GenData, _) => &[("n", "1000")],
            (Command::Check, _) => &[],
        }
    }
}

/// Effective settings for one command.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub preset: Option<Preset>,
    pub out: PathBuf,
    values: BTreeMap<String, String>,
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CliError::Usage(format!("config line {}: expected key = value, got '{raw}'", i + 1))
        })?;
        let key = k.trim().replace('-', "_");
        if key.is_empty() {
            return Err(CliError::Usage(format!("config line {}: empty key", i + 1)));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    /// `file` entries and `flags` are `(key, value)` pairs; `out` falls back
    /// to `DISENTANGLE_OUT`, then `./out`.
    pub fn resolve(
        command: Command,
        file: Option<&Path>,
        flags: &[(String, String)],
    ) -> Result<Self, CliError> {
        let file_entries = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    CliError::Usage(format!("cannot read config {}: {e}", p.display()))
                })?;
                parse_config_text(&text)?
            }
            None => Vec::new(),
        };
        let lookup = |key: &str| {
            flags
                .iter()
                .rev()
                .chain(file_entries.iter().rev())
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.clone())
        };
        let preset = match lookup("preset") {
            Some(p) if !p.is_empty() => Some(p.parse::<Preset>()?),
            _ => None,
        };
        let mut values: BTreeMap<String, String> = command
            .defaults()
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        if let Some(p) = preset {
            for (k, v) in p.values(command) {
                values.insert(k.to_string(), v.to_string());
            }
        }
        let mut out = None;
        for (k, v) in file_entries.iter().chain(flags.iter()) {
            match k.as_str() {
                "preset" => {}
                "out" => out = Some(PathBuf::from(v)),
                key if values.contains_key(key) => {
                    values.insert(key.to_string(), v.clone());
                }
                key => {
                    return Err(CliError::Usage(format!(
                        "unknown key '{key}' for {}",
                        command.name()
                    )))
                }
            }
        }
        let out = out
            .or_else(|| std::env::var_os("DISENTANGLE_OUT").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"));
        Ok(Self {
            command,
            preset,
            out,
            values,
        })
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("'{key}' is not a {} key", self.command.name()))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(key);
        raw.parse::<T>()
            .map_err(|e| CliError::Usage(format!("bad value '{raw}' for {key}: {e}")))
    }

    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<T>()
                    .map_err(|e| CliError::Usage(format!("bad entry '{s}' in {key}: {e}")))
            })
            .collect()
    }

    /// Text of `config.resolved`.
    pub fn resolved_text(&self) -> String {
        let mut s = format!("# effective configuration for `{}`\n", self.command.name());
        if let Some(p) = self.preset {
            let _ = writeln!(s, "preset = {}", p.name());
        }
        let _ = writeln!(s, "out = {}", self.out.display());
        for (k, v) in &self.values {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn write_resolved(&self) -> Result<(), CliError> {
        std::fs::write(self.out.join("config.resolved"), self.resolved_text())
            .map_err(|e| CliError::Io(format!("writing config.resolved: {e}")))
    }
}

/// `lo:hi:count:log`, `lo:hi:count:lin`, or a comma list.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>, CliError> {
    let parts: Vec<&str> = spec.split(':').map(str::trim).collect();
    let grid = if parts.len() == 4 {
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| CliError::Usage(format!("bad grid bound '{s}': {e}")))
        };
        let (lo, hi) = (num(parts[0])?, num(parts[1])?);
        let count: usize = parts[2]
            .parse()
            .map_err(|e| CliError::Usage(format!("bad grid count '{}': {e}", parts[2])))?;
        match parts[3] {
            "log" => disentangle_core::sweep::log_grid(lo, hi, count)
                .map_err(|e| CliError::Usage(e.to_string()))?,
            "lin" => {
                if count < 2 || hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) {
                    return Err(CliError::Usage(format!("bad linear grid '{spec}'")));
                }
                (0..count)
                    .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
                    .collect()
            }
            other => {
                return Err(CliError::Usage(format!(
                    "grid spacing must be log or lin, got '{other}'"
                )))
            }
        }
    } else if parts.len() == 1 {
        spec.split(',')
            .map(str::trim)
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| CliError::Usage(format!("bad grid entry '{s}': {e}")))
            })
            .collect::<Result<_, _>>()?
    } else {
        return Err(CliError::Usage(format!("cannot parse grid '{spec}'")));
    };
    disentangle_core::sweep::validate_grid(&grid).map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(grid)
}

/// `7`, `1,4,9` or the inclusive range `1..5`.
pub fn parse_seeds(spec: &str) -> Result<Vec<u64>, CliError> {
    let bad = |s: &str| CliError::Usage(format!("bad seed specification '{s}'"));
    if let Some((a, b)) = spec.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad(spec))?;
        let b: u64 = b.trim().parse().map_err(|_| bad(spec))?;
        if b < a || b - a > 10_000 {
            return Err(bad(spec));
        }
        return Ok((a..=b).collect());
    }
    spec.split(',')
        .map(|s| s.trim().parse::<u64>().map_err(|_| bad(spec)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kv(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn parses_comments_and_blank_lines() {
        let got = parse_config_text("# header\n\nn = 4 # inline\nmax-iters=10\n").unwrap();
        assert_eq!(got, kv(&[("n", "4"), ("max_iters", "10")]));
        assert!(parse_config_text("just words").is_err());
    }

    #[test]
    fn precedence_and_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.conf");
        std::fs::write(&path, "preset = paper-fig3\nn = 16\nk = 3\n").unwrap();
        let cfg =
            RunConfig::resolve(Command::Sweep, Some(&path), &kv(&[("k", "2"), ("out", "x")])).unwrap();
        assert_eq!(cfg.preset, Some(Preset::PaperFig3));
        assert_eq!(cfg.raw("n"), "16");
        assert_eq!(cfg.raw("k"), "2");
        assert_eq!(cfg.out, PathBuf::from("x"));
        assert!(RunConfig::resolve(Command::Sweep, None, &kv(&[("bogus", "1")])).is_err());
        assert!(RunConfig::resolve(Command::Check, None, &kv(&[("n", "1")])).is_err());
    }

    #[test]
    fn resolved_text_round_trips() {
        let cfg = RunConfig::resolve(
            Command::TrainDeep,
            None,
            &kv(&[("preset", "desk"), ("epochs", "3"), ("out", "o")]),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.resolved");
        std::fs::write(&path, cfg.resolved_text()).unwrap();
        let again = RunConfig::resolve(Command::TrainDeep, Some(&path), &[]).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn grids() {
        assert_eq!(parse_grid("1").unwrap(), vec![1.0]);
        assert_eq!(parse_grid("0.5, 1,2").unwrap(), vec![0.5, 1.0, 2.0]);
        assert_eq!(parse_grid("0.1:10:41:log").unwrap().len(), 41);
        assert_eq!(parse_grid("1:3:3:lin").unwrap(), vec![1.0, 2.0, 3.0]);
        assert!(parse_grid("2,1").is_err());
        assert!(parse_grid("1,1").is_err());
        assert!(parse_grid("1:2:3:cubic").is_err());
        assert!(parse_grid("-1,2").is_err());
    }

    #[test]
    fn seeds() {
        assert_eq!(parse_seeds("7").unwrap(), vec![7]);
        assert_eq!(parse_seeds("1..3").unwrap(), vec![1, 2, 3]);
        assert_eq!(parse_seeds("4,2").unwrap(), vec![4, 2]);
        assert!(parse_seeds("3..1").is_err());
        assert!(parse_seeds("x").is_err());
    }
}
