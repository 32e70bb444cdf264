use std::fmt::Write as _;

use disentangle_core::checks::{format_table, run_checks, CheckGroup};

use super::fmt_f64;
use crate::config::{parse_seeds, RunConfig};
use crate::{ensure_dir, CliError};

fn groups(spec: &str) -> Result<Vec<CheckGroup>, CliError> {
    if spec == "all" {
        return Ok(CheckGroup::ALL.to_vec());
    }
    spec.split(',')
        .map(|s| s.trim().parse::<CheckGroup>().map_err(|e| CliError::Usage(e.to_string())))
        .collect()
}

pub fn cmd_check(cfg: &RunConfig) -> Result<(), CliError> {
    let groups = groups(cfg.raw("only"))?;
    let seeds = parse_seeds(cfg.raw("seed"))?;
    ensure_dir(&cfg.out)?;
    cfg.write_resolved()?;
    let mut csv = String::from("seed,group,check,passed,observed,threshold\n");
    let mut failures = Vec::new();
    for seed in seeds {
        let results = run_checks(&groups, seed)?;
        println!("seed {seed}");
        print!("{}", format_table(&results));
        for r in &results {
            let _ = writeln!(
                csv,
                "{seed},{},{},{},{},{}",
                r.group,
                r.name,
                r.passed,
                fmt_f64(r.observed),
                fmt_f64(r.threshold)
            );
            if !r.passed {
                failures.push(format!(
                    "seed {seed} {}: observed {:.6e} vs threshold {:.6e}",
                    r.name, r.observed, r.threshold
                ));
            }
        }
    }
    std::fs::write(cfg.out.join("checks.csv"), csv).map_err(|e| CliError::Io(e.to_string()))?;
    if failures.is_empty() {
        println!("all checks passed");
        Ok(())
    } else {
        Err(CliError::CheckFailed(failures.join("; ")))
    }
}
