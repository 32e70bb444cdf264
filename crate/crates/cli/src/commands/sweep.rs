use disentangle_core::generative::MixingModel;
use disentangle_core::linear::{SolverConfig, SolverMode};
use disentangle_core::sweep::{
    export_csv, fixed_decoder_sweep, proposition_report, run_sweep_with, write_report,
    write_sweep_plots, Thresholds,
};

use crate::config::{parse_grid, RunConfig};
use crate::{ensure_dir, CliError};

pub fn cmd_sweep(cfg: &RunConfig) -> Result<(), CliError> {
    let n: usize = cfg.get("n")?;
    let k: usize = cfg.get("k")?;
    let a_diag: f64 = cfg.get("a_diag")?;
    let a_off: f64 = cfg.get("a_offdiag")?;
    let m = MixingModel::patterned(n, k, a_diag - a_off, a_off)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let grid = parse_grid(cfg.raw("grid"))?;
    let fixed: bool = cfg.get("fixed_decoder")?;
    let mode: SolverMode = if fixed {
        SolverMode::FixedDecoder
    } else {
        cfg.get("mode")?
    };
    let solver = SolverConfig {
        mode,
        grad_tol: cfg.get("grad_tol")?,
        max_iters: cfg.get("max_iters")?,
        restarts: cfg.get("restarts")?,
        seed: cfg.get("seed")?,
        init_scale: cfg.get("init_scale")?,
        signal_subspace: cfg.get("signal_subspace")?,
    };
    solver.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let th = Thresholds {
        monotone_rel: cfg.get("monotone_rel")?,
        envelope_rel: cfg.get("envelope_rel")?,
        argmax_steps: cfg.get("argmax_steps")?,
        max_non_converged: cfg.get("max_non_converged")?,
    };
    ensure_dir(&cfg.out)?;
    cfg.write_resolved()?;

    let records = if fixed {
        fixed_decoder_sweep(&m, m.a(), &grid, &solver)?
    } else {
        run_sweep_with(&m, &grid, &solver, cfg.get("warm_start")?)?.0
    };
    export_csv(&records, &cfg.out.join("sweep.csv"))?;
    write_sweep_plots(&records, &cfg.out)?;

    println!("{:>14} {:>10} {:>14} {:>14} {:>14}", "beta", "converged", "elbo", "mie", "tie");
    for r in &records {
        println!(
            "{:>14.6e} {:>10} {:>14.6e} {:>14.6e} {:>14.6e}",
            r.beta, r.converged, r.bundle.elbo, r.bundle.mie, r.bundle.tie
        );
    }
    if records.len() < 3 {
        let note = "proposition checks skipped: they need at least 3 grid points\n";
        std::fs::write(cfg.out.join("report.txt"), note)
            .map_err(|e| CliError::Io(e.to_string()))?;
        print!("{note}");
        return match records.iter().find(|r| !r.converged) {
            Some(r) => Err(CliError::CheckFailed(format!("beta {} did not converge", r.beta))),
            None => Ok(()),
        };
    }
    let report = proposition_report(&records, &th).map_err(|e| match e {
        disentangle_core::Error::Check(msg) => CliError::CheckFailed(msg),
        disentangle_core::Error::InvalidArgument(msg) => CliError::Usage(msg),
        other => other.into(),
    })?;
    write_report(&report, &th, &cfg.out.join("report.txt"))?;
    print!("{}", report.to_text(&th));
    let failed: Vec<_> = report
        .outcomes(&th)
        .into_iter()
        .filter(|o| !o.passed)
        .map(|o| o.name)
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::CheckFailed(failed.join(", ")))
    }
}
