use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use disentangle_core::data::{
    load_dataset, make_localization_dataset, save_dataset, standardize, CanvasDataset,
    CANVAS_SIDE, DATASET_CSV, IMAGES_BIN,
};
use disentangle_core::deep::{evaluate, save_model, train, DeepSweepRecord, MlpVae, TrainConfig};
use disentangle_core::par;
use disentangle_core::plot::{write_gray_png, LinePlot, Series, BLUE, GREY};
use disentangle_core::rng::derive_seed;

use super::{fmt_f64, load_digits};
use crate::config::RunConfig;
use crate::{ensure_dir, CliError};

struct Cell {
    beta_index: usize,
    realization: usize,
    record: DeepSweepRecord,
    trace: Vec<f64>,
}

fn dataset(cfg: &RunConfig, seed: u64) -> Result<CanvasDataset, CliError> {
    let dir = match cfg.raw("data_dir") {
        "" => cfg.out.join("data"),
        d => PathBuf::from(d),
    };
    if dir.join(DATASET_CSV).exists() && dir.join(IMAGES_BIN).exists() {
        return Ok(load_dataset(&dir)?);
    }
    if cfg.get::<bool>("no_generate")? {
        return Err(CliError::Usage(format!(
            "no dataset in {} and generation is disabled (run gen-data first)",
            dir.display()
        )));
    }
    let digits = load_digits(cfg.raw("digits"))?;
    let ds = make_localization_dataset(&digits, cfg.get("n_samples")?, seed)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    ensure_dir(&dir)?;
    save_dataset(&ds, &dir)?;
    Ok(ds)
}

pub fn cmd_train_deep(cfg: &RunConfig) -> Result<(), CliError> {
    let seed: u64 = cfg.get("seed")?;
    let betas: Vec<f64> = cfg.get_list("betas")?;
    let realizations: usize = cfg.get("realizations")?;
    let hidden: Vec<usize> = cfg.get_list("hidden")?;
    let recon_images: usize = cfg.get("recon_images")?;
    if betas.is_empty() || realizations == 0 {
        return Err(CliError::Usage("need at least one beta and one realization".into()));
    }
    let base = TrainConfig {
        epochs: cfg.get("epochs")?,
        lr: cfg.get("lr")?,
        adam_beta1: cfg.get("adam_beta1")?,
        adam_beta2: cfg.get("adam_beta2")?,
        adam_eps: cfg.get("adam_eps")?,
        batch_size: cfg.get("batch_size")?,
        beta: 1.0,
        seed,
        mc_samples_eval: cfg.get("mc_samples_eval")?,
    };
    for &beta in &betas {
        TrainConfig { beta, ..base.clone() }
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    ensure_dir(&cfg.out)?;
    cfg.write_resolved()?;
    let ds = dataset(cfg, seed)?;
    let (x, mean, std) = standardize(&ds.images)?;
    let models = cfg.out.join("models");
    let recon_dir = cfg.out.join("reconstructions");
    ensure_dir(&models)?;
    ensure_dir(&recon_dir)?;

    let cells = betas.len() * realizations;
    let results: Vec<Result<Cell, CliError>> = par::map_range(cells, |c| {
        let (bi, r) = (c / realizations, c % realizations);
        // Cells of one realization share initialization and batch order, so
        // β is the only thing that varies between them.
        let cell_seed = derive_seed(seed, "cli.deep.realization", &[r as u64]);
        let tc = TrainConfig {
            beta: betas[bi],
            seed: cell_seed,
            ..base.clone()
        };
        let fail = |e: disentangle_core::Error| {
            CliError::from(e).context(format!("cell beta={} realization={r}", betas[bi]))
        };
        let net = MlpVae::glorot(x.ncols(), &hidden, ds.mixing.k(), cell_seed).map_err(fail)?;
        let out = train(net, &x, &tc).map_err(fail)?;
        let record = evaluate(&out.net, &ds.mixing, &x, &ds.positions, &tc, r as u64).map_err(fail)?;
        save_model(&out.net, &models.join(format!("beta{bi}_r{r}.bvae"))).map_err(fail)?;
        if r == 0 {
            dump_reconstructions(&out.net, &x, mean, std, recon_images, &recon_dir, bi)
                .map_err(fail)?;
        }
        Ok(Cell {
            beta_index: bi,
            realization: r,
            record,
            trace: out.loss_trace,
        })
    });
    let cells: Vec<Cell> = results.into_iter().collect::<Result<_, _>>()?;

    write_outputs(&cfg.out, &betas, &cells)?;
    let summary = summarize(&betas, &cells);
    print!("{}", summary_table(&summary));
    print!("{}", ordering_report(&summary));
    Ok(())
}

/// Original (left) and decoded posterior mean (right) for the first rows.
fn dump_reconstructions(
    net: &MlpVae,
    x: &DMatrix<f64>,
    mean: f64,
    std: f64,
    count: usize,
    dir: &Path,
    beta_index: usize,
) -> disentangle_core::Result<()> {
    let count = count.min(x.nrows());
    if count == 0 {
        return Ok(());
    }
    let rows = x.rows(0, count).into_owned();
    let (mu, _) = net.encode_batch(&rows)?;
    let x_hat = net.decode_batch(&mu)?;
    let side = CANVAS_SIDE;
    for i in 0..count {
        let mut px = vec![0u8; 2 * side * side];
        for r in 0..side {
            for c in 0..side {
                let to_byte = |v: f64| (v * std + mean).round().clamp(0.0, 255.0) as u8;
                px[r * 2 * side + c] = to_byte(rows[(i, r * side + c)]);
                px[r * 2 * side + side + c] = to_byte(x_hat[(i, r * side + c)]);
            }
        }
        write_gray_png(
            &dir.join(format!("beta{beta_index}_sample{i}.png")),
            (2 * side) as u32,
            side as u32,
            &px,
        )?;
    }
    Ok(())
}

struct Summary {
    beta: f64,
    elbo: f64,
    recon: f64,
    ci_loss: f64,
    tie: f64,
    count: usize,
}

fn summarize(betas: &[f64], cells: &[Cell]) -> Vec<Summary> {
    betas
        .iter()
        .enumerate()
        .map(|(bi, &beta)| {
            let rs: Vec<&DeepSweepRecord> = cells
                .iter()
                .filter(|c| c.beta_index == bi)
                .map(|c| &c.record)
                .collect();
            let avg = |f: fn(&DeepSweepRecord) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / rs.len() as f64;
            Summary {
                beta,
                elbo: avg(|r| r.elbo),
                recon: avg(|r| r.recon),
                ci_loss: avg(|r| r.ci_loss),
                tie: avg(|r| r.tie),
                count: rs.len(),
            }
        })
        .collect()
}

fn summary_table(summary: &[Summary]) -> String {
    let mut s = format!(
        "{:>10} {:>16} {:>16} {:>16} {:>16}\n",
        "beta", "mean_elbo", "mean_recon", "mean_ci_loss", "mean_tie"
    );
    for r in summary {
        let _ = writeln!(
            s,
            "{:>10.4} {:>16.6e} {:>16.6e} {:>16.6e} {:>16.6e}",
            r.beta, r.elbo, r.recon, r.ci_loss, r.tie
        );
    }
    s
}

/// Informational: recon and KL should fall with β and the ELBO should
/// peak at β = 1 when 1 is among the trained values.
fn ordering_report(summary: &[Summary]) -> String {
    let falling = |f: fn(&Summary) -> f64| summary.windows(2).all(|w| f(&w[1]) < f(&w[0]));
    let mut s = String::new();
    let _ = writeln!(s, "mean recon strictly decreasing in beta: {}", falling(|r| r.recon));
    let _ = writeln!(s, "mean ci_loss strictly decreasing in beta: {}", falling(|r| r.ci_loss));
    if let Some(best) = summary.iter().max_by(|a, b| a.elbo.total_cmp(&b.elbo)) {
        let _ = writeln!(s, "mean elbo maximal at beta = {}", best.beta);
    }
    s
}

fn write_outputs(out: &Path, betas: &[f64], cells: &[Cell]) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(e.to_string());
    let mut rec = String::from("beta,realization,elbo,recon,recon_std_err,ci_loss,tie\n");
    let mut trace = String::from("beta,realization,epoch,objective\n");
    for c in cells {
        let r = &c.record;
        let _ = writeln!(
            rec,
            "{},{},{},{},{},{},{}",
            fmt_f64(r.beta),
            c.realization,
            fmt_f64(r.elbo),
            fmt_f64(r.recon),
            fmt_f64(r.recon_std_err),
            fmt_f64(r.ci_loss),
            fmt_f64(r.tie)
        );
        for (e, v) in c.trace.iter().enumerate() {
            let _ = writeln!(trace, "{},{},{e},{}", fmt_f64(r.beta), c.realization, fmt_f64(*v));
        }
    }
    std::fs::write(out.join("deep_records.csv"), rec).map_err(io)?;
    std::fs::write(out.join("loss_trace.csv"), trace).map_err(io)?;

    let summary = summarize(betas, cells);
    let mut s = String::from("beta,mean_elbo,mean_recon,mean_ci_loss,mean_tie,realizations\n");
    for r in &summary {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            fmt_f64(r.beta),
            fmt_f64(r.elbo),
            fmt_f64(r.recon),
            fmt_f64(r.ci_loss),
            fmt_f64(r.tie),
            r.count
        );
    }
    std::fs::write(out.join("deep_summary.csv"), s).map_err(io)?;
    std::fs::write(out.join("deep_report.txt"), summary_table(&summary) + &ordering_report(&summary))
        .map_err(io)?;

    type Panel = (&'static str, fn(&DeepSweepRecord) -> f64, fn(&Summary) -> f64);
    let panels: [Panel; 4] = [
        ("deep_elbo.png", |r| r.elbo, |s| s.elbo),
        ("deep_recon.png", |r| r.recon, |s| s.recon),
        ("deep_ci_loss.png", |r| r.ci_loss, |s| s.ci_loss),
        ("deep_tie.png", |r| r.tie, |s| s.tie),
    ];
    let realizations = cells.iter().map(|c| c.realization).max().map_or(0, |m| m + 1);
    for (file, per_cell, mean) in panels {
        let mut plot = LinePlot::new(true);
        for r in 0..realizations {
            let pts: Vec<(f64, f64)> = cells
                .iter()
                .filter(|c| c.realization == r)
                .map(|c| (c.record.beta, per_cell(&c.record)))
                .collect();
            plot.series.push(Series::dashed(pts, GREY));
        }
        plot.series
            .push(Series::solid(summary.iter().map(|s| (s.beta, mean(s))).collect(), BLUE));
        plot.write_png(&out.join(file))?;
    }
    Ok(())
}
