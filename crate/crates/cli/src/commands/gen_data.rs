use disentangle_core::data::{make_localization_dataset, save_dataset};

use super::load_digits;
use crate::config::RunConfig;
use crate::{ensure_dir, CliError};

pub fn cmd_gen_data(cfg: &RunConfig) -> Result<(), CliError> {
    let n: usize = cfg.get("n")?;
    let seed: u64 = cfg.get("seed")?;
    let digits = load_digits(cfg.raw("digits"))?;
    ensure_dir(&cfg.out)?;
    cfg.write_resolved()?;
    let ds = make_localization_dataset(&digits, n, seed)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    save_dataset(&ds, &cfg.out)?;
    let a = ds.mixing.a();
    println!(
        "generated n={} seed={} A=[[{}, {}], [{}, {}]] -> {}",
        ds.len(),
        seed,
        a[(0, 0)],
        a[(0, 1)],
        a[(1, 0)],
        a[(1, 1)],
        cfg.out.display()
    );
    Ok(())
}
