//! β-sweeps of the linear model and the monotonicity checks run on them.
//!
//! With `L*(β)` the optimal β-VAE objective, the checks are:
//!
//! 1. `L*(β)` is non-increasing, and its derivative equals `−KL*(β)`
//!    (envelope identity; checked by central differences);
//! 2. the KL term and the reconstruction objective at the optimum are
//!    non-increasing in β;
//! 3. `ELBO*(β)` peaks at β = 1 while the model inference error has an
//!    interior minimum.
//!
//! Violations are the signed worst forward differences; a negative value
//! means the sequence decreased everywhere.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::generative::MixingModel;
use crate::linear::{LinearVaeParams, SolverConfig, StationaryPoint, StationarySolver};
use crate::metrics::{metric_bundle, MetricBundle};
use crate::par;
use crate::plot::{LinePlot, Series, BLUE, ORANGE};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRecord {
    pub beta: f64,
    pub bundle: MetricBundle,
    pub residual: f64,
    pub converged: bool,
    pub seed: u64,
}

/// `count` log-spaced points on `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0) || !(hi > lo) || count < 2 {
        return Err(Error::invalid(format!(
            "log grid needs 0 < lo < hi and count >= 2, got {lo}:{hi}:{count}"
        )));
    }
    let (a, b) = (lo.log10(), hi.log10());
    let mut grid: Vec<f64> = (0..count)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (count - 1) as f64))
        .collect();
    grid[0] = lo;
    grid[count - 1] = hi;
    Ok(grid)
}

/// The default grid: 41 log-spaced points on `[0.1, 10]`.
pub fn default_grid() -> Vec<f64> {
    log_grid(0.1, 10.0, 41).expect("static grid")
}

pub fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid("beta grid is empty"));
    }
    if grid.iter().any(|b| !(*b > 0.0) || !b.is_finite()) {
        return Err(Error::invalid("beta grid must be strictly positive and finite"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("beta grid must be strictly increasing"));
    }
    Ok(())
}

/// Solves at every β, warm-starting each from the previous solution.
pub fn run_sweep(m: &MixingModel, grid: &[f64], cfg: &SolverConfig) -> Result<Vec<SweepRecord>> {
    let solver = StationarySolver::new(m, cfg.clone())?;
    Ok(sweep_points(m, &solver, grid, true)?.0)
}

/// Like [`run_sweep`], optionally cold-starting every β (then the grid
/// points are solved in parallel). Also returns the optimal parameters.
pub fn run_sweep_with(
    m: &MixingModel,
    grid: &[f64],
    cfg: &SolverConfig,
    warm_start: bool,
) -> Result<(Vec<SweepRecord>, Vec<LinearVaeParams>)> {
    let solver = StationarySolver::new(m, cfg.clone())?;
    sweep_points(m, &solver, grid, warm_start)
}

/// Sweep with the decoder held at `decoder`; only the encoder is optimized.
pub fn fixed_decoder_sweep(
    m: &MixingModel,
    decoder: &DMatrix<f64>,
    grid: &[f64],
    cfg: &SolverConfig,
) -> Result<Vec<SweepRecord>> {
    let solver = StationarySolver::with_fixed_decoder(m, decoder.clone(), cfg.clone())?;
    Ok(sweep_points(m, &solver, grid, true)?.0)
}

fn sweep_points(
    m: &MixingModel,
    solver: &StationarySolver,
    grid: &[f64],
    warm_start: bool,
) -> Result<(Vec<SweepRecord>, Vec<LinearVaeParams>)> {
    validate_grid(grid)?;
    let points: Vec<StationaryPoint> = if warm_start {
        let mut out: Vec<StationaryPoint> = Vec::with_capacity(grid.len());
        for (i, &beta) in grid.iter().enumerate() {
            let warm = out.last().map(|p| &p.params);
            out.push(solver.solve(beta, i as u64, warm)?);
        }
        out
    } else {
        par::map_range(grid.len(), |i| solver.solve(grid[i], i as u64, None))
            .into_iter()
            .collect::<Result<_>>()?
    };
    let mut records = Vec::with_capacity(points.len());
    let mut params = Vec::with_capacity(points.len());
    for (i, pt) in points.into_iter().enumerate() {
        records.push(SweepRecord {
            beta: pt.beta,
            bundle: metric_bundle(&pt.params, m, pt.beta)?,
            residual: pt.residual,
            converged: pt.converged,
            seed: solver.beta_seed(i as u64),
        });
        params.push(pt.params);
    }
    Ok((records, params))
}

fn converged(records: &[SweepRecord]) -> Vec<&SweepRecord> {
    records.iter().filter(|r| r.converged).collect()
}

fn need(records: &[&SweepRecord], n: usize, what: &str) -> Result<()> {
    if records.len() < n {
        return Err(Error::invalid(format!(
            "{what} needs at least {n} converged records, got {}",
            records.len()
        )));
    }
    Ok(())
}

/// Signed worst forward difference.
fn worst_increase(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    v.windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `(max_violation, envelope_max_relerr)` for the optimal objective.
pub fn check_proposition1(records: &[SweepRecord]) -> Result<(f64, f64)> {
    let rs = converged(records);
    need(&rs, 3, "proposition 1")?;
    let violation = worst_increase(rs.iter().map(|r| r.bundle.loss_value));
    let mut envelope = 0.0f64;
    for w in rs.windows(3) {
        let slope = (w[2].bundle.loss_value - w[0].bundle.loss_value) / (w[2].beta - w[0].beta);
        let kl = w[1].bundle.ci_loss;
        let err = (slope + kl).abs() / kl.abs().max(f64::MIN_POSITIVE);
        envelope = envelope.max(err);
    }
    Ok((violation, envelope))
}

/// `(ci_loss violation, recon violation)`.
pub fn check_proposition2(records: &[SweepRecord]) -> Result<(f64, f64)> {
    let rs = converged(records);
    need(&rs, 2, "proposition 2")?;
    Ok((
        worst_increase(rs.iter().map(|r| r.bundle.ci_loss)),
        worst_increase(rs.iter().map(|r| r.bundle.recon)),
    ))
}

/// `(argmax_beta of ELBO, argmin_beta of MIE, mie_is_interior)`.
pub fn check_proposition3(records: &[SweepRecord]) -> Result<(f64, f64, bool)> {
    let rs = converged(records);
    need(&rs, 3, "proposition 3")?;
    let (lo, hi) = (rs[0].beta, rs[rs.len() - 1].beta);
    if !(lo <= 1.0 && hi >= 1.0) {
        return Err(Error::invalid(format!(
            "grid [{lo}, {hi}] does not span beta = 1"
        )));
    }
    let argmax = argbest(&rs, |r| r.bundle.elbo, true);
    let argmin = argbest(&rs, |r| r.bundle.mie, false);
    let last = rs.len() - 1;
    let min_mie = rs[argmin].bundle.mie;
    let interior = argmin > 0
        && argmin < last
        && min_mie < rs[0].bundle.mie
        && min_mie < rs[last].bundle.mie;
    Ok((rs[argmax].beta, rs[argmin].beta, interior))
}

fn argbest(rs: &[&SweepRecord], key: impl Fn(&SweepRecord) -> f64, max: bool) -> usize {
    let mut best = 0;
    for (i, r) in rs.iter().enumerate() {
        let (v, b) = (key(r), key(rs[best]));
        if (max && v > b) || (!max && v < b) {
            best = i;
        }
    }
    best
}

/// Summary of all proposition checks over one sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct PropositionReport {
    pub prop1_max_violation: f64,
    pub prop1_envelope_max_relerr: f64,
    pub prop2_max_violation: f64,
    pub prop2_recon_max_violation: f64,
    pub prop3_argmax_beta: f64,
    pub mie_argmin_beta: f64,
    pub mie_is_interior: bool,
    /// Grid steps between the ELBO argmax and the grid point nearest β = 1.
    pub argmax_steps_from_one: usize,
    /// `max |L*(β)|` over converged records; monotonicity tolerances scale with it.
    pub scale: f64,
    pub non_converged: usize,
    pub total: usize,
}

/// Pass/fail thresholds applied to a [`PropositionReport`].
#[derive(Clone, Debug, PartialEq)]
pub struct Thresholds {
    /// Monotonicity violations must stay below `monotone_rel × scale`.
    pub monotone_rel: f64,
    pub envelope_rel: f64,
    pub argmax_steps: usize,
    /// Largest tolerated fraction of non-converged grid points.
    pub max_non_converged: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            monotone_rel: 1e-6,
            envelope_rel: 5e-2,
            argmax_steps: 1,
            max_non_converged: 0.1,
        }
    }
}

pub fn proposition_report(records: &[SweepRecord], th: &Thresholds) -> Result<PropositionReport> {
    let total = records.len();
    let non_converged = records.iter().filter(|r| !r.converged).count();
    if total > 0 && non_converged as f64 > th.max_non_converged * total as f64 {
        return Err(Error::Check(format!(
            "{non_converged} of {total} grid points did not converge"
        )));
    }
    let (v1, env) = check_proposition1(records)?;
    let (v2, v2r) = check_proposition2(records)?;
    let (argmax, argmin, interior) = check_proposition3(records)?;
    let rs = converged(records);
    let idx_of = |beta: f64| rs.iter().position(|r| r.beta == beta).unwrap_or(0);
    let nearest_one = (0..rs.len())
        .min_by(|&a, &b| {
            (rs[a].beta.ln().abs()).total_cmp(&rs[b].beta.ln().abs())
        })
        .unwrap_or(0);
    let scale = rs
        .iter()
        .map(|r| r.bundle.loss_value.abs())
        .fold(0.0, f64::max);
    Ok(PropositionReport {
        prop1_max_violation: v1,
        prop1_envelope_max_relerr: env,
        prop2_max_violation: v2,
        prop2_recon_max_violation: v2r,
        prop3_argmax_beta: argmax,
        mie_argmin_beta: argmin,
        mie_is_interior: interior,
        argmax_steps_from_one: idx_of(argmax).abs_diff(nearest_one),
        scale,
        non_converged,
        total,
    })
}

/// One named check with its observed value and threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub observed: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl PropositionReport {
    pub fn outcomes(&self, th: &Thresholds) -> Vec<CheckOutcome> {
        let mono = th.monotone_rel * self.scale;
        let le = |name, observed: f64, threshold: f64| CheckOutcome {
            name,
            observed,
            threshold,
            passed: observed <= threshold,
        };
        vec![
            le("prop1_objective_nonincreasing", self.prop1_max_violation, mono),
            le("prop1_envelope_identity", self.prop1_envelope_max_relerr, th.envelope_rel),
            le("prop2_ci_loss_nonincreasing", self.prop2_max_violation, mono),
            le("prop2_recon_nonincreasing", self.prop2_recon_max_violation, mono),
            le(
                "prop3_elbo_argmax_near_one",
                self.argmax_steps_from_one as f64,
                th.argmax_steps as f64,
            ),
            CheckOutcome {
                name: "prop3_mie_interior_minimum",
                observed: if self.mie_is_interior { 1.0 } else { 0.0 },
                threshold: 1.0,
                passed: self.mie_is_interior,
            },
        ]
    }

    pub fn to_text(&self, th: &Thresholds) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "grid points: {} ({} not converged)\n",
            self.total, self.non_converged
        ));
        s.push_str(&format!("objective scale: {:.10e}\n", self.scale));
        s.push_str(&format!("elbo argmax beta: {:.10e}\n", self.prop3_argmax_beta));
        s.push_str(&format!("mie argmin beta: {:.10e}\n", self.mie_argmin_beta));
        for o in self.outcomes(th) {
            s.push_str(&format!(
                "{:<32} {:>5}  observed {:.6e}  threshold {:.6e}\n",
                o.name,
                if o.passed { "PASS" } else { "FAIL" },
                o.observed,
                o.threshold
            ));
        }
        s
    }
}

pub const CSV_HEADER: [&str; 10] = [
    "beta", "loss", "elbo", "mie", "tie", "recon", "ci_loss", "residual", "converged", "seed",
];

/// 17 significant digits; parses back to the identical `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn export_csv(records: &[SweepRecord], path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(file));
    w.write_record(CSV_HEADER)?;
    for r in records {
        let b = &r.bundle;
        w.write_record([
            fmt_f64(r.beta),
            fmt_f64(b.loss_value),
            fmt_f64(b.elbo),
            fmt_f64(b.mie),
            fmt_f64(b.tie),
            fmt_f64(b.recon),
            fmt_f64(b.ci_loss),
            fmt_f64(r.residual),
            r.converged.to_string(),
            r.seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn import_csv(path: &Path) -> Result<Vec<SweepRecord>> {
    let mut rdr = csv::ReaderBuilder::new().from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if header != CSV_HEADER {
        return Err(Error::invalid(format!("unexpected sweep CSV header {header:?}")));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let f = |i: usize| -> Result<f64> {
            row[i]
                .parse::<f64>()
                .map_err(|e| Error::invalid(format!("column {}: {e}", CSV_HEADER[i])))
        };
        let converged = match &row[8] {
            "true" => true,
            "false" => false,
            other => return Err(Error::invalid(format!("bad converged flag '{other}'"))),
        };
        out.push(SweepRecord {
            beta: f(0)?,
            bundle: MetricBundle {
                loss_value: f(1)?,
                elbo: f(2)?,
                mie: f(3)?,
                tie: f(4)?,
                recon: f(5)?,
                ci_loss: f(6)?,
            },
            residual: f(7)?,
            converged,
            seed: row[9]
                .parse()
                .map_err(|e| Error::invalid(format!("column seed: {e}")))?,
        });
    }
    Ok(out)
}

/// Four panels: ELBO, MIE/TIE, reconstruction objective, KL term, each
/// against β on a log axis. Dashed markers show the ELBO argmax and the MIE
/// argmin.
pub fn write_sweep_plots(records: &[SweepRecord], dir: &Path) -> Result<()> {
    let rs = converged(records);
    let curve = |f: &dyn Fn(&MetricBundle) -> f64| -> Vec<(f64, f64)> {
        rs.iter().map(|r| (r.beta, f(&r.bundle))).collect()
    };
    let extremum = |key: &dyn Fn(&MetricBundle) -> f64, max: bool| {
        (!rs.is_empty()).then(|| rs[argbest(&rs, |r| key(&r.bundle), max)].beta)
    };

    let mut elbo = LinePlot::new(true);
    elbo.series.push(Series::solid(curve(&|b| b.elbo), BLUE));
    elbo.markers.extend(extremum(&|b| b.elbo, true));
    elbo.write_png(&dir.join("elbo.png"))?;

    let mut ie = LinePlot::new(true);
    ie.series.push(Series::solid(curve(&|b| b.mie), BLUE));
    ie.series.push(Series::solid(curve(&|b| b.tie), ORANGE));
    ie.markers.extend(extremum(&|b| b.mie, false));
    ie.write_png(&dir.join("inference_error.png"))?;

    let mut recon = LinePlot::new(true);
    recon.series.push(Series::solid(curve(&|b| b.recon), BLUE));
    recon.write_png(&dir.join("recon.png"))?;

    let mut ci = LinePlot::new(true);
    ci.series.push(Series::solid(curve(&|b| b.ci_loss), BLUE));
    ci.write_png(&dir.join("ci_loss.png"))?;
    Ok(())
}

/// Writes the report text.
pub fn write_report(report: &PropositionReport, th: &Thresholds, path: &Path) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(report.to_text(th).as_bytes())?;
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(beta: f64, loss: f64, ci: f64, recon: f64, elbo: f64, mie: f64) -> SweepRecord {
        SweepRecord {
            beta,
            bundle: MetricBundle {
                elbo,
                recon,
                ci_loss: ci,
                mie,
                tie: mie,
                loss_value: loss,
            },
            residual: 0.0,
            converged: true,
            seed: 0,
        }
    }

    fn grid5() -> Vec<f64> {
        vec![0.25, 0.5, 1.0, 2.0, 4.0]
    }

    #[test]
    fn grid_validation() {
        assert!(validate_grid(&[]).is_err());
        assert!(validate_grid(&[1.0, 1.0]).is_err());
        assert!(validate_grid(&[0.0, 1.0]).is_err());
        assert!(validate_grid(&[2.0, 1.0]).is_err());
        assert!(validate_grid(&[1.0]).is_ok());
        let g = default_grid();
        assert_eq!(g.len(), 41);
        assert_eq!(g[0], 0.1);
        assert_eq!(g[40], 10.0);
        assert!((g[20] - 1.0).abs() < 1e-15);
        assert!(validate_grid(&g).is_ok());
    }

    #[test]
    fn linear_envelope_is_exact() {
        let rs: Vec<_> = grid5().into_iter().map(|b| record(b, -b, 1.0, 0.0, 0.0, 0.0)).collect();
        let (v, env) = check_proposition1(&rs).unwrap();
        assert!(v <= 0.0);
        assert_eq!(v, -0.25);
        assert_eq!(env, 0.0);
    }

    #[test]
    fn planted_increase_is_reported() {
        let mut rs: Vec<_> = grid5().into_iter().map(|b| record(b, -b, 1.0, -b, 0.0, 0.0)).collect();
        rs[3].bundle.loss_value = rs[2].bundle.loss_value + 0.5;
        assert!((check_proposition1(&rs).unwrap().0 - 0.5).abs() < 1e-15);

        let mut rs: Vec<_> = grid5().into_iter().map(|b| record(b, 0.0, 2.0, 0.0, 0.0, 0.0)).collect();
        assert_eq!(check_proposition2(&rs).unwrap().0, 0.0);
        rs[2].bundle.ci_loss += 0.1;
        assert!((check_proposition2(&rs).unwrap().0 - 0.1).abs() < 1e-15);
    }

    #[test]
    fn proposition3_on_planted_curves() {
        let rs: Vec<_> = grid5()
            .into_iter()
            .map(|b| record(b, 0.0, 0.0, 0.0, -(b - 1.0) * (b - 1.0), b))
            .collect();
        let (argmax, argmin, interior) = check_proposition3(&rs).unwrap();
        assert_eq!(argmax, 1.0);
        assert_eq!(argmin, 0.25);
        assert!(!interior);

        let rs: Vec<_> = grid5()
            .into_iter()
            .map(|b| record(b, 0.0, 0.0, 0.0, 0.0, b.ln().powi(2)))
            .collect();
        assert!(check_proposition3(&rs).unwrap().2);

        let rs: Vec<_> = [2.0, 3.0, 4.0].into_iter().map(|b| record(b, 0.0, 0.0, 0.0, 0.0, 0.0)).collect();
        assert!(check_proposition3(&rs).is_err());
    }

    #[test]
    fn too_few_records() {
        let rs = vec![record(1.0, 0.0, 0.0, 0.0, 0.0, 0.0)];
        assert!(check_proposition1(&rs).is_err());
        assert!(check_proposition2(&rs).is_err());
    }

    #[test]
    fn non_converged_records_are_excluded_and_counted() {
        let mut rs: Vec<_> = grid5().into_iter().map(|b| record(b, -b, 1.0, -b, -(b - 1.0).abs(), (b.ln()).abs())).collect();
        rs.push(record(8.0, 100.0, 5.0, 3.0, 0.0, 0.0));
        rs[5].converged = false;
        let (v, _) = check_proposition1(&rs).unwrap();
        assert!(v < 0.0);
        // 1 of 6 exceeds the 10% budget.
        assert!(proposition_report(&rs, &Thresholds::default()).is_err());
        let loose = Thresholds {
            max_non_converged: 0.2,
            ..Thresholds::default()
        };
        let rep = proposition_report(&rs, &loose).unwrap();
        assert_eq!(rep.non_converged, 1);
        assert_eq!(rep.argmax_steps_from_one, 0);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        export_csv(&[], &path).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "beta,loss,elbo,mie,tie,recon,ci_loss,residual,converged,seed\n"
        );
        let mut r = record(0.1 + 0.2, -1.0 / 3.0, std::f64::consts::PI, -1e-300, 7.0, 1e-17);
        r.converged = false;
        r.seed = u64::MAX;
        export_csv(&[r], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(import_csv(&path).unwrap(), vec![r]);
    }
}
