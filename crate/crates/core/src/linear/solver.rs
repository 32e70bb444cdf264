//! Multi-start stationarity solver for the linear β-VAE.
//!
//! The biases `b^μ` and `b^D` vanish at every stationary point and are held
//! at zero. The remaining blocks are found by gradient ascent on the
//! integrated objective:
//!
//! * `Reduced`: `W^σ = 0`, and given `D` both `b^σ_i = ln(β/([DᵀD]_ii + β))`
//!   and `W^μ = (DᵀD + βI)⁻¹Dᵀ` are the exact maximizers of their blocks, so
//!   only `D` moves;
//! * `Full`: `(W^μ, W^σ, b^σ, D)` all move;
//! * `FixedDecoder`: `D` is supplied by the caller and only the encoder moves.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use super::ascent::{gradient_ascent, AscentConfig, AscentOutcome, Objective};
use super::objective::{
    loss_and_gradient, loss_gradient, optimal_encoder_mean, optimal_log_variance,
};
use super::params::{LinearVaeParams, SIGMA_Y2};
use crate::error::{Error, Result};
use crate::generative::MixingModel;
use crate::par;
use crate::rng::{derive_seed, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolverMode {
    Reduced,
    Full,
    FixedDecoder,
}

impl fmt::Display for SolverMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolverMode::Reduced => "reduced",
            SolverMode::Full => "full",
            SolverMode::FixedDecoder => "fixed_decoder",
        })
    }
}

impl FromStr for SolverMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reduced" => Ok(SolverMode::Reduced),
            "full" => Ok(SolverMode::Full),
            "fixed_decoder" => Ok(SolverMode::FixedDecoder),
            other => Err(Error::invalid(format!("unknown solver mode '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub mode: SolverMode,
    /// Convergence threshold on the infinity norm of the full gradient.
    pub grad_tol: f64,
    pub max_iters: usize,
    /// Random initializations per β (a warm start, when given, is extra).
    pub restarts: usize,
    pub seed: u64,
    /// Standard deviation of random initial entries.
    pub init_scale: f64,
    /// Run the ascent inside an invariant subspace of `Σ_x`: the signal
    /// eigenvectors (eigenvalue above the noise variance) padded with noise
    /// eigenvectors up to `k`. Every stationary point is equivalent, by a
    /// rotation of the isotropic noise space, to one inside it, and points
    /// found there are stationary in the full space. Outside it the weights
    /// only decay, and at β equal to the noise variance they decay sublinearly.
    pub signal_subspace: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            mode: SolverMode::Reduced,
            grad_tol: 1e-9,
            max_iters: 200_000,
            restarts: 8,
            seed: 0,
            init_scale: 0.1,
            signal_subspace: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.grad_tol > 0.0) {
            return Err(Error::invalid("grad_tol must be positive"));
        }
        if self.restarts == 0 {
            return Err(Error::invalid("restarts must be at least 1"));
        }
        if !(self.init_scale >= 0.0) || !self.init_scale.is_finite() {
            return Err(Error::invalid("init_scale must be finite and nonnegative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StationaryPoint {
    pub params: LinearVaeParams,
    pub beta: f64,
    /// Integrated objective at `params`.
    pub loss: f64,
    /// Infinity norm of the full gradient at `params`.
    pub residual: f64,
    pub converged: bool,
    /// Ascent iterations of the winning start.
    pub iterations: usize,
}

/// Losses closer than this count as tied.
const LOSS_TIE: f64 = 1e-10;

pub struct StationarySolver {
    sigma_x: DMatrix<f64>,
    /// Orthonormal basis `U` (N×m) of the search subspace and `UᵀΣ_xU`.
    subspace: Option<(DMatrix<f64>, DMatrix<f64>)>,
    n: usize,
    k: usize,
    cfg: SolverConfig,
    fixed_decoder: Option<DMatrix<f64>>,
}

impl StationarySolver {
    pub fn new(model: &MixingModel, cfg: SolverConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.mode == SolverMode::FixedDecoder {
            return Err(Error::invalid(
                "fixed_decoder mode needs a decoder; use StationarySolver::with_fixed_decoder",
            ));
        }
        let sigma_x = model.data_covariance();
        Ok(Self {
            subspace: cfg.signal_subspace.then(|| search_subspace(&sigma_x, model.k())),
            sigma_x,
            n: model.n(),
            k: model.k(),
            cfg,
            fixed_decoder: None,
        })
    }

    /// Holds `D` at `decoder` (N×k); the mode is forced to `FixedDecoder`.
    pub fn with_fixed_decoder(
        model: &MixingModel,
        decoder: DMatrix<f64>,
        mut cfg: SolverConfig,
    ) -> Result<Self> {
        cfg.mode = SolverMode::FixedDecoder;
        cfg.validate()?;
        if decoder.shape() != (model.n(), model.k()) {
            return Err(Error::dim(format!(
                "fixed decoder is {}x{}, expected {}x{}",
                decoder.nrows(),
                decoder.ncols(),
                model.n(),
                model.k()
            )));
        }
        let sigma_x = model.data_covariance();
        // The reduction is exact only when the held decoder lies inside.
        let subspace = cfg
            .signal_subspace
            .then(|| search_subspace(&sigma_x, model.k()))
            .filter(|(u, _)| {
                let outside = &decoder - u * (u.transpose() * &decoder);
                outside.amax() <= 1e-12 * decoder.amax().max(1.0)
            });
        Ok(Self {
            subspace,
            sigma_x,
            n: model.n(),
            k: model.k(),
            cfg,
            fixed_decoder: Some(decoder),
        })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn sigma_x(&self) -> &DMatrix<f64> {
        &self.sigma_x
    }

    /// Seed of the streams used at grid position `beta_index`.
    pub fn beta_seed(&self, beta_index: u64) -> u64 {
        derive_seed(self.cfg.seed, "solver.beta", &[beta_index])
    }

    /// Solves at `beta` from `restarts` random starts plus an optional warm
    /// start, returning the best converged point in reporting gauge.
    pub fn solve(
        &self,
        beta: f64,
        beta_index: u64,
        warm: Option<&LinearVaeParams>,
    ) -> Result<StationaryPoint> {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::invalid(format!("beta must be positive, got {beta}")));
        }
        let (sigma, n, fixed) = match &self.subspace {
            Some((u, sigma)) => (
                sigma,
                u.ncols(),
                self.fixed_decoder.as_ref().map(|d| u.transpose() * d),
            ),
            None => (&self.sigma_x, self.n, self.fixed_decoder.clone()),
        };
        let problem = Problem {
            sigma_x: sigma,
            beta,
            n,
            k: self.k,
            mode: self.cfg.mode,
            fixed_decoder: fixed.as_ref(),
        };
        let seed = self.beta_seed(beta_index);
        let mut starts: Vec<DVector<f64>> = Vec::with_capacity(self.cfg.restarts + 1);
        if let Some(w) = warm {
            if w.n() != self.n || w.k() != self.k {
                return Err(Error::dim("warm start has the wrong shape"));
            }
            starts.push(problem.pack(&self.reduce(w))?);
        }
        for r in 0..self.cfg.restarts {
            let mut stream = Stream::derived(seed, "solver.restart", &[r as u64]);
            let dim = problem.dim();
            starts.push(DVector::from_fn(dim, |_, _| self.cfg.init_scale * stream.normal()));
        }
        let ascent = AscentConfig {
            grad_tol: self.cfg.grad_tol,
            max_iters: self.cfg.max_iters,
            ..AscentConfig::default()
        };
        let outcomes: Vec<Result<AscentOutcome>> =
            par::map_range(starts.len(), |i| ascend(&problem, starts[i].clone(), &ascent));

        let mut best: Option<StationaryPoint> = None;
        for outcome in outcomes {
            let Ok(outcome) = outcome else { continue };
            let mut params = self.embed(problem.unpack(&outcome.x));
            params.canonicalize();
            let (loss, grad) = loss_and_gradient(&params, &self.sigma_x, beta)?;
            let residual = residual(&grad, self.cfg.mode);
            let candidate = StationaryPoint {
                params,
                beta,
                loss,
                residual,
                converged: residual <= self.cfg.grad_tol,
                iterations: outcome.iterations,
            };
            if best.as_ref().is_none_or(|b| better(&candidate, b)) {
                best = Some(candidate);
            }
        }
        best.ok_or_else(|| Error::invalid(format!("every start failed at beta {beta}")))
    }
}

impl StationarySolver {
    /// Full-space parameters in subspace coordinates.
    fn reduce(&self, p: &LinearVaeParams) -> LinearVaeParams {
        let Some((u, _)) = &self.subspace else {
            return p.clone();
        };
        LinearVaeParams {
            w_mu: &p.w_mu * u,
            b_mu: p.b_mu.clone(),
            w_sigma: &p.w_sigma * u,
            b_sigma: p.b_sigma.clone(),
            decoder: u.transpose() * &p.decoder,
            b_dec: u.transpose() * &p.b_dec,
        }
    }

    /// Inverse of [`Self::reduce`] on the subspace; the held decoder is
    /// restored exactly.
    fn embed(&self, p: LinearVaeParams) -> LinearVaeParams {
        let Some((u, _)) = &self.subspace else {
            return p;
        };
        LinearVaeParams {
            w_mu: &p.w_mu * u.transpose(),
            b_mu: p.b_mu,
            w_sigma: &p.w_sigma * u.transpose(),
            b_sigma: p.b_sigma,
            decoder: match &self.fixed_decoder {
                Some(d) => d.clone(),
                None => u * &p.decoder,
            },
            b_dec: u * &p.b_dec,
        }
    }
}

/// First-order iterations between rotation searches.
const ROUND_ITERS: usize = 2_000;
/// Trial angles per latent pair before golden-section refinement.
const ANGLE_GRID: usize = 16;

/// Gradient ascent interleaved, in reduced mode, with exact searches over
/// rotations of latent pairs.
///
/// Rotating two latents (columns of `D`, hence rows of `W^μ`) changes only the
/// diagonal-variance term, which penalizes it at order β; those directions
/// are weakly curved and bent, so first-order steps crawl along them. The
/// objective is π/2-periodic in the angle (a quarter turn is a signed
/// permutation), so one period is searched directly.
fn ascend(problem: &Problem, start: DVector<f64>, cfg: &AscentConfig) -> Result<AscentOutcome> {
    if problem.mode != SolverMode::Reduced || problem.k < 2 {
        return gradient_ascent(problem, start, cfg);
    }
    let mut x = start;
    let mut used = 0;
    loop {
        let round = AscentConfig {
            max_iters: (cfg.max_iters - used).min(ROUND_ITERS),
            ..cfg.clone()
        };
        let out = gradient_ascent(problem, x, &round)?;
        used += out.iterations;
        if out.converged || used >= cfg.max_iters || out.iterations < round.max_iters {
            return Ok(AscentOutcome { iterations: used, ..out });
        }
        x = problem.best_rotations(out.x, out.value)?;
    }
}

/// Converged beats non-converged, then higher loss, then lower residual.
fn better(a: &StationaryPoint, b: &StationaryPoint) -> bool {
    if a.converged != b.converged {
        return a.converged;
    }
    if (a.loss - b.loss).abs() > LOSS_TIE {
        return a.loss > b.loss;
    }
    a.residual < b.residual
}

/// Single-call convenience wrapper (no warm start, grid index 0).
pub fn solve_stationary(
    model: &MixingModel,
    beta: f64,
    cfg: &SolverConfig,
) -> Result<StationaryPoint> {
    StationarySolver::new(model, cfg.clone())?.solve(beta, 0, None)
}

/// The objective restricted to the blocks a mode lets move.
struct Problem<'a> {
    sigma_x: &'a DMatrix<f64>,
    beta: f64,
    n: usize,
    k: usize,
    mode: SolverMode,
    fixed_decoder: Option<&'a DMatrix<f64>>,
}

impl Problem<'_> {
    fn dim(&self) -> usize {
        let kn = self.k * self.n;
        match self.mode {
            SolverMode::Reduced => kn,
            SolverMode::Full => 3 * kn + self.k,
            SolverMode::FixedDecoder => 2 * kn + self.k,
        }
    }

    fn pack(&self, p: &LinearVaeParams) -> Result<DVector<f64>> {
        if p.n() != self.n || p.k() != self.k {
            return Err(Error::dim("warm start has the wrong shape"));
        }
        let mut v = Vec::with_capacity(self.dim());
        if self.mode == SolverMode::Reduced {
            v.extend_from_slice(p.decoder.as_slice());
            return Ok(DVector::from_vec(v));
        }
        v.extend_from_slice(p.w_mu.as_slice());
        match self.mode {
            SolverMode::Reduced => unreachable!(),
            SolverMode::Full => {
                v.extend_from_slice(p.w_sigma.as_slice());
                v.extend_from_slice(p.b_sigma.as_slice());
                v.extend_from_slice(p.decoder.as_slice());
            }
            SolverMode::FixedDecoder => {
                v.extend_from_slice(p.w_sigma.as_slice());
                v.extend_from_slice(p.b_sigma.as_slice());
            }
        }
        Ok(DVector::from_vec(v))
    }

    fn unpack(&self, x: &DVector<f64>) -> LinearVaeParams {
        let (n, k) = (self.n, self.k);
        let kn = k * n;
        let x = x.as_slice();
        let mut p = LinearVaeParams::zeros(n, k);
        if self.mode == SolverMode::Reduced {
            p.decoder.copy_from_slice(x);
            p.b_sigma = optimal_log_variance(&p.decoder, self.beta);
            p.w_mu = optimal_encoder_mean(&p.decoder, self.beta);
            return p;
        }
        p.w_mu.copy_from_slice(&x[..kn]);
        match self.mode {
            SolverMode::Reduced => unreachable!(),
            SolverMode::Full => {
                p.w_sigma.copy_from_slice(&x[kn..2 * kn]);
                p.b_sigma.copy_from_slice(&x[2 * kn..2 * kn + k]);
                p.decoder.copy_from_slice(&x[2 * kn + k..]);
            }
            SolverMode::FixedDecoder => {
                p.w_sigma.copy_from_slice(&x[kn..2 * kn]);
                p.b_sigma.copy_from_slice(&x[2 * kn..]);
                p.decoder.copy_from(self.fixed_decoder.expect("fixed decoder present"));
            }
        }
        p
    }

}

impl Problem<'_> {
    /// Rotates latents `i` and `j` by `theta` (reduced mode: `x` holds the
    /// column-major decoder and the encoder follows it).
    fn rotate(&self, x: &DVector<f64>, i: usize, j: usize, theta: f64) -> DVector<f64> {
        let n = self.n;
        let (c, s) = (theta.cos(), theta.sin());
        let mut y = x.clone();
        for row in 0..n {
            let (a, b) = (x[row + i * n], x[row + j * n]);
            y[row + i * n] = c * a - s * b;
            y[row + j * n] = s * a + c * b;
        }
        y
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        self.value_and_gradient(x).map_or(f64::NEG_INFINITY, |(v, _)| v)
    }

    /// For each latent pair, moves to the best rotation angle when it beats
    /// the current value.
    fn best_rotations(&self, mut x: DVector<f64>, mut f: f64) -> Result<DVector<f64>> {
        let period = std::f64::consts::FRAC_PI_2;
        let h = period / ANGLE_GRID as f64;
        for i in 0..self.k {
            for j in i + 1..self.k {
                let (theta0, _) = (0..ANGLE_GRID)
                    .map(|t| {
                        let theta = t as f64 * h - period / 2.0;
                        (theta, self.value(&self.rotate(&x, i, j, theta)))
                    })
                    .fold((0.0, f64::NEG_INFINITY), |b, c| if c.1 > b.1 { c } else { b });
                let theta = golden_max(|t| self.value(&self.rotate(&x, i, j, t)), theta0 - h, theta0 + h);
                let y = self.rotate(&x, i, j, theta);
                let fy = self.value(&y);
                if fy > f {
                    x = y;
                    f = fy;
                }
            }
        }
        Ok(x)
    }
}

/// Golden-section maximization of a unimodal `g` on `[a, b]`.
fn golden_max(g: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut gc, mut gd) = (g(c), g(d));
    for _ in 0..80 {
        if gc >= gd {
            b = d;
            d = c;
            gd = gc;
            c = b - r * (b - a);
            gc = g(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + r * (b - a);
            gd = g(d);
        }
    }
    if gc >= gd { c } else { d }
}

impl Objective for Problem<'_> {
    fn value_and_gradient(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let p = self.unpack(x);
        let (value, g) = loss_and_gradient(&p, self.sigma_x, self.beta)?;
        // In reduced mode W^μ and b^σ sit at their maximizers given D, so the
        // partial derivative in D is the total derivative.
        Ok((value, self.pack(&g)?))
    }
}

/// Infinity norm over the blocks a mode is responsible for. In every mode
/// this covers all of `∂L/∂θ` except the held decoder.
fn residual(g: &LinearVaeParams, mode: SolverMode) -> f64 {
    let mut r = g.w_mu.amax().max(g.w_sigma.amax()).max(g.b_sigma.amax());
    r = r.max(g.b_mu.amax());
    if mode != SolverMode::FixedDecoder {
        r = r.max(g.decoder.amax()).max(g.b_dec.amax());
    }
    r
}

/// Leading eigenvectors of `Σ_x`: all with eigenvalue above the noise
/// variance (relative tolerance 1e-9), and at least `k`. Returns the basis
/// and `Σ_x` in it.
fn search_subspace(sigma_x: &DMatrix<f64>, k: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let eig = sigma_x.clone().symmetric_eigen();
    let n = sigma_x.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let scale = eig.eigenvalues.amax().max(1.0);
    let signal = order
        .iter()
        .filter(|&&i| eig.eigenvalues[i] - SIGMA_Y2 > 1e-9 * scale)
        .count();
    let m = signal.max(k).min(n);
    let u = DMatrix::from_fn(n, m, |r, c| eig.eigenvectors[(r, order[c])]);
    let reduced = u.transpose() * sigma_x * &u;
    let reduced = (&reduced + reduced.transpose()) * 0.5;
    (u, reduced)
}

/// Full-gradient infinity norm (all blocks) at `params`.
pub fn stationarity_residual(
    params: &LinearVaeParams,
    sigma_x: &DMatrix<f64>,
    beta: f64,
) -> Result<f64> {
    Ok(loss_gradient(params, sigma_x, beta)?.inf_norm())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_model(a: f64) -> MixingModel {
        MixingModel::new(DMatrix::from_element(1, 1, a)).unwrap()
    }

    #[test]
    fn scalar_optimum() {
        let pt = solve_stationary(&scalar_model(1.0), 1.0, &SolverConfig::default()).unwrap();
        assert!(pt.converged, "residual {}", pt.residual);
        assert!(pt.residual < 1e-9);
        let p = &pt.params;
        assert!((p.decoder[(0, 0)] - 1.0).abs() < 1e-6, "D = {}", p.decoder[(0, 0)]);
        assert!((p.w_mu[(0, 0)] - 0.5).abs() < 1e-6);
        assert!((p.b_sigma[0] + 2f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn no_signal_collapses_to_prior() {
        // At beta = 1 the collapse is marginal (every eigenvalue of the data
        // covariance equals beta); beta = 2 makes it strict.
        let m = MixingModel::new(DMatrix::zeros(3, 2)).unwrap();
        let pt = solve_stationary(&m, 2.0, &SolverConfig::default()).unwrap();
        assert!(pt.converged, "residual {}", pt.residual);
        assert!(pt.params.decoder.amax() < 1e-6);
        assert!(pt.params.w_mu.amax() < 1e-6);
        assert!(pt.params.b_sigma.amax() < 1e-6);
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = scalar_model(1.0);
        assert!(solve_stationary(&m, 0.0, &SolverConfig::default()).is_err());
        let cfg = SolverConfig {
            restarts: 0,
            ..SolverConfig::default()
        };
        assert!(solve_stationary(&m, 1.0, &cfg).is_err());
        let cfg = SolverConfig {
            mode: SolverMode::FixedDecoder,
            ..SolverConfig::default()
        };
        assert!(StationarySolver::new(&m, cfg.clone()).is_err());
        assert!(StationarySolver::with_fixed_decoder(&m, DMatrix::zeros(2, 1), cfg).is_err());
    }

    #[test]
    fn non_convergence_is_flagged() {
        let m = MixingModel::half_plus_identity(6, 2).unwrap();
        let cfg = SolverConfig {
            max_iters: 3,
            restarts: 2,
            ..SolverConfig::default()
        };
        let pt = solve_stationary(&m, 0.5, &cfg).unwrap();
        assert!(!pt.converged);
        assert!(pt.residual > cfg.grad_tol);
    }

    #[test]
    fn close_eigenvalues_converge_quickly() {
        // Nearly equal signal eigenvalues leave the latent rotation weakly
        // determined; the rotation search keeps this cheap.
        let a = DMatrix::from_row_slice(4, 2, &[2.0, 0.1, 0.1, 1.9, 0.3, -0.2, 0.0, 0.4]);
        let m = MixingModel::new(a).unwrap();
        let pt = solve_stationary(&m, 0.1, &SolverConfig::default()).unwrap();
        assert!(pt.converged, "residual {}", pt.residual);
        assert!(pt.iterations < 50_000, "{} iterations", pt.iterations);
    }

    #[test]
    fn subspace_and_full_space_agree() {
        let m = MixingModel::half_plus_identity(6, 2).unwrap();
        let sub = solve_stationary(&m, 0.7, &SolverConfig::default()).unwrap();
        let cfg = SolverConfig {
            signal_subspace: false,
            ..SolverConfig::default()
        };
        let full = solve_stationary(&m, 0.7, &cfg).unwrap();
        assert!(sub.converged && full.converged);
        assert!((sub.loss - full.loss).abs() < 1e-9, "{} vs {}", sub.loss, full.loss);
    }

    #[test]
    fn golden_section_finds_the_peak() {
        let t = golden_max(|x| -(x - 0.3).powi(2), -1.0, 1.0);
        assert!((t - 0.3).abs() < 1e-8);
    }

    #[test]
    fn mode_parsing() {
        for mode in [SolverMode::Reduced, SolverMode::Full, SolverMode::FixedDecoder] {
            assert_eq!(mode.to_string().parse::<SolverMode>().unwrap(), mode);
        }
        assert!("newton".parse::<SolverMode>().is_err());
    }
}
