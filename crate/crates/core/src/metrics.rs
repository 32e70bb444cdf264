//! Reported quantities of the linear β-VAE, in closed form over
//! `x ~ N(0, Σ_x)`, plus an independent Monte-Carlo estimator of each.
//!
//! * reconstruction objective `E_x E_q[ln p(x|z)]`, including `−(N/2) ln 2π`;
//! * conditional-independence loss `E_x KL(q(z|x) ‖ N(0, I))`;
//! * inference error `E_x KL(q(z|x) ‖ N(F x, E))` against a linear-Gaussian
//!   posterior: the model posterior gives MIE, the ground truth gives TIE.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::generative::{MixingModel, PosteriorMap};
use crate::linalg::{gaussian_kl, GaussianMoments, SpdFactor};
use crate::linear::{encode, model_posterior, DataAverages, LinearVaeParams};
use crate::par;
use crate::rng::Stream;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// All reported quantities at one parameter point and β.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricBundle {
    pub elbo: f64,
    pub recon: f64,
    pub ci_loss: f64,
    pub mie: f64,
    pub tie: f64,
    /// `recon − β·ci_loss`, the β-VAE objective including all constants.
    pub loss_value: f64,
}

pub fn reconstruction_objective(p: &LinearVaeParams, sigma_x: &DMatrix<f64>) -> Result<f64> {
    let avg = DataAverages::new(p, sigma_x)?;
    Ok(recon_from(&avg, p.n()))
}

fn recon_from(avg: &DataAverages, n: usize) -> f64 {
    let spread: f64 = avg.dtd_diag.component_mul(&avg.var_avg).sum();
    -0.5 * (n as f64 * LN_2PI + avg.recon_trace + spread + avg.offset.norm_squared())
}

pub fn conditional_independence_loss(
    p: &LinearVaeParams,
    sigma_x: &DMatrix<f64>,
) -> Result<f64> {
    let avg = DataAverages::new(p, sigma_x)?;
    Ok(ci_from(&avg, p))
}

fn ci_from(avg: &DataAverages, p: &LinearVaeParams) -> f64 {
    // E_x[ln σ_i²(x)] = b^σ_i because x has zero mean.
    0.5 * (avg.wmu_gram.trace() + p.b_mu.norm_squared() + avg.var_avg.sum()
        - p.b_sigma.sum()
        - p.k() as f64)
}

/// `E_x KL(q(z|x) ‖ N(F x, E))`.
pub fn inference_error(
    p: &LinearVaeParams,
    target: &PosteriorMap,
    sigma_x: &DMatrix<f64>,
) -> Result<f64> {
    let avg = DataAverages::new(p, sigma_x)?;
    inference_error_from(&avg, p, target, sigma_x)
}

fn inference_error_from(
    avg: &DataAverages,
    p: &LinearVaeParams,
    target: &PosteriorMap,
    sigma_x: &DMatrix<f64>,
) -> Result<f64> {
    if target.f.shape() != (p.k(), p.n()) || target.e.shape() != (p.k(), p.k()) {
        return Err(Error::dim("posterior map does not match the parameter shapes"));
    }
    let factor = SpdFactor::new(&target.e)?;
    let e_inv = factor.inverse();
    let variance: f64 = (0..p.k()).map(|i| e_inv[(i, i)] * avg.var_avg[i]).sum();
    let delta = &target.f - &p.w_mu;
    let spread = (&delta * sigma_x * delta.transpose()).component_mul(&e_inv).sum();
    // A nonzero encoder bias shifts the mean by −b^μ for every x.
    let shift = p.b_mu.dot(&(&e_inv * &p.b_mu));
    Ok(0.5 * (variance - p.b_sigma.sum() + factor.logdet() + spread + shift - p.k() as f64))
}

pub fn metric_bundle(p: &LinearVaeParams, m: &MixingModel, beta: f64) -> Result<MetricBundle> {
    if !(beta > 0.0) {
        return Err(Error::invalid(format!("beta must be positive, got {beta}")));
    }
    let sigma_x = m.data_covariance();
    let avg = DataAverages::new(p, &sigma_x)?;
    let recon = recon_from(&avg, p.n());
    let ci_loss = ci_from(&avg, p);
    let mie = inference_error_from(&avg, p, &model_posterior(p)?, &sigma_x)?;
    let tie = inference_error_from(&avg, p, &m.ground_truth_posterior(), &sigma_x)?;
    Ok(MetricBundle {
        elbo: recon - ci_loss,
        recon,
        ci_loss,
        mie,
        tie,
        loss_value: recon - beta * ci_loss,
    })
}

/// A Monte-Carlo mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub std_err: f64,
}

impl Estimate {
    /// `|value − reference|` in units of the standard error.
    pub fn z_score(&self, reference: f64) -> f64 {
        let d = (self.value - reference).abs();
        if self.std_err > 0.0 {
            d / self.std_err
        } else if d == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// Sampling-based counterpart of [`MetricBundle`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McBundle {
    pub elbo: Estimate,
    pub recon: Estimate,
    pub ci_loss: Estimate,
    pub mie: Estimate,
    pub tie: Estimate,
    pub loss_value: Estimate,
    pub n_x: usize,
}

impl McBundle {
    pub fn estimates(&self) -> MetricBundle {
        MetricBundle {
            elbo: self.elbo.value,
            recon: self.recon.value,
            ci_loss: self.ci_loss.value,
            mie: self.mie.value,
            tie: self.tie.value,
            loss_value: self.loss_value.value,
        }
    }
}

/// Observations per batch; each batch owns a derived stream, so estimates do
/// not depend on how batches are scheduled.
pub const MC_BATCH: usize = 2048;

const QUANTITIES: usize = 6;

/// Running mean and sum of squared deviations for each quantity.
#[derive(Clone, Copy)]
struct Moments {
    count: f64,
    mean: [f64; QUANTITIES],
    m2: [f64; QUANTITIES],
}

impl Moments {
    fn new() -> Self {
        Self {
            count: 0.0,
            mean: [0.0; QUANTITIES],
            m2: [0.0; QUANTITIES],
        }
    }

    fn push(&mut self, v: &[f64; QUANTITIES]) {
        self.count += 1.0;
        for (i, &x) in v.iter().enumerate() {
            let d = x - self.mean[i];
            self.mean[i] += d / self.count;
            self.m2[i] += d * (x - self.mean[i]);
        }
    }

    fn merge(&mut self, o: &Moments) {
        if o.count == 0.0 {
            return;
        }
        let total = self.count + o.count;
        for i in 0..QUANTITIES {
            let d = o.mean[i] - self.mean[i];
            self.mean[i] += d * o.count / total;
            self.m2[i] += o.m2[i] + d * d * self.count * o.count / total;
        }
        self.count = total;
    }

    fn estimate(&self, i: usize) -> Estimate {
        let std_err = if self.count > 1.0 {
            (self.m2[i] / (self.count - 1.0) / self.count).sqrt()
        } else {
            f64::INFINITY
        };
        Estimate {
            value: self.mean[i],
            std_err,
        }
    }
}

/// Monte-Carlo estimate of every [`MetricBundle`] entry.
///
/// Draws `n_x` pairs `(s, x)` from the generative model. The reconstruction
/// term averages `ln N(x; D z + b^D, I)` over `n_z` reparameterized draws
/// `z = μ_z + Σ_z^{1/2} ε`; the KL terms use the per-observation Gaussian KL.
pub fn mc_oracle_bundle(
    p: &LinearVaeParams,
    m: &MixingModel,
    beta: f64,
    n_x: usize,
    n_z: usize,
    seed: u64,
) -> Result<McBundle> {
    if n_x == 0 || n_z == 0 {
        return Err(Error::invalid("n_x and n_z must be at least 1"));
    }
    if p.n() != m.n() || p.k() != m.k() {
        return Err(Error::dim("parameters do not match the mixing model"));
    }
    let model_post = model_posterior(p)?;
    let truth = m.ground_truth_posterior();
    let a = m.a();
    let (n, k) = (m.n(), m.k());
    let batches = n_x.div_ceil(MC_BATCH);

    let partials = par::map_range(batches, |b| -> Result<Moments> {
        let mut stream = Stream::derived(seed, "metrics.mc_oracle", &[b as u64]);
        let count = MC_BATCH.min(n_x - b * MC_BATCH);
        let mut acc = Moments::new();
        let mut s = DVector::zeros(k);
        let mut x = DVector::zeros(n);
        for _ in 0..count {
            s.iter_mut().for_each(|v| *v = stream.normal());
            x.iter_mut().for_each(|v| *v = stream.normal());
            x.gemv(1.0, a, &s, 1.0);
            let q = encode(p, &x)?;
            let sd = q.cov.diagonal().map(f64::sqrt);
            let mut recon = 0.0;
            for _ in 0..n_z {
                let eps = DVector::from_fn(k, |_, _| stream.normal());
                let z = &q.mean + sd.component_mul(&eps);
                let resid = &x - &p.decoder * z - &p.b_dec;
                recon += -0.5 * (n as f64 * LN_2PI + resid.norm_squared());
            }
            recon /= n_z as f64;
            let ci = gaussian_kl(&q, &GaussianMoments::standard(k))?;
            let mie = gaussian_kl(&q, &at(&model_post, &x))?;
            let tie = gaussian_kl(&q, &at(&truth, &x))?;
            acc.push(&[recon - ci, recon, ci, mie, tie, recon - beta * ci]);
        }
        Ok(acc)
    });
    let mut total = Moments::new();
    for part in partials {
        total.merge(&part?);
    }
    Ok(McBundle {
        elbo: total.estimate(0),
        recon: total.estimate(1),
        ci_loss: total.estimate(2),
        mie: total.estimate(3),
        tie: total.estimate(4),
        loss_value: total.estimate(5),
        n_x,
    })
}

fn at(post: &PosteriorMap, x: &DVector<f64>) -> GaussianMoments {
    GaussianMoments {
        mean: &post.f * x,
        cov: post.e.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_optimum() -> (LinearVaeParams, MixingModel) {
        let mut p = LinearVaeParams::zeros(1, 1);
        p.decoder[(0, 0)] = 1.0;
        p.w_mu[(0, 0)] = 0.5;
        p.b_sigma[0] = -(2f64.ln());
        (p, MixingModel::new(DMatrix::from_element(1, 1, 1.0)).unwrap())
    }

    #[test]
    fn recon_of_zero_parameters() {
        let p = LinearVaeParams::zeros(1, 1);
        let r = reconstruction_objective(&p, &DMatrix::from_element(1, 1, 2.0)).unwrap();
        assert!((r + 0.5 * (LN_2PI + 2.0)).abs() < 1e-14);
        assert!((r + 1.918_938_533_204_672_7).abs() < 1e-12);
    }

    #[test]
    fn ci_examples() {
        let p = LinearVaeParams::zeros(3, 2);
        assert_eq!(conditional_independence_loss(&p, &DMatrix::identity(3, 3)).unwrap(), 0.0);
        let (p, m) = scalar_optimum();
        let ci = conditional_independence_loss(&p, &m.data_covariance()).unwrap();
        // E[μ²] = ¼·2, σ² = ½: ½(½ + ½ + ln 2 − 1).
        assert!((ci - 0.5 * 2f64.ln()).abs() < 1e-15, "{ci}");
    }

    #[test]
    fn scalar_optimum_has_zero_inference_error() {
        let (p, m) = scalar_optimum();
        let b = metric_bundle(&p, &m, 1.0).unwrap();
        assert!(b.mie.abs() < 1e-15 && b.tie.abs() < 1e-15, "{b:?}");
        assert_eq!(b.elbo, b.recon - b.ci_loss);
    }

    #[test]
    fn identity_mixing_matches_ground_truth() {
        let k = 3;
        let m = MixingModel::new(DMatrix::identity(k, k)).unwrap();
        let mut p = LinearVaeParams::zeros(k, k);
        p.w_mu = DMatrix::identity(k, k) * 0.5;
        p.b_sigma.fill(-(2f64.ln()));
        let tie = inference_error(&p, &m.ground_truth_posterior(), &m.data_covariance()).unwrap();
        assert!(tie.abs() < 1e-14);
        p.w_mu[(0, 1)] += 0.1;
        let tie = inference_error(&p, &m.ground_truth_posterior(), &m.data_covariance()).unwrap();
        assert!(tie > 0.0);
    }

    #[test]
    fn bundle_identities() {
        let mut s = Stream::from_seed(31);
        let m = MixingModel::new(DMatrix::from_fn(4, 2, |_, _| s.normal())).unwrap();
        let mut p = LinearVaeParams::random(4, 2, 0.3, &mut s);
        p.b_dec.fill(0.0);
        for beta in [0.3, 1.0, 4.0] {
            let b = metric_bundle(&p, &m, beta).unwrap();
            assert!((b.elbo - (b.recon - b.ci_loss)).abs() < 1e-9);
            assert!((b.loss_value - (b.recon - beta * b.ci_loss)).abs() < 1e-9);
            assert!((b.loss_value - (b.elbo + (1.0 - beta) * b.ci_loss)).abs() < 1e-9);
            assert!(b.mie >= -1e-9 && b.tie >= -1e-9 && b.ci_loss >= -1e-9);
        }
    }

    #[test]
    fn mie_equals_tie_when_decoder_is_the_mixing_matrix() {
        let m = MixingModel::half_plus_identity(6, 2).unwrap();
        let mut s = Stream::from_seed(77);
        let mut p = LinearVaeParams::random(6, 2, 0.2, &mut s);
        p.b_dec.fill(0.0);
        p.decoder = m.a().clone();
        let b = metric_bundle(&p, &m, 1.0).unwrap();
        assert!((b.mie - b.tie).abs() < 1e-10);
    }

    #[test]
    fn oracle_degenerate_and_deterministic() {
        let (p, m) = scalar_optimum();
        let one = mc_oracle_bundle(&p, &m, 1.0, 1, 1, 3).unwrap();
        assert!(one.recon.value.is_finite());
        assert!(one.recon.std_err.is_infinite());
        let a = mc_oracle_bundle(&p, &m, 1.0, 5000, 2, 3).unwrap();
        let b = mc_oracle_bundle(&p, &m, 1.0, 5000, 2, 3).unwrap();
        assert_eq!(a, b);
        assert!(mc_oracle_bundle(&p, &m, 1.0, 0, 1, 3).is_err());
    }

    #[test]
    fn oracle_is_schedule_independent() {
        let (p, m) = scalar_optimum();
        let a = par::with_jobs(1, || mc_oracle_bundle(&p, &m, 1.0, 3 * MC_BATCH + 5, 1, 9).unwrap());
        let b = par::with_jobs(3, || mc_oracle_bundle(&p, &m, 1.0, 3 * MC_BATCH + 5, 1, 9).unwrap());
        assert_eq!(a, b);
    }
}
