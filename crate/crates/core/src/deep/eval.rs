//! Post-training evaluation of the deep model against the known generator.

use nalgebra::{DMatrix, DVector};

use super::{kl_to_prior, train::TrainConfig, MlpVae, LN_2PI};
use crate::error::{Error, Result};
use crate::generative::MixingModel;
use crate::linalg::SpdFactor;
use crate::par;
use crate::rng::Stream;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeepSweepRecord {
    pub beta: f64,
    pub realization: u64,
    pub elbo: f64,
    pub recon: f64,
    /// Monte-Carlo standard error of `recon` (and hence of `elbo`).
    pub recon_std_err: f64,
    pub ci_loss: f64,
    pub tie: f64,
}

/// `z'_i = sign_i · z_{perm_i}`.
#[derive(Clone, Debug, PartialEq)]
pub struct SignedPermutation {
    pub perm: Vec<usize>,
    pub signs: Vec<f64>,
}

/// All `k!·2^k` signed permutations of `k` axes.
pub fn signed_permutations(k: usize) -> Vec<SignedPermutation> {
    fn perms(rest: &mut Vec<usize>, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if rest.is_empty() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..rest.len() {
            let v = rest.remove(i);
            prefix.push(v);
            perms(rest, prefix, out);
            prefix.pop();
            rest.insert(i, v);
        }
    }
    let mut all = Vec::new();
    perms(&mut (0..k).collect(), &mut Vec::new(), &mut all);
    let mut out = Vec::with_capacity(all.len() << k);
    for perm in all {
        for mask in 0..(1usize << k) {
            let signs = (0..k)
                .map(|i| if mask >> i & 1 == 1 { -1.0 } else { 1.0 })
                .collect();
            out.push(SignedPermutation {
                perm: perm.clone(),
                signs,
            });
        }
    }
    out
}

/// Evaluates a trained network on `data` (standardized, one sample per
/// row) whose rows were generated from `positions` (the observations of
/// `m`, one per row).
///
/// * `recon`: Monte-Carlo over `cfg.mc_samples_eval` encoder draws in total,
///   spread evenly over the samples with at least two per sample so the
///   Monte-Carlo error can be estimated;
/// * `ci_loss`: closed-form per-sample KL to the prior, averaged;
/// * `tie`: per-sample KL from `q(z|x)` to the ground-truth posterior of the
///   generating position, minimized over the latent sign/permutation gauge.
pub fn evaluate(
    net: &MlpVae,
    m: &MixingModel,
    data: &DMatrix<f64>,
    positions: &DMatrix<f64>,
    cfg: &TrainConfig,
    realization: u64,
) -> Result<DeepSweepRecord> {
    cfg.validate()?;
    let n = data.nrows();
    if n == 0 {
        return Err(Error::invalid("empty evaluation set"));
    }
    if positions.nrows() != n || positions.ncols() != m.n() {
        return Err(Error::dim(format!(
            "ground-truth pairing: {} positions of dimension {} for {n} samples, expected dimension {}",
            positions.nrows(),
            positions.ncols(),
            m.n()
        )));
    }
    if net.latent_dim() != m.k() {
        return Err(Error::dim(format!(
            "network has {} latents, generator has {} sources",
            net.latent_dim(),
            m.k()
        )));
    }
    let (mu, lv) = net.encode_batch(data)?;
    let ci_loss = kl_to_prior(&mu, &lv).iter().sum::<f64>() / n as f64;

    let draws = cfg.mc_samples_eval.div_ceil(n).max(2);
    let k = m.k();
    let dim = data.ncols() as f64;
    let per_sample: Vec<Result<(f64, f64)>> = par::map_range(n, |i| {
        let mut stream = Stream::derived(cfg.seed, "deep.eval", &[realization, i as u64]);
        let z = DMatrix::from_fn(draws, k, |_, j| {
            mu[(i, j)] + (0.5 * lv[(i, j)]).exp() * stream.normal()
        });
        let x_hat = net.decode_batch(&z)?;
        let x = data.row(i);
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for (d, row) in x_hat.row_iter().enumerate() {
            let v = -0.5 * (row - x).norm_squared() - 0.5 * dim * LN_2PI;
            let delta = v - mean;
            mean += delta / (d + 1) as f64;
            m2 += delta * (v - mean);
        }
        Ok((mean, m2 / (draws - 1) as f64))
    });
    let mut recon = 0.0;
    let mut err2 = 0.0;
    for r in per_sample {
        let (mean, var) = r?;
        recon += mean;
        err2 += var / draws as f64;
    }
    recon /= n as f64;
    let recon_std_err = err2.sqrt() / n as f64;

    let tie = gauge_min_tie(&mu, &lv, m, positions)?;
    Ok(DeepSweepRecord {
        beta: cfg.beta,
        realization,
        elbo: recon - ci_loss,
        recon,
        recon_std_err,
        ci_loss,
        tie,
    })
}

fn gauge_min_tie(
    mu: &DMatrix<f64>,
    lv: &DMatrix<f64>,
    m: &MixingModel,
    positions: &DMatrix<f64>,
) -> Result<f64> {
    let post = m.ground_truth_posterior();
    let factor = SpdFactor::new(&post.e)?;
    let e_inv = factor.inverse();
    let logdet_e = factor.logdet();
    let k = m.k();
    // Ground-truth means F x, one column per sample.
    let targets = &post.f * positions.transpose();
    let n = mu.nrows();
    let mut best = f64::INFINITY;
    for g in signed_permutations(k) {
        let mut total = 0.0;
        for r in 0..n {
            let mean = DVector::from_fn(k, |i, _| g.signs[i] * mu[(r, g.perm[i])]);
            let log_var = DVector::from_fn(k, |i, _| lv[(r, g.perm[i])]);
            let diff = targets.column(r) - &mean;
            let trace: f64 = (0..k).map(|i| e_inv[(i, i)] * log_var[i].exp()).sum();
            let quad = diff.dot(&(&e_inv * &diff));
            total += 0.5 * (trace + quad - k as f64 + logdet_e - log_var.sum());
        }
        best = best.min(total / n as f64);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{gaussian_kl, GaussianMoments};

    fn cfg(draws: usize) -> TrainConfig {
        TrainConfig {
            mc_samples_eval: draws,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn gauge_group_size() {
        assert_eq!(signed_permutations(1).len(), 2);
        assert_eq!(signed_permutations(2).len(), 8);
        assert_eq!(signed_permutations(3).len(), 48);
    }

    #[test]
    fn zero_net_matches_prior_to_posterior_kl() {
        let m = MixingModel::localization();
        let s = m.sample(50, 3);
        let net = MlpVae::zeros(2, &[3], 2).unwrap();
        let rec = evaluate(&net, &m, &s.observations, &s.observations, &cfg(10), 0).unwrap();
        assert_eq!(rec.ci_loss, 0.0);
        let post = m.ground_truth_posterior();
        let mut want = 0.0;
        for r in 0..50 {
            let x = s.observations.row(r).transpose();
            let target = GaussianMoments::new(&post.f * x, post.e.clone()).unwrap();
            want += gaussian_kl(&GaussianMoments::standard(2), &target).unwrap();
        }
        want /= 50.0;
        assert!((rec.tie - want).abs() < 1e-12, "{} vs {want}", rec.tie);
        assert!((rec.elbo - (rec.recon - rec.ci_loss)).abs() < 1e-12);
    }

    #[test]
    fn near_linear_net_recovers_the_scalar_optimum() {
        // tanh(εx)/ε ≈ x: encoder mean ½x, log-variance −ln 2, decoder z.
        let eps = 1e-4;
        let mut net = MlpVae::zeros(1, &[1], 1).unwrap();
        net.encoder[0].w[(0, 0)] = eps;
        net.mean_head.w[(0, 0)] = 0.5 / eps;
        net.log_var_head.b[0] = -(2f64.ln());
        net.decoder[0].w[(0, 0)] = eps;
        net.decoder[1].w[(0, 0)] = 1.0 / eps;
        let m = MixingModel::new(DMatrix::from_element(1, 1, 1.0)).unwrap();
        let s = m.sample(200, 8);
        let rec = evaluate(&net, &m, &s.observations, &s.observations, &cfg(200), 0).unwrap();
        assert!(rec.tie.abs() < 1e-6, "tie {}", rec.tie);
        // Per sample: q = N(x/2, 1/2), so KL to the prior is
        // ½(x²/4 − ½ + ln 2) and E_q[ln p(x|z)] = −½ ln 2π − ½(x²/4 + ½).
        let x2: f64 = s.observations.iter().map(|v| v * v).sum::<f64>() / 200.0;
        let ci = 0.5 * (0.25 * x2 - 0.5 + 2f64.ln());
        assert!((rec.ci_loss - ci).abs() < 1e-6);
        let recon = -0.5 * LN_2PI - 0.5 * (0.25 * x2 + 0.5);
        assert!((rec.recon - recon).abs() < 4.0 * rec.recon_std_err + 1e-6);
    }

    #[test]
    fn mismatched_pairing_is_rejected() {
        let m = MixingModel::localization();
        let net = MlpVae::zeros(2, &[3], 2).unwrap();
        let x = DMatrix::zeros(5, 2);
        assert!(evaluate(&net, &m, &x, &DMatrix::zeros(4, 2), &cfg(2), 0).is_err());
    }

    #[test]
    fn evaluation_is_deterministic_across_schedules() {
        let m = MixingModel::localization();
        let s = m.sample(30, 1);
        let net = MlpVae::glorot(2, &[4], 2, 2).unwrap();
        let run = |jobs| {
            par::with_jobs(jobs, || {
                evaluate(&net, &m, &s.observations, &s.observations, &cfg(20), 1).unwrap()
            })
        };
        assert_eq!(run(1), run(3));
    }
}
