//! Data-averaged β-VAE objective of the linear model and its exact gradient.
//!
//! With `x ~ N(0, Σ_x)` every expectation over the data is a Gaussian
//! integral. Writing `M = D W^μ − I_N`, `c_i = [DᵀD]_ii`,
//! `e_i = exp(½[W^σ Σ_x W^σᵀ]_ii + b^σ_i)` (the data-averaged encoder
//! variance) and `r = D b^μ + b^D`, the objective maximized here is
//!
//! ```text
//! L_β = −½ { Tr[M Σ_x Mᵀ] + β Tr[W^μ Σ_x W^μᵀ] + Σ_i (c_i + β) e_i
//!            + ‖r‖² + β‖b^μ‖² − β Σ_i b^σ_i }
//! ```
//!
//! which equals `E_x[recon] − β E_x[KL]` up to the additive constant
//! `−(N/2) ln 2π + βk/2`.

use nalgebra::{DMatrix, DVector};

use super::params::{LinearVaeParams, ParamGradient};
use crate::error::{Error, Result};
use crate::linalg::GaussianMoments;

/// Guard on every `exp` argument; larger values are reported, not clamped.
pub const EXP_LIMIT: f64 = 700.0;

pub(crate) fn checked_exp(arg: f64) -> Result<f64> {
    if arg > EXP_LIMIT || arg.is_nan() {
        return Err(Error::Overflow(arg));
    }
    Ok(arg.exp())
}

/// Encoder distribution `q(z|x)` for a single observation.
pub fn encode(p: &LinearVaeParams, x: &DVector<f64>) -> Result<GaussianMoments> {
    if x.len() != p.n() {
        return Err(Error::dim(format!("x has length {}, expected {}", x.len(), p.n())));
    }
    let mean = &p.w_mu * x + &p.b_mu;
    let log_var = &p.w_sigma * x + &p.b_sigma;
    let var = log_var.iter().map(|&v| checked_exp(v)).collect::<Result<Vec<_>>>()?;
    Ok(GaussianMoments {
        mean,
        cov: DMatrix::from_diagonal(&DVector::from_vec(var)),
    })
}

/// Gaussian integrals over `x ~ N(0, Σ_x)` shared by objective, gradient
/// and metrics.
pub(crate) struct DataAverages {
    /// `W^μ Σ_x`, k×N.
    pub wmu_sigma: DMatrix<f64>,
    /// `W^μ Σ_x W^μᵀ`, k×k.
    pub wmu_gram: DMatrix<f64>,
    /// `E_x[σ_i²(x)] = exp(½[W^σ Σ_x W^σᵀ]_ii + b^σ_i)`.
    pub var_avg: DVector<f64>,
    /// `[DᵀD]_ii`.
    pub dtd_diag: DVector<f64>,
    /// `D b^μ + b^D`.
    pub offset: DVector<f64>,
    /// `Tr[(D W^μ − I) Σ_x (D W^μ − I)ᵀ]`.
    pub recon_trace: f64,
}

impl DataAverages {
    pub fn new(p: &LinearVaeParams, sigma_x: &DMatrix<f64>) -> Result<Self> {
        p.validate()?;
        let n = p.n();
        if sigma_x.shape() != (n, n) {
            return Err(Error::dim(format!(
                "Σ_x is {}x{}, expected {n}x{n}",
                sigma_x.nrows(),
                sigma_x.ncols()
            )));
        }
        let k = p.k();
        let wmu_sigma = &p.w_mu * sigma_x;
        let wmu_gram = &wmu_sigma * p.w_mu.transpose();
        let wsig_sigma = &p.w_sigma * sigma_x;
        let mut log_var_arg = DVector::zeros(k);
        for i in 0..k {
            log_var_arg[i] = 0.5 * wsig_sigma.row(i).dot(&p.w_sigma.row(i)) + p.b_sigma[i];
        }
        let var_avg = DVector::from_vec(
            log_var_arg
                .iter()
                .map(|&v| checked_exp(v))
                .collect::<Result<Vec<_>>>()?,
        );
        let dtd_diag = DVector::from_fn(k, |j, _| p.decoder.column(j).norm_squared());
        let offset = &p.decoder * &p.b_mu + &p.b_dec;
        // Tr[D G Dᵀ] − 2 Tr[D W^μ Σ_x] + Tr Σ_x with G = W^μ Σ_x W^μᵀ.
        let dtd = p.decoder.transpose() * &p.decoder;
        let quad = dtd.component_mul(&wmu_gram).sum();
        let cross = p.decoder.component_mul(&wmu_sigma.transpose()).sum();
        let recon_trace = quad - 2.0 * cross + sigma_x.trace();
        Ok(Self {
            wmu_sigma,
            wmu_gram,
            var_avg,
            dtd_diag,
            offset,
            recon_trace,
        })
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::invalid(format!("beta must be positive, got {beta}")));
    }
    Ok(())
}

/// Data-averaged β-VAE objective `L_β` (quantity to maximize).
pub fn integrated_loss(p: &LinearVaeParams, sigma_x: &DMatrix<f64>, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    let avg = DataAverages::new(p, sigma_x)?;
    Ok(loss_from(&avg, p, beta))
}

fn loss_from(avg: &DataAverages, p: &LinearVaeParams, beta: f64) -> f64 {
    let variance_term: f64 = avg
        .dtd_diag
        .iter()
        .zip(avg.var_avg.iter())
        .map(|(c, e)| (c + beta) * e)
        .sum();
    -0.5 * (avg.recon_trace
        + beta * avg.wmu_gram.trace()
        + variance_term
        + avg.offset.norm_squared()
        + beta * p.b_mu.norm_squared()
        - beta * p.b_sigma.sum())
}

/// `∂L_β/∂θ` for every parameter block (gradient of the maximized quantity).
pub fn loss_gradient(
    p: &LinearVaeParams,
    sigma_x: &DMatrix<f64>,
    beta: f64,
) -> Result<ParamGradient> {
    Ok(loss_and_gradient(p, sigma_x, beta)?.1)
}

pub fn loss_and_gradient(
    p: &LinearVaeParams,
    sigma_x: &DMatrix<f64>,
    beta: f64,
) -> Result<(f64, ParamGradient)> {
    check_beta(beta)?;
    let avg = DataAverages::new(p, sigma_x)?;
    let loss = loss_from(&avg, p, beta);
    let k = p.k();
    let d = &p.decoder;

    // −[(DᵀD + βI) W^μ Σ_x − Dᵀ Σ_x]
    let dtd = d.transpose() * d;
    let sigma_d = sigma_x * d;
    let w_mu = -((&dtd + DMatrix::identity(k, k) * beta) * &avg.wmu_sigma - sigma_d.transpose());

    let b_mu = -(d.transpose() * &avg.offset + &p.b_mu * beta);
    let b_dec = -avg.offset.clone();

    // −[(D W^μ − I) Σ_x W^μᵀ + r b^μᵀ + D diag(e)]
    let mut decoder = d * &avg.wmu_gram - avg.wmu_sigma.transpose() + &avg.offset * p.b_mu.transpose();
    for j in 0..k {
        let e = avg.var_avg[j];
        decoder.column_mut(j).axpy(e, &d.column(j), 1.0);
    }
    decoder.neg_mut();

    let wsig_sigma = &p.w_sigma * sigma_x;
    let mut w_sigma = DMatrix::zeros(k, p.n());
    let mut b_sigma = DVector::zeros(k);
    for i in 0..k {
        let weight = (avg.dtd_diag[i] + beta) * avg.var_avg[i];
        w_sigma.set_row(i, &(wsig_sigma.row(i) * (-0.5 * weight)));
        b_sigma[i] = -0.5 * (weight - beta);
    }

    Ok((
        loss,
        ParamGradient {
            w_mu,
            b_mu,
            w_sigma,
            b_sigma,
            decoder,
            b_dec,
        },
    ))
}

/// `W^μ = (DᵀD + βI)⁻¹Dᵀ`, the root of `∂L/∂W^μ = 0` for any `Σ_x`.
pub fn optimal_encoder_mean(decoder: &DMatrix<f64>, beta: f64) -> DMatrix<f64> {
    let k = decoder.ncols();
    let gram = decoder.transpose() * decoder + DMatrix::identity(k, k) * beta;
    let dt = decoder.transpose();
    // The Gram matrix is SPD for β > 0.
    gram.cholesky().map_or_else(|| DMatrix::zeros(k, decoder.nrows()), |c| c.solve(&dt))
}

/// `b^σ_i = ln(β / ([DᵀD]_ii + β))`, the root of `∂L/∂b^σ = 0` when `W^σ = 0`.
pub fn optimal_log_variance(decoder: &DMatrix<f64>, beta: f64) -> DVector<f64> {
    DVector::from_fn(decoder.ncols(), |j, _| {
        let c = decoder.column(j).norm_squared();
        (beta / (c + beta)).ln()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn encode_examples() {
        let p = LinearVaeParams::zeros(3, 2);
        let q = encode(&p, &DVector::from_vec(vec![1.0, -2.0, 3.0])).unwrap();
        assert_eq!(q, GaussianMoments::standard(2));

        let mut p = LinearVaeParams::zeros(3, 2);
        p.b_sigma.fill(-(2f64.ln()));
        let q = encode(&p, &DVector::from_vec(vec![5.0, 1.0, 0.0])).unwrap();
        assert!((q.cov[(0, 0)] - 0.5).abs() < 1e-15 && (q.cov[(1, 1)] - 0.5).abs() < 1e-15);

        let mut p = LinearVaeParams::zeros(1, 1);
        p.w_mu[(0, 0)] = 0.5;
        p.b_sigma[0] = -(2f64.ln());
        let q = encode(&p, &DVector::from_element(1, 2.0)).unwrap();
        assert!((q.mean[0] - 1.0).abs() < 1e-15 && (q.cov[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn encode_signals_overflow() {
        let mut p = LinearVaeParams::zeros(1, 1);
        p.w_sigma[(0, 0)] = 1.0;
        assert!(matches!(
            encode(&p, &DVector::from_element(1, 800.0)),
            Err(Error::Overflow(_))
        ));
        assert!(matches!(
            encode(&p, &DVector::from_element(2, 0.0)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn zero_parameter_loss() {
        let p = LinearVaeParams::zeros(1, 1);
        let sx = scalar(2.0);
        assert!((integrated_loss(&p, &sx, 1.0).unwrap() + 1.5).abs() < 1e-15);
        assert!((integrated_loss(&p, &sx, 2.0).unwrap() + 2.0).abs() < 1e-15);
        assert!(integrated_loss(&p, &sx, 0.0).is_err());
    }

    #[test]
    fn loss_is_affine_in_beta() {
        let mut s = Stream::from_seed(8);
        let p = LinearVaeParams::random(4, 2, 0.3, &mut s);
        let sx = DMatrix::identity(4, 4) * 1.7;
        let l = |b| integrated_loss(&p, &sx, b).unwrap();
        assert!(((l(3.0) - l(2.0)) - (l(2.0) - l(1.0))).abs() < 1e-12);
    }

    #[test]
    fn zero_bias_gradients_vanish() {
        let mut s = Stream::from_seed(4);
        let mut p = LinearVaeParams::random(5, 2, 0.2, &mut s);
        p.b_mu.fill(0.0);
        p.b_dec.fill(0.0);
        let g = loss_gradient(&p, &(DMatrix::identity(5, 5) * 2.0), 0.7).unwrap();
        assert_eq!(g.b_mu.amax(), 0.0);
        assert_eq!(g.b_dec.amax(), 0.0);
    }

    #[test]
    fn closed_form_log_variance_zeroes_its_gradient() {
        let mut s = Stream::from_seed(21);
        let mut p = LinearVaeParams::random(6, 3, 0.5, &mut s);
        p.w_sigma.fill(0.0);
        for beta in [0.1, 1.0, 7.5] {
            p.b_sigma = optimal_log_variance(&p.decoder, beta);
            let g = loss_gradient(&p, &DMatrix::identity(6, 6), beta).unwrap();
            assert!(g.b_sigma.amax() < 1e-15, "beta {beta}: {}", g.b_sigma.amax());
        }
    }

    #[test]
    fn closed_form_encoder_mean_zeroes_its_gradient() {
        let mut s = Stream::from_seed(5);
        let mut p = LinearVaeParams::random(6, 2, 0.5, &mut s);
        let g = DMatrix::from_fn(6, 6, |_, _| s.normal());
        let sx = &g * g.transpose() + DMatrix::identity(6, 6);
        for beta in [0.1, 1.0, 7.5] {
            p.w_mu = optimal_encoder_mean(&p.decoder, beta);
            let grad = loss_gradient(&p, &sx, beta).unwrap();
            assert!(grad.w_mu.amax() < 1e-12, "beta {beta}: {}", grad.w_mu.amax());
        }
        let w = optimal_encoder_mean(&scalar(1.0), 1.0);
        assert!((w[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn gauge_invariance() {
        let mut s = Stream::from_seed(13);
        let p = LinearVaeParams::random(5, 3, 0.4, &mut s);
        let g = DMatrix::from_fn(5, 5, |_, _| s.normal());
        let sx = &g * g.transpose() + DMatrix::identity(5, 5);
        let base = integrated_loss(&p, &sx, 1.3).unwrap();
        for j in 0..3 {
            let mut q = p.clone();
            q.flip_latent(j);
            assert!((integrated_loss(&q, &sx, 1.3).unwrap() - base).abs() < 1e-12);
        }
        let mut q = p.clone();
        q.permute_latents(&[2, 0, 1]);
        assert!((integrated_loss(&q, &sx, 1.3).unwrap() - base).abs() < 1e-12);
    }
}
