//! The analytically tractable linear β-VAE.

mod ascent;
mod objective;
mod params;
mod solver;

pub use ascent::{gradient_ascent, AscentConfig, AscentOutcome, Objective};
pub use objective::{
    encode, integrated_loss, loss_and_gradient, loss_gradient, optimal_encoder_mean,
    optimal_log_variance, EXP_LIMIT,
};
pub(crate) use objective::DataAverages;
pub use params::{LinearVaeParams, ParamGradient, SIGMA_Y2};
pub use solver::{
    solve_stationary, stationarity_residual, SolverConfig, SolverMode, StationaryPoint,
    StationarySolver,
};

use crate::error::{Error, Result};
use crate::generative::PosteriorMap;

/// Exact posterior `p_θ(z|x) = N(F x, E)` of the decoder with `E = (DᵀD + I)⁻¹`
/// and `F = E Dᵀ`. Only defined for a zero decoder bias.
pub fn model_posterior(p: &LinearVaeParams) -> Result<PosteriorMap> {
    if p.b_dec.iter().any(|&v| v != 0.0) {
        return Err(Error::invalid(
            "model posterior requires a zero decoder bias b^D",
        ));
    }
    PosteriorMap::from_loading(&p.decoder)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generative::MixingModel;
    use crate::linalg::max_abs_diff;
    use nalgebra::DMatrix;

    #[test]
    fn model_posterior_examples() {
        let p = LinearVaeParams::zeros(4, 2);
        let post = model_posterior(&p).unwrap();
        assert_eq!(post.f, DMatrix::zeros(2, 4));
        assert!(max_abs_diff(&post.e, &DMatrix::identity(2, 2)) < 1e-15);

        let mut p = LinearVaeParams::zeros(1, 1);
        p.decoder[(0, 0)] = 1.0;
        let post = model_posterior(&p).unwrap();
        assert!((post.f[(0, 0)] - 0.5).abs() < 1e-15 && (post.e[(0, 0)] - 0.5).abs() < 1e-15);

        let m = MixingModel::half_plus_identity(5, 2).unwrap();
        let mut p = LinearVaeParams::zeros(5, 2);
        p.decoder = m.a().clone();
        let post = model_posterior(&p).unwrap();
        let gt = m.ground_truth_posterior();
        assert!(max_abs_diff(&post.f, &gt.f) < 1e-15);
        assert!(max_abs_diff(&post.e, &gt.e) < 1e-15);

        p.b_dec[0] = 0.1;
        assert!(model_posterior(&p).is_err());
    }
}
