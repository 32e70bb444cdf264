//! Gradient ascent with a backtracking (halving) line search.
//!
//! Trial steps use the Barzilai–Borwein length from the previous accepted
//! move and are halved until the Armijo sufficient-increase test passes.
//! Once the achievable increase drops below round-off in the objective, a step
//! is also accepted when the objective stays within the noise floor and the
//! gradient norm shrinks; this lets the iteration reach gradient tolerances
//! far below `sqrt(eps)`.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// A smooth objective to be maximized.
pub trait Objective {
    fn value_and_gradient(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)>;
}

#[derive(Clone, Debug)]
pub struct AscentConfig {
    /// Stop once `‖∇f‖∞ ≤ grad_tol`.
    pub grad_tol: f64,
    pub max_iters: usize,
    /// Armijo constant.
    pub sufficient_increase: f64,
    /// Keep the objective value of every accepted iterate.
    pub record_history: bool,
}

impl Default for AscentConfig {
    fn default() -> Self {
        Self {
            grad_tol: 1e-9,
            max_iters: 200_000,
            sufficient_increase: 1e-4,
            record_history: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AscentOutcome {
    pub x: DVector<f64>,
    pub value: f64,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each accepted step (starting point first), when requested.
    pub history: Vec<f64>,
}

const MAX_HALVINGS: usize = 80;

/// Relative noise floor of objective evaluations.
const NOISE: f64 = 64.0 * f64::EPSILON;

pub fn gradient_ascent(
    objective: &impl Objective,
    x0: DVector<f64>,
    cfg: &AscentConfig,
) -> Result<AscentOutcome> {
    let mut x = x0;
    let (mut f, mut g) = objective.value_and_gradient(&x)?;
    if !f.is_finite() {
        return Err(Error::invalid("objective is not finite at the starting point"));
    }
    let mut history = Vec::new();
    if cfg.record_history {
        history.push(f);
    }
    let mut step = 1.0 / g.norm().max(1.0);
    let mut last_move: Option<(DVector<f64>, DVector<f64>)> = None;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < cfg.max_iters {
        if g.amax() <= cfg.grad_tol {
            converged = true;
            break;
        }
        if let Some((s, y)) = &last_move {
            let sy = s.dot(y);
            // Ascent on a locally concave function gives sᵀy < 0.
            step = if sy < 0.0 { s.norm_squared() / -sy } else { 2.0 * step };
        }
        let g_sq = g.norm_squared();
        let g_norm = g_sq.sqrt();
        let mut accepted = None;
        let mut trial = step;
        for _ in 0..MAX_HALVINGS {
            let candidate = &x + &g * trial;
            if let Ok((fc, gc)) = objective.value_and_gradient(&candidate) {
                if fc.is_finite()
                    && gc.iter().all(|v| v.is_finite())
                    && acceptable(f, fc, &gc, g_norm, cfg.sufficient_increase * trial * g_sq)
                {
                    accepted = Some((candidate, fc, gc));
                    break;
                }
            }
            trial *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            break;
        };
        last_move = Some((&xn - &x, &gn - &g));
        step = trial;
        x = xn;
        f = fn_;
        g = gn;
        iterations += 1;
        if cfg.record_history {
            history.push(f);
        }
    }
    if !converged && g.amax() <= cfg.grad_tol {
        converged = true;
    }
    Ok(AscentOutcome {
        residual: g.amax(),
        x,
        value: f,
        iterations,
        converged,
        history,
    })
}

/// Accepts a trial point when the Armijo test passes or, at the noise floor,
/// when the value holds and the gradient shrinks.
fn acceptable(f: f64, fc: f64, gc: &DVector<f64>, g_norm: f64, armijo_rhs: f64) -> bool {
    let noise = NOISE * f.abs().max(1.0);
    fc >= f + armijo_rhs || (fc >= f - noise && gc.norm() < g_norm)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Concave quadratic −½ Σ λ_i (x_i − 1)².
    struct Quadratic(Vec<f64>);

    impl Objective for Quadratic {
        fn value_and_gradient(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
            let g = DVector::from_fn(x.len(), |i, _| -self.0[i] * (x[i] - 1.0));
            let f = -0.5 * (0..x.len()).map(|i| self.0[i] * (x[i] - 1.0).powi(2)).sum::<f64>();
            Ok((f, g))
        }
    }

    #[test]
    fn converges_on_ill_conditioned_quadratic() {
        let q = Quadratic(vec![1.0, 10.0, 100.0, 1000.0]);
        let cfg = AscentConfig {
            record_history: true,
            ..AscentConfig::default()
        };
        let out = gradient_ascent(&q, DVector::zeros(4), &cfg).unwrap();
        assert!(out.converged);
        assert!(out.residual <= 1e-9);
        assert!(out.x.iter().all(|v| (v - 1.0).abs() < 1e-9));
        for w in out.history.windows(2) {
            assert!(w[1] >= w[0] - NOISE * w[0].abs().max(1.0));
        }
    }

    #[test]
    fn reports_non_convergence() {
        let q = Quadratic(vec![1.0, 1e4]);
        let cfg = AscentConfig {
            max_iters: 2,
            ..AscentConfig::default()
        };
        let out = gradient_ascent(&q, DVector::from_vec(vec![-50.0, 40.0]), &cfg).unwrap();
        assert!(!out.converged);
        assert_eq!(out.iterations, 2);
    }
}
