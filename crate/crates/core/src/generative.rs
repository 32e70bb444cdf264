//! The data generative process `x = A s + η` with `s ~ N(0, I_k)` and
//! `η ~ N(0, I_N)`, and its exact source posterior.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::SpdFactor;
use crate::rng::Stream;

/// Mixing matrix `A` (N×k) of the linear-Gaussian generative process.
#[derive(Clone, Debug, PartialEq)]
pub struct MixingModel {
    a: DMatrix<f64>,
}

impl MixingModel {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        let (n, k) = a.shape();
        if k == 0 || n < k {
            return Err(Error::invalid(format!(
                "mixing matrix must satisfy N >= k >= 1, got N={n}, k={k}"
            )));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("mixing matrix has non-finite entries"));
        }
        Ok(Self { a })
    }

    /// `A_ij = offdiag + diag·δ_ij`.
    pub fn patterned(n: usize, k: usize, diag: f64, offdiag: f64) -> Result<Self> {
        Self::new(DMatrix::from_fn(n, k, |i, j| {
            offdiag + if i == j { diag } else { 0.0 }
        }))
    }

    /// `A_ij = ½(1 + δ_ij)`, the analytical-model configuration.
    pub fn half_plus_identity(n: usize, k: usize) -> Result<Self> {
        Self::patterned(n, k, 0.5, 0.5)
    }

    /// `A_ij = 2δ_ij + 0.73` with N = k = 2, the localization dataset.
    pub fn localization() -> Self {
        Self::patterned(2, 2, 2.0, 0.73).expect("2x2 mixing is valid")
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// Data dimension N.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Source dimension k.
    pub fn k(&self) -> usize {
        self.a.ncols()
    }

    /// `Σ_x = A Aᵀ + I_N`.
    pub fn data_covariance(&self) -> DMatrix<f64> {
        let n = self.n();
        &self.a * self.a.transpose() + DMatrix::identity(n, n)
    }

    /// Exact posterior `p(s | x) = N(F x, E)` with `E = (AᵀA + I_k)⁻¹`,
    /// `F = E Aᵀ`.
    pub fn ground_truth_posterior(&self) -> PosteriorMap {
        PosteriorMap::from_loading(&self.a).expect("AᵀA + I is always SPD")
    }

    /// Draws `n` i.i.d. pairs `(s, x)`, one per row.
    pub fn sample(&self, n: usize, seed: u64) -> Samples {
        let mut stream = Stream::derived(seed, "generative.sample", &[]);
        let (dim_x, k) = self.a.shape();
        let mut sources = DMatrix::zeros(n, k);
        let mut observations = DMatrix::zeros(n, dim_x);
        for row in 0..n {
            for j in 0..k {
                sources[(row, j)] = stream.normal();
            }
            for i in 0..dim_x {
                let mut x = stream.normal();
                for j in 0..k {
                    x += self.a[(i, j)] * sources[(row, j)];
                }
                observations[(row, i)] = x;
            }
        }
        Samples {
            sources,
            observations,
        }
    }
}

/// Sources (n×k) paired with the observations (n×N) they generated.
#[derive(Clone, Debug, PartialEq)]
pub struct Samples {
    pub sources: DMatrix<f64>,
    pub observations: DMatrix<f64>,
}

/// Linear-Gaussian posterior `N(F x, E)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorMap {
    /// Mean map, k×N.
    pub f: DMatrix<f64>,
    /// Covariance, k×k.
    pub e: DMatrix<f64>,
}

impl PosteriorMap {
    /// Posterior of `z` under `x = L z + η` with unit-Gaussian `z` and `η`.
    pub(crate) fn from_loading(l: &DMatrix<f64>) -> Result<Self> {
        let k = l.ncols();
        let precision = l.transpose() * l + DMatrix::identity(k, k);
        let factor = SpdFactor::new(&precision)?;
        let e = factor.inverse();
        let f = factor.solve(&l.transpose());
        Ok(Self { f, e })
    }

    pub fn k(&self) -> usize {
        self.e.nrows()
    }

    pub fn n(&self) -> usize {
        self.f.ncols()
    }
}

/// Convenience wrappers mirroring the method API.
pub fn data_covariance(m: &MixingModel) -> DMatrix<f64> {
    m.data_covariance()
}

pub fn ground_truth_posterior(m: &MixingModel) -> PosteriorMap {
    m.ground_truth_posterior()
}

pub fn sample_data(m: &MixingModel, n: usize, seed: u64) -> Samples {
    m.sample(n, seed)
}
