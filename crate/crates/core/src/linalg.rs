//! Dense linear algebra and Gaussian statistics.
//!
//! Every SPD solve and log-determinant in the crate goes through
//! [`SpdFactor`], a Cholesky factorization that first symmetrizes its input.
//! Small asymmetries (accumulated round-off) are tolerated; anything larger
//! than [`SYMMETRY_TOL`] is reported as an error.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest relative asymmetry `max|M - Mᵀ| / max(1, max|M|)` that
/// [`SpdFactor::new`] silently symmetrizes away.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Relative symmetry tolerance required of a [`GaussianMoments`] covariance.
pub const MOMENT_SYMMETRY_TOL: f64 = 1e-12;

/// Numerical slack below zero allowed for a KL divergence.
pub const KL_SLACK: f64 = 1e-12;

/// LU pivots smaller than this (relative to the largest pivot) count as singular.
pub const PIVOT_TOL: f64 = 1e-14;

/// Mean and covariance of a multivariate normal.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianMoments {
    /// Validates symmetry and positive definiteness of `cov`.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if !cov.is_square() || cov.nrows() != mean.len() {
            return Err(Error::dim(format!(
                "mean has length {} but covariance is {}x{}",
                mean.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        let asym = relative_asymmetry(&cov);
        if asym > MOMENT_SYMMETRY_TOL {
            return Err(Error::NotSymmetric(asym));
        }
        SpdFactor::new(&cov)?;
        Ok(Self { mean, cov })
    }

    /// Diagonal covariance from a vector of variances.
    pub fn diagonal(mean: DVector<f64>, var: &DVector<f64>) -> Result<Self> {
        if var.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::NotPositiveDefinite);
        }
        Self::new(mean, DMatrix::from_diagonal(var))
    }

    /// N(0, I_d).
    pub fn standard(d: usize) -> Self {
        Self {
            mean: DVector::zeros(d),
            cov: DMatrix::identity(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// `max|M - Mᵀ| / max(1, max|M|)`.
pub fn relative_asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = m.amax().max(1.0);
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst / scale
}

/// Cholesky factorization of a (nearly) symmetric positive-definite matrix.
#[derive(Clone, Debug)]
pub struct SpdFactor {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl SpdFactor {
    pub fn new(m: &DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::dim(format!(
                "expected a square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotPositiveDefinite);
        }
        let asym = relative_asymmetry(m);
        if asym > SYMMETRY_TOL {
            return Err(Error::NotSymmetric(asym));
        }
        let sym = (m + m.transpose()) * 0.5;
        let chol = nalgebra::Cholesky::new(sym).ok_or(Error::NotPositiveDefinite)?;
        Ok(Self { chol })
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    /// Lower-triangular factor `L` with `M = L Lᵀ`.
    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn logdet(&self) -> f64 {
        let l = self.chol.l_dirty();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }
}

/// `ln det M` for symmetric positive-definite `M`, via Cholesky.
pub fn logdet_spd(m: &DMatrix<f64>) -> Result<f64> {
    Ok(SpdFactor::new(m)?.logdet())
}

/// General (LU) inverse with an explicit singularity check.
pub fn inverse(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::dim(format!("{what}: matrix is {}x{}", m.nrows(), m.ncols())));
    }
    let n = m.nrows();
    let lu = m.clone().lu();
    let u = lu.u();
    let pivots: Vec<f64> = (0..n).map(|i| u[(i, i)].abs()).collect();
    let max = pivots.iter().cloned().fold(0.0, f64::max);
    let min = pivots.iter().cloned().fold(f64::INFINITY, f64::min);
    if n > 0 && (!(max > 0.0) || min / max < PIVOT_TOL) {
        return Err(Error::Singular(what));
    }
    let inv = lu.try_inverse().ok_or(Error::Singular(what))?;
    if inv.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular(what));
    }
    Ok(inv)
}

/// Closed-form `KL(q ‖ p)` between multivariate normals.
pub fn gaussian_kl(q: &GaussianMoments, p: &GaussianMoments) -> Result<f64> {
    let d = q.dim();
    if p.dim() != d || q.cov.nrows() != d || p.cov.nrows() != d {
        return Err(Error::dim(format!("KL between dimensions {d} and {}", p.dim())));
    }
    let fp = SpdFactor::new(&p.cov)?;
    let fq = SpdFactor::new(&q.cov)?;
    let trace = fp.solve(&q.cov).trace();
    let diff = &p.mean - &q.mean;
    let quad = diff.dot(&fp.solve_vec(&diff));
    Ok(0.5 * (trace + quad - d as f64 + fp.logdet() - fq.logdet()))
}

/// `(B + U V)⁻¹` via `B⁻¹ − B⁻¹U(I_k + V B⁻¹ U)⁻¹ V B⁻¹`.
pub fn woodbury_inverse(
    b: &DMatrix<f64>,
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = b.nrows();
    let k = u.ncols();
    if !b.is_square() || u.nrows() != n || v.nrows() != k || v.ncols() != n {
        return Err(Error::dim(format!(
            "woodbury: B {}x{}, U {}x{}, V {}x{}",
            b.nrows(),
            b.ncols(),
            u.nrows(),
            u.ncols(),
            v.nrows(),
            v.ncols()
        )));
    }
    let b_inv = inverse(b, "B")?;
    let b_inv_u = &b_inv * u;
    let small = DMatrix::identity(k, k) + v * &b_inv_u;
    let small_inv = inverse(&small, "I_k + V B^-1 U")?;
    Ok(&b_inv - &b_inv_u * small_inv * (v * &b_inv))
}

/// Both sides of the push-through identity `(I_N + UV)⁻¹U = U(I_k + VU)⁻¹`.
pub fn push_through(
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (n, k) = u.shape();
    if v.shape() != (k, n) {
        return Err(Error::dim(format!(
            "push-through: U {n}x{k}, V {}x{}",
            v.nrows(),
            v.ncols()
        )));
    }
    let big = DMatrix::identity(n, n) + u * v;
    let small = DMatrix::identity(k, k) + v * u;
    let lhs = inverse(&big, "I_N + U V")? * u;
    let rhs = u * inverse(&small, "I_k + V U")?;
    Ok((lhs, rhs))
}

/// Largest absolute entrywise difference.
pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
