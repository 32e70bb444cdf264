use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::rng::Stream;

/// Decoder output variance. Fixed, never learned.
pub const SIGMA_Y2: f64 = 1.0;

/// Encoder `{W^μ, b^μ, W^σ, b^σ}` and decoder `{D, b^D}` of the linear β-VAE.
///
/// The encoder is `q(z|x) = N(W^μ x + b^μ, diag(exp(W^σ x + b^σ)))` and the
/// decoder is `p(x|z) = N(D z + b^D, I_N)`. The same struct doubles as the
/// gradient container.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearVaeParams {
    /// k×N
    pub w_mu: DMatrix<f64>,
    /// k
    pub b_mu: DVector<f64>,
    /// k×N
    pub w_sigma: DMatrix<f64>,
    /// k
    pub b_sigma: DVector<f64>,
    /// N×k
    pub decoder: DMatrix<f64>,
    /// N
    pub b_dec: DVector<f64>,
}

/// Gradient of the integrated objective, shaped like the parameters.
pub type ParamGradient = LinearVaeParams;

impl LinearVaeParams {
    pub fn zeros(n: usize, k: usize) -> Self {
        Self {
            w_mu: DMatrix::zeros(k, n),
            b_mu: DVector::zeros(k),
            w_sigma: DMatrix::zeros(k, n),
            b_sigma: DVector::zeros(k),
            decoder: DMatrix::zeros(n, k),
            b_dec: DVector::zeros(n),
        }
    }

    /// Every entry drawn i.i.d. from `N(0, scale²)`.
    pub fn random(n: usize, k: usize, scale: f64, stream: &mut Stream) -> Self {
        let mut p = Self::zeros(n, k);
        p.for_each_mut(|v| *v = scale * stream.normal());
        p
    }

    /// Data dimension N.
    pub fn n(&self) -> usize {
        self.decoder.nrows()
    }

    /// Latent dimension k.
    pub fn k(&self) -> usize {
        self.decoder.ncols()
    }

    pub fn sigma_y2(&self) -> f64 {
        SIGMA_Y2
    }

    pub fn validate(&self) -> Result<()> {
        let (n, k) = (self.n(), self.k());
        let ok = self.w_mu.shape() == (k, n)
            && self.b_mu.len() == k
            && self.w_sigma.shape() == (k, n)
            && self.b_sigma.len() == k
            && self.b_dec.len() == n;
        if !ok {
            return Err(Error::dim(format!(
                "inconsistent linear VAE blocks for N={n}, k={k}"
            )));
        }
        if self.blocks().iter().any(|b| b.iter().any(|v| !v.is_finite())) {
            return Err(Error::invalid("non-finite parameter"));
        }
        Ok(())
    }

    fn blocks(&self) -> [&[f64]; 6] {
        [
            self.w_mu.as_slice(),
            self.b_mu.as_slice(),
            self.w_sigma.as_slice(),
            self.b_sigma.as_slice(),
            self.decoder.as_slice(),
            self.b_dec.as_slice(),
        ]
    }

    fn blocks_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.w_mu.as_mut_slice(),
            self.b_mu.as_mut_slice(),
            self.w_sigma.as_mut_slice(),
            self.b_sigma.as_mut_slice(),
            self.decoder.as_mut_slice(),
            self.b_dec.as_mut_slice(),
        ]
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        for block in self.blocks_mut() {
            block.iter_mut().for_each(&mut f);
        }
    }

    pub fn len(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All entries, block by block in field order, column-major within a block.
    pub fn to_vec(&self) -> Vec<f64> {
        self.blocks().concat()
    }

    /// Inverse of [`to_vec`](Self::to_vec).
    pub fn from_slice(n: usize, k: usize, values: &[f64]) -> Result<Self> {
        let mut p = Self::zeros(n, k);
        if values.len() != p.len() {
            return Err(Error::dim(format!(
                "expected {} values, got {}",
                p.len(),
                values.len()
            )));
        }
        let mut offset = 0;
        for block in p.blocks_mut() {
            let len = block.len();
            block.copy_from_slice(&values[offset..offset + len]);
            offset += len;
        }
        Ok(p)
    }

    pub fn inf_norm(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|b| b.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Flips the sign of latent `j`: column `j` of `D`, row `j` of `W^μ` and
    /// entry `j` of `b^μ`. Leaves every objective term unchanged.
    pub fn flip_latent(&mut self, j: usize) {
        self.decoder.column_mut(j).neg_mut();
        self.w_mu.row_mut(j).neg_mut();
        self.b_mu[j] = -self.b_mu[j];
    }

    /// Reorders latents so new latent `i` is old latent `order[i]`.
    pub fn permute_latents(&mut self, order: &[usize]) {
        let old = self.clone();
        for (new, &src) in order.iter().enumerate() {
            self.decoder.set_column(new, &old.decoder.column(src));
            self.w_mu.set_row(new, &old.w_mu.row(src));
            self.w_sigma.set_row(new, &old.w_sigma.row(src));
            self.b_mu[new] = old.b_mu[src];
            self.b_sigma[new] = old.b_sigma[src];
        }
    }

    /// Reporting gauge: decoder columns by descending norm, each column's
    /// largest-magnitude entry positive. Entries within a relative 1e-6 of
    /// the largest count as tied and the first of them decides, so
    /// symmetric columns keep a stable sign across solves.
    pub fn canonicalize(&mut self) {
        let k = self.k();
        let norms: Vec<f64> = (0..k).map(|j| self.decoder.column(j).norm()).collect();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
        self.permute_latents(&order);
        for j in 0..k {
            let col = self.decoder.column(j);
            let top = col.amax();
            let pivot = col.iter().copied().find(|v| v.abs() >= top * (1.0 - 1e-6)).unwrap_or(0.0);
            if pivot < 0.0 {
                self.flip_latent(j);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vec_round_trip() {
        let mut s = Stream::from_seed(2);
        let p = LinearVaeParams::random(5, 2, 1.0, &mut s);
        let q = LinearVaeParams::from_slice(5, 2, &p.to_vec()).unwrap();
        assert_eq!(p, q);
        assert!(LinearVaeParams::from_slice(5, 2, &[0.0; 3]).is_err());
    }

    #[test]
    fn canonical_form_is_sorted_and_signed() {
        let mut p = LinearVaeParams::zeros(3, 2);
        p.decoder = DMatrix::from_row_slice(3, 2, &[0.1, -3.0, 0.0, 1.0, -0.2, 0.5]);
        p.w_mu = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        p.b_sigma = DVector::from_vec(vec![-1.0, -2.0]);
        p.canonicalize();
        assert_eq!(p.decoder.column(0).as_slice(), &[3.0, -1.0, -0.5]);
        assert_eq!(p.w_mu.row(0).iter().copied().collect::<Vec<_>>(), vec![-4.0, -5.0, -6.0]);
        assert_eq!(p.b_sigma.as_slice(), &[-2.0, -1.0]);
        assert_eq!(p.decoder.column(1).as_slice(), &[-0.1, 0.0, 0.2]);
    }
}
