//! A small deep β-VAE with hand-written reverse-mode gradients.
//!
//! Encoder: `in → h₁ → … → h_m` (tanh), then two linear heads `h_m → k`
//! for the mean and the log-variance. Decoder: the mirror image
//! `k → h_m → … → h₁ → in` with tanh hidden layers and a linear output.
//! Weights are stored `in × out` so that a batch (one sample per row)
//! propagates as `H W + b`.

mod eval;
mod io;
mod train;

pub use eval::{evaluate, signed_permutations, DeepSweepRecord, SignedPermutation};
pub use io::{load_model, read_model, save_model, write_model, MODEL_MAGIC, MODEL_VERSION};
pub use train::{train, Adam, TrainConfig, TrainOutcome};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::GaussianMoments;
use crate::rng::Stream;

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Hidden widths of the default architecture.
pub const DEFAULT_HIDDEN: [usize; 3] = [256, 200, 200];

/// One affine layer, `y = x W + b` with `W` stored `in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            w: DMatrix::zeros(fan_in, fan_out),
            b: DVector::zeros(fan_out),
        }
    }

    /// Uniform in `±√(6/(fan_in + fan_out))`, zero bias.
    pub fn glorot(fan_in: usize, fan_out: usize, stream: &mut Stream) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut w = DMatrix::zeros(fan_in, fan_out);
        // Row-major fill so the draw order matches the file layout.
        for i in 0..fan_in {
            for j in 0..fan_out {
                w[(i, j)] = limit * (2.0 * stream.uniform() - 1.0);
            }
        }
        Self {
            w,
            b: DVector::zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.w.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.w.ncols()
    }

    fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = x * &self.w;
        for (j, &bj) in self.b.iter().enumerate() {
            y.column_mut(j).add_scalar_mut(bj);
        }
        y
    }

    /// Accumulates `∂/∂W`, `∂/∂b` into `grad` and returns the signal for
    /// the layer input (skipped when `need_input` is false).
    fn backward(
        &self,
        input: &DMatrix<f64>,
        delta: &DMatrix<f64>,
        grad: &mut Dense,
        need_input: bool,
    ) -> Option<DMatrix<f64>> {
        grad.w += input.tr_mul(delta);
        for j in 0..delta.ncols() {
            grad.b[j] += delta.column(j).sum();
        }
        need_input.then(|| delta * self.w.transpose())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpVae {
    pub encoder: Vec<Dense>,
    pub mean_head: Dense,
    pub log_var_head: Dense,
    /// Hidden decoder layers followed by the linear output layer.
    pub decoder: Vec<Dense>,
}

fn chain(input: usize, hidden: &[usize], k: usize) -> Result<()> {
    if input == 0 || k == 0 || hidden.is_empty() || hidden.contains(&0) {
        return Err(Error::invalid(format!(
            "network needs positive sizes and at least one hidden layer (in={input}, hidden={hidden:?}, k={k})"
        )));
    }
    Ok(())
}

impl MlpVae {
    fn build(
        input: usize,
        hidden: &[usize],
        k: usize,
        mut layer: impl FnMut(usize, usize) -> Dense,
    ) -> Result<Self> {
        chain(input, hidden, k)?;
        let mut encoder = Vec::with_capacity(hidden.len());
        let mut prev = input;
        for &h in hidden {
            encoder.push(layer(prev, h));
            prev = h;
        }
        let mean_head = layer(prev, k);
        let log_var_head = layer(prev, k);
        let mut decoder = Vec::with_capacity(hidden.len() + 1);
        let mut prev = k;
        for &h in hidden.iter().rev() {
            decoder.push(layer(prev, h));
            prev = h;
        }
        decoder.push(layer(prev, input));
        Ok(Self {
            encoder,
            mean_head,
            log_var_head,
            decoder,
        })
    }

    pub fn zeros(input: usize, hidden: &[usize], k: usize) -> Result<Self> {
        Self::build(input, hidden, k, Dense::zeros)
    }

    /// Glorot-uniform weights, zero biases, drawn from `seed`.
    pub fn glorot(input: usize, hidden: &[usize], k: usize, seed: u64) -> Result<Self> {
        let mut stream = Stream::derived(seed, "deep.init", &[]);
        Self::build(input, hidden, k, |i, o| Dense::glorot(i, o, &mut stream))
    }

    /// A zero-valued network of the same shape.
    pub fn zeros_like(&self) -> Self {
        let z = |d: &Dense| Dense::zeros(d.fan_in(), d.fan_out());
        Self {
            encoder: self.encoder.iter().map(z).collect(),
            mean_head: z(&self.mean_head),
            log_var_head: z(&self.log_var_head),
            decoder: self.decoder.iter().map(z).collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.encoder[0].fan_in()
    }

    pub fn latent_dim(&self) -> usize {
        self.mean_head.fan_out()
    }

    pub fn hidden(&self) -> Vec<usize> {
        self.encoder.iter().map(Dense::fan_out).collect()
    }

    /// Layers in file order: encoder, mean head, log-variance head, decoder.
    pub fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.encoder
            .iter()
            .chain([&self.mean_head, &self.log_var_head])
            .chain(self.decoder.iter())
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.encoder
            .iter_mut()
            .chain([&mut self.mean_head, &mut self.log_var_head])
            .chain(self.decoder.iter_mut())
    }

    pub fn num_params(&self) -> usize {
        self.layers().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Rebuilds a network from layers in file order, checking the shapes chain.
    pub fn from_layers(mut layers: Vec<Dense>) -> Result<Self> {
        if layers.len() < 5 || layers.len().is_multiple_of(2) {
            return Err(Error::ModelFormat(format!(
                "expected 2h+3 layers with h >= 1, got {}",
                layers.len()
            )));
        }
        let h = (layers.len() - 3) / 2;
        let decoder = layers.split_off(h + 2);
        let log_var_head = layers.pop().expect("length checked");
        let mean_head = layers.pop().expect("length checked");
        let net = Self {
            encoder: layers,
            mean_head,
            log_var_head,
            decoder,
        };
        net.check_shapes()?;
        Ok(net)
    }

    fn check_shapes(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::ModelFormat(format!("layer shapes do not chain at {what}")));
        if self.layers().any(|l| l.b.len() != l.fan_out()) {
            return bad("a bias vector");
        }
        for w in self.encoder.windows(2) {
            if w[0].fan_out() != w[1].fan_in() {
                return bad("the encoder");
            }
        }
        let top = self.encoder.last().map(Dense::fan_out).unwrap_or(0);
        let k = self.mean_head.fan_out();
        if self.mean_head.fan_in() != top
            || self.log_var_head.fan_in() != top
            || self.log_var_head.fan_out() != k
        {
            return bad("the heads");
        }
        let mut prev = k;
        let mirror = self.encoder.iter().rev().map(Dense::fan_out).chain([self.input_dim()]);
        for (layer, want) in self.decoder.iter().zip(mirror) {
            if layer.fan_in() != prev || layer.fan_out() != want {
                return bad("the decoder");
            }
            prev = want;
        }
        if self.decoder.len() != self.encoder.len() + 1 {
            return bad("the decoder depth");
        }
        Ok(())
    }

    /// Encoder means and log-variances for a batch (one sample per row).
    pub fn encode_batch(&self, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.encoder {
            h = layer.forward(&h);
            h.apply(|v| *v = v.tanh());
        }
        Ok((self.mean_head.forward(&h), self.log_var_head.forward(&h)))
    }

    /// Decoder means for a batch of latent codes.
    pub fn decode_batch(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if z.ncols() != self.latent_dim() {
            return Err(Error::dim(format!(
                "latent batch has {} columns, network expects {}",
                z.ncols(),
                self.latent_dim()
            )));
        }
        let last = self.decoder.len() - 1;
        let mut h = z.clone();
        for (i, layer) in self.decoder.iter().enumerate() {
            h = layer.forward(&h);
            if i < last {
                h.apply(|v| *v = v.tanh());
            }
        }
        Ok(h)
    }

    fn check_input(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::dim(format!(
                "input has {} features, network expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// `self += scale · other`.
    pub fn axpy(&mut self, scale: f64, other: &MlpVae) {
        for (a, b) in self.layers_mut().zip(other.layers()) {
            a.w.zip_apply(&b.w, |x, y| *x += scale * y);
            a.b.zip_apply(&b.b, |x, y| *x += scale * y);
        }
    }

    pub fn inf_norm(&self) -> f64 {
        self.layers()
            .map(|l| l.w.amax().max(l.b.amax()))
            .fold(0.0, f64::max)
    }
}

/// Diagonal Gaussian `q(z|x)` for a single input.
pub fn forward_encode(net: &MlpVae, x: &DVector<f64>) -> Result<GaussianMoments> {
    let (mu, lv) = net.encode_batch(&DMatrix::from_row_slice(1, x.len(), x.as_slice()))?;
    let var = DVector::from_iterator(lv.len(), lv.iter().map(|v| v.exp()));
    GaussianMoments::diagonal(DVector::from_iterator(mu.len(), mu.iter().copied()), &var)
}

/// `z = μ + σ ⊙ ε` for diagonal moments.
pub fn reparameterize(moments: &GaussianMoments, eps: &DVector<f64>) -> Result<DVector<f64>> {
    let d = moments.dim();
    if eps.len() != d {
        return Err(Error::dim(format!("eps has length {}, expected {d}", eps.len())));
    }
    Ok(DVector::from_fn(d, |i, _| {
        moments.mean[i] + moments.cov[(i, i)].sqrt() * eps[i]
    }))
}

/// `KL(N(μ, diag e^{lv}) ‖ N(0, I))` per row.
pub(crate) fn kl_to_prior(mu: &DMatrix<f64>, lv: &DMatrix<f64>) -> Vec<f64> {
    (0..mu.nrows())
        .map(|r| {
            0.5 * (0..mu.ncols())
                .map(|j| {
                    let (m, l) = (mu[(r, j)], lv[(r, j)]);
                    m * m + l.exp() - l - 1.0
                })
                .sum::<f64>()
        })
        .collect()
}

/// Batch-mean β-VAE objective
/// `−½‖x̂ − x‖² − (N/2) ln 2π − β·KL(q(z|x) ‖ N(0, I))` with one
/// reparameterized draw per sample (`eps`, one row per sample), and its
/// gradient with respect to every weight. The objective is maximized.
pub fn loss_and_grad(
    net: &MlpVae,
    batch: &DMatrix<f64>,
    beta: f64,
    eps: &DMatrix<f64>,
) -> Result<(f64, MlpVae)> {
    net.check_input(batch)?;
    let b = batch.nrows();
    let k = net.latent_dim();
    if b == 0 {
        return Err(Error::invalid("empty batch"));
    }
    if eps.shape() != (b, k) {
        return Err(Error::dim(format!(
            "eps is {}x{}, expected {b}x{k}",
            eps.nrows(),
            eps.ncols()
        )));
    }
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(Error::invalid(format!("beta must be finite and >= 0, got {beta}")));
    }

    // Forward, keeping every layer input.
    let mut enc_in = Vec::with_capacity(net.encoder.len() + 1);
    enc_in.push(batch.clone());
    for layer in &net.encoder {
        let mut h = layer.forward(enc_in.last().expect("nonempty"));
        h.apply(|v| *v = v.tanh());
        enc_in.push(h);
    }
    let top = enc_in.last().expect("nonempty");
    let mu = net.mean_head.forward(top);
    let lv = net.log_var_head.forward(top);
    let sigma = lv.map(|v| (0.5 * v).exp());
    let z = &mu + sigma.component_mul(eps);
    let last = net.decoder.len() - 1;
    let mut dec_in = Vec::with_capacity(net.decoder.len() + 1);
    dec_in.push(z);
    for (i, layer) in net.decoder.iter().enumerate() {
        let mut h = layer.forward(dec_in.last().expect("nonempty"));
        if i < last {
            h.apply(|v| *v = v.tanh());
        }
        dec_in.push(h);
    }
    let x_hat = dec_in.pop().expect("output");

    let resid = &x_hat - batch;
    let kl = kl_to_prior(&mu, &lv);
    let n = batch.ncols() as f64;
    let scale = 1.0 / b as f64;
    let loss = -0.5 * resid.norm_squared() * scale - 0.5 * n * LN_2PI
        - beta * kl.iter().sum::<f64>() * scale;
    if !loss.is_finite() {
        return Err(Error::invalid("non-finite objective"));
    }

    // Backward.
    let mut grad = net.zeros_like();
    let mut delta = resid * (-scale);
    for i in (0..=last).rev() {
        let need = true;
        let d_in = net.decoder[i]
            .backward(&dec_in[i], &delta, &mut grad.decoder[i], need)
            .expect("requested");
        delta = if i > 0 {
            let h = &dec_in[i];
            d_in.zip_map(h, |d, h| d * (1.0 - h * h))
        } else {
            d_in
        };
    }
    // `delta` is now ∂/∂z.
    let d_mu = delta.zip_map(&mu, |d, m| d - beta * scale * m);
    let mut d_lv = delta.component_mul(eps).component_mul(&sigma) * 0.5;
    d_lv.zip_apply(&lv, |d, l| *d -= beta * scale * 0.5 * (l.exp() - 1.0));

    let mut d_top = net
        .mean_head
        .backward(top, &d_mu, &mut grad.mean_head, true)
        .expect("requested");
    d_top += net
        .log_var_head
        .backward(top, &d_lv, &mut grad.log_var_head, true)
        .expect("requested");
    let mut delta = d_top;
    for i in (0..net.encoder.len()).rev() {
        let h = &enc_in[i + 1];
        delta.zip_apply(h, |d, h| *d *= 1.0 - h * h);
        match net.encoder[i].backward(&enc_in[i], &delta, &mut grad.encoder[i], i > 0) {
            Some(d) => delta = d,
            None => break,
        }
    }
    Ok((loss, grad))
}

/// Objective only; shares the forward pass of [`loss_and_grad`].
pub fn objective(net: &MlpVae, batch: &DMatrix<f64>, beta: f64, eps: &DMatrix<f64>) -> Result<f64> {
    net.check_input(batch)?;
    let (mu, lv) = net.encode_batch(batch)?;
    if eps.shape() != mu.shape() {
        return Err(Error::dim("eps does not match the batch"));
    }
    let z = &mu + lv.map(|v| (0.5 * v).exp()).component_mul(eps);
    let x_hat = net.decode_batch(&z)?;
    let b = batch.nrows() as f64;
    let kl: f64 = kl_to_prior(&mu, &lv).iter().sum();
    Ok(-0.5 * (x_hat - batch).norm_squared() / b
        - 0.5 * batch.ncols() as f64 * LN_2PI
        - beta * kl / b)
}
