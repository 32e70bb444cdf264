//! Mini-batch Adam training.

use nalgebra::DMatrix;

use super::{loss_and_grad, MlpVae};
use crate::error::{Error, Result};
use crate::rng::Stream;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub beta: f64,
    pub seed: u64,
    pub mc_samples_eval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 100,
            beta: 1.0,
            seed: 0,
            mc_samples_eval: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::invalid(format!("train config: {what}")));
        if self.epochs == 0 || self.batch_size == 0 || self.mc_samples_eval == 0 {
            return bad("epochs, batch_size and mc_samples_eval must be positive");
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return bad("lr must be finite and >= 0");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("Adam decay rates must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive");
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return bad("beta must be positive");
        }
        Ok(())
    }
}

/// Adam for a maximized objective.
#[derive(Clone, Debug)]
pub struct Adam {
    m: MlpVae,
    v: MlpVae,
    t: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(net: &MlpVae, cfg: &TrainConfig) -> Self {
        Self {
            m: net.zeros_like(),
            v: net.zeros_like(),
            t: 0,
            lr: cfg.lr,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
        }
    }

    /// One ascent step along `grad`.
    pub fn step(&mut self, net: &mut MlpVae, grad: &MlpVae) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let (lr, eps) = (self.lr, self.eps);
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] += lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        };
        let layers = net
            .layers_mut()
            .zip(grad.layers())
            .zip(self.m.layers_mut().zip(self.v.layers_mut()));
        for ((p, g), (m, v)) in layers {
            update(
                p.w.as_mut_slice(),
                g.w.as_slice(),
                m.w.as_mut_slice(),
                v.w.as_mut_slice(),
            );
            update(
                p.b.as_mut_slice(),
                g.b.as_slice(),
                m.b.as_mut_slice(),
                v.b.as_mut_slice(),
            );
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub net: MlpVae,
    /// Mean training objective per epoch.
    pub loss_trace: Vec<f64>,
}

/// Trains on `data` (one standardized sample per row). Batches are drawn
/// from a per-epoch shuffle; every randomness source is derived from
/// `cfg.seed`.
pub fn train(mut net: MlpVae, data: &DMatrix<f64>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (n, dim) = data.shape();
    if n == 0 {
        return Err(Error::invalid("empty training set"));
    }
    if dim != net.input_dim() {
        return Err(Error::dim(format!(
            "data has {dim} features, network expects {}",
            net.input_dim()
        )));
    }
    let k = net.latent_dim();
    let mut adam = Adam::new(&net, cfg);
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        Stream::derived(cfg.seed, "deep.shuffle", &[epoch as u64]).shuffle(&mut order);
        let mut eps_stream = Stream::derived(cfg.seed, "deep.eps", &[epoch as u64]);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = DMatrix::from_fn(chunk.len(), dim, |r, c| data[(chunk[r], c)]);
            let eps = DMatrix::from_fn(chunk.len(), k, |_, _| eps_stream.normal());
            let (loss, grad) = match loss_and_grad(&net, &batch, cfg.beta, &eps) {
                Ok(v) => v,
                Err(Error::InvalidArgument(_)) => return Err(Error::Divergence { epoch }),
                Err(e) => return Err(e),
            };
            if grad.layers().any(|l| l.w.iter().chain(l.b.iter()).any(|v| !v.is_finite())) {
                return Err(Error::Divergence { epoch });
            }
            total += loss * chunk.len() as f64;
            adam.step(&mut net, &grad);
        }
        trace.push(total / n as f64);
    }
    Ok(TrainOutcome {
        net,
        loss_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generative::MixingModel;

    fn linear_data(seed: u64) -> DMatrix<f64> {
        MixingModel::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.7, 0.7, 2.0]))
            .unwrap()
            .sample(200, seed)
            .observations
    }

    #[test]
    fn zero_learning_rate_is_a_null_update() {
        let net = MlpVae::glorot(2, &[4], 2, 3).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            lr: 0.0,
            batch_size: 50,
            ..TrainConfig::default()
        };
        let out = train(net.clone(), &linear_data(1), &cfg).unwrap();
        assert_eq!(out.net, net);
        assert_eq!(out.loss_trace.len(), 3);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut net = MlpVae::glorot(2, &[3], 1, 4).unwrap();
        let before = net.clone();
        let mut adam = Adam::new(&net, &TrainConfig::default());
        for _ in 0..5 {
            adam.step(&mut net, &before.zeros_like());
        }
        assert_eq!(net, before);
    }

    #[test]
    fn training_improves_the_objective() {
        for seed in 0..5 {
            let data = linear_data(seed);
            let cfg = TrainConfig {
                epochs: 50,
                lr: 1e-2,
                batch_size: 20,
                seed,
                ..TrainConfig::default()
            };
            let net = MlpVae::glorot(2, &[8], 2, seed).unwrap();
            let out = train(net, &data, &cfg).unwrap();
            let first = out.loss_trace[0];
            let last = *out.loss_trace.last().unwrap();
            assert!(last > first, "seed {seed}: {first} -> {last}");
        }
    }

    #[test]
    fn training_is_reproducible() {
        let data = linear_data(2);
        let cfg = TrainConfig {
            epochs: 4,
            batch_size: 32,
            seed: 11,
            ..TrainConfig::default()
        };
        let a = train(MlpVae::glorot(2, &[6], 2, 1).unwrap(), &data, &cfg).unwrap();
        let b = train(MlpVae::glorot(2, &[6], 2, 1).unwrap(), &data, &cfg).unwrap();
        assert_eq!(a.net, b.net);
        assert_eq!(a.loss_trace, b.loss_trace);
    }

    #[test]
    fn divergence_reports_the_epoch() {
        let mut net = MlpVae::zeros(2, &[2], 1).unwrap();
        net.log_var_head.b[0] = 2000.0;
        let cfg = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        match train(net, &linear_data(0), &cfg) {
            Err(Error::Divergence { epoch }) => assert_eq!(epoch, 0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
