//! Numerical laboratory for β-VAE disentanglement.
//!
//! The crate has two halves:
//!
//! * an analytically tractable linear-Gaussian β-VAE ([`linear`]) whose
//!   data-averaged objective, gradients and inference errors ([`metrics`])
//!   are closed-form, together with a β-sweep driver ([`sweep`]) that checks
//!   how the optimal objective, the KL term, the ELBO and the inference
//!   errors move with β;
//! * a small deep β-VAE written from scratch ([`deep`]) with manual
//!   reverse-mode gradients and Adam, trained on the canvas localization
//!   dataset from [`data`].
//!
//! The ground truth for both comes from the linear-Gaussian generative
//! process in [`generative`].

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checks;
pub mod data;
pub mod deep;
pub mod error;
pub mod generative;
pub mod linalg;
pub mod linear;
pub mod metrics;
pub mod par;
pub mod plot;
pub mod rng;
pub mod sweep;

pub use error::{Error, Result};
