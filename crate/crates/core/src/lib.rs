//! Variational Bayesian model averaging.
//!
//! Fits a mean-field variational posterior to each candidate model and a
//! categorical distribution over the models themselves, in one stochastic
//! optimization loop driven by reparameterized gradients from a small
//! reverse-mode tape.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod family;
pub mod evidence;
pub mod models;
pub mod optim;
pub mod predict;
pub mod vbma;

pub use error::{Error, Result};
