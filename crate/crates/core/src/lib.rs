//! Closest and plausible counterfactual explanations for linear, softmax,
//! prototype and tree classifiers, with tools to measure how much those
//! explanations move when the input is perturbed.

pub mod domain;
pub mod error;
pub mod models;
pub mod counterfactual;
pub mod density;
pub mod optim;
pub mod perturbation;
pub mod rng;
pub mod robustness;
mod serde_util;

pub use domain::*;
pub use error::{Error, Result};
