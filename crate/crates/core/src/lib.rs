//! Distribution-matching estimators of treatment effects in weakly separable
//! models with a binary endogenous treatment, plus population oracles and a
//! Monte Carlo harness.

pub mod dgp;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod isotonic;
pub mod matching;
pub mod nonparametrics;
pub mod normal;
pub mod oracle;
pub mod optim;
pub mod quadrature;
pub mod rng;

pub use error::{Error, Result};
