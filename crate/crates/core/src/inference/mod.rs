//! Conditional logistic likelihood, maximum likelihood, Bayesian sampling
//! and convergence diagnostics.

mod clogit;
mod design;
mod diagnostics;
mod mcmc;
mod mle;
mod summary;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::Stratum;

pub use clogit::{evaluate, gradient, loglik};
pub use design::{DatasetFingerprint, Design, Standardization};
pub use diagnostics::{effective_sample_size, quantile, r_hat};
pub use mcmc::{run_mcmc, Chain, McmcRun, McmcSettings};
pub use mle::{fit_mle, MleFit, MleSettings, SEPARATION_NORM};
pub use summary::{
    backward_eliminate, fit_bayes, significance, summarize, CoefficientSummary, FitOptions, FittedModel,
    Interval, ModelSource, Significance, R_HAT_THRESHOLD,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("monotone likelihood (separation) on {variable}")]
    MonotoneLikelihood { variable: String },
    #[error("singular Hessian")]
    SingularHessian,
    #[error("Newton-Raphson did not converge in {iterations} iterations")]
    NotConverged { iterations: usize },
    #[error("invalid settings: {0}")]
    InvalidSettings(String),
}

/// Named coefficient vector in a fixed variable order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub names: Vec<String>,
    pub values: Vec<f64>,
}

impl Coefficients {
    pub fn new(names: Vec<String>, values: Vec<f64>) -> Result<Self, InferenceError> {
        if names.len() != values.len() {
            return Err(InferenceError::InvalidInput("names and values differ in length".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(InferenceError::InvalidInput("non-finite coefficient".into()));
        }
        Ok(Coefficients { names, values })
    }

    pub fn zeros(names: Vec<String>) -> Self {
        let values = vec![0.0; names.len()];
        Coefficients { names, values }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|u| self.values[u])
    }
}

fn design_for(beta: &Coefficients, strata: &[Stratum]) -> Result<Design, InferenceError> {
    if let Some(s) = strata.first() {
        if s.crash.len() != beta.names.len() || beta.names.iter().any(|n| s.crash.get(n).is_none()) {
            return Err(InferenceError::InvalidInput(
                "coefficient names do not match the dataset variables".into(),
            ));
        }
    }
    Design::from_strata(strata, &beta.names)
}

/// Conditional log-likelihood of named coefficients on matched strata.
pub fn clogit_loglik(beta: &Coefficients, strata: &[Stratum]) -> Result<f64, InferenceError> {
    Ok(loglik(&design_for(beta, strata)?, &beta.values))
}

/// Gradient of [`clogit_loglik`], in the coefficients' order.
pub fn clogit_grad(beta: &Coefficients, strata: &[Stratum]) -> Result<Vec<f64>, InferenceError> {
    Ok(gradient(&design_for(beta, strata)?, &beta.values))
}
