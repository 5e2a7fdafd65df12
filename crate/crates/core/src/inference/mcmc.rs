//! Adaptive random-walk Metropolis for the conditional logit posterior with
//! independent Normal priors.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::clogit::{evaluate, loglik};
use super::design::Design;
use super::InferenceError;
use crate::rng::stream_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcSettings {
    pub chains: usize,
    pub iterations: usize,
    pub burn_in: usize,
    /// Variance of the Normal(0, v) prior on every coefficient.
    pub prior_variance: f64,
    pub target_acceptance: f64,
    pub seed: u64,
    /// Give every chain the same stream; for testing the diagnostics.
    #[serde(default)]
    pub identical_chain_seeds: bool,
}

impl Default for McmcSettings {
    fn default() -> Self {
        McmcSettings {
            chains: 3,
            iterations: 20_000,
            burn_in: 5_000,
            prior_variance: 1000.0,
            target_acceptance: 0.234,
            seed: 0,
            identical_chain_seeds: false,
        }
    }
}

impl McmcSettings {
    pub fn validate(&self) -> Result<(), InferenceError> {
        let bad = |s: &str| Err(InferenceError::InvalidSettings(s.into()));
        if self.chains < 2 {
            return bad("at least two chains are needed for R-hat");
        }
        if self.burn_in >= self.iterations {
            return bad("burn-in must be shorter than the run");
        }
        if self.iterations - self.burn_in < 2 {
            return bad("at least two retained draws are needed");
        }
        if !(self.prior_variance.is_finite() && self.prior_variance > 0.0) {
            return bad("prior variance must be positive");
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return bad("target acceptance must lie in (0, 1)");
        }
        Ok(())
    }

    pub fn kept(&self) -> usize {
        self.iterations - self.burn_in
    }
}

/// Post-burn-in draws of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    /// Row-major, one row of `k` coefficients per retained iteration.
    pub draws: Vec<f64>,
    /// Acceptance rate over the retained iterations.
    pub acceptance_rate: f64,
    pub final_scale: f64,
}

impl Chain {
    pub fn column(&self, k: usize, u: usize) -> Vec<f64> {
        self.draws.chunks(k).map(|row| row[u]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McmcRun {
    pub names: Vec<String>,
    pub chains: Vec<Chain>,
}

impl McmcRun {
    pub fn k(&self) -> usize {
        self.names.len()
    }

    /// Draws of coefficient `u`, chain by chain.
    pub fn columns(&self, u: usize) -> Vec<Vec<f64>> {
        self.chains.iter().map(|c| c.column(self.k(), u)).collect()
    }
}

fn log_posterior(design: &Design, beta: &[f64], prior_variance: f64) -> f64 {
    loglik(design, beta) - beta.iter().map(|b| b * b).sum::<f64>() / (2.0 * prior_variance)
}

/// Welford accumulator for the empirical covariance of the iterates.
struct RunningCov {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl RunningCov {
    fn new(k: usize) -> Self {
        RunningCov {
            n: 0,
            mean: vec![0.0; k],
            m2: vec![0.0; k * k],
        }
    }

    fn push(&mut self, x: &[f64]) {
        let k = x.len();
        self.n += 1;
        let delta: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        for u in 0..k {
            self.mean[u] += delta[u] / self.n as f64;
        }
        for u in 0..k {
            let after = x[u] - self.mean[u];
            for v in 0..k {
                self.m2[u * k + v] += delta[v] * after;
            }
        }
    }

    fn covariance(&self) -> DMatrix<f64> {
        let k = self.mean.len();
        let d = (self.n - 1) as f64;
        DMatrix::from_fn(k, k, |u, v| 0.5 * (self.m2[u * k + v] + self.m2[v * k + u]) / d)
    }
}

fn cholesky_factor(m: DMatrix<f64>) -> Option<DMatrix<f64>> {
    let k = m.nrows();
    let jitter = (0..k).map(|u| m[(u, u)].abs()).fold(0.0, f64::max) * 1e-10;
    let mut a = m;
    for u in 0..k {
        a[(u, u)] += jitter;
    }
    a.cholesky().map(|c| c.l())
}

/// Proposal shape from the curvature at β = 0 plus the prior precision.
fn initial_factor(design: &Design, prior_variance: f64) -> Result<DMatrix<f64>, InferenceError> {
    let k = design.k();
    let (_, _, h) = evaluate(design, &vec![0.0; k]);
    let mut precision = DMatrix::from_row_slice(k, k, &h).map(|v| -v);
    for u in 0..k {
        precision[(u, u)] += 1.0 / prior_variance;
    }
    let cov = precision
        .try_inverse()
        .ok_or(InferenceError::SingularHessian)?;
    cholesky_factor(0.5 * (&cov + cov.transpose())).ok_or(InferenceError::SingularHessian)
}

fn run_chain(
    design: &Design,
    settings: &McmcSettings,
    chain: usize,
    factor0: &DMatrix<f64>,
) -> Chain {
    let k = design.k();
    let label = if settings.identical_chain_seeds { 0 } else { chain };
    let mut rng = stream_rng(settings.seed, &["mcmc-chain", &label.to_string()]);
    let normal = |rng: &mut rand_chacha::ChaCha8Rng| -> DVector<f64> {
        DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal))
    };

    // Overdispersed start: twice the initial scale around the origin.
    let mut beta: Vec<f64> = (factor0 * normal(&mut rng) * 2.0).iter().copied().collect();
    let mut lp = log_posterior(design, &beta, settings.prior_variance);
    if !lp.is_finite() {
        beta = vec![0.0; k];
        lp = log_posterior(design, &beta, settings.prior_variance);
    }

    let mut factor = factor0.clone();
    let mut log_scale = (2.38 / (k as f64).sqrt()).ln();
    let mut cov = RunningCov::new(k);
    let learn_from = settings.burn_in / 4;
    let refresh_every = 100;

    let mut draws = Vec::with_capacity(settings.kept() * k);
    let mut accepted_kept = 0usize;
    for it in 0..settings.iterations {
        let z = normal(&mut rng);
        let step = &factor * z * log_scale.exp();
        let proposal: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + s).collect();
        let lp_new = log_posterior(design, &proposal, settings.prior_variance);
        let log_alpha = if lp_new.is_finite() { (lp_new - lp).min(0.0) } else { f64::NEG_INFINITY };
        let u: f64 = rng.random();
        let accept = u.ln() < log_alpha;
        if accept {
            beta = proposal;
            lp = lp_new;
        }
        if it < settings.burn_in {
            let t = (it + 1) as f64;
            log_scale += t.powf(-0.6) * (log_alpha.exp() - settings.target_acceptance);
            if it >= learn_from {
                cov.push(&beta);
                let enough = cov.n > 2 * k + 20;
                if enough && (it + 1 - learn_from) % refresh_every == 0 {
                    if let Some(l) = cholesky_factor(cov.covariance()) {
                        factor = l;
                    }
                }
            }
        } else {
            if accept {
                accepted_kept += 1;
            }
            draws.extend_from_slice(&beta);
        }
    }
    Chain {
        draws,
        acceptance_rate: accepted_kept as f64 / settings.kept() as f64,
        final_scale: log_scale.exp(),
    }
}

/// Run all chains; chains run in parallel and the result does not depend on
/// the number of threads.
pub fn run_mcmc(design: &Design, settings: &McmcSettings) -> Result<McmcRun, InferenceError> {
    settings.validate()?;
    let factor0 = initial_factor(design, settings.prior_variance)?;
    let chains = (0..settings.chains)
        .into_par_iter()
        .map(|c| run_chain(design, settings, c, &factor0))
        .collect();
    Ok(McmcRun {
        names: design.names().to_vec(),
        chains,
    })
}
