//! Newton-Raphson maximum likelihood for the conditional logit.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::clogit::{evaluate, loglik};
use super::design::Design;
use super::InferenceError;

/// ‖β‖ beyond which continued ascent is declared a monotone likelihood.
pub const SEPARATION_NORM: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MleSettings {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for MleSettings {
    fn default() -> Self {
        MleSettings {
            tol: 1e-8,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleFit {
    pub names: Vec<String>,
    pub beta: Vec<f64>,
    /// Inverse observed information, row-major `k × k`.
    pub covariance: Vec<f64>,
    pub loglik: f64,
    pub iterations: usize,
}

impl MleFit {
    pub fn std_errors(&self) -> Vec<f64> {
        let k = self.beta.len();
        (0..k).map(|u| self.covariance[u * k + u].sqrt()).collect()
    }
}

/// Solve `(−H) x = b` by Cholesky, adding a growing ridge if `−H` is not
/// positive definite.
fn solve_negative_hessian(h: &[f64], b: &[f64]) -> Option<(DVector<f64>, DMatrix<f64>)> {
    let k = b.len();
    let neg = DMatrix::from_row_slice(k, k, h).map(|v| -v);
    let scale = (0..k).map(|u| neg[(u, u)].abs()).fold(0.0, f64::max).max(1e-300);
    let mut ridge = 0.0;
    for attempt in 0..8 {
        let mut a = neg.clone();
        for u in 0..k {
            a[(u, u)] += ridge;
        }
        if let Some(ch) = a.cholesky() {
            let x = ch.solve(&DVector::from_column_slice(b));
            if x.iter().all(|v| v.is_finite()) {
                return Some((x, ch.inverse()));
            }
        }
        ridge = scale * 1e-10 * 10f64.powi(attempt * 2);
    }
    None
}

fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |a, b| a.max(b.abs()))
}

fn monotone(names: &[String], beta: &[f64]) -> InferenceError {
    let u = (0..beta.len())
        .max_by(|&a, &b| beta[a].abs().total_cmp(&beta[b].abs()))
        .unwrap_or(0);
    InferenceError::MonotoneLikelihood {
        variable: names[u].clone(),
    }
}

pub fn fit_mle(design: &Design, settings: &MleSettings) -> Result<MleFit, InferenceError> {
    let k = design.k();
    let names = design.names();
    let mut beta = vec![0.0; k];
    let (mut ll, mut g, mut h) = evaluate(design, &beta);
    for iter in 0..settings.max_iter {
        let Some((step, cov)) = solve_negative_hessian(&h, &g) else {
            return Err(InferenceError::SingularHessian);
        };
        let gnorm = max_abs(g.iter().copied());
        let step_size = max_abs(step.iter().copied());
        // Under separation the gradient vanishes while Newton steps stay
        // large, so a small gradient alone is not convergence.
        if gnorm < settings.tol && step_size <= 1e-4 * (1.0 + max_abs(beta.iter().copied())) {
            // One last full step costs little and polishes the estimate.
            let polished: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + s).collect();
            let (pll, pg, _) = evaluate(design, &polished);
            if pll >= ll && max_abs(pg.iter().copied()) <= gnorm {
                beta = polished;
                ll = pll;
            }
            return Ok(MleFit {
                names: names.to_vec(),
                beta,
                covariance: cov.transpose().as_slice().to_vec(),
                loglik: ll,
                iterations: iter,
            });
        }
        let mut t = 1.0;
        let mut candidate;
        let mut halvings = 0;
        loop {
            candidate = beta.iter().zip(step.iter()).map(|(b, s)| b + t * s).collect::<Vec<f64>>();
            let cand_ll = loglik(design, &candidate);
            if cand_ll >= ll - 1e-12 * ll.abs() || halvings >= 40 {
                break;
            }
            t *= 0.5;
            halvings += 1;
        }
        beta = candidate;
        (ll, g, h) = evaluate(design, &beta);
        if beta.iter().map(|b| b * b).sum::<f64>().sqrt() > SEPARATION_NORM {
            return Err(monotone(names, &beta));
        }
    }
    if max_abs(g.iter().copied()) < 1e-6 {
        // The gradient has vanished but the iterates keep moving: the
        // likelihood is still rising towards an asymptote.
        return Err(monotone(names, &beta));
    }
    Err(InferenceError::NotConverged {
        iterations: settings.max_iter,
    })
}
