//! Conditional logistic log-likelihood and its derivatives.
//!
//! Each stratum contributes `βᵀx₀ − log Σⱼ exp(βᵀxⱼ)`. Working with the
//! differences `dⱼ = xⱼ − x₀` removes the crash score, so the contribution is
//! `−log(1 + Σⱼ≥1 exp(βᵀdⱼ))`.

use super::design::Design;

/// Neumaier-compensated running sum.
#[derive(Default, Clone, Copy)]
pub(crate) struct Sum {
    s: f64,
    c: f64,
}

impl Sum {
    pub(crate) fn add(&mut self, v: f64) {
        let t = self.s + v;
        if self.s.abs() >= v.abs() {
            self.c += (self.s - t) + v;
        } else {
            self.c += (v - t) + self.s;
        }
        self.s = t;
    }

    pub(crate) fn value(self) -> f64 {
        self.s + self.c
    }
}

/// Scores `βᵀdⱼ` for the controls of stratum `i`; the crash scores 0.
fn control_scores(design: &Design, i: usize, beta: &[f64], out: &mut [f64]) {
    let k = design.k();
    for (j, d) in design.diffs(i).chunks(k).enumerate() {
        out[j] = d.iter().zip(beta).map(|(a, b)| a * b).sum();
    }
}

/// `log Σⱼ exp(sⱼ)` over the crash (score 0) and controls; fills the softmax
/// weights of the controls.
fn log_normalizer(scores: &[f64], weights: &mut [f64]) -> f64 {
    // The largest term is exactly 1 after shifting; the others are summed
    // separately so that tiny remainders survive.
    let mut top: Option<usize> = None;
    let mut mx = 0.0f64;
    for (j, &s) in scores.iter().enumerate() {
        if s > mx {
            mx = s;
            top = Some(j);
        }
    }
    let mut others = if top.is_some() { (-mx).exp() } else { 0.0 };
    for (j, (w, &s)) in weights.iter_mut().zip(scores).enumerate() {
        *w = (s - mx).exp();
        if Some(j) != top {
            others += *w;
        }
    }
    let log_total = if others < 0.5 { others.ln_1p() } else { (1.0 + others).ln() };
    let total = 1.0 + others;
    for w in weights.iter_mut() {
        *w /= total;
    }
    mx + log_total
}

pub fn loglik(design: &Design, beta: &[f64]) -> f64 {
    assert_eq!(beta.len(), design.k());
    let m = design.m();
    let mut scores = vec![0.0; m];
    let mut weights = vec![0.0; m];
    let mut sum = Sum::default();
    for i in 0..design.n_strata() {
        control_scores(design, i, beta, &mut scores);
        let lse = log_normalizer(&scores, &mut weights);
        sum.add(-lse);
    }
    sum.value()
}

pub fn gradient(design: &Design, beta: &[f64]) -> Vec<f64> {
    let k = design.k();
    let m = design.m();
    let mut scores = vec![0.0; m];
    let mut weights = vec![0.0; m];
    let mut g = vec![0.0; k];
    for i in 0..design.n_strata() {
        control_scores(design, i, beta, &mut scores);
        log_normalizer(&scores, &mut weights);
        for (d, w) in design.diffs(i).chunks(k).zip(&weights) {
            for u in 0..k {
                g[u] -= w * d[u];
            }
        }
    }
    g
}

/// Log-likelihood, gradient and Hessian (row-major `k × k`) in one pass.
pub fn evaluate(design: &Design, beta: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let k = design.k();
    let m = design.m();
    let mut scores = vec![0.0; m];
    let mut weights = vec![0.0; m];
    let mut g = vec![0.0; k];
    let mut h = vec![0.0; k * k];
    let mut dbar = vec![0.0; k];
    let mut sum = Sum::default();
    for i in 0..design.n_strata() {
        control_scores(design, i, beta, &mut scores);
        let lse = log_normalizer(&scores, &mut weights);
        sum.add(-lse);
        dbar.iter_mut().for_each(|v| *v = 0.0);
        for (d, &w) in design.diffs(i).chunks(k).zip(&weights) {
            for u in 0..k {
                dbar[u] += w * d[u];
                let wd = w * d[u];
                for v in 0..=u {
                    h[u * k + v] -= wd * d[v];
                }
            }
        }
        for u in 0..k {
            g[u] -= dbar[u];
            for v in 0..=u {
                h[u * k + v] += dbar[u] * dbar[v];
            }
        }
    }
    for u in 0..k {
        for v in 0..u {
            h[v * k + u] = h[u * k + v];
        }
    }
    (sum.value(), g, h)
}
