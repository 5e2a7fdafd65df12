//! Matched strata drawn directly from the conditional logit model, for
//! estimator checks that do not need the full stream pipeline.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::domain::{FeatureVector, Stratum};

/// `n_strata` strata of `m + 1` standard-normal covariate rows; the crash is
/// picked with probability proportional to `exp(βᵀx)` and placed first.
pub fn clogit_rows<R: Rng>(n_strata: usize, m: usize, beta: &[f64], rng: &mut R) -> Vec<Vec<Vec<f64>>> {
    (0..n_strata)
        .map(|_| {
            let mut rows: Vec<Vec<f64>> = (0..=m)
                .map(|_| beta.iter().map(|_| rng.sample(StandardNormal)).collect())
                .collect();
            let scores: Vec<f64> = rows
                .iter()
                .map(|x| x.iter().zip(beta).map(|(a, b)| a * b).sum())
                .collect();
            let mx = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
            let total: f64 = weights.iter().sum();
            let mut u = rng.random::<f64>() * total;
            let mut pick = m;
            for (j, w) in weights.iter().enumerate() {
                if u < *w {
                    pick = j;
                    break;
                }
                u -= w;
            }
            rows.swap(0, pick);
            rows
        })
        .collect()
}

/// The same draw packaged as named strata without event keys.
pub fn clogit_strata<R: Rng>(names: &[String], n_strata: usize, m: usize, beta: &[f64], rng: &mut R) -> Vec<Stratum> {
    assert_eq!(names.len(), beta.len());
    clogit_rows(n_strata, m, beta, rng)
        .into_iter()
        .enumerate()
        .map(|(i, rows)| {
            let mut fvs = rows.into_iter().map(|r| {
                names
                    .iter()
                    .cloned()
                    .zip(r)
                    .collect::<FeatureVector>()
            });
            let crash = fvs.next().expect("crash row");
            Stratum {
                stratum_id: format!("s{:05}", i + 1),
                crash,
                controls: fvs.collect(),
                keys: Vec::new(),
            }
        })
        .collect()
}
