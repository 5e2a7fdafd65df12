//! Odds-ratio scoring of events against their stratum controls, ROC/AUC,
//! descriptive statistics and the published reference models.

pub mod paper;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{FeatureVector, Stratum, Variable};
use crate::inference::{Coefficients, FittedModel};

pub use paper::{load_paper_model, PAPER_MODEL_NAMES};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RiskError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("AUC is undefined: {0}")]
    UndefinedAuc(String),
}

/// Point-estimate coefficients of a model: the posterior means.
pub fn model_coefficients(model: &FittedModel) -> Coefficients {
    Coefficients {
        names: model.coefficients.iter().map(|c| c.name.clone()).collect(),
        values: model.raw_beta(),
    }
}

fn value(x: &FeatureVector, name: &str, which: &str) -> Result<f64, RiskError> {
    x.get(name)
        .ok_or_else(|| RiskError::InvalidInput(format!("{which} lacks model variable {name}")))
}

fn log_odds_ratio(beta: &Coefficients, x1: &FeatureVector, x2: &FeatureVector) -> Result<f64, RiskError> {
    let mut z = 0.0;
    for (name, b) in beta.names.iter().zip(&beta.values) {
        z += b * (value(x1, name, "first event")? - value(x2, name, "second event")?);
    }
    Ok(z)
}

/// `exp(Σ βₖ (x1ₖ − x2ₖ))`: the odds of `x1` relative to `x2` within a stratum.
pub fn odds_ratio_pair(beta: &Coefficients, x1: &FeatureVector, x2: &FeatureVector) -> Result<f64, RiskError> {
    Ok(log_odds_ratio(beta, x1, x2)?.exp())
}

/// Componentwise mean of the control vectors over the model variables.
fn control_mean(beta: &Coefficients, controls: &[FeatureVector]) -> Result<FeatureVector, RiskError> {
    if controls.is_empty() {
        return Err(RiskError::InvalidInput("stratum has no controls".into()));
    }
    let mut mean = FeatureVector::new();
    for name in &beta.names {
        let mut s = 0.0;
        for c in controls {
            s += value(c, name, "control")?;
        }
        mean.insert(name.clone(), s / controls.len() as f64);
    }
    Ok(mean)
}

/// Odds ratio of `x` against the mean of the stratum's controls.
pub fn score_event(beta: &Coefficients, x: &FeatureVector, controls: &[FeatureVector]) -> Result<f64, RiskError> {
    odds_ratio_pair(beta, x, &control_mean(beta, controls)?)
}

/// Scores divided by their maximum.
pub fn adjust_scores(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    scores.iter().map(|s| s / max).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskScore {
    pub event_id: String,
    pub stratum_id: String,
    pub odds_ratio: f64,
    pub adjusted: f64,
    /// 1 for the crash, 0 for a control.
    pub label: u8,
}

/// Score the crash and every control of each stratum against that
/// stratum's control mean. Adjusted scores are computed in log space so
/// that they stay finite when odds ratios overflow.
pub fn score_strata(beta: &Coefficients, strata: &[Stratum]) -> Result<Vec<RiskScore>, RiskError> {
    let per: Vec<Result<Vec<(String, String, f64, u8)>, RiskError>> = strata
        .par_iter()
        .map(|s| {
            let mean = control_mean(beta, &s.controls)?;
            let mut out = vec![(s.stratum_id.clone(), s.stratum_id.clone(), log_odds_ratio(beta, &s.crash, &mean)?, 1)];
            for (k, c) in s.controls.iter().enumerate() {
                out.push((
                    format!("{}-c{}", s.stratum_id, k + 1),
                    s.stratum_id.clone(),
                    log_odds_ratio(beta, c, &mean)?,
                    0,
                ));
            }
            Ok(out)
        })
        .collect();
    let mut rows = Vec::new();
    for p in per {
        rows.extend(p?);
    }
    let max = rows.iter().map(|r| r.2).fold(f64::NEG_INFINITY, f64::max);
    Ok(rows
        .into_iter()
        .map(|(event_id, stratum_id, z, label)| RiskScore {
            event_id,
            stratum_id,
            odds_ratio: z.exp(),
            adjusted: (z - max).exp(),
            label,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocResult {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// Step ROC over every distinct score (plus sentinels above the maximum and
/// below the minimum), classifying `score ≥ threshold` as positive. The
/// trapezoidal area is accumulated in integer counts, which makes it equal
/// to the Mann-Whitney statistic with ties counted one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<RocResult, RiskError> {
    if scores.len() != labels.len() {
        return Err(RiskError::InvalidInput("scores and labels differ in length".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(RiskError::InvalidInput("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(RiskError::UndefinedAuc("both classes must be present".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let point = |t: f64, tp: u64, fp: u64| RocPoint {
        threshold: t,
        fpr: fp as f64 / n_neg as f64,
        tpr: tp as f64 / n_pos as f64,
    };
    let mut points = vec![point(f64::INFINITY, 0, 0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut twice_area: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        twice_area += (fp - fp0) as u128 * (tp + tp0) as u128;
        points.push(point(t, tp, fp));
    }
    points.push(point(f64::NEG_INFINITY, tp, fp));
    let auc = twice_area as f64 / (2.0 * n_pos as f64 * n_neg as f64);
    Ok(RocResult { points, auc })
}

/// AUC of a set of risk scores, using the adjusted values.
pub fn scores_auc(scores: &[RiskScore]) -> Result<f64, RiskError> {
    let s: Vec<f64> = scores.iter().map(|r| r.adjusted).collect();
    let l: Vec<bool> = scores.iter().map(|r| r.label == 1).collect();
    Ok(roc_auc(&s, &l)?.auc)
}

/// Standard deviation of the AUC of a random score (no ties) with the given
/// class sizes.
pub fn null_auc_sd(n_pos: usize, n_neg: usize) -> f64 {
    let (p, n) = (n_pos as f64, n_neg as f64);
    ((p + n + 1.0) / (12.0 * p * n)).sqrt()
}

/// One row of the descriptive-statistics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptiveRow {
    pub variable: String,
    /// Name without the window suffix.
    pub base: String,
    /// Slice number, or 0 for slice-free variables.
    pub slice: u8,
    pub group: String,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

/// Mean, sd, min and max per variable, separately for crashes and controls.
pub fn describe(strata: &[Stratum]) -> Result<Vec<DescriptiveRow>, RiskError> {
    let Some(first) = strata.first() else {
        return Ok(Vec::new());
    };
    let mut names: Vec<String> = first.crash.names().map(str::to_string).collect();
    crate::domain::sort_variable_names(&mut names);
    let mut out = Vec::new();
    for name in &names {
        let var = Variable::parse(name).ok();
        let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for s in strata {
            groups.entry("crash").or_default().push(value(&s.crash, name, "crash")?);
            for c in &s.controls {
                groups.entry("control").or_default().push(value(c, name, "control")?);
            }
        }
        for group in ["crash", "control"] {
            let xs = &groups[group];
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let sd = if xs.len() > 1 {
                (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            out.push(DescriptiveRow {
                variable: name.clone(),
                base: var.map(|v| v.base_name()).unwrap_or_else(|| name.clone()),
                slice: var.and_then(|v| v.slice).map(|s| s.number()).unwrap_or(0),
                group: group.to_string(),
                n: xs.len(),
                mean,
                sd,
                min: xs.iter().copied().fold(f64::INFINITY, f64::min),
                max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(pairs: &[(&str, f64)]) -> FeatureVector {
        pairs.iter().map(|(n, v)| (n.to_string(), *v)).collect()
    }

    #[test]
    fn odds_ratio_examples() {
        let slice2 = model_coefficients(&load_paper_model("within_slice2").unwrap());
        let mut x2 = FeatureVector::new();
        for n in &slice2.names {
            x2.insert(n.clone(), 10.0);
        }
        assert_eq!(odds_ratio_pair(&slice2, &x2, &x2).unwrap(), 1.0);
        let mut x1 = x2.clone();
        x1.insert("B_Vol_LT_5_10", 11.0);
        assert!((odds_ratio_pair(&slice2, &x1, &x2).unwrap() - 1.040).abs() < 5e-4);
        let mut x1 = x2.clone();
        x1.insert("D_OAFR_5_10", 11.0);
        assert!((odds_ratio_pair(&slice2, &x1, &x2).unwrap() - 1.679).abs() < 5e-4);
        let missing = fv(&[("B_Vol_LT_5_10", 1.0)]);
        assert!(odds_ratio_pair(&slice2, &missing, &x2).is_err());
    }

    #[test]
    fn score_against_control_mean() {
        let beta = Coefficients::new(vec!["a".into(), "b".into()], vec![0.5, -0.2]).unwrap();
        let controls = [fv(&[("a", 0.0), ("b", 1.0)]), fv(&[("a", 2.0), ("b", 3.0)])];
        let x = fv(&[("a", 3.0), ("b", 3.0)]);
        let s = score_event(&beta, &x, &controls).unwrap();
        assert!((s - 0.8f64.exp()).abs() < 1e-12);
        assert_eq!(score_event(&beta, &fv(&[("a", 1.0), ("b", 2.0)]), &controls).unwrap(), 1.0);
        assert!(score_event(&beta, &x, &[]).is_err());
    }

    #[test]
    fn adjust_examples() {
        assert_eq!(adjust_scores(&[2.0, 4.0]), vec![0.5, 1.0]);
        assert_eq!(adjust_scores(&[3.0, 3.0]), vec![1.0, 1.0]);
    }

    #[test]
    fn auc_examples() {
        let r = roc_auc(&[0.9, 0.8, 0.1, 0.2, 0.3], &[true, true, false, false, false]).unwrap();
        assert_eq!(r.auc, 1.0);
        assert_eq!(roc_auc(&[0.5; 4], &[true, false, true, false]).unwrap().auc, 0.5);
        assert_eq!(roc_auc(&[0.8, 0.4, 0.6, 0.2], &[true, true, false, false]).unwrap().auc, 0.75);
        assert!(roc_auc(&[0.1, 0.2], &[true, true]).is_err());
        let first = r.points.first().unwrap();
        let last = r.points.last().unwrap();
        assert_eq!((first.fpr, first.tpr, last.fpr, last.tpr), (0.0, 0.0, 1.0, 1.0));
    }
}
