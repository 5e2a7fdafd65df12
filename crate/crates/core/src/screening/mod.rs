//! Pairwise collinearity screening with Pearson correlation and MIC, and
//! greedy pruning of flagged pairs.

mod mic;

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{sort_variable_names, Stratum, TimeSlice, Variable};

pub use mic::{grid_bound, mic, mic_with, MicParams, MIN_OBSERVATIONS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScreeningError {
    #[error("vectors have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("{n} observations; at least {min} are needed")]
    TooFewObservations { n: usize, min: usize },
    #[error("correlation is undefined for a constant vector")]
    ConstantVector,
    #[error("non-finite value in input")]
    NonFinite,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("variable {0} is not in the dataset")]
    UnknownVariable(String),
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, ScreeningError> {
    if x.len() != y.len() {
        return Err(ScreeningError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(ScreeningError::TooFewObservations { n: x.len(), min: 3 });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(ScreeningError::NonFinite);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(ScreeningError::ConstantVector);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreeningSettings {
    pub r_threshold: f64,
    pub mic_threshold: f64,
    pub mic: MicParams,
    /// Also compare each variable with its own measure in other slices.
    pub cross_slice: bool,
}

impl Default for ScreeningSettings {
    fn default() -> Self {
        ScreeningSettings {
            r_threshold: 0.6,
            mic_threshold: 0.7,
            mic: MicParams::default(),
            cross_slice: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub var_a: String,
    pub var_b: String,
    pub pearson_r: f64,
    pub mic: f64,
    pub flagged_linear: bool,
    pub flagged_nonlinear: bool,
}

impl PairResult {
    pub fn flagged(&self) -> bool {
        self.flagged_linear || self.flagged_nonlinear
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedVariable {
    pub name: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningReport {
    pub pairs: Vec<PairResult>,
    pub retained: Vec<String>,
    pub dropped: Vec<DroppedVariable>,
}

impl ScreeningReport {
    pub fn flagged_pairs(&self) -> impl Iterator<Item = &PairResult> {
        self.pairs.iter().filter(|p| p.flagged())
    }
}

/// Columns of a matched dataset in canonical variable order, crash rows and
/// control rows stacked.
pub fn dataset_columns(strata: &[Stratum]) -> Vec<(String, Vec<f64>)> {
    let Some(first) = strata.first() else {
        return Vec::new();
    };
    let mut names: Vec<String> = first.crash.names().map(str::to_string).collect();
    sort_variable_names(&mut names);
    names
        .into_iter()
        .map(|name| {
            let col = strata
                .iter()
                .flat_map(|s| s.observations())
                .map(|fv| fv.get(&name).unwrap_or(f64::NAN))
                .collect();
            (name, col)
        })
        .collect()
}

fn scope(name: &str) -> (Option<TimeSlice>, String) {
    match Variable::parse(name) {
        Ok(v) => (v.slice, v.base_name()),
        Err(_) => (None, name.to_string()),
    }
}

/// Index pairs `(i, j)`, `i < j`, that the screening scope compares: same
/// slice, either variable slice-free, or (with `cross_slice`) the same
/// measure in different slices.
pub fn screening_pairs(names: &[String], cross_slice: bool) -> Vec<(usize, usize)> {
    let scopes: Vec<(Option<TimeSlice>, String)> = names.iter().map(|n| scope(n)).collect();
    let mut out = Vec::new();
    for i in 0..names.len() {
        for j in i + 1..names.len() {
            let (si, bi) = &scopes[i];
            let (sj, bj) = &scopes[j];
            let in_scope = si.is_none() || sj.is_none() || si == sj || (cross_slice && bi == bj);
            if in_scope {
                out.push((i, j));
            }
        }
    }
    out
}

/// Evaluate every in-scope pair and prune the flagged ones.
pub fn screen(columns: &[(String, Vec<f64>)], settings: &ScreeningSettings) -> Result<ScreeningReport, ScreeningError> {
    if !(settings.r_threshold.is_finite() && settings.mic_threshold.is_finite()) {
        return Err(ScreeningError::InvalidParameter("thresholds must be finite".into()));
    }
    let mut cols: Vec<&(String, Vec<f64>)> = columns.iter().collect();
    let mut order: Vec<String> = cols.iter().map(|c| c.0.clone()).collect();
    sort_variable_names(&mut order);
    cols.sort_by_key(|c| order.iter().position(|n| *n == c.0));

    let mut dropped = Vec::new();
    let mut live: Vec<&(String, Vec<f64>)> = Vec::new();
    for c in cols {
        if let Some(first) = c.1.first() {
            if c.1.iter().any(|v| !v.is_finite()) {
                return Err(ScreeningError::NonFinite);
            }
            if c.1.iter().all(|v| v == first) {
                dropped.push(DroppedVariable {
                    name: c.0.clone(),
                    reason: "constant".into(),
                });
                continue;
            }
        }
        live.push(c);
    }
    let names: Vec<String> = live.iter().map(|c| c.0.clone()).collect();
    let pairs = screening_pairs(&names, settings.cross_slice);
    let pairs: Vec<PairResult> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (x, y) = (&live[i].1, &live[j].1);
            let r = pearson(x, y)?;
            let m = mic_with(x, y, &settings.mic)?;
            Ok(PairResult {
                var_a: names[i].clone(),
                var_b: names[j].clone(),
                pearson_r: r,
                mic: m,
                flagged_linear: r.abs() > settings.r_threshold,
                flagged_nonlinear: m > settings.mic_threshold,
            })
        })
        .collect::<Result<_, ScreeningError>>()?;
    let mut report = ScreeningReport {
        pairs,
        retained: names,
        dropped,
    };
    let (retained, pruned) = prune(&report);
    report.retained = retained;
    report.dropped.extend(pruned);
    Ok(report)
}

/// Greedy removal until no flagged pair has both members retained: drop the
/// variable with the most flagged partners, then the larger mean |r| over
/// those partners, then the lexicographically greatest name.
pub fn prune(report: &ScreeningReport) -> (Vec<String>, Vec<DroppedVariable>) {
    let mut retained: BTreeSet<&str> = report.retained.iter().map(String::as_str).collect();
    let flagged: Vec<&PairResult> = report.flagged_pairs().collect();
    let mut dropped = Vec::new();
    loop {
        let mut partners: BTreeMap<&str, Vec<(&str, f64)>> = BTreeMap::new();
        for p in &flagged {
            if retained.contains(p.var_a.as_str()) && retained.contains(p.var_b.as_str()) {
                partners.entry(&p.var_a).or_default().push((&p.var_b, p.pearson_r.abs()));
                partners.entry(&p.var_b).or_default().push((&p.var_a, p.pearson_r.abs()));
            }
        }
        let Some((name, list)) = partners.into_iter().max_by(|(na, la), (nb, lb)| {
            let mean = |l: &Vec<(&str, f64)>| l.iter().map(|x| x.1).sum::<f64>() / l.len() as f64;
            la.len()
                .cmp(&lb.len())
                .then(mean(la).total_cmp(&mean(lb)))
                .then(na.cmp(nb))
        }) else {
            break;
        };
        retained.remove(name);
        let with: Vec<&str> = list.iter().map(|x| x.0).collect();
        dropped.push(DroppedVariable {
            name: name.to_string(),
            reason: format!("flagged with {}", with.join(";")),
        });
    }
    let retained = report
        .retained
        .iter()
        .filter(|n| retained.contains(n.as_str()))
        .cloned()
        .collect();
    (retained, dropped)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_hand_cases() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
        let r = pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
        assert!((r - 1.5 / (21f64.sqrt() / 3.0)).abs() < 1e-12);
        assert!((r - 0.981_980_506_061_965_7).abs() < 1e-12);
        assert_eq!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(ScreeningError::ConstantVector));
    }

    fn col(name: &str, v: Vec<f64>) -> (String, Vec<f64>) {
        (name.to_string(), v)
    }

    #[test]
    fn identical_columns_are_flagged_linear() {
        let a: Vec<f64> = (0..40).map(|i| ((i * 37) % 17) as f64).collect();
        let noise: Vec<f64> = (0..40).map(|i| ((i * 11) % 7) as f64).collect();
        let report = screen(
            &[col("a", a.clone()), col("b", a), col("c", noise)],
            &ScreeningSettings::default(),
        )
        .unwrap();
        let ab = report.pairs.iter().find(|p| p.var_a == "a" && p.var_b == "b").unwrap();
        assert!(ab.flagged_linear && ab.flagged_nonlinear);
        assert_eq!(report.retained.len(), 2);
        assert_eq!(report.dropped.len(), 1);
    }

    #[test]
    fn parabola_is_nonlinear_only() {
        let x: Vec<f64> = (-50..=50).map(|i| i as f64 / 10.0).collect();
        let y: Vec<f64> = x.iter().map(|v| v * v).collect();
        let report = screen(&[col("x", x), col("y", y)], &ScreeningSettings::default()).unwrap();
        let p = &report.pairs[0];
        assert!(p.pearson_r.abs() < 1e-9);
        assert!(!p.flagged_linear);
        assert!(p.flagged_nonlinear, "mic {}", p.mic);
    }

    #[test]
    fn single_slice_of_57_gives_1596_pairs() {
        let names: Vec<String> = crate::domain::layout_for(crate::domain::LocationClass::Within, &[TimeSlice::S1])
            .iter()
            .map(|v| v.name())
            .collect();
        assert_eq!(names.len(), 57);
        assert_eq!(screening_pairs(&names, true).len(), 1596);
    }

    #[test]
    fn cross_slice_scope() {
        let names: Vec<String> = ["Avg_speed_0_5", "Avg_speed_5_10", "Std_speed_5_10", "A_Vol_Th_0_5", "WeatherType"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let with = screening_pairs(&names, true);
        let without = screening_pairs(&names, false);
        assert!(with.contains(&(0, 1)));
        assert!(!without.contains(&(0, 1)));
        assert!(!with.contains(&(0, 2)));
        assert!(without.contains(&(0, 4)));
    }

    fn report_with(flags: &[(&str, &str, f64)], names: &[&str]) -> ScreeningReport {
        ScreeningReport {
            pairs: flags
                .iter()
                .map(|&(a, b, r)| PairResult {
                    var_a: a.into(),
                    var_b: b.into(),
                    pearson_r: r,
                    mic: 0.0,
                    flagged_linear: true,
                    flagged_nonlinear: false,
                })
                .collect(),
            retained: names.iter().map(|s| s.to_string()).collect(),
            dropped: Vec::new(),
        }
    }

    #[test]
    fn prune_drops_the_hub() {
        let r = report_with(&[("A", "B", 0.7), ("A", "C", 0.65)], &["A", "B", "C"]);
        let (kept, dropped) = prune(&r);
        assert_eq!(kept, ["B", "C"]);
        assert_eq!(dropped[0].name, "A");
        let none = report_with(&[], &["A", "B"]);
        assert_eq!(prune(&none).0, ["A", "B"]);
    }

    #[test]
    fn prune_tie_breaks() {
        let r = report_with(&[("A", "B", -0.9)], &["A", "B"]);
        assert_eq!(prune(&r).0, ["A"]);
        let r = report_with(&[("A", "B", 0.9), ("C", "D", 0.7), ("B", "C", 0.8)], &["A", "B", "C", "D"]);
        // B and C both have two partners; B's mean |r| is larger.
        let (kept, dropped) = prune(&r);
        assert_eq!(dropped[0].name, "B");
        // Then C and D tie on both counts; the greater name goes.
        assert_eq!(dropped[1].name, "D");
        assert_eq!(kept, ["A", "C"]);
    }
}
