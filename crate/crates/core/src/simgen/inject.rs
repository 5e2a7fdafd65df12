//! Crash injection from a logit model on the event features.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::Serialize;

use super::scenario::{BetaScale, ScenarioConfig, ScenarioError};
use super::streams::{period_end, period_start};
use crate::domain::{
    assign_approach_roles, from_epoch_seconds, layout_for, Bearing, CrashRecord, IntersectionConfig, LocationClass,
    TimeSlice, Variable,
};
use crate::features::{StreamIndex, Streams};
use crate::matching::LOOKBACK_SECS;
use crate::rng::stream_rng;

/// Candidate crash instants lie on this grid.
pub const CANDIDATE_STEP_SECS: i64 = TimeSlice::SECONDS;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariableMoments {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Injection {
    /// Model-drawn crashes and decoys, by intersection then time.
    pub crashes: Vec<CrashRecord>,
    /// Candidates whose covariates could be computed.
    pub candidates: usize,
    /// Sum of the candidate probabilities.
    pub expected: f64,
    pub model_crashes: usize,
    pub decoys: usize,
    /// Scenario moments of each injected variable.
    pub moments: Vec<VariableMoments>,
}

impl Injection {
    pub fn scale_of(&self, name: &str) -> Option<f64> {
        self.moments.iter().find(|m| m.name == name).map(|m| m.sd)
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    t: i64,
    class: LocationClass,
    bearing: Bearing,
}

/// Which of the injected variables an event of `class` carries.
fn class_columns(class: LocationClass, names: &[String]) -> Vec<Option<Variable>> {
    let layout: Vec<String> = layout_for(class, &TimeSlice::ALL).iter().map(|v| v.name()).collect();
    names
        .iter()
        .map(|n| {
            layout
                .contains(n)
                .then(|| Variable::parse(n).expect("validated variable name"))
        })
        .collect()
}

fn candidates_for(config: &ScenarioConfig, ic: &IntersectionConfig) -> Vec<Candidate> {
    let (start, end) = (period_start(config), period_end(config));
    let mut out = Vec::new();
    let mut t = start + LOOKBACK_SECS;
    while t < end {
        for &class in &config.location_classes {
            for bearing in ic.major_bearings() {
                out.push(Candidate { t, class, bearing });
            }
        }
        t += CANDIDATE_STEP_SECS;
    }
    out
}

/// Covariates for every candidate, `k` per row; NaN marks a variable the
/// event's class does not carry, and `None` a candidate with missing data.
fn evaluate(
    config: &ScenarioConfig,
    ic: &IntersectionConfig,
    index: &StreamIndex,
    names: &[String],
) -> (Vec<Candidate>, Vec<Option<Vec<f64>>>) {
    let cands = candidates_for(config, ic);
    let columns: BTreeMap<LocationClass, Vec<Option<Variable>>> = config
        .location_classes
        .iter()
        .map(|&c| (c, class_columns(c, names)))
        .collect();
    let values = cands
        .iter()
        .map(|c| {
            let cols = &columns[&c.class];
            let vars: Vec<Variable> = cols.iter().flatten().copied().collect();
            let roles = assign_approach_roles(c.bearing, ic).ok()?;
            let got = index
                .extract_variables(ic.id, from_epoch_seconds(c.t), &roles, &vars, &config.oafr)
                .ok()?;
            let mut it = got.into_iter();
            Some(cols.iter().map(|v| if v.is_some() { it.next().unwrap() } else { f64::NAN }).collect())
        })
        .collect();
    (cands, values)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Draw crashes for every (intersection, 5-minute instant, location class,
/// major at-fault bearing) with
/// `p = sigmoid(logit(base_rate) + βᵀ(x − x̄))`, where `x̄` is the mean over
/// all candidates. With [`BetaScale::ScenarioSd`] the centred covariates are
/// also divided by their scenario standard deviation. Decoy crashes that the
/// eligibility filter should remove are mixed in.
pub fn inject_crashes(streams: &Streams, config: &ScenarioConfig) -> Result<Injection, ScenarioError> {
    config.validate()?;
    let index = StreamIndex::new(streams).map_err(|e| ScenarioError(format!("streams: {e}")))?;
    let names: Vec<String> = config.true_beta.keys().cloned().collect();
    let beta: Vec<f64> = config.true_beta.values().copied().collect();
    let k = names.len();

    let evaluated: Vec<(Vec<Candidate>, Vec<Option<Vec<f64>>>)> = streams
        .intersections
        .par_iter()
        .map(|ic| evaluate(config, ic, &index, &names))
        .collect();

    let mut sum = vec![0.0; k];
    let mut sum_sq = vec![0.0; k];
    let mut count = vec![0usize; k];
    for (_, values) in &evaluated {
        for row in values.iter().flatten() {
            for u in 0..k {
                if !row[u].is_nan() {
                    sum[u] += row[u];
                    sum_sq[u] += row[u] * row[u];
                    count[u] += 1;
                }
            }
        }
    }
    let moments: Vec<VariableMoments> = (0..k)
        .map(|u| {
            let n = count[u].max(1) as f64;
            let mean = sum[u] / n;
            let var = if count[u] > 1 {
                ((sum_sq[u] - n * mean * mean) / (n - 1.0)).max(0.0)
            } else {
                0.0
            };
            VariableMoments {
                name: names[u].clone(),
                mean,
                sd: var.sqrt(),
            }
        })
        .collect();
    let scale: Vec<f64> = moments
        .iter()
        .map(|m| match config.beta_scale {
            BetaScale::Raw => 1.0,
            BetaScale::ScenarioSd if m.sd > 0.0 => m.sd,
            BetaScale::ScenarioSd => 1.0,
        })
        .collect();
    let intercept = if config.base_rate > 0.0 {
        (config.base_rate / (1.0 - config.base_rate)).ln()
    } else {
        f64::NEG_INFINITY
    };

    struct Drawn {
        crashes: Vec<(i64, Bearing, LocationClass, bool, bool)>,
        candidates: usize,
        expected: f64,
        model: usize,
        decoys: usize,
    }
    let (start, end) = (period_start(config), period_end(config));
    let drawn: Vec<Drawn> = streams
        .intersections
        .par_iter()
        .zip(evaluated.par_iter())
        .map(|(ic, (cands, values))| {
            let id = ic.id.0.to_string();
            let mut rng = stream_rng(config.seed, &["inject", &id]);
            let mut out = Drawn {
                crashes: Vec::new(),
                candidates: 0,
                expected: 0.0,
                model: 0,
                decoys: 0,
            };
            for (c, row) in cands.iter().zip(values) {
                let u: f64 = rng.random();
                let Some(row) = row else { continue };
                out.candidates += 1;
                let z: f64 = (0..k)
                    .filter(|&v| !row[v].is_nan())
                    .map(|v| beta[v] * (row[v] - moments[v].mean) / scale[v])
                    .sum();
                let p = if intercept.is_finite() { sigmoid(intercept + z) } else { 0.0 };
                out.expected += p;
                if u < p {
                    out.crashes.push((c.t, c.bearing, c.class, false, false));
                    out.model += 1;
                }
            }
            let mut rng = stream_rng(config.seed, &["decoys", &id]);
            let rate = config.decoy_fraction / (1.0 - config.decoy_fraction);
            let n_decoys: usize = if rate > 0.0 && out.model > 0 {
                Poisson::new(rate * out.model as f64).unwrap().sample(&mut rng) as usize
            } else {
                0
            };
            let major = ic.major_bearings();
            let minor: Vec<Bearing> = Bearing::ALL.iter().copied().filter(|b| !major.contains(b)).collect();
            let steps = (end - start - LOOKBACK_SECS) / CANDIDATE_STEP_SECS;
            for _ in 0..n_decoys {
                let t = start + LOOKBACK_SECS + rng.random_range(0..steps) * CANDIDATE_STEP_SECS;
                let pick = |rng: &mut rand_chacha::ChaCha8Rng, bs: &[Bearing]| bs[rng.random_range(0..bs.len())];
                let crash = match rng.random_range(0..4) {
                    0 => (t, pick(&mut rng, &major), LocationClass::Within, true, false),
                    1 => (t, pick(&mut rng, &major), LocationClass::Entrance, false, true),
                    2 => (t, pick(&mut rng, &Bearing::ALL), LocationClass::Exit, false, false),
                    _ => (t, pick(&mut rng, &minor), LocationClass::Within, false, false),
                };
                out.crashes.push(crash);
            }
            out.decoys = n_decoys;
            out.crashes.sort_by_key(|c| (c.0, c.1, c.2));
            out
        })
        .collect();

    let mut injection = Injection {
        crashes: Vec::new(),
        candidates: 0,
        expected: 0.0,
        model_crashes: 0,
        decoys: 0,
        moments,
    };
    for (ic, d) in streams.intersections.iter().zip(drawn) {
        injection.candidates += d.candidates;
        injection.expected += d.expected;
        injection.model_crashes += d.model;
        injection.decoys += d.decoys;
        for (seq, (t, bearing, class, single_vehicle, impaired)) in d.crashes.into_iter().enumerate() {
            injection.crashes.push(CrashRecord {
                id: format!("C{:03}-{:05}", ic.id.0, seq + 1),
                intersection: ic.id,
                occurred_at: from_epoch_seconds(t),
                at_fault_bearing: bearing,
                location_class: class,
                single_vehicle,
                impaired,
            });
        }
    }
    Ok(injection)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::filter_crashes;
    use crate::simgen::streams::generate_streams;

    fn small(base_rate: f64) -> ScenarioConfig {
        ScenarioConfig {
            n_intersections: 2,
            days: 14,
            ..ScenarioConfig::new(base_rate, 7)
        }
    }

    #[test]
    fn zero_base_rate_gives_no_crashes() {
        let cfg = small(0.0);
        let s = generate_streams(&cfg).unwrap();
        let inj = inject_crashes(&s, &cfg).unwrap();
        assert!(inj.crashes.is_empty());
        assert!(inj.candidates > 0);
    }

    #[test]
    fn null_model_rate_matches_base_rate() {
        let cfg = small(0.01);
        let s = generate_streams(&cfg).unwrap();
        let inj = inject_crashes(&s, &cfg).unwrap();
        let n = inj.candidates as f64;
        let se = (n * 0.01 * 0.99).sqrt();
        assert!((inj.model_crashes as f64 - n * 0.01).abs() < 3.0 * se, "{} of {n}", inj.model_crashes);
    }

    #[test]
    fn decoys_are_filtered_and_model_crashes_kept() {
        let cfg = ScenarioConfig {
            decoy_fraction: 0.3,
            ..small(0.005)
        };
        let s = generate_streams(&cfg).unwrap();
        let inj = inject_crashes(&s, &cfg).unwrap();
        assert!(inj.decoys > 0);
        let (kept, dropped) = filter_crashes(&inj.crashes, &s.intersections);
        assert_eq!(kept.len(), inj.model_crashes);
        assert_eq!(dropped.len(), inj.decoys);
        let mut ids: Vec<&str> = inj.crashes.iter().map(|c| c.id.as_str()).collect();
        ids.dedup();
        assert_eq!(ids.len(), inj.crashes.len());
    }
}
