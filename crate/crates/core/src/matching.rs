//! Matched case-control sampling: crash eligibility, candidate control
//! instants and the assembled per-class datasets.

use std::collections::{BTreeMap, HashMap};

use chrono::Duration;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    assign_approach_roles, epoch_seconds, layout_for, CrashRecord, EventKey, EventRole,
    FeatureVector, IntersectionConfig, IntersectionId, LocationClass, Stratum, TimeSlice,
    Timestamp,
};
use crate::features::{OafrSettings, StreamIndex, Streams};
use crate::rng::stream_rng;

/// Lookback needed before an event: four 5-minute slices.
pub const LOOKBACK_SECS: i64 = 4 * TimeSlice::SECONDS;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchingError {
    #[error("crash is {distance_ft} ft from the stop bar, beyond the {threshold_ft} ft threshold")]
    NotIntersectionRelated { distance_ft: f64, threshold_ft: f64 },
    #[error("only {found} candidate controls for m = {m}")]
    Unmatched { found: usize, m: usize },
    #[error("invalid matching settings: {0}")]
    InvalidSettings(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchingSettings {
    /// Controls per crash.
    pub m: usize,
    pub exclusion_window_hours: f64,
    /// Limit candidates to this many weeks either side of the crash; `None`
    /// uses the whole study period.
    pub candidate_weeks: Option<u32>,
    pub rng_seed: u64,
}

impl Default for MatchingSettings {
    fn default() -> Self {
        MatchingSettings {
            m: 4,
            exclusion_window_hours: 3.0,
            candidate_weeks: None,
            rng_seed: 0,
        }
    }
}

impl MatchingSettings {
    pub fn validate(&self) -> Result<(), MatchingError> {
        if self.m == 0 {
            return Err(MatchingError::InvalidSettings("m must be at least 1".into()));
        }
        if !(self.exclusion_window_hours.is_finite() && self.exclusion_window_hours > 0.0) {
            return Err(MatchingError::InvalidSettings(
                "exclusion window must be positive".into(),
            ));
        }
        Ok(())
    }

    fn exclusion_secs(&self) -> i64 {
        (self.exclusion_window_hours * 3600.0).round() as i64
    }
}

/// Half-open span `[start, end)` covered by the detector feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyPeriod {
    #[serde(with = "crate::domain::timestamp")]
    pub start: Timestamp,
    #[serde(with = "crate::domain::timestamp")]
    pub end: Timestamp,
}

impl StudyPeriod {
    /// The span of the volume feed, which is the coarsest stream.
    pub fn from_streams(streams: &Streams) -> Option<StudyPeriod> {
        let start = streams.volumes.iter().map(|v| v.window_start).min()?;
        let end = streams.volumes.iter().map(|v| v.window_start).max()? + Duration::minutes(15);
        Some(StudyPeriod { start, end })
    }

    pub fn contains_event(&self, instant: Timestamp) -> bool {
        epoch_seconds(&instant) - LOOKBACK_SECS >= epoch_seconds(&self.start) && instant <= self.end
    }
}

/// Where a crash happened relative to the intersection it is assigned to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CrashPosition {
    InsideBox,
    /// Feet before the stop bar on the at-fault approach.
    Upstream(f64),
    /// Feet past the intersection on the departure leg.
    Downstream(f64),
}

pub const INTERSECTION_INFLUENCE_FT: f64 = 250.0;

pub fn classify_location(position: CrashPosition, threshold_ft: f64) -> Result<LocationClass, MatchingError> {
    let check = |d: f64, class| {
        if d.abs() <= threshold_ft {
            Ok(class)
        } else {
            Err(MatchingError::NotIntersectionRelated {
                distance_ft: d.abs(),
                threshold_ft,
            })
        }
    };
    match position {
        CrashPosition::InsideBox => Ok(LocationClass::Within),
        CrashPosition::Upstream(d) => check(d, LocationClass::Entrance),
        CrashPosition::Downstream(d) => check(d, LocationClass::Exit),
    }
}

/// One excluded crash and why.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropRecord {
    pub crash_id: String,
    pub reason: String,
}

impl DropRecord {
    fn new(crash_id: &str, reason: impl Into<String>) -> Self {
        DropRecord {
            crash_id: crash_id.to_string(),
            reason: reason.into(),
        }
    }
}

/// Keep multi-vehicle, unimpaired within/entrance crashes whose at-fault
/// vehicle came from a major approach. Output is sorted by crash id.
pub fn filter_crashes(
    records: &[CrashRecord],
    configs: &[IntersectionConfig],
) -> (Vec<CrashRecord>, Vec<DropRecord>) {
    let by_id: HashMap<IntersectionId, &IntersectionConfig> = configs.iter().map(|c| (c.id, c)).collect();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for r in records {
        let reason = if r.single_vehicle {
            Some("single_vehicle".to_string())
        } else if r.impaired {
            Some("impaired".to_string())
        } else if r.location_class == LocationClass::Exit {
            Some("exit_location".to_string())
        } else {
            match by_id.get(&r.intersection) {
                None => Some("unknown_intersection".to_string()),
                Some(cfg) => match r.validate(cfg) {
                    Err(e) => Some(format!("invalid_record: {e}")),
                    Ok(()) if !cfg.approach(r.at_fault_bearing).is_some_and(|a| a.is_major) => {
                        Some("minor_approach".to_string())
                    }
                    Ok(()) => None,
                },
            }
        };
        match reason {
            Some(reason) => dropped.push(DropRecord::new(&r.id, reason)),
            None => kept.push(r.clone()),
        }
    }
    kept.sort_by(|a, b| a.id.cmp(&b.id));
    dropped.sort_by(|a, b| a.crash_id.cmp(&b.crash_id));
    (kept, dropped)
}

/// Crash times per intersection, for the exclusion rule.
#[derive(Debug, Clone, Default)]
pub struct CrashLog {
    times: HashMap<IntersectionId, Vec<i64>>,
}

impl CrashLog {
    pub fn new(records: &[CrashRecord]) -> CrashLog {
        let mut times: HashMap<IntersectionId, Vec<i64>> = HashMap::new();
        for r in records {
            times
                .entry(r.intersection)
                .or_default()
                .push(epoch_seconds(&r.occurred_at));
        }
        for v in times.values_mut() {
            v.sort_unstable();
        }
        CrashLog { times }
    }

    /// Whether any crash at `intersection` lies within `window_secs` of `t`
    /// (inclusive).
    pub fn has_crash_near(&self, intersection: IntersectionId, t: i64, window_secs: i64) -> bool {
        let Some(v) = self.times.get(&intersection) else {
            return false;
        };
        let i = v.partition_point(|&x| x < t - window_secs);
        i < v.len() && v[i] <= t + window_secs
    }
}

/// Same intersection, class, weekday and clock time on other dates, away
/// from every logged crash and with a full lookback inside the period.
pub fn candidate_controls(
    crash: &EventKey,
    period: &StudyPeriod,
    crash_log: &CrashLog,
    settings: &MatchingSettings,
) -> Result<Vec<Timestamp>, MatchingError> {
    settings.validate()?;
    let exclusion = settings.exclusion_secs();
    let week = Duration::weeks(1);
    let mut out = Vec::new();
    let mut consider = |t: Timestamp| {
        if !crash_log.has_crash_near(crash.intersection, epoch_seconds(&t), exclusion) {
            out.push(t);
        }
    };
    let limit = settings.candidate_weeks.map(|w| w as i64).unwrap_or(i64::MAX);
    let mut before = Vec::new();
    let mut t = crash.instant - week;
    let mut k = 1;
    while k <= limit && period.contains_event(t) {
        before.push(t);
        t -= week;
        k += 1;
    }
    for t in before.into_iter().rev() {
        consider(t);
    }
    let mut t = crash.instant + week;
    let mut k = 1;
    while k <= limit && t <= period.end {
        if period.contains_event(t) {
            consider(t);
        }
        t += week;
        k += 1;
    }
    if out.len() < settings.m {
        return Err(MatchingError::Unmatched {
            found: out.len(),
            m: settings.m,
        });
    }
    Ok(out)
}

/// Uniform sample of `m` instants without replacement, returned in time order.
pub fn sample_controls<R: Rng>(candidates: &[Timestamp], m: usize, rng: &mut R) -> Vec<Timestamp> {
    let mut picked: Vec<Timestamp> = rand::seq::index::sample(rng, candidates.len(), m.min(candidates.len()))
        .into_iter()
        .map(|i| candidates[i])
        .collect();
    picked.sort();
    picked
}

/// Per-crash generator, independent of processing order.
pub fn crash_rng(seed: u64, crash_id: &str) -> ChaCha8Rng {
    stream_rng(seed, &["match", crash_id])
}

/// Matched strata for one location class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDataset {
    pub location_class: LocationClass,
    pub strata: Vec<Stratum>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBuild {
    /// Within first, then entrance; classes without strata are omitted.
    pub datasets: Vec<ClassDataset>,
    pub drops: Vec<DropRecord>,
}

fn match_one(
    crash: &CrashRecord,
    index: &StreamIndex,
    period: &StudyPeriod,
    log: &CrashLog,
    settings: &MatchingSettings,
    oafr: &OafrSettings,
) -> Result<Stratum, DropRecord> {
    let drop = |reason: String| DropRecord::new(&crash.id, reason);
    let config = index
        .config(crash.intersection)
        .ok_or_else(|| drop("unknown_intersection".into()))?;
    let roles = assign_approach_roles(crash.at_fault_bearing, config).map_err(|e| drop(format!("invalid_record: {e}")))?;
    let layout = layout_for(crash.location_class, &TimeSlice::ALL);
    let names: Vec<String> = layout.iter().map(|v| v.name()).collect();
    let features = |t: Timestamp| {
        index
            .extract_variables(crash.intersection, t, &roles, &layout, oafr)
            .map(|values| names.iter().cloned().zip(values).collect::<FeatureVector>())
    };
    let key = |instant, role| EventKey {
        intersection: crash.intersection,
        instant,
        location_class: crash.location_class,
        role,
        stratum_id: crash.id.clone(),
    };
    if !period.contains_event(crash.occurred_at) {
        return Err(drop("outside_study_period".into()));
    }
    let crash_fv = features(crash.occurred_at).map_err(|e| drop(format!("crash_features: {e}")))?;
    let crash_key = key(crash.occurred_at, EventRole::Crash);
    let candidates = candidate_controls(&crash_key, period, log, settings).map_err(|e| drop(format!("unmatched: {e}")))?;

    // A uniformly shuffled walk: the first m usable candidates are a uniform
    // sample, and skipping unusable ones re-samples from the remainder.
    let mut rng = crash_rng(settings.rng_seed, &crash.id);
    let mut order = candidates.clone();
    order.shuffle(&mut rng);
    let mut chosen: Vec<(Timestamp, FeatureVector)> = Vec::with_capacity(settings.m);
    let mut last_err = None;
    for t in order {
        match features(t) {
            Ok(fv) => {
                chosen.push((t, fv));
                if chosen.len() == settings.m {
                    break;
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    if chosen.len() < settings.m {
        let detail = last_err.map(|e| e.to_string()).unwrap_or_default();
        return Err(drop(format!(
            "insufficient_controls: {} of {} usable; {detail}",
            chosen.len(),
            settings.m
        )));
    }
    chosen.sort_by_key(|c| c.0);
    let mut keys = vec![crash_key];
    let mut controls = Vec::with_capacity(settings.m);
    for (t, fv) in chosen {
        keys.push(key(t, EventRole::Control));
        controls.push(fv);
    }
    Ok(Stratum {
        stratum_id: crash.id.clone(),
        crash: crash_fv,
        controls,
        keys,
    })
}

/// Match every eligible crash and extract features for all events. The
/// crash log used for exclusion should be the full, unfiltered log.
pub fn build_dataset(
    crashes: &[CrashRecord],
    crash_log: &CrashLog,
    index: &StreamIndex,
    period: &StudyPeriod,
    settings: &MatchingSettings,
    oafr: &OafrSettings,
) -> Result<DatasetBuild, MatchingError> {
    settings.validate()?;
    let mut sorted: Vec<&CrashRecord> = crashes.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let results: Vec<Result<Stratum, DropRecord>> = sorted
        .par_iter()
        .map(|c| match_one(c, index, period, crash_log, settings, oafr))
        .collect();
    let mut by_class: BTreeMap<LocationClass, Vec<Stratum>> = BTreeMap::new();
    let mut drops = Vec::new();
    for (crash, r) in sorted.iter().zip(results) {
        match r {
            Ok(s) => by_class.entry(crash.location_class).or_default().push(s),
            Err(d) => drops.push(d),
        }
    }
    let datasets = by_class
        .into_iter()
        .map(|(location_class, strata)| ClassDataset {
            location_class,
            strata,
        })
        .collect();
    Ok(DatasetBuild { datasets, drops })
}

/// Post-hoc integrity audit of an emitted dataset.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct MatchingAudit {
    pub strata: usize,
    pub crash_rows: usize,
    pub control_rows: usize,
    pub ratio_violations: usize,
    pub factor_violations: usize,
    pub exclusion_violations: usize,
    pub missing_keys: usize,
}

impl MatchingAudit {
    pub fn is_clean(&self) -> bool {
        self.ratio_violations == 0
            && self.factor_violations == 0
            && self.exclusion_violations == 0
            && self.missing_keys == 0
    }
}

/// Check the m:1 ratio, the matching factors and the exclusion window
/// against the full crash log, one control at a time.
pub fn audit_dataset(strata: &[Stratum], crash_log: &[CrashRecord], settings: &MatchingSettings) -> MatchingAudit {
    let window = settings.exclusion_secs();
    let mut audit = MatchingAudit {
        strata: strata.len(),
        ..MatchingAudit::default()
    };
    for s in strata {
        audit.crash_rows += 1;
        audit.control_rows += s.controls.len();
        if s.controls.len() != settings.m {
            audit.ratio_violations += 1;
        }
        if s.keys.len() != s.controls.len() + 1 {
            audit.missing_keys += 1;
            continue;
        }
        let factors = s.keys[0].matching_factors();
        for k in &s.keys[1..] {
            if k.matching_factors() != factors || k.instant == s.keys[0].instant {
                audit.factor_violations += 1;
            }
            let t = epoch_seconds(&k.instant);
            if crash_log
                .iter()
                .any(|c| c.intersection == k.intersection && (epoch_seconds(&c.occurred_at) - t).abs() <= window)
            {
                audit.exclusion_violations += 1;
            }
        }
    }
    audit
}
