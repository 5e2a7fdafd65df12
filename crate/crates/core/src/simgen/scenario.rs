//! Scenario configuration for the synthetic world.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{LocationClass, Variable};
use crate::features::OafrSettings;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid scenario: {0}")]
pub struct ScenarioError(pub String);

/// Inclusive integer range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRange {
    pub min: u8,
    pub max: u8,
}

impl CountRange {
    pub const fn new(min: u8, max: u8) -> Self {
        CountRange { min, max }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LaneConfig {
    pub major_through: CountRange,
    pub major_left: CountRange,
    pub minor_through: CountRange,
    pub minor_left: CountRange,
    /// Upstream segment lengths in feet are drawn uniformly from this range.
    pub segment_feet: (f64, f64),
}

impl Default for LaneConfig {
    fn default() -> Self {
        LaneConfig {
            major_through: CountRange::new(2, 3),
            major_left: CountRange::new(1, 2),
            minor_through: CountRange::new(2, 2),
            minor_left: CountRange::new(0, 1),
            segment_feet: (1500.0, 5000.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemandConfig {
    /// Vehicles per hour per major through lane, by hour of day.
    pub hourly_profile: Vec<f64>,
    pub weekend_factor: f64,
    /// Minor-street demand relative to the major street.
    pub minor_factor: f64,
    /// Left-turn lane demand relative to a through lane on the same approach.
    pub left_factor: f64,
    /// Sd of the log demand multiplier per intersection-day.
    pub day_noise_sd: f64,
    /// Sd of the log demand multiplier per approach and 15-minute window.
    pub window_noise_sd: f64,
    /// Sd of the log per-lane share within a window, beyond the fixed lane bias.
    pub lane_noise_sd: f64,
}

impl Default for DemandConfig {
    fn default() -> Self {
        DemandConfig {
            hourly_profile: vec![
                60.0, 40.0, 30.0, 25.0, 40.0, 110.0, 300.0, 520.0, 560.0, 430.0, 380.0, 400.0, 440.0, 430.0,
                440.0, 500.0, 580.0, 620.0, 500.0, 360.0, 270.0, 210.0, 150.0, 95.0,
            ],
            weekend_factor: 0.75,
            minor_factor: 0.45,
            left_factor: 0.35,
            day_noise_sd: 0.12,
            window_noise_sd: 0.25,
            lane_noise_sd: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SignalConfig {
    pub base_cycle_secs: f64,
    pub min_cycle_secs: f64,
    pub max_cycle_secs: f64,
    /// Relative jitter applied to each cycle length and green split.
    pub jitter: f64,
    /// Yellow plus all-red per phase.
    pub clearance_secs: f64,
    pub min_green_secs: f64,
    /// Saturation flow per lane, vehicles per hour of green.
    pub saturation_flow: f64,
}

impl Default for SignalConfig {
    fn default() -> Self {
        SignalConfig {
            base_cycle_secs: 120.0,
            min_cycle_secs: 80.0,
            max_cycle_secs: 180.0,
            jitter: 0.1,
            clearance_secs: 5.0,
            min_green_secs: 7.0,
            saturation_flow: 1800.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpeedConfig {
    pub free_flow_mean: f64,
    /// Spread of free-flow speed across intersections.
    pub free_flow_sd: f64,
    /// Spread of individual vehicle speeds around the segment speed.
    pub vehicle_sd: f64,
    /// Speed lost at a volume-to-capacity ratio of 1.
    pub congestion_drop: f64,
    /// Congestion dips (incidents) per intersection-day.
    pub dip_rate_per_day: f64,
    pub dip_mean_minutes: f64,
    pub dip_depth: f64,
    /// Bluetooth matches as a share of major-approach through traffic.
    pub detection_share: f64,
    /// Floor on detections per hour, so night windows are not empty.
    pub min_detections_per_hour: f64,
    /// Relative speed reduction in adverse weather.
    pub adverse_reduction: f64,
}

impl Default for SpeedConfig {
    fn default() -> Self {
        SpeedConfig {
            free_flow_mean: 44.0,
            free_flow_sd: 4.0,
            vehicle_sd: 5.0,
            congestion_drop: 12.0,
            dip_rate_per_day: 1.5,
            dip_mean_minutes: 25.0,
            dip_depth: 15.0,
            detection_share: 0.06,
            min_detections_per_hour: 72.0,
            adverse_reduction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeatherConfig {
    pub adverse_spells_per_day: f64,
    pub mean_spell_hours: f64,
    /// Hours between precipitation updates inside an adverse spell.
    pub update_hours: f64,
    /// Mean hourly precipitation in tenths of an inch during a spell.
    pub mean_precip: f64,
}

impl Default for WeatherConfig {
    fn default() -> Self {
        WeatherConfig {
            adverse_spells_per_day: 0.35,
            mean_spell_hours: 2.5,
            update_hours: 1.0,
            mean_precip: 1.5,
        }
    }
}

/// How the injected logit uses the true coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaScale {
    /// `βᵀ(x − x̄)` on raw feature units.
    Raw,
    /// `βᵀ((x − x̄) / s)` with `s` the scenario standard deviation, so each
    /// coefficient is a log odds ratio per standard deviation.
    ScenarioSd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default = "default_intersections")]
    pub n_intersections: u32,
    #[serde(default = "default_start")]
    pub start_date: NaiveDate,
    #[serde(default = "default_days")]
    pub days: u32,
    #[serde(default)]
    pub lanes: LaneConfig,
    #[serde(default)]
    pub demand: DemandConfig,
    #[serde(default)]
    pub signal: SignalConfig,
    #[serde(default)]
    pub speed: SpeedConfig,
    #[serde(default)]
    pub weather: WeatherConfig,
    /// Coefficients of the injected crash mechanism, keyed by variable name.
    #[serde(default)]
    pub true_beta: BTreeMap<String, f64>,
    #[serde(default = "default_beta_scale")]
    pub beta_scale: BetaScale,
    /// Crash probability per candidate at the scenario-mean covariates.
    pub base_rate: f64,
    /// Share of emitted crashes that are decoys meant to be filtered out.
    #[serde(default = "default_decoy_fraction")]
    pub decoy_fraction: f64,
    #[serde(default = "default_classes")]
    pub location_classes: Vec<LocationClass>,
    #[serde(default)]
    pub oafr: OafrSettings,
    pub seed: u64,
}

fn default_intersections() -> u32 {
    23
}

fn default_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2017, 1, 1).expect("valid date")
}

fn default_days() -> u32 {
    365
}

fn default_beta_scale() -> BetaScale {
    BetaScale::ScenarioSd
}

fn default_decoy_fraction() -> f64 {
    0.15
}

fn default_classes() -> Vec<LocationClass> {
    vec![LocationClass::Within, LocationClass::Entrance]
}

impl ScenarioConfig {
    /// Defaults everywhere except the seed and base rate.
    pub fn new(base_rate: f64, seed: u64) -> Self {
        ScenarioConfig {
            n_intersections: default_intersections(),
            start_date: default_start(),
            days: default_days(),
            lanes: LaneConfig::default(),
            demand: DemandConfig::default(),
            signal: SignalConfig::default(),
            speed: SpeedConfig::default(),
            weather: WeatherConfig::default(),
            true_beta: BTreeMap::new(),
            beta_scale: default_beta_scale(),
            base_rate,
            decoy_fraction: default_decoy_fraction(),
            location_classes: default_classes(),
            oafr: OafrSettings::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |s: String| Err(ScenarioError(s));
        if self.n_intersections == 0 {
            return bad("n_intersections must be positive".into());
        }
        if self.days < 2 {
            return bad("the study period must cover at least two days".into());
        }
        // Zero is allowed so that a crash-free world can be generated.
        if !(self.base_rate >= 0.0 && self.base_rate <= 0.05) {
            return bad(format!("base_rate {} outside [0, 0.05]", self.base_rate));
        }
        if !(0.0..1.0).contains(&self.decoy_fraction) {
            return bad("decoy_fraction must lie in [0, 1)".into());
        }
        let l = &self.lanes;
        for (name, r) in [
            ("major_through", l.major_through),
            ("major_left", l.major_left),
            ("minor_through", l.minor_through),
            ("minor_left", l.minor_left),
        ] {
            if r.min > r.max {
                return bad(format!("lane range {name} is empty"));
            }
        }
        // OAFR is undefined on a single through lane.
        if l.major_through.min < 2 || l.minor_through.min < 2 {
            return bad("every approach needs at least two through lanes".into());
        }
        if !(l.segment_feet.0 > 0.0 && l.segment_feet.0 <= l.segment_feet.1) {
            return bad("segment length range must be positive".into());
        }
        let d = &self.demand;
        if d.hourly_profile.len() != 24 {
            return bad("hourly_profile needs 24 values".into());
        }
        let non_negative = d
            .hourly_profile
            .iter()
            .chain([
                &d.weekend_factor,
                &d.minor_factor,
                &d.left_factor,
                &d.day_noise_sd,
                &d.window_noise_sd,
                &d.lane_noise_sd,
            ])
            .all(|v| v.is_finite() && *v >= 0.0);
        if !non_negative {
            return bad("demand values must be finite and non-negative".into());
        }
        let s = &self.signal;
        if !(s.min_cycle_secs > 0.0 && s.min_cycle_secs <= s.base_cycle_secs && s.base_cycle_secs <= s.max_cycle_secs) {
            return bad("cycle lengths must satisfy 0 < min <= base <= max".into());
        }
        if !(0.0..0.5).contains(&s.jitter) || s.clearance_secs < 0.0 || s.min_green_secs <= 0.0 || s.saturation_flow <= 0.0 {
            return bad("invalid signal parameters".into());
        }
        if 4.0 * (s.min_green_secs + s.clearance_secs) > s.min_cycle_secs {
            return bad("minimum cycle too short for the minimum greens".into());
        }
        let v = &self.speed;
        let speed_ok = [v.free_flow_mean, v.vehicle_sd, v.congestion_drop, v.dip_rate_per_day, v.dip_mean_minutes, v.dip_depth, v.detection_share, v.min_detections_per_hour, v.adverse_reduction, v.free_flow_sd]
            .iter()
            .all(|x| x.is_finite() && *x >= 0.0);
        if !speed_ok || v.free_flow_mean <= 0.0 || v.adverse_reduction >= 1.0 {
            return bad("invalid speed parameters".into());
        }
        let w = &self.weather;
        if !(w.adverse_spells_per_day >= 0.0 && w.mean_spell_hours > 0.0 && w.update_hours > 0.0 && w.mean_precip >= 0.0) {
            return bad("invalid weather parameters".into());
        }
        if self.location_classes.is_empty() || self.location_classes.contains(&LocationClass::Exit) {
            return bad("location_classes must be a non-empty subset of within and entrance".into());
        }
        for (name, b) in &self.true_beta {
            if !b.is_finite() {
                return bad(format!("true_beta for {name} is not finite"));
            }
            Variable::parse(name).map_err(|e| ScenarioError(format!("true_beta: {e}")))?;
        }
        self.oafr.validate().map_err(|e| ScenarioError(e.to_string()))?;
        Ok(())
    }
}
