//! Core data model: intersection geometry, the A/B/C/D approach nomenclature,
//! raw stream records, event keys, variable naming and matched strata.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDateTime, Timelike, Weekday};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Timezone-naive local time at one-second resolution.
pub type Timestamp = NaiveDateTime;

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("unknown measure `{0}`")]
    UnknownMeasure(String),
    #[error("invalid variable: {0}")]
    InvalidVariable(String),
    #[error("bearing {bearing} is not an approach of intersection {intersection}")]
    BearingNotInConfig {
        bearing: Bearing,
        intersection: IntersectionId,
    },
    #[error("invalid intersection config {id}: {reason}")]
    InvalidConfig { id: IntersectionId, reason: String },
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("invalid stratum {stratum_id}: {reason}")]
    InvalidStratum { stratum_id: String, reason: String },
    #[error("cannot parse `{value}` as {what}")]
    Parse { what: &'static str, value: String },
}

/// Serde adapter for [`Timestamp`] using [`TIMESTAMP_FORMAT`].
pub mod timestamp {
    use super::{Timestamp, TIMESTAMP_FORMAT};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(ts: &Timestamp, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&ts.format(TIMESTAMP_FORMAT).to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Timestamp, D::Error> {
        let raw = String::deserialize(d)?;
        super::parse_timestamp(&raw).map_err(serde::de::Error::custom)
    }
}

pub fn parse_timestamp(raw: &str) -> Result<Timestamp, DomainError> {
    NaiveDateTime::parse_from_str(raw.trim(), TIMESTAMP_FORMAT).map_err(|_| DomainError::Parse {
        what: "timestamp",
        value: raw.to_string(),
    })
}

pub fn format_timestamp(ts: &Timestamp) -> String {
    ts.format(TIMESTAMP_FORMAT).to_string()
}

/// Seconds since the Unix epoch, treating the local clock as UTC.
pub fn epoch_seconds(ts: &Timestamp) -> i64 {
    ts.and_utc().timestamp()
}

pub fn from_epoch_seconds(secs: i64) -> Timestamp {
    chrono::DateTime::from_timestamp(secs, 0)
        .expect("timestamp in range")
        .naive_utc()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IntersectionId(pub u32);

impl fmt::Display for IntersectionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Travel direction of the vehicles using an approach.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Bearing {
    #[serde(rename = "NB")]
    Northbound,
    #[serde(rename = "EB")]
    Eastbound,
    #[serde(rename = "SB")]
    Southbound,
    #[serde(rename = "WB")]
    Westbound,
}

impl Bearing {
    pub const ALL: [Bearing; 4] = [
        Bearing::Northbound,
        Bearing::Eastbound,
        Bearing::Southbound,
        Bearing::Westbound,
    ];

    fn index(self) -> usize {
        match self {
            Bearing::Northbound => 0,
            Bearing::Eastbound => 1,
            Bearing::Southbound => 2,
            Bearing::Westbound => 3,
        }
    }

    /// Rotate the travel direction by `quarter_turns` × 90° clockwise.
    pub fn rotate(self, quarter_turns: usize) -> Bearing {
        Bearing::ALL[(self.index() + quarter_turns) % 4]
    }

    pub fn opposite(self) -> Bearing {
        self.rotate(2)
    }

    pub fn code(self) -> &'static str {
        match self {
            Bearing::Northbound => "NB",
            Bearing::Eastbound => "EB",
            Bearing::Southbound => "SB",
            Bearing::Westbound => "WB",
        }
    }
}

impl fmt::Display for Bearing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Bearing {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "NB" => Ok(Bearing::Northbound),
            "EB" => Ok(Bearing::Eastbound),
            "SB" => Ok(Bearing::Southbound),
            "WB" => Ok(Bearing::Westbound),
            other => Err(DomainError::Parse {
                what: "bearing",
                value: other.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Movement {
    Through,
    Left,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LocationClass {
    Within,
    Entrance,
    Exit,
}

impl LocationClass {
    pub fn as_str(self) -> &'static str {
        match self {
            LocationClass::Within => "within",
            LocationClass::Entrance => "entrance",
            LocationClass::Exit => "exit",
        }
    }
}

impl fmt::Display for LocationClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LocationClass {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "within" => Ok(LocationClass::Within),
            "entrance" => Ok(LocationClass::Entrance),
            "exit" => Ok(LocationClass::Exit),
            other => Err(DomainError::Parse {
                what: "location class",
                value: other.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventRole {
    Crash,
    Control,
}

impl EventRole {
    pub fn as_str(self) -> &'static str {
        match self {
            EventRole::Crash => "crash",
            EventRole::Control => "control",
        }
    }
}

impl FromStr for EventRole {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "crash" => Ok(EventRole::Crash),
            "control" => Ok(EventRole::Control),
            other => Err(DomainError::Parse {
                what: "event role",
                value: other.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Approach {
    pub bearing: Bearing,
    pub is_major: bool,
    pub through_lanes: u8,
    pub left_turn_lanes: u8,
    /// Feet.
    pub upstream_segment_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntersectionConfig {
    pub id: IntersectionId,
    pub approaches: Vec<Approach>,
}

impl IntersectionConfig {
    pub fn validate(&self) -> Result<(), DomainError> {
        let fail = |reason: &str| DomainError::InvalidConfig {
            id: self.id,
            reason: reason.to_string(),
        };
        if self.approaches.len() != 4 {
            return Err(fail("exactly 4 approaches are required"));
        }
        for b in Bearing::ALL {
            let n = self.approaches.iter().filter(|a| a.bearing == b).count();
            if n != 1 {
                return Err(fail("bearings must be pairwise distinct"));
            }
        }
        if !self.approaches.iter().any(|a| a.is_major) {
            return Err(fail("at least one approach must be major"));
        }
        for a in &self.approaches {
            if a.through_lanes < 1 {
                return Err(fail("through_lanes must be at least 1"));
            }
            if !(a.upstream_segment_length.is_finite() && a.upstream_segment_length > 0.0) {
                return Err(fail("upstream_segment_length must be positive"));
            }
        }
        Ok(())
    }

    pub fn approach(&self, bearing: Bearing) -> Option<&Approach> {
        self.approaches.iter().find(|a| a.bearing == bearing)
    }

    pub fn major_bearings(&self) -> Vec<Bearing> {
        let mut out: Vec<Bearing> = self
            .approaches
            .iter()
            .filter(|a| a.is_major)
            .map(|a| a.bearing)
            .collect();
        out.sort();
        out
    }
}

/// Position of an approach relative to the at-fault vehicle's approach.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ApproachRole {
    A,
    B,
    C,
    D,
}

impl ApproachRole {
    pub const ALL: [ApproachRole; 4] = [
        ApproachRole::A,
        ApproachRole::B,
        ApproachRole::C,
        ApproachRole::D,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn letter(self) -> &'static str {
        match self {
            ApproachRole::A => "A",
            ApproachRole::B => "B",
            ApproachRole::C => "C",
            ApproachRole::D => "D",
        }
    }
}

/// Bijection between the four bearings of an intersection and the roles A–D.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ApproachMap {
    bearing_of_role: [Bearing; 4],
}

impl ApproachMap {
    pub fn bearing_of(&self, role: ApproachRole) -> Bearing {
        self.bearing_of_role[role.index()]
    }

    pub fn role_of(&self, bearing: Bearing) -> ApproachRole {
        ApproachRole::ALL
            .into_iter()
            .find(|r| self.bearing_of_role[r.index()] == bearing)
            .expect("approach map covers all bearings")
    }
}

/// Map roles for a crash whose at-fault vehicle travelled `at_fault`.
///
/// A is the at-fault approach and C the opposing one. With right-hand traffic
/// the first crossing stream the at-fault driver meets comes from the left;
/// its travel direction is A rotated a quarter turn clockwise and it is
/// labelled B. D is the remaining (far-side) crossing approach.
pub fn assign_approach_roles(
    at_fault: Bearing,
    config: &IntersectionConfig,
) -> Result<ApproachMap, DomainError> {
    if config.approach(at_fault).is_none() {
        return Err(DomainError::BearingNotInConfig {
            bearing: at_fault,
            intersection: config.id,
        });
    }
    Ok(ApproachMap {
        bearing_of_role: [
            at_fault,
            at_fault.rotate(1),
            at_fault.rotate(2),
            at_fault.rotate(3),
        ],
    })
}

fn is_aligned(ts: &Timestamp, minutes: u32) -> bool {
    ts.second() == 0 && ts.minute() % minutes == 0 && ts.nanosecond() == 0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeRecord {
    pub intersection: IntersectionId,
    pub bearing: Bearing,
    /// 1-based from the leftmost lane of the movement's lane group.
    pub lane_index: u8,
    pub movement: Movement,
    #[serde(with = "timestamp")]
    pub window_start: Timestamp,
    pub count: u32,
}

impl VolumeRecord {
    pub fn validate(&self) -> Result<(), DomainError> {
        if !is_aligned(&self.window_start, 15) {
            return Err(DomainError::InvalidRecord(format!(
                "volume window {} is not aligned to 15 minutes",
                format_timestamp(&self.window_start)
            )));
        }
        if self.lane_index == 0 {
            return Err(DomainError::InvalidRecord("lane_index is 1-based".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseEvent {
    pub intersection: IntersectionId,
    pub bearing: Bearing,
    pub movement: Movement,
    #[serde(with = "timestamp")]
    pub green_start: Timestamp,
    #[serde(with = "timestamp")]
    pub green_end: Timestamp,
    pub queue_at_green: u32,
    /// Seconds.
    pub max_wait_at_green: f64,
}

impl PhaseEvent {
    pub fn validate(&self) -> Result<(), DomainError> {
        if self.green_end <= self.green_start {
            return Err(DomainError::InvalidRecord(format!(
                "phase at {} ends before it starts",
                format_timestamp(&self.green_start)
            )));
        }
        if !(self.max_wait_at_green.is_finite() && self.max_wait_at_green >= 0.0) {
            return Err(DomainError::InvalidRecord("negative waiting time".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedObservation {
    pub intersection: IntersectionId,
    /// Approach whose upstream segment was measured.
    pub bearing: Bearing,
    #[serde(with = "timestamp")]
    pub timestamp: Timestamp,
    /// mph.
    pub space_mean_speed: f64,
}

impl SpeedObservation {
    pub fn validate(&self) -> Result<(), DomainError> {
        if !(self.space_mean_speed.is_finite() && self.space_mean_speed > 0.0) {
            return Err(DomainError::InvalidRecord(format!(
                "speed {} must be finite and positive",
                self.space_mean_speed
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherRecord {
    #[serde(with = "timestamp")]
    pub timestamp: Timestamp,
    /// 0 normal, 1 adverse.
    pub weather_type: u8,
    /// Miles, 0–10.
    pub visibility: f64,
    /// Tenths of an inch.
    pub hourly_precip: f64,
}

impl WeatherRecord {
    pub fn validate(&self) -> Result<(), DomainError> {
        if self.weather_type > 1 {
            return Err(DomainError::InvalidRecord("weather_type must be 0 or 1".into()));
        }
        if !(0.0..=10.0).contains(&self.visibility) {
            return Err(DomainError::InvalidRecord("visibility outside [0, 10]".into()));
        }
        if !(self.hourly_precip.is_finite() && self.hourly_precip >= 0.0) {
            return Err(DomainError::InvalidRecord("negative precipitation".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrashRecord {
    pub id: String,
    pub intersection: IntersectionId,
    #[serde(with = "timestamp")]
    pub occurred_at: Timestamp,
    pub at_fault_bearing: Bearing,
    pub location_class: LocationClass,
    pub single_vehicle: bool,
    /// Alcohol or drugs involved.
    pub impaired: bool,
}

impl CrashRecord {
    pub fn validate(&self, config: &IntersectionConfig) -> Result<(), DomainError> {
        if config.id != self.intersection {
            return Err(DomainError::InvalidRecord(format!(
                "crash {} checked against intersection {}",
                self.id, config.id
            )));
        }
        if config.approach(self.at_fault_bearing).is_none() {
            return Err(DomainError::BearingNotInConfig {
                bearing: self.at_fault_bearing,
                intersection: config.id,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EventKey {
    pub intersection: IntersectionId,
    #[serde(with = "timestamp")]
    pub instant: Timestamp,
    pub location_class: LocationClass,
    pub role: EventRole,
    pub stratum_id: String,
}

impl EventKey {
    /// Matching factors shared by every event of a stratum.
    pub fn matching_factors(&self) -> (IntersectionId, LocationClass, Weekday, chrono::NaiveTime) {
        (
            self.intersection,
            self.location_class,
            self.instant.weekday(),
            self.instant.time(),
        )
    }
}

/// One of the four 5-minute windows preceding an event; slice 1 is nearest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TimeSlice {
    S1,
    S2,
    S3,
    S4,
}

impl TimeSlice {
    pub const ALL: [TimeSlice; 4] = [TimeSlice::S1, TimeSlice::S2, TimeSlice::S3, TimeSlice::S4];
    pub const SECONDS: i64 = 300;

    pub fn number(self) -> u8 {
        self as u8 + 1
    }

    pub fn from_number(k: u8) -> Option<TimeSlice> {
        match k {
            1 => Some(TimeSlice::S1),
            2 => Some(TimeSlice::S2),
            3 => Some(TimeSlice::S3),
            4 => Some(TimeSlice::S4),
            _ => None,
        }
    }

    pub fn suffix(self) -> &'static str {
        match self {
            TimeSlice::S1 => "0_5",
            TimeSlice::S2 => "5_10",
            TimeSlice::S3 => "10_15",
            TimeSlice::S4 => "15_20",
        }
    }

    pub fn from_suffix(s: &str) -> Option<TimeSlice> {
        TimeSlice::ALL.into_iter().find(|t| t.suffix() == s)
    }

    /// Half-open window `[t − 5k min, t − 5(k−1) min)` in epoch seconds.
    pub fn window(self, instant_secs: i64) -> (i64, i64) {
        let k = self.number() as i64;
        (
            instant_secs - k * Self::SECONDS,
            instant_secs - (k - 1) * Self::SECONDS,
        )
    }
}

/// Per-approach measures; each is tagged with a role and a slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ApproachMeasure {
    VolLt,
    VolTh,
    Oafr,
    LtGreenRatio,
    LtAvgGreen,
    LtStdGreen,
    LtAvgQueue,
    LtAvgWait,
    ThGreenRatio,
    ThAvgGreen,
    ThStdGreen,
    ThAvgQueue,
    ThAvgWait,
}

impl ApproachMeasure {
    pub const ALL: [ApproachMeasure; 13] = [
        ApproachMeasure::VolLt,
        ApproachMeasure::VolTh,
        ApproachMeasure::Oafr,
        ApproachMeasure::LtGreenRatio,
        ApproachMeasure::LtAvgGreen,
        ApproachMeasure::LtStdGreen,
        ApproachMeasure::LtAvgQueue,
        ApproachMeasure::LtAvgWait,
        ApproachMeasure::ThGreenRatio,
        ApproachMeasure::ThAvgGreen,
        ApproachMeasure::ThStdGreen,
        ApproachMeasure::ThAvgQueue,
        ApproachMeasure::ThAvgWait,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ApproachMeasure::VolLt => "Vol_LT",
            ApproachMeasure::VolTh => "Vol_Th",
            ApproachMeasure::Oafr => "OAFR",
            ApproachMeasure::LtGreenRatio => "LT_GreenRatio",
            ApproachMeasure::LtAvgGreen => "LT_Avg_Green",
            ApproachMeasure::LtStdGreen => "LT_Std_Green",
            ApproachMeasure::LtAvgQueue => "LT_Avg_Queue",
            ApproachMeasure::LtAvgWait => "LT_Avg_Wait",
            ApproachMeasure::ThGreenRatio => "TH_GreenRatio",
            ApproachMeasure::ThAvgGreen => "TH_Avg_Green",
            ApproachMeasure::ThStdGreen => "TH_Std_Green",
            ApproachMeasure::ThAvgQueue => "TH_Avg_Queue",
            ApproachMeasure::ThAvgWait => "TH_Avg_Wait",
        }
    }

    /// Signal movement the measure is computed from, if it is a phase measure.
    pub fn phase_movement(self) -> Option<Movement> {
        use ApproachMeasure::*;
        match self {
            LtGreenRatio | LtAvgGreen | LtStdGreen | LtAvgQueue | LtAvgWait => Some(Movement::Left),
            ThGreenRatio | ThAvgGreen | ThStdGreen | ThAvgQueue | ThAvgWait => {
                Some(Movement::Through)
            }
            VolLt | VolTh | Oafr => None,
        }
    }
}

/// The closed measure vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Measure {
    Approach(ApproachMeasure),
    AvgSpeed,
    StdSpeed,
    WeatherType,
    Visibility,
    HourlyPrecip,
}

impl Measure {
    pub fn as_str(self) -> &'static str {
        match self {
            Measure::Approach(m) => m.as_str(),
            Measure::AvgSpeed => "Avg_speed",
            Measure::StdSpeed => "Std_speed",
            Measure::WeatherType => "WeatherType",
            Measure::Visibility => "Visibility",
            Measure::HourlyPrecip => "HourlyPrecip",
        }
    }

    pub fn is_weather(self) -> bool {
        matches!(
            self,
            Measure::WeatherType | Measure::Visibility | Measure::HourlyPrecip
        )
    }

    fn order(self) -> usize {
        match self {
            Measure::AvgSpeed => 0,
            Measure::StdSpeed => 1,
            Measure::Approach(m) => 2 + m as usize,
            Measure::HourlyPrecip => 20,
            Measure::Visibility => 21,
            Measure::WeatherType => 22,
        }
    }
}

impl FromStr for Measure {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(m) = ApproachMeasure::ALL.into_iter().find(|m| m.as_str() == s) {
            return Ok(Measure::Approach(m));
        }
        match s {
            "Avg_speed" => Ok(Measure::AvgSpeed),
            "Std_speed" => Ok(Measure::StdSpeed),
            "WeatherType" => Ok(Measure::WeatherType),
            "Visibility" => Ok(Measure::Visibility),
            "HourlyPrecip" => Ok(Measure::HourlyPrecip),
            other => Err(DomainError::UnknownMeasure(other.to_string())),
        }
    }
}

/// A fully-qualified model variable, e.g. `B_Vol_LT_10_15` or `Avg_speed_0_5`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Variable {
    pub role: Option<ApproachRole>,
    pub measure: Measure,
    pub slice: Option<TimeSlice>,
}

impl Variable {
    pub fn new(
        role: Option<ApproachRole>,
        measure: Measure,
        slice: Option<TimeSlice>,
    ) -> Result<Variable, DomainError> {
        let ok = match measure {
            Measure::Approach(_) => role.is_some() && slice.is_some(),
            Measure::AvgSpeed | Measure::StdSpeed => role.is_none() && slice.is_some(),
            _ => role.is_none() && slice.is_none(),
        };
        if !ok {
            return Err(DomainError::InvalidVariable(format!(
                "{} takes {}",
                measure.as_str(),
                match measure {
                    Measure::Approach(_) => "an approach role and a time slice",
                    Measure::AvgSpeed | Measure::StdSpeed => "a time slice and no approach role",
                    _ => "neither an approach role nor a time slice",
                }
            )));
        }
        Ok(Variable {
            role,
            measure,
            slice,
        })
    }

    pub fn approach(role: ApproachRole, measure: ApproachMeasure, slice: TimeSlice) -> Variable {
        Variable {
            role: Some(role),
            measure: Measure::Approach(measure),
            slice: Some(slice),
        }
    }

    pub fn name(&self) -> String {
        let mut out = String::new();
        if let Some(r) = self.role {
            out.push_str(r.letter());
            out.push('_');
        }
        out.push_str(self.measure.as_str());
        if let Some(s) = self.slice {
            out.push('_');
            out.push_str(s.suffix());
        }
        out
    }

    /// Name without the slice suffix, as used in per-slice model tables.
    pub fn base_name(&self) -> String {
        Variable {
            slice: None,
            ..*self
        }
        .name()
    }

    pub fn parse(name: &str) -> Result<Variable, DomainError> {
        let invalid = || DomainError::InvalidVariable(name.to_string());
        let (role, rest) = match name.split_once('_') {
            Some((head, tail)) if head.len() == 1 => {
                let role = match head {
                    "A" => ApproachRole::A,
                    "B" => ApproachRole::B,
                    "C" => ApproachRole::C,
                    "D" => ApproachRole::D,
                    _ => return Err(invalid()),
                };
                (Some(role), tail)
            }
            _ => (None, name),
        };
        let mut slice = None;
        let mut measure_part = rest;
        for s in TimeSlice::ALL {
            if let Some(stripped) = rest.strip_suffix(s.suffix()) {
                if let Some(m) = stripped.strip_suffix('_') {
                    slice = Some(s);
                    measure_part = m;
                    break;
                }
            }
        }
        let measure: Measure = measure_part.parse().map_err(|_| invalid())?;
        Variable::new(role, measure, slice).map_err(|_| invalid())
    }

    /// Canonical column order: slices nearest-first, speed, then A–D
    /// approach blocks, weather last.
    pub fn sort_key(&self) -> (usize, usize, usize) {
        let slice = self.slice.map(|s| s as usize).unwrap_or(4);
        let role = self.role.map(|r| r.index() + 1).unwrap_or(0);
        (slice, role, self.measure.order())
    }
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Build a variable name from its parts, rejecting unknown measures and
/// invalid role/slice combinations.
pub fn variable_name(
    role: Option<ApproachRole>,
    measure: &str,
    slice: Option<TimeSlice>,
) -> Result<String, DomainError> {
    let measure: Measure = measure.parse()?;
    Ok(Variable::new(role, measure, slice)?.name())
}

/// Sort variable names into canonical order; unparseable names go last,
/// lexicographically.
pub fn sort_variable_names(names: &mut [String]) {
    names.sort_by(|a, b| {
        let ka = Variable::parse(a).ok().map(|v| v.sort_key());
        let kb = Variable::parse(b).ok().map(|v| v.sort_key());
        match (ka, kb) {
            (Some(x), Some(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => a.cmp(b),
        }
    });
}

/// Full variable layout carried by events of a location class.
///
/// Within-intersection events carry all four approaches; entrance events
/// carry only the A approach. Speed and weather are carried by both.
pub fn layout_for(class: LocationClass, slices: &[TimeSlice]) -> Vec<Variable> {
    let roles: &[ApproachRole] = match class {
        LocationClass::Within => &ApproachRole::ALL,
        _ => &[ApproachRole::A],
    };
    let mut out = Vec::new();
    for &slice in slices {
        out.push(Variable {
            role: None,
            measure: Measure::AvgSpeed,
            slice: Some(slice),
        });
        out.push(Variable {
            role: None,
            measure: Measure::StdSpeed,
            slice: Some(slice),
        });
        for &role in roles {
            for m in ApproachMeasure::ALL {
                out.push(Variable::approach(role, m, slice));
            }
        }
    }
    for measure in [Measure::HourlyPrecip, Measure::Visibility, Measure::WeatherType] {
        out.push(Variable {
            role: None,
            measure,
            slice: None,
        });
    }
    out
}

/// Named covariate values for one event.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(BTreeMap<String, f64>);

impl FeatureVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: f64) {
        self.0.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.0.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn same_names(&self, other: &FeatureVector) -> bool {
        self.0.len() == other.0.len() && self.0.keys().zip(other.0.keys()).all(|(a, b)| a == b)
    }
}

impl FromIterator<(String, f64)> for FeatureVector {
    fn from_iter<I: IntoIterator<Item = (String, f64)>>(iter: I) -> Self {
        FeatureVector(iter.into_iter().collect())
    }
}

/// One crash and its matched controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub stratum_id: String,
    pub crash: FeatureVector,
    pub controls: Vec<FeatureVector>,
    /// Empty for synthetic strata; otherwise the crash key followed by one
    /// key per control, in order.
    #[serde(default)]
    pub keys: Vec<EventKey>,
}

impl Stratum {
    pub fn m(&self) -> usize {
        self.controls.len()
    }

    /// All observations, crash first.
    pub fn observations(&self) -> impl Iterator<Item = &FeatureVector> {
        std::iter::once(&self.crash).chain(self.controls.iter())
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        let fail = |reason: String| DomainError::InvalidStratum {
            stratum_id: self.stratum_id.clone(),
            reason,
        };
        if self.controls.is_empty() {
            return Err(fail("no controls".into()));
        }
        for (v, c) in self.controls.iter().enumerate() {
            if !self.crash.same_names(c) {
                return Err(fail(format!("control {} has a different variable set", v + 1)));
            }
        }
        for fv in self.observations() {
            if let Some((name, _)) = fv.iter().find(|(_, x)| !x.is_finite()) {
                return Err(fail(format!("non-finite value for {name}")));
            }
        }
        if !self.keys.is_empty() {
            if self.keys.len() != self.controls.len() + 1 {
                return Err(fail("event keys do not match observations".into()));
            }
            if self.keys[0].role != EventRole::Crash
                || self.keys[1..].iter().any(|k| k.role != EventRole::Control)
            {
                return Err(fail("crash key must come first, followed by controls".into()));
            }
            let factors = self.keys[0].matching_factors();
            for k in &self.keys {
                if k.stratum_id != self.stratum_id {
                    return Err(fail("event key belongs to another stratum".into()));
                }
                if k.matching_factors() != factors {
                    return Err(fail(format!(
                        "event at {} breaks the matching factors",
                        format_timestamp(&k.instant)
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Check a whole dataset: every stratum valid, constant m, one variable set.
pub fn validate_strata(strata: &[Stratum]) -> Result<(), DomainError> {
    let Some(first) = strata.first() else {
        return Ok(());
    };
    for s in strata {
        s.validate()?;
        if s.m() != first.m() {
            return Err(DomainError::InvalidStratum {
                stratum_id: s.stratum_id.clone(),
                reason: format!("has m = {} but the dataset uses m = {}", s.m(), first.m()),
            });
        }
        if !s.crash.same_names(&first.crash) {
            return Err(DomainError::InvalidStratum {
                stratum_id: s.stratum_id.clone(),
                reason: "variable set differs from the rest of the dataset".into(),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> IntersectionConfig {
        IntersectionConfig {
            id: IntersectionId(7),
            approaches: Bearing::ALL
                .into_iter()
                .map(|b| Approach {
                    bearing: b,
                    is_major: matches!(b, Bearing::Northbound | Bearing::Southbound),
                    through_lanes: 2,
                    left_turn_lanes: 1,
                    upstream_segment_length: 1500.0,
                })
                .collect(),
        }
    }

    #[test]
    fn northbound_at_fault_roles() {
        let map = assign_approach_roles(Bearing::Northbound, &config()).unwrap();
        assert_eq!(map.bearing_of(ApproachRole::A), Bearing::Northbound);
        assert_eq!(map.bearing_of(ApproachRole::C), Bearing::Southbound);
        // Eastbound traffic arrives from the northbound driver's left.
        assert_eq!(map.bearing_of(ApproachRole::B), Bearing::Eastbound);
        assert_eq!(map.bearing_of(ApproachRole::D), Bearing::Westbound);
    }

    #[test]
    fn approach_map_is_a_deterministic_bijection() {
        let cfg = config();
        for b in Bearing::ALL {
            let map = assign_approach_roles(b, &cfg).unwrap();
            assert_eq!(map, assign_approach_roles(b, &cfg).unwrap());
            assert_eq!(map.bearing_of(ApproachRole::A), b);
            for x in Bearing::ALL {
                assert_eq!(map.bearing_of(map.role_of(x)), x);
            }
            for r in ApproachRole::ALL {
                assert_eq!(map.role_of(map.bearing_of(r)), r);
            }
        }
    }

    #[test]
    fn at_fault_bearing_must_belong_to_config() {
        let mut cfg = config();
        cfg.approaches.retain(|a| a.bearing != Bearing::Westbound);
        let err = assign_approach_roles(Bearing::Westbound, &cfg).unwrap_err();
        assert!(matches!(err, DomainError::BearingNotInConfig { .. }));
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = config();
        assert!(cfg.validate().is_ok());
        for a in &mut cfg.approaches {
            a.is_major = false;
        }
        assert!(cfg.validate().is_err());
        let mut cfg = config();
        cfg.approaches[1].bearing = Bearing::Northbound;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn variable_names_follow_table_headers() {
        assert_eq!(
            variable_name(Some(ApproachRole::D), "OAFR", Some(TimeSlice::S2)).unwrap(),
            "D_OAFR_5_10"
        );
        assert_eq!(
            variable_name(Some(ApproachRole::A), "Vol_Th", Some(TimeSlice::S1)).unwrap(),
            "A_Vol_Th_0_5"
        );
        assert_eq!(
            variable_name(None, "Avg_speed", Some(TimeSlice::S1)).unwrap(),
            "Avg_speed_0_5"
        );
        assert_eq!(variable_name(None, "WeatherType", None).unwrap(), "WeatherType");
        assert_eq!(
            variable_name(Some(ApproachRole::B), "LT_Std_Green", Some(TimeSlice::S2)).unwrap(),
            variable_name(Some(ApproachRole::B), "LT_Std_Green", Some(TimeSlice::S2)).unwrap()
        );
    }

    #[test]
    fn unknown_measure_is_rejected() {
        let err = variable_name(Some(ApproachRole::A), "Vol_RT", Some(TimeSlice::S1)).unwrap_err();
        assert_eq!(err, DomainError::UnknownMeasure("Vol_RT".into()));
        assert!(variable_name(None, "Vol_Th", Some(TimeSlice::S1)).is_err());
        assert!(variable_name(Some(ApproachRole::A), "Avg_speed", Some(TimeSlice::S1)).is_err());
        assert!(variable_name(None, "Visibility", Some(TimeSlice::S3)).is_err());
    }

    #[test]
    fn names_round_trip_and_do_not_collide() {
        let layout = layout_for(LocationClass::Within, &TimeSlice::ALL);
        assert_eq!(layout.len(), 4 * (2 + 4 * 13) + 3);
        let mut names: Vec<String> = layout.iter().map(Variable::name).collect();
        for (v, n) in layout.iter().zip(&names) {
            assert_eq!(Variable::parse(n).unwrap(), *v);
        }
        names.sort();
        names.dedup();
        assert_eq!(names.len(), layout.len());
        // One slice of the within layout holds 57 variables.
        assert_eq!(layout_for(LocationClass::Within, &[TimeSlice::S1]).len(), 57);
    }

    #[test]
    fn entrance_layout_has_only_a_approach() {
        for v in layout_for(LocationClass::Entrance, &TimeSlice::ALL) {
            assert!(matches!(v.role, None | Some(ApproachRole::A)));
        }
    }

    #[test]
    fn slice_windows_partition_the_lookback() {
        let t = 10_000;
        assert_eq!(TimeSlice::S1.window(t), (t - 300, t));
        assert_eq!(TimeSlice::S4.window(t), (t - 1200, t - 900));
        for w in TimeSlice::ALL.windows(2) {
            assert_eq!(w[1].window(t).1, w[0].window(t).0);
        }
    }

    #[test]
    fn strata_validation_checks_m_and_names() {
        let fv = |x: f64| -> FeatureVector { [("x".to_string(), x)].into_iter().collect() };
        let s1 = Stratum {
            stratum_id: "s1".into(),
            crash: fv(1.0),
            controls: vec![fv(0.0), fv(0.5)],
            keys: vec![],
        };
        let mut s2 = s1.clone();
        s2.stratum_id = "s2".into();
        s2.controls.pop();
        assert!(validate_strata(&[s1.clone()]).is_ok());
        assert!(validate_strata(&[s1.clone(), s2]).is_err());
        let mut s3 = s1.clone();
        s3.controls[0] = [("y".to_string(), 0.0)].into_iter().collect();
        assert!(s3.validate().is_err());
    }
}
