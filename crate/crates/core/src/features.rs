//! Slice-tagged feature extraction from the raw streams: volume
//! disaggregation, overall average flow ratio, speed, signal-phase and
//! weather aggregates.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    epoch_seconds, layout_for, ApproachMap, ApproachMeasure, ApproachRole, Bearing, DomainError,
    EventKey, FeatureVector, IntersectionConfig, IntersectionId, Measure, Movement, PhaseEvent,
    SpeedObservation, TimeSlice, Timestamp, Variable, VolumeRecord, WeatherRecord,
};

const VOLUME_WINDOW_SECS: i64 = 900;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("lane {lane} has zero volume and is skipped")]
    LaneSkipped { lane: usize },
    #[error("flow ratio is undefined for a single-lane group")]
    SingleLaneGroup,
    #[error("lane {lane} out of range for {lanes} lanes")]
    InvalidLane { lane: usize, lanes: usize },
    #[error("every lane was skipped; OAFR is undefined")]
    AllLanesSkipped,
    #[error("invalid OAFR settings: {0}")]
    InvalidSettings(String),
    #[error("no speed observations on {bearing} for slice {slice}")]
    MissingSpeed { bearing: Bearing, slice: u8 },
    #[error("missing {movement:?} volume on {bearing} for the window starting at epoch {window}")]
    MissingVolume {
        bearing: Bearing,
        movement: Movement,
        window: i64,
    },
    #[error("no weather record at or before the event")]
    MissingWeather,
    #[error("unknown intersection {0}")]
    UnknownIntersection(IntersectionId),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanMode {
    Arithmetic,
    Geometric,
}

/// How the unknown lane-change destination fractions are filled in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryMode {
    /// Factor 0.5 whenever the adjacent lane exists.
    EqualSplit,
    /// Factor 1 when the adjacent lane can only change into the subject lane.
    ForcedDestination,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroVolumePolicy {
    SkipLane,
    /// Zero lane volumes are replaced by this many vehicles.
    Epsilon(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OafrSettings {
    pub mean_mode: MeanMode,
    pub boundary_mode: BoundaryMode,
    pub zero_volume_policy: ZeroVolumePolicy,
}

impl Default for OafrSettings {
    fn default() -> Self {
        OafrSettings {
            mean_mode: MeanMode::Arithmetic,
            boundary_mode: BoundaryMode::EqualSplit,
            zero_volume_policy: ZeroVolumePolicy::Epsilon(0.5),
        }
    }
}

impl OafrSettings {
    pub fn validate(&self) -> Result<(), FeatureError> {
        if let ZeroVolumePolicy::Epsilon(e) = self.zero_volume_policy {
            if !(e.is_finite() && e > 0.0) {
                return Err(FeatureError::InvalidSettings(format!(
                    "epsilon must be positive, got {e}"
                )));
            }
        }
        Ok(())
    }

    fn effective_volumes(&self, volumes: &[f64]) -> Vec<f64> {
        match self.zero_volume_policy {
            ZeroVolumePolicy::Epsilon(e) => volumes
                .iter()
                .map(|&v| if v == 0.0 { e } else { v })
                .collect(),
            ZeroVolumePolicy::SkipLane => volumes.to_vec(),
        }
    }
}

/// Split a 15-minute lane count evenly over its three 5-minute sub-windows.
pub fn disaggregate_volume(count: u32) -> [f64; 3] {
    let third = count as f64 / 3.0;
    [third; 3]
}

/// Numerator of AFR_i: adjacent-lane flow weighted by destination fractions.
fn adjacent_flow(volumes: &[f64], lane: usize, boundary: BoundaryMode) -> f64 {
    let n = volumes.len();
    let mut total = 0.0;
    if lane >= 1 {
        let f = match boundary {
            BoundaryMode::ForcedDestination if lane < 2 => 1.0,
            _ => 0.5,
        };
        total += f * volumes[lane - 1];
    }
    if lane + 1 < n {
        let f = match boundary {
            BoundaryMode::ForcedDestination if lane + 2 >= n => 1.0,
            _ => 0.5,
        };
        total += f * volumes[lane + 1];
    }
    total
}

/// Average flow ratio of lane `lane` (0-based, leftmost first).
pub fn compute_afr(volumes: &[f64], lane: usize, settings: &OafrSettings) -> Result<f64, FeatureError> {
    settings.validate()?;
    if volumes.len() < 2 {
        return Err(FeatureError::SingleLaneGroup);
    }
    if lane >= volumes.len() {
        return Err(FeatureError::InvalidLane {
            lane,
            lanes: volumes.len(),
        });
    }
    let v = settings.effective_volumes(volumes);
    if v[lane] == 0.0 {
        return Err(FeatureError::LaneSkipped { lane });
    }
    Ok(adjacent_flow(&v, lane, settings.boundary_mode) / v[lane])
}

/// Overall average flow ratio over all non-skipped lanes.
pub fn compute_oafr(volumes: &[f64], settings: &OafrSettings) -> Result<f64, FeatureError> {
    settings.validate()?;
    if volumes.len() < 2 {
        return Err(FeatureError::SingleLaneGroup);
    }
    let v = settings.effective_volumes(volumes);
    let lanes: Vec<usize> = (0..v.len()).filter(|&i| v[i] != 0.0).collect();
    if lanes.is_empty() {
        return Err(FeatureError::AllLanesSkipped);
    }
    let n = lanes.len() as f64;
    match settings.mean_mode {
        MeanMode::Arithmetic => {
            let sum: f64 = lanes
                .iter()
                .map(|&i| adjacent_flow(&v, i, settings.boundary_mode) / v[i])
                .sum();
            Ok(sum / n)
        }
        MeanMode::Geometric => {
            // Products of numerators and denominators are formed separately so
            // that reciprocal ratios cancel without per-lane rounding.
            let mut num = 1.0;
            let mut den = 1.0;
            for &i in &lanes {
                num *= adjacent_flow(&v, i, settings.boundary_mode);
                den *= v[i];
            }
            if num == 0.0 {
                return Ok(0.0);
            }
            let ratio = num / den;
            if ratio.is_finite() && ratio > 0.0 && num.is_finite() && den.is_finite() {
                Ok(if lanes.len() == 2 {
                    ratio.sqrt()
                } else {
                    ratio.powf(1.0 / n)
                })
            } else {
                let log_sum: f64 = lanes
                    .iter()
                    .map(|&i| (adjacent_flow(&v, i, settings.boundary_mode) / v[i]).ln())
                    .sum();
                Ok((log_sum / n).exp())
            }
        }
    }
}

/// Sample mean and standard deviation (n − 1 denominator, 0 when n = 1).
pub fn aggregate_speed(speeds: &[f64]) -> Option<(f64, f64)> {
    if speeds.is_empty() {
        return None;
    }
    Some(mean_sd(speeds))
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PhaseAggregate {
    /// Percent of the window spent in green.
    pub green_ratio: f64,
    pub avg_green: f64,
    pub std_green: f64,
    pub avg_queue: f64,
    pub avg_wait: f64,
    /// No green overlapped the window at all.
    pub sparse: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct PhaseSpan {
    start: i64,
    end: i64,
    queue: f64,
    wait: f64,
}

impl From<&PhaseEvent> for PhaseSpan {
    fn from(p: &PhaseEvent) -> Self {
        PhaseSpan {
            start: epoch_seconds(&p.green_start),
            end: epoch_seconds(&p.green_end),
            queue: p.queue_at_green as f64,
            wait: p.max_wait_at_green,
        }
    }
}

/// Signal measures for one movement over `[window_start, window_end)`.
///
/// The green ratio uses green time clipped to the window. Duration, queue
/// and waiting statistics use the phases whose green starts in the window;
/// when none does, durations come from the clipped greens and queue/wait
/// are zero.
pub fn aggregate_phase(
    events: &[PhaseEvent],
    window_start: Timestamp,
    window_end: Timestamp,
) -> PhaseAggregate {
    let spans: Vec<PhaseSpan> = events.iter().map(PhaseSpan::from).collect();
    aggregate_spans(&spans, epoch_seconds(&window_start), epoch_seconds(&window_end))
}

fn aggregate_spans(spans: &[PhaseSpan], ws: i64, we: i64) -> PhaseAggregate {
    let len = (we - ws) as f64;
    let mut clipped = Vec::new();
    let mut starting = Vec::new();
    for s in spans {
        let overlap = (s.end.min(we) - s.start.max(ws)).max(0);
        if overlap > 0 {
            clipped.push(overlap as f64);
        }
        if s.start >= ws && s.start < we {
            starting.push(*s);
        }
    }
    if clipped.is_empty() && starting.is_empty() {
        return PhaseAggregate {
            sparse: true,
            ..PhaseAggregate::default()
        };
    }
    let green_ratio = 100.0 * clipped.iter().sum::<f64>() / len;
    if starting.is_empty() {
        let (avg_green, std_green) = mean_sd(&clipped);
        return PhaseAggregate {
            green_ratio,
            avg_green,
            std_green,
            avg_queue: 0.0,
            avg_wait: 0.0,
            sparse: false,
        };
    }
    let durations: Vec<f64> = starting.iter().map(|s| (s.end - s.start) as f64).collect();
    let (avg_green, std_green) = mean_sd(&durations);
    let n = starting.len() as f64;
    PhaseAggregate {
        green_ratio,
        avg_green,
        std_green,
        avg_queue: starting.iter().map(|s| s.queue).sum::<f64>() / n,
        avg_wait: starting.iter().map(|s| s.wait).sum::<f64>() / n,
        sparse: false,
    }
}

/// Latest weather record at or before `instant`.
pub fn join_weather(instant: Timestamp, records: &[WeatherRecord]) -> Result<&WeatherRecord, FeatureError> {
    records
        .iter()
        .filter(|r| r.timestamp <= instant)
        .max_by_key(|r| r.timestamp)
        .ok_or(FeatureError::MissingWeather)
}

/// The five raw ingest feeds plus the static intersection layout.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Streams {
    pub intersections: Vec<IntersectionConfig>,
    pub volumes: Vec<VolumeRecord>,
    pub phases: Vec<PhaseEvent>,
    pub speeds: Vec<SpeedObservation>,
    pub weather: Vec<WeatherRecord>,
}

struct LaneGroup {
    lanes: usize,
    /// Window start (epoch seconds) → per-lane counts; `u32::MAX` marks a gap.
    windows: HashMap<i64, Vec<u32>>,
}

struct PhaseTrack {
    spans: Vec<PhaseSpan>,
    max_duration: i64,
}

/// Lookup structure over [`Streams`] for fast per-event extraction.
pub struct StreamIndex {
    configs: HashMap<IntersectionId, IntersectionConfig>,
    volumes: HashMap<(IntersectionId, Bearing, Movement), LaneGroup>,
    phases: HashMap<(IntersectionId, Bearing, Movement), PhaseTrack>,
    speeds: HashMap<(IntersectionId, Bearing), Vec<(i64, f64)>>,
    weather: Vec<(i64, WeatherRecord)>,
}

impl StreamIndex {
    pub fn new(streams: &Streams) -> Result<StreamIndex, FeatureError> {
        let mut configs = HashMap::new();
        for c in &streams.intersections {
            c.validate()?;
            configs.insert(c.id, c.clone());
        }
        let mut volumes: HashMap<(IntersectionId, Bearing, Movement), LaneGroup> = HashMap::new();
        for r in &streams.volumes {
            r.validate()?;
            let cfg = configs
                .get(&r.intersection)
                .ok_or(FeatureError::UnknownIntersection(r.intersection))?;
            let approach = cfg.approach(r.bearing).ok_or(DomainError::BearingNotInConfig {
                bearing: r.bearing,
                intersection: r.intersection,
            })?;
            let lanes = match r.movement {
                Movement::Through => approach.through_lanes,
                Movement::Left => approach.left_turn_lanes,
            } as usize;
            if r.lane_index as usize > lanes {
                return Err(DomainError::InvalidRecord(format!(
                    "lane {} exceeds the {lanes} configured {:?} lanes on {} at intersection {}",
                    r.lane_index, r.movement, r.bearing, r.intersection
                ))
                .into());
            }
            let group = volumes
                .entry((r.intersection, r.bearing, r.movement))
                .or_insert_with(|| LaneGroup {
                    lanes,
                    windows: HashMap::new(),
                });
            let slot = group
                .windows
                .entry(epoch_seconds(&r.window_start))
                .or_insert_with(|| vec![u32::MAX; lanes]);
            slot[r.lane_index as usize - 1] = r.count;
        }
        let mut phases: HashMap<(IntersectionId, Bearing, Movement), PhaseTrack> = HashMap::new();
        for p in &streams.phases {
            p.validate()?;
            let span = PhaseSpan::from(p);
            let track = phases
                .entry((p.intersection, p.bearing, p.movement))
                .or_insert_with(|| PhaseTrack {
                    spans: Vec::new(),
                    max_duration: 0,
                });
            track.max_duration = track.max_duration.max(span.end - span.start);
            track.spans.push(span);
        }
        for track in phases.values_mut() {
            track.spans.sort_by_key(|s| s.start);
        }
        let mut speeds: HashMap<(IntersectionId, Bearing), Vec<(i64, f64)>> = HashMap::new();
        for s in &streams.speeds {
            s.validate()?;
            speeds
                .entry((s.intersection, s.bearing))
                .or_default()
                .push((epoch_seconds(&s.timestamp), s.space_mean_speed));
        }
        for v in speeds.values_mut() {
            v.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        }
        let mut weather = Vec::with_capacity(streams.weather.len());
        for w in &streams.weather {
            w.validate()?;
            weather.push((epoch_seconds(&w.timestamp), w.clone()));
        }
        weather.sort_by_key(|w| w.0);
        Ok(StreamIndex {
            configs,
            volumes,
            phases,
            speeds,
            weather,
        })
    }

    pub fn config(&self, id: IntersectionId) -> Option<&IntersectionConfig> {
        self.configs.get(&id)
    }

    pub fn intersection_ids(&self) -> Vec<IntersectionId> {
        let mut ids: Vec<IntersectionId> = self.configs.keys().copied().collect();
        ids.sort();
        ids
    }

    /// Per-lane volumes over `[start, end)`, assuming counts are spread
    /// evenly within each 15-minute window.
    fn lane_volumes(
        &self,
        id: IntersectionId,
        bearing: Bearing,
        movement: Movement,
        start: i64,
        end: i64,
    ) -> Result<Vec<f64>, FeatureError> {
        let Some(group) = self.volumes.get(&(id, bearing, movement)) else {
            let configured = self
                .configs
                .get(&id)
                .and_then(|c| c.approach(bearing))
                .map(|a| match movement {
                    Movement::Through => a.through_lanes,
                    Movement::Left => a.left_turn_lanes,
                })
                .unwrap_or(0);
            if configured == 0 {
                return Ok(Vec::new());
            }
            return Err(FeatureError::MissingVolume {
                bearing,
                movement,
                window: start.div_euclid(VOLUME_WINDOW_SECS) * VOLUME_WINDOW_SECS,
            });
        };
        let mut out = vec![0.0; group.lanes];
        let mut w = start.div_euclid(VOLUME_WINDOW_SECS) * VOLUME_WINDOW_SECS;
        while w < end {
            let overlap = (end.min(w + VOLUME_WINDOW_SECS) - start.max(w)) as f64;
            let counts = group.windows.get(&w).ok_or(FeatureError::MissingVolume {
                bearing,
                movement,
                window: w,
            })?;
            for (lane, &c) in counts.iter().enumerate() {
                if c == u32::MAX {
                    return Err(FeatureError::MissingVolume {
                        bearing,
                        movement,
                        window: w,
                    });
                }
                out[lane] += c as f64 * overlap / VOLUME_WINDOW_SECS as f64;
            }
            w += VOLUME_WINDOW_SECS;
        }
        Ok(out)
    }

    fn phase_aggregate(
        &self,
        id: IntersectionId,
        bearing: Bearing,
        movement: Movement,
        ws: i64,
        we: i64,
    ) -> PhaseAggregate {
        let Some(track) = self.phases.get(&(id, bearing, movement)) else {
            return aggregate_spans(&[], ws, we);
        };
        let lo = track
            .spans
            .partition_point(|s| s.start < ws - track.max_duration);
        let hi = track.spans.partition_point(|s| s.start < we);
        aggregate_spans(&track.spans[lo..hi], ws, we)
    }

    fn speeds_in(&self, id: IntersectionId, bearing: Bearing, ws: i64, we: i64) -> &[(i64, f64)] {
        match self.speeds.get(&(id, bearing)) {
            Some(v) => {
                let lo = v.partition_point(|s| s.0 < ws);
                let hi = v.partition_point(|s| s.0 < we);
                &v[lo..hi]
            }
            None => &[],
        }
    }

    fn weather_at(&self, t: i64) -> Result<&WeatherRecord, FeatureError> {
        let idx = self.weather.partition_point(|w| w.0 <= t);
        if idx == 0 {
            return Err(FeatureError::MissingWeather);
        }
        Ok(&self.weather[idx - 1].1)
    }

    /// Compute only the requested variables, in order.
    pub fn extract_variables(
        &self,
        intersection: IntersectionId,
        instant: Timestamp,
        roles: &ApproachMap,
        variables: &[Variable],
        settings: &OafrSettings,
    ) -> Result<Vec<f64>, FeatureError> {
        if !self.configs.contains_key(&intersection) {
            return Err(FeatureError::UnknownIntersection(intersection));
        }
        let t = epoch_seconds(&instant);
        let mut cache = SliceCache::default();
        let mut out = Vec::with_capacity(variables.len());
        for var in variables {
            let value = match var.measure {
                Measure::WeatherType | Measure::Visibility | Measure::HourlyPrecip => {
                    let w = self.weather_at(t)?;
                    match var.measure {
                        Measure::WeatherType => w.weather_type as f64,
                        Measure::Visibility => w.visibility,
                        _ => w.hourly_precip,
                    }
                }
                Measure::AvgSpeed | Measure::StdSpeed => {
                    let slice = var.slice.expect("speed variables carry a slice");
                    let (avg, sd) = cache.speed(slice, || {
                        let bearing = roles.bearing_of(ApproachRole::A);
                        let (ws, we) = slice.window(t);
                        let obs: Vec<f64> = self
                            .speeds_in(intersection, bearing, ws, we)
                            .iter()
                            .map(|s| s.1)
                            .collect();
                        aggregate_speed(&obs).ok_or(FeatureError::MissingSpeed {
                            bearing,
                            slice: slice.number(),
                        })
                    })?;
                    if var.measure == Measure::AvgSpeed {
                        avg
                    } else {
                        sd
                    }
                }
                Measure::Approach(m) => {
                    let slice = var.slice.expect("approach variables carry a slice");
                    let role = var.role.expect("approach variables carry a role");
                    let bearing = roles.bearing_of(role);
                    let (ws, we) = slice.window(t);
                    match m {
                        ApproachMeasure::VolLt | ApproachMeasure::VolTh | ApproachMeasure::Oafr => {
                            let movement = if m == ApproachMeasure::VolLt {
                                Movement::Left
                            } else {
                                Movement::Through
                            };
                            let lanes = cache.volumes(slice, role, movement, || {
                                self.lane_volumes(intersection, bearing, movement, ws, we)
                            })?;
                            if m == ApproachMeasure::Oafr {
                                compute_oafr(lanes, settings)?
                            } else {
                                lanes.iter().sum()
                            }
                        }
                        _ => {
                            let movement = m.phase_movement().expect("phase measure");
                            let agg = cache.phase(slice, role, movement, || {
                                self.phase_aggregate(intersection, bearing, movement, ws, we)
                            });
                            match m {
                                ApproachMeasure::LtGreenRatio | ApproachMeasure::ThGreenRatio => {
                                    agg.green_ratio
                                }
                                ApproachMeasure::LtAvgGreen | ApproachMeasure::ThAvgGreen => {
                                    agg.avg_green
                                }
                                ApproachMeasure::LtStdGreen | ApproachMeasure::ThStdGreen => {
                                    agg.std_green
                                }
                                ApproachMeasure::LtAvgQueue | ApproachMeasure::ThAvgQueue => {
                                    agg.avg_queue
                                }
                                _ => agg.avg_wait,
                            }
                        }
                    }
                }
            };
            out.push(value);
        }
        Ok(out)
    }
}

#[derive(Default)]
struct SliceCache {
    speed: [Option<(f64, f64)>; 4],
    volumes: HashMap<(TimeSlice, ApproachRole, Movement), Vec<f64>>,
    phases: HashMap<(TimeSlice, ApproachRole, Movement), PhaseAggregate>,
}

impl SliceCache {
    fn speed(
        &mut self,
        slice: TimeSlice,
        compute: impl FnOnce() -> Result<(f64, f64), FeatureError>,
    ) -> Result<(f64, f64), FeatureError> {
        let slot = &mut self.speed[slice as usize];
        if let Some(v) = slot {
            return Ok(*v);
        }
        let v = compute()?;
        *slot = Some(v);
        Ok(v)
    }

    fn volumes(
        &mut self,
        slice: TimeSlice,
        role: ApproachRole,
        movement: Movement,
        compute: impl FnOnce() -> Result<Vec<f64>, FeatureError>,
    ) -> Result<&[f64], FeatureError> {
        let key = (slice, role, movement);
        if !self.volumes.contains_key(&key) {
            let v = compute()?;
            self.volumes.insert(key, v);
        }
        Ok(&self.volumes[&key])
    }

    fn phase(
        &mut self,
        slice: TimeSlice,
        role: ApproachRole,
        movement: Movement,
        compute: impl FnOnce() -> PhaseAggregate,
    ) -> PhaseAggregate {
        *self
            .phases
            .entry((slice, role, movement))
            .or_insert_with(compute)
    }
}

/// Full feature vector for one event: every slice of the layout that its
/// location class carries.
pub fn extract_features(
    event: &EventKey,
    roles: &ApproachMap,
    index: &StreamIndex,
    settings: &OafrSettings,
) -> Result<FeatureVector, FeatureError> {
    let layout = layout_for(event.location_class, &TimeSlice::ALL);
    let values = index.extract_variables(event.intersection, event.instant, roles, &layout, settings)?;
    Ok(layout
        .iter()
        .zip(values)
        .map(|(v, x)| (v.name(), x))
        .collect())
}
