//! Synthetic detector feeds: lane volumes, signal phases, Bluetooth speeds
//! and weather for a set of generated intersections.

use chrono::Datelike;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson, StandardNormal};
use rayon::prelude::*;

use super::scenario::{CountRange, ScenarioConfig, ScenarioError};
use crate::domain::{
    epoch_seconds, from_epoch_seconds, Approach, Bearing, IntersectionConfig, IntersectionId, Movement, PhaseEvent,
    SpeedObservation, VolumeRecord, WeatherRecord,
};
use crate::features::Streams;
use crate::rng::stream_rng;

const WINDOW: i64 = 900;
const DAY: i64 = 86_400;

/// Epoch seconds of the first instant of the study period.
pub fn period_start(config: &ScenarioConfig) -> i64 {
    epoch_seconds(&config.start_date.and_hms_opt(0, 0, 0).expect("midnight"))
}

pub fn period_end(config: &ScenarioConfig) -> i64 {
    period_start(config) + config.days as i64 * DAY
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> u32 {
    if mean <= 0.0 {
        return 0;
    }
    let d = Poisson::new(mean).expect("positive mean");
    d.sample(rng) as u32
}

fn exp_draw(rng: &mut ChaCha8Rng, mean: f64) -> f64 {
    Exp::new(1.0 / mean).expect("positive mean").sample(rng)
}

fn draw_count(rng: &mut ChaCha8Rng, r: CountRange) -> u8 {
    rng.random_range(r.min..=r.max)
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

/// Intersection layouts. The major street runs north-south or east-west.
pub fn generate_intersections(config: &ScenarioConfig) -> Vec<IntersectionConfig> {
    (1..=config.n_intersections)
        .map(|id| {
            let mut rng = stream_rng(config.seed, &["layout", &id.to_string()]);
            let ns_major = rng.random_bool(0.5);
            let l = &config.lanes;
            let approaches = Bearing::ALL
                .iter()
                .map(|&bearing| {
                    let is_major = matches!(bearing, Bearing::Northbound | Bearing::Southbound) == ns_major;
                    let (th, lt) = if is_major {
                        (l.major_through, l.major_left)
                    } else {
                        (l.minor_through, l.minor_left)
                    };
                    Approach {
                        bearing,
                        is_major,
                        through_lanes: draw_count(&mut rng, th),
                        left_turn_lanes: draw_count(&mut rng, lt),
                        upstream_segment_length: rng.random_range(l.segment_feet.0..=l.segment_feet.1).round(),
                    }
                })
                .collect();
            IntersectionConfig {
                id: IntersectionId(id),
                approaches,
            }
        })
        .collect()
}

/// Adverse-weather spells as `[start, end)` epoch-second spans, plus the
/// sparse record stream: a record is written only when conditions change.
pub fn generate_weather(config: &ScenarioConfig) -> (Vec<(i64, i64)>, Vec<WeatherRecord>) {
    let w = &config.weather;
    let mut rng = stream_rng(config.seed, &["weather"]);
    let (start, end) = (period_start(config), period_end(config));
    let clear = |t: i64| WeatherRecord {
        timestamp: from_epoch_seconds(t),
        weather_type: 0,
        visibility: 10.0,
        hourly_precip: 0.0,
    };
    let mut spells = Vec::new();
    let mut records = vec![clear(start)];
    let mut t = start;
    loop {
        if w.adverse_spells_per_day <= 0.0 {
            break;
        }
        t += (exp_draw(&mut rng, DAY as f64 / w.adverse_spells_per_day)).round() as i64;
        if t >= end {
            break;
        }
        let spell_end = (t + (exp_draw(&mut rng, w.mean_spell_hours * 3600.0)).round().max(600.0) as i64).min(end);
        spells.push((t, spell_end));
        let step = (w.update_hours * 3600.0).round().max(60.0) as i64;
        let mut u = t;
        while u < spell_end {
            let precip = round1(if w.mean_precip > 0.0 { exp_draw(&mut rng, w.mean_precip) } else { 0.0 });
            let visibility = round1((9.0 - 2.0 * precip - rng.random_range(0.0..3.0)).clamp(0.5, 9.5));
            records.push(WeatherRecord {
                timestamp: from_epoch_seconds(u),
                weather_type: 1,
                visibility,
                hourly_precip: precip,
            });
            u += step;
        }
        if spell_end < end {
            records.push(clear(spell_end));
        }
        t = spell_end;
    }
    (spells, records)
}

fn is_adverse(spells: &[(i64, i64)], t: i64) -> bool {
    let i = spells.partition_point(|s| s.1 <= t);
    i < spells.len() && spells[i].0 <= t
}

/// Lane counts of one movement on one approach, per 15-minute window.
struct MovementCounts {
    bearing: Bearing,
    movement: Movement,
    lanes: usize,
    /// `[window][lane]`, flattened.
    counts: Vec<u32>,
}

impl MovementCounts {
    fn total(&self, window: usize) -> u32 {
        self.counts[window * self.lanes..(window + 1) * self.lanes].iter().sum()
    }
}

fn generate_volumes(config: &ScenarioConfig, ic: &IntersectionConfig) -> Vec<MovementCounts> {
    let d = &config.demand;
    let id = ic.id.0.to_string();
    let mut day_rng = stream_rng(config.seed, &["day-demand", &id]);
    let day_mult: Vec<f64> = (0..config.days).map(|_| (d.day_noise_sd * normal(&mut day_rng)).exp()).collect();
    let n_windows = config.days as usize * 96;
    let weekend: Vec<bool> = (0..config.days)
        .map(|k| (config.start_date + chrono::Days::new(k as u64)).weekday().number_from_monday() >= 6)
        .collect();
    let mut out = Vec::new();
    for a in &ic.approaches {
        let mut rng = stream_rng(config.seed, &["volumes", &id, a.bearing.code()]);
        let direction = rng.random_range(0.85..1.15) * if a.is_major { 1.0 } else { d.minor_factor };
        let groups = [
            (Movement::Through, a.through_lanes as usize, 1.0),
            (Movement::Left, a.left_turn_lanes as usize, d.left_factor),
        ];
        let mut movements: Vec<MovementCounts> = groups
            .iter()
            .filter(|g| g.1 > 0)
            .map(|&(movement, lanes, _)| MovementCounts {
                bearing: a.bearing,
                movement,
                lanes,
                counts: Vec::with_capacity(n_windows * lanes),
            })
            .collect();
        // Fixed per-lane bias: curb lanes carry less than inner lanes.
        let biases: Vec<Vec<f64>> = groups
            .iter()
            .filter(|g| g.1 > 0)
            .map(|g| (0..g.1).map(|_| rng.random_range(0.7..1.3)).collect())
            .collect();
        let factors: Vec<f64> = groups.iter().filter(|g| g.1 > 0).map(|g| g.2).collect();
        for w in 0..n_windows {
            let day = w / 96;
            let hour = (w % 96) / 4;
            let base = d.hourly_profile[hour] * day_mult[day] * if weekend[day] { d.weekend_factor } else { 1.0 } / 4.0;
            let window_mult = (d.window_noise_sd * normal(&mut rng)).exp();
            for (g, mc) in movements.iter_mut().enumerate() {
                for bias in &biases[g] {
                    let lane_mult = (d.lane_noise_sd * normal(&mut rng)).exp();
                    let mean = base * direction * factors[g] * window_mult * bias * lane_mult;
                    mc.counts.push(poisson(&mut rng, mean));
                }
            }
        }
        out.extend(movements);
    }
    out
}

fn volume_records(config: &ScenarioConfig, ic: &IntersectionConfig, counts: &[MovementCounts]) -> Vec<VolumeRecord> {
    let start = period_start(config);
    let n_windows = config.days as usize * 96;
    let mut out = Vec::new();
    for w in 0..n_windows {
        let window_start = from_epoch_seconds(start + w as i64 * WINDOW);
        for mc in counts {
            for lane in 0..mc.lanes {
                out.push(VolumeRecord {
                    intersection: ic.id,
                    bearing: mc.bearing,
                    lane_index: lane as u8 + 1,
                    movement: mc.movement,
                    window_start,
                    count: mc.counts[w * mc.lanes + lane],
                });
            }
        }
    }
    out
}

/// Demand-proportional two-street, four-phase controller. Opposing
/// approaches share each phase: major left, major through, minor left,
/// minor through.
fn generate_phases(config: &ScenarioConfig, ic: &IntersectionConfig, counts: &[MovementCounts]) -> Vec<PhaseEvent> {
    let s = &config.signal;
    let mut rng = stream_rng(config.seed, &["phases", &ic.id.0.to_string()]);
    let (start, end) = (period_start(config), period_end(config));
    let major: Vec<Bearing> = ic.major_bearings();
    let minor: Vec<Bearing> = Bearing::ALL.iter().copied().filter(|b| !major.contains(b)).collect();
    let find = |b: Bearing, m: Movement| counts.iter().position(|c| c.bearing == b && c.movement == m);
    let phases: Vec<Vec<usize>> = [
        (&major, Movement::Left),
        (&major, Movement::Through),
        (&minor, Movement::Left),
        (&minor, Movement::Through),
    ]
    .iter()
    .map(|(bs, m)| bs.iter().filter_map(|&b| find(b, *m)).collect::<Vec<usize>>())
    .filter(|p: &Vec<usize>| !p.is_empty())
    .collect();
    let mut last_end: Vec<Option<i64>> = vec![None; counts.len()];
    let mut out = Vec::new();
    let mut t = start;
    while t < end {
        let w = ((t - start) / WINDOW) as usize;
        // Critical flow ratio per phase: the busiest lane group it serves.
        let ratios: Vec<f64> = phases
            .iter()
            .map(|p| {
                p.iter()
                    .map(|&i| counts[i].total(w) as f64 * 4.0 / counts[i].lanes as f64 / s.saturation_flow)
                    .fold(0.0, f64::max)
                    .max(0.02)
            })
            .collect();
        let y: f64 = ratios.iter().sum();
        let jitter = |rng: &mut ChaCha8Rng| 1.0 + s.jitter * rng.random_range(-1.0..1.0);
        let cycle = (s.base_cycle_secs * (0.7 + 1.2 * y.min(1.0)) * jitter(&mut rng)).clamp(s.min_cycle_secs, s.max_cycle_secs);
        let n = phases.len() as f64;
        let spare = (cycle - n * (s.clearance_secs + s.min_green_secs)).max(0.0);
        let weights: Vec<f64> = ratios.iter().map(|r| r * jitter(&mut rng)).collect();
        let total: f64 = weights.iter().sum();
        let mut cursor = t;
        for (p, wgt) in phases.iter().zip(&weights) {
            let green = (s.min_green_secs + spare * wgt / total).round().max(1.0) as i64;
            let (gs, ge) = (cursor, cursor + green);
            for &i in p {
                let mc = &counts[i];
                let red = match last_end[i] {
                    Some(e) => (gs - e) as f64,
                    None => cycle - green as f64,
                };
                let rate = mc.total(w) as f64 / WINDOW as f64;
                let queue = poisson(&mut rng, rate * red);
                let wait = if queue > 0 {
                    round1(red * rng.random::<f64>().powf(1.0 / queue as f64))
                } else {
                    0.0
                };
                out.push(PhaseEvent {
                    intersection: ic.id,
                    bearing: mc.bearing,
                    movement: mc.movement,
                    green_start: from_epoch_seconds(gs),
                    green_end: from_epoch_seconds(ge),
                    queue_at_green: queue,
                    max_wait_at_green: wait,
                });
                last_end[i] = Some(ge);
            }
            cursor = ge + s.clearance_secs.round() as i64;
        }
        t = cursor;
    }
    out
}

/// Speed dips (incidents, queues spilling back) as `(start, end, depth)`.
fn generate_dips(config: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Vec<(i64, i64, f64)> {
    let v = &config.speed;
    let (start, end) = (period_start(config), period_end(config));
    let mut out = Vec::new();
    if v.dip_rate_per_day <= 0.0 {
        return out;
    }
    let mut t = start;
    loop {
        t += exp_draw(rng, DAY as f64 / v.dip_rate_per_day).round() as i64;
        if t >= end {
            break;
        }
        let len = (exp_draw(rng, v.dip_mean_minutes * 60.0)).round() as i64;
        out.push((t, t + len, v.dip_depth * rng.random_range(0.5..1.5)));
    }
    out
}

fn generate_speeds(
    config: &ScenarioConfig,
    ic: &IntersectionConfig,
    counts: &[MovementCounts],
    spells: &[(i64, i64)],
) -> Vec<SpeedObservation> {
    let v = &config.speed;
    let start = period_start(config);
    let n_windows = config.days as usize * 96;
    let mut out = Vec::new();
    for bearing in ic.major_bearings() {
        let mut rng = stream_rng(config.seed, &["speeds", &ic.id.0.to_string(), bearing.code()]);
        let free_flow = (v.free_flow_mean + v.free_flow_sd * normal(&mut rng)).max(15.0);
        let dips = generate_dips(config, &mut rng);
        let Some(mc) = counts
            .iter()
            .find(|c| c.bearing == bearing && c.movement == Movement::Through)
        else {
            continue;
        };
        let capacity = config.signal.saturation_flow * 0.45;
        let mut dip_idx = 0;
        for w in 0..n_windows {
            let ws = start + w as i64 * WINDOW;
            let hourly = mc.total(w) as f64 * 4.0;
            let vc = (hourly / mc.lanes as f64 / capacity).min(1.5);
            let rate = (v.detection_share * hourly).max(v.min_detections_per_hour);
            let n = poisson(&mut rng, rate / 4.0);
            let mut times: Vec<i64> = (0..n).map(|_| ws + rng.random_range(0..WINDOW)).collect();
            times.sort_unstable();
            for t in times {
                while dip_idx < dips.len() && dips[dip_idx].1 <= t {
                    dip_idx += 1;
                }
                let dip: f64 = dips[dip_idx..]
                    .iter()
                    .take_while(|d| d.0 <= t)
                    .filter(|d| d.1 > t)
                    .map(|d| d.2)
                    .sum();
                let mut mean = free_flow - v.congestion_drop * vc * vc - dip;
                if is_adverse(spells, t) {
                    mean *= 1.0 - v.adverse_reduction;
                }
                let speed = round1((mean + v.vehicle_sd * normal(&mut rng)).max(3.0));
                out.push(SpeedObservation {
                    intersection: ic.id,
                    bearing,
                    timestamp: from_epoch_seconds(t),
                    space_mean_speed: speed,
                });
            }
        }
    }
    out
}

struct IntersectionStreams {
    volumes: Vec<VolumeRecord>,
    phases: Vec<PhaseEvent>,
    speeds: Vec<SpeedObservation>,
}

/// All five feeds. Each intersection draws from its own seeded streams, so
/// the output does not depend on the number of threads.
pub fn generate_streams(config: &ScenarioConfig) -> Result<Streams, ScenarioError> {
    config.validate()?;
    let intersections = generate_intersections(config);
    let (spells, weather) = generate_weather(config);
    let per: Vec<IntersectionStreams> = intersections
        .par_iter()
        .map(|ic| {
            let counts = generate_volumes(config, ic);
            IntersectionStreams {
                volumes: volume_records(config, ic, &counts),
                phases: generate_phases(config, ic, &counts),
                speeds: generate_speeds(config, ic, &counts, &spells),
            }
        })
        .collect();
    let mut streams = Streams {
        intersections,
        weather,
        ..Streams::default()
    };
    for s in per {
        streams.volumes.extend(s.volumes);
        streams.phases.extend(s.phases);
        streams.speeds.extend(s.speeds);
    }
    Ok(streams)
}
