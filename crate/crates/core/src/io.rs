//! CSV readers and writers for the raw feeds, the intersection layout and the
//! wide per-event feature matrix.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    format_timestamp, parse_timestamp, Approach, Bearing, CrashRecord, DomainError, EventKey,
    EventRole, FeatureVector, IntersectionConfig, IntersectionId, LocationClass, Stratum,
};
use crate::features::Streams;

pub const VOLUMES_FILE: &str = "volumes.csv";
pub const PHASES_FILE: &str = "phases.csv";
pub const SPEEDS_FILE: &str = "speeds.csv";
pub const WEATHER_FILE: &str = "weather.csv";
pub const CRASHES_FILE: &str = "crashes.csv";
pub const INTERSECTIONS_FILE: &str = "intersections.csv";

/// Metadata columns that precede the variables in the wide feature CSV.
pub const DATASET_META_COLUMNS: [&str; 6] = [
    "stratum_id",
    "event_id",
    "role",
    "intersection",
    "instant",
    "location_class",
];

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Csv {
        context: String,
        #[source]
        source: csv::Error,
    },
    #[error("{context}: {source}")]
    Domain {
        context: String,
        #[source]
        source: DomainError,
    },
    #[error("{0}")]
    Format(String),
}

fn open(path: &Path) -> Result<File, IoError> {
    File::open(path).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}

fn create(path: &Path) -> Result<File, IoError> {
    File::create(path).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_records_from<T: DeserializeOwned, R: Read>(reader: R, context: &str) -> Result<Vec<T>, IoError> {
    let mut rdr = csv::Reader::from_reader(reader);
    rdr.deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|source| IoError::Csv {
                context: format!("{context} row {}", i + 2),
                source,
            })
        })
        .collect()
}

pub fn write_records_to<T: Serialize, W: Write>(writer: W, records: &[T], context: &str) -> Result<(), IoError> {
    let csv_err = |source| IoError::Csv {
        context: context.to_string(),
        source,
    };
    let mut wtr = csv::Writer::from_writer(writer);
    for r in records {
        wtr.serialize(r).map_err(csv_err)?;
    }
    wtr.flush().map_err(|source| IoError::Csv {
        context: context.to_string(),
        source: source.into(),
    })
}

pub fn read_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    read_records_from(open(path)?, &path.display().to_string())
}

pub fn write_records<T: Serialize>(path: &Path, records: &[T]) -> Result<(), IoError> {
    write_records_to(create(path)?, records, &path.display().to_string())
}

/// Flat row of `intersections.csv`: one line per approach.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ApproachRow {
    intersection: IntersectionId,
    bearing: Bearing,
    is_major: bool,
    through_lanes: u8,
    left_turn_lanes: u8,
    upstream_segment_length: f64,
}

pub fn read_intersections_from<R: Read>(reader: R, context: &str) -> Result<Vec<IntersectionConfig>, IoError> {
    let rows: Vec<ApproachRow> = read_records_from(reader, context)?;
    let mut by_id: BTreeMap<IntersectionId, Vec<Approach>> = BTreeMap::new();
    for r in rows {
        by_id.entry(r.intersection).or_default().push(Approach {
            bearing: r.bearing,
            is_major: r.is_major,
            through_lanes: r.through_lanes,
            left_turn_lanes: r.left_turn_lanes,
            upstream_segment_length: r.upstream_segment_length,
        });
    }
    by_id
        .into_iter()
        .map(|(id, approaches)| {
            let cfg = IntersectionConfig { id, approaches };
            cfg.validate().map_err(|source| IoError::Domain {
                context: context.to_string(),
                source,
            })?;
            Ok(cfg)
        })
        .collect()
}

pub fn write_intersections_to<W: Write>(
    writer: W,
    configs: &[IntersectionConfig],
    context: &str,
) -> Result<(), IoError> {
    let rows: Vec<ApproachRow> = configs
        .iter()
        .flat_map(|c| {
            c.approaches.iter().map(|a| ApproachRow {
                intersection: c.id,
                bearing: a.bearing,
                is_major: a.is_major,
                through_lanes: a.through_lanes,
                left_turn_lanes: a.left_turn_lanes,
                upstream_segment_length: a.upstream_segment_length,
            })
        })
        .collect();
    write_records_to(writer, &rows, context)
}

pub fn read_intersections(path: &Path) -> Result<Vec<IntersectionConfig>, IoError> {
    read_intersections_from(open(path)?, &path.display().to_string())
}

pub fn write_intersections(path: &Path, configs: &[IntersectionConfig]) -> Result<(), IoError> {
    write_intersections_to(create(path)?, configs, &path.display().to_string())
}

/// Load the five stream files from a directory produced by `simulate` or
/// laid out the same way.
pub fn read_streams(dir: &Path) -> Result<Streams, IoError> {
    Ok(Streams {
        intersections: read_intersections(&dir.join(INTERSECTIONS_FILE))?,
        volumes: read_records(&dir.join(VOLUMES_FILE))?,
        phases: read_records(&dir.join(PHASES_FILE))?,
        speeds: read_records(&dir.join(SPEEDS_FILE))?,
        weather: read_records(&dir.join(WEATHER_FILE))?,
    })
}

pub fn write_streams(dir: &Path, streams: &Streams) -> Result<(), IoError> {
    write_intersections(&dir.join(INTERSECTIONS_FILE), &streams.intersections)?;
    write_records(&dir.join(VOLUMES_FILE), &streams.volumes)?;
    write_records(&dir.join(PHASES_FILE), &streams.phases)?;
    write_records(&dir.join(SPEEDS_FILE), &streams.speeds)?;
    write_records(&dir.join(WEATHER_FILE), &streams.weather)
}

pub fn read_crashes(path: &Path) -> Result<Vec<CrashRecord>, IoError> {
    read_records(path)
}

fn event_id(stratum: &Stratum, k: usize) -> String {
    if k == 0 {
        stratum.stratum_id.clone()
    } else {
        format!("{}-c{k}", stratum.stratum_id)
    }
}

/// Write strata as one row per event, crash first within each stratum.
pub fn write_dataset_to<W: Write>(writer: W, strata: &[Stratum]) -> Result<(), IoError> {
    let csv_err = |source| IoError::Csv {
        context: "dataset".into(),
        source,
    };
    let mut wtr = csv::Writer::from_writer(writer);
    let names: Vec<String> = strata
        .first()
        .map(|s| s.crash.names().map(str::to_string).collect())
        .unwrap_or_default();
    let header = DATASET_META_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .chain(names.iter().cloned());
    wtr.write_record(header).map_err(csv_err)?;
    for s in strata {
        for (k, fv) in s.observations().enumerate() {
            if !fv.names().eq(names.iter().map(String::as_str)) {
                return Err(IoError::Format(format!(
                    "stratum {} does not share the dataset's variable set",
                    s.stratum_id
                )));
            }
            let key = s.keys.get(k);
            let role = if k == 0 { EventRole::Crash } else { EventRole::Control };
            let mut row = vec![
                s.stratum_id.clone(),
                event_id(s, k),
                role.as_str().to_string(),
                key.map(|e| e.intersection.to_string()).unwrap_or_default(),
                key.map(|e| format_timestamp(&e.instant)).unwrap_or_default(),
                key.map(|e| e.location_class.as_str().to_string())
                    .unwrap_or_default(),
            ];
            row.extend(fv.iter().map(|(_, x)| x.to_string()));
            wtr.write_record(&row).map_err(csv_err)?;
        }
    }
    wtr.flush().map_err(|source| IoError::Csv {
        context: "dataset".into(),
        source: source.into(),
    })
}

pub fn write_dataset(path: &Path, strata: &[Stratum]) -> Result<(), IoError> {
    write_dataset_to(create(path)?, strata)
}

/// Read a wide feature CSV back into strata. Rows of one stratum must be
/// contiguous with the crash row first.
pub fn read_dataset_from<R: Read>(reader: R, context: &str) -> Result<Vec<Stratum>, IoError> {
    let csv_err = |i: usize| {
        let context = format!("{context} row {i}");
        move |source| IoError::Csv { context, source }
    };
    let fmt_err = |i: usize, msg: String| IoError::Format(format!("{context} row {i}: {msg}"));
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers().map_err(csv_err(1))?.clone();
    if headers.len() < DATASET_META_COLUMNS.len()
        || headers.iter().zip(DATASET_META_COLUMNS).any(|(h, m)| h != m)
    {
        return Err(IoError::Format(format!(
            "{context}: header must start with {}",
            DATASET_META_COLUMNS.join(",")
        )));
    }
    let names: Vec<String> = headers
        .iter()
        .skip(DATASET_META_COLUMNS.len())
        .map(str::to_string)
        .collect();
    let mut strata: Vec<Stratum> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(csv_err(line))?;
        let domain = |source| IoError::Domain {
            context: format!("{context} row {line}"),
            source,
        };
        let stratum_id = rec[0].to_string();
        let role: EventRole = rec[2].parse().map_err(domain)?;
        let key = if rec[3].is_empty() {
            None
        } else {
            let intersection = IntersectionId(rec[3].parse().map_err(|_| {
                fmt_err(line, format!("bad intersection `{}`", &rec[3]))
            })?);
            let instant = parse_timestamp(&rec[4]).map_err(domain)?;
            let location_class: LocationClass = rec[5].parse().map_err(domain)?;
            Some(EventKey {
                intersection,
                instant,
                location_class,
                role,
                stratum_id: stratum_id.clone(),
            })
        };
        let mut fv = FeatureVector::new();
        for (name, raw) in names.iter().zip(rec.iter().skip(DATASET_META_COLUMNS.len())) {
            let x: f64 = raw
                .parse()
                .map_err(|_| fmt_err(line, format!("`{raw}` is not a number for {name}")))?;
            fv.insert(name.clone(), x);
        }
        match role {
            EventRole::Crash => strata.push(Stratum {
                stratum_id,
                crash: fv,
                controls: Vec::new(),
                keys: key.into_iter().collect(),
            }),
            EventRole::Control => {
                let s = strata
                    .last_mut()
                    .filter(|s| s.stratum_id == stratum_id)
                    .ok_or_else(|| fmt_err(line, format!("control of {stratum_id} precedes its crash row")))?;
                s.controls.push(fv);
                if let Some(k) = key {
                    s.keys.push(k);
                }
            }
        }
    }
    crate::domain::validate_strata(&strata).map_err(|source| IoError::Domain {
        context: context.to_string(),
        source,
    })?;
    Ok(strata)
}

pub fn read_dataset(path: &Path) -> Result<Vec<Stratum>, IoError> {
    read_dataset_from(open(path)?, &path.display().to_string())
}
