use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use sigrisk_core::domain::{CrashRecord, LocationClass, Stratum, TimeSlice, Variable};
use sigrisk_core::features::{OafrSettings, StreamIndex, Streams};
use sigrisk_core::inference::{fit_bayes, Design, FitOptions, FittedModel, McmcSettings};
use sigrisk_core::io::{
    read_crashes, read_dataset, read_intersections, read_records, read_streams, write_dataset_to,
    write_intersections_to, write_records_to, CRASHES_FILE, INTERSECTIONS_FILE, PHASES_FILE, SPEEDS_FILE,
    VOLUMES_FILE, WEATHER_FILE,
};
use sigrisk_core::matching::{
    audit_dataset, build_dataset, filter_crashes, CrashLog, MatchingAudit, MatchingSettings, StudyPeriod,
};
use sigrisk_core::risk::{
    describe, load_paper_model, model_coefficients, null_auc_sd, roc_auc, score_strata, scores_auc, RiskScore,
};
use sigrisk_core::screening::{dataset_columns, screen as run_screen, ScreeningSettings};
use sigrisk_core::simgen::inject::VariableMoments;
use sigrisk_core::simgen::{
    generate_streams, inject_crashes, recovery_experiment, RecoverySettings, ScenarioConfig,
};

use crate::error::{CliError, Result};
use crate::output::{Outputs, Run};
use crate::{
    EvaluateArgs, FitArgs, MatchArgs, PrepareArgs, RecoverArgs, ReportArgs, ScoreArgs, ScreenArgs, SimulateArgs,
};

pub const PREPARED_FILE: &str = "prepared_crashes.csv";
pub const DROPS_FILE: &str = "drops.csv";
pub const WITHIN_FILE: &str = "within.csv";
pub const ENTRANCE_FILE: &str = "entrance.csv";
pub const MATCH_DROPS_FILE: &str = "match_drops.csv";
pub const AUDIT_FILE: &str = "audit.json";

fn csv_bytes<T: Serialize>(records: &[T], context: &str) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_records_to(&mut buf, records, context)?;
    Ok(buf)
}

fn dataset_bytes(strata: &[Stratum]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_dataset_to(&mut buf, strata)?;
    Ok(buf)
}

fn file_name(path: &Path) -> Result<String> {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .ok_or_else(|| CliError::bad_input(format!("{} is not a file path", path.display())))
}

/// `report.csv` + `retained.txt` → `report_retained.txt`.
fn sibling(path: &Path, suffix: &str) -> Result<String> {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .ok_or_else(|| CliError::bad_input(format!("{} is not a file path", path.display())))?;
    Ok(format!("{stem}_{suffix}"))
}

fn load_scenario(path: &Path) -> Result<ScenarioConfig> {
    let bytes = fs::read(path).map_err(|e| CliError::bad_input(format!("{}: {e}", path.display())))?;
    let config: ScenarioConfig =
        serde_json::from_slice(&bytes).map_err(|e| CliError::bad_input(format!("{}: {e}", path.display())))?;
    config.validate()?;
    Ok(config)
}

fn load_dataset(path: &Path, run: &mut Run) -> Result<Vec<Stratum>> {
    run.input(path)?;
    Ok(read_dataset(path)?)
}

fn parse_slice(k: Option<u8>) -> Result<Option<TimeSlice>> {
    k.map(|k| {
        TimeSlice::from_number(k).ok_or_else(|| CliError::bad_input(format!("--slice must be 1-4, got {k}")))
    })
    .transpose()
}

/// Columns a slice model may use: that slice's variables and the
/// slice-free ones.
fn in_slice(name: &str, slice: TimeSlice) -> bool {
    match Variable::parse(name) {
        Ok(v) => v.slice.is_none_or(|s| s == slice),
        Err(_) => false,
    }
}

#[derive(Serialize)]
struct InjectionSummary<'a> {
    candidates: usize,
    expected_crashes: f64,
    model_crashes: usize,
    decoys: usize,
    moments: &'a [VariableMoments],
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let mut run = Run::new("simulate");
    run.config(&a.scenario)?;
    let config = load_scenario(&a.scenario)?;
    run.seed("scenario", config.seed);
    let streams = generate_streams(&config)?;
    let injection = inject_crashes(&streams, &config)?;
    let mut out = Outputs::new(&a.out)?;
    let mut buf = Vec::new();
    write_intersections_to(&mut buf, &streams.intersections, INTERSECTIONS_FILE)?;
    out.stage(INTERSECTIONS_FILE, &buf)?;
    out.stage(VOLUMES_FILE, &csv_bytes(&streams.volumes, VOLUMES_FILE)?)?;
    out.stage(PHASES_FILE, &csv_bytes(&streams.phases, PHASES_FILE)?)?;
    out.stage(SPEEDS_FILE, &csv_bytes(&streams.speeds, SPEEDS_FILE)?)?;
    out.stage(WEATHER_FILE, &csv_bytes(&streams.weather, WEATHER_FILE)?)?;
    out.stage(CRASHES_FILE, &csv_bytes(&injection.crashes, CRASHES_FILE)?)?;
    out.stage_json(
        "injection.json",
        &InjectionSummary {
            candidates: injection.candidates,
            expected_crashes: injection.expected,
            model_crashes: injection.model_crashes,
            decoys: injection.decoys,
            moments: &injection.moments,
        },
    )?;
    out.commit(run)
}

pub fn prepare(a: &PrepareArgs) -> Result<()> {
    let mut run = Run::new("prepare");
    let ipath = a.streams.join(INTERSECTIONS_FILE);
    let cpath = a.crashes.clone().unwrap_or_else(|| a.streams.join(CRASHES_FILE));
    run.input(&ipath)?;
    run.input(&cpath)?;
    let configs = read_intersections(&ipath)?;
    let crashes = read_crashes(&cpath)?;
    let (kept, dropped) = filter_crashes(&crashes, &configs);
    log::info!("{} crashes kept, {} dropped", kept.len(), dropped.len());
    let mut out = Outputs::new(&a.out)?;
    out.stage(PREPARED_FILE, &csv_bytes(&kept, PREPARED_FILE)?)?;
    out.stage(DROPS_FILE, &csv_bytes(&dropped, DROPS_FILE)?)?;
    out.commit(run)
}

fn stream_inputs(dir: &Path, run: &mut Run) -> Result<Streams> {
    for f in [INTERSECTIONS_FILE, VOLUMES_FILE, PHASES_FILE, SPEEDS_FILE, WEATHER_FILE] {
        run.input(&dir.join(f))?;
    }
    Ok(read_streams(dir)?)
}

#[derive(Serialize)]
struct AuditReport {
    within: MatchingAudit,
    entrance: MatchingAudit,
    clean: bool,
}

pub fn match_controls(a: &MatchArgs) -> Result<()> {
    let mut run = Run::new("match");
    run.seed("match", a.seed);
    let streams = stream_inputs(&a.streams, &mut run)?;
    run.input(&a.crashes)?;
    let crashes = read_crashes(&a.crashes)?;
    let log_path: PathBuf = match &a.crash_log {
        Some(p) => p.clone(),
        None if a.streams.join(CRASHES_FILE).exists() => a.streams.join(CRASHES_FILE),
        None => {
            log::warn!("no full crash log found; the exclusion window uses the eligible crashes only");
            a.crashes.clone()
        }
    };
    run.input(&log_path)?;
    let full_log: Vec<CrashRecord> = read_crashes(&log_path)?;
    let oafr = match &a.oafr {
        Some(p) => {
            run.config(p)?;
            let bytes = fs::read(p).map_err(|e| CliError::bad_input(format!("{}: {e}", p.display())))?;
            let s: OafrSettings = serde_json::from_slice(&bytes)?;
            s.validate()?;
            s
        }
        None => OafrSettings::default(),
    };
    let settings = MatchingSettings {
        m: a.m,
        exclusion_window_hours: a.exclusion_hours,
        candidate_weeks: a.candidate_weeks,
        rng_seed: a.seed,
    };
    settings.validate()?;
    let period = StudyPeriod::from_streams(&streams).ok_or_else(|| CliError::bad_input("the volume feed is empty"))?;
    let index = StreamIndex::new(&streams)?;
    let build = build_dataset(&crashes, &CrashLog::new(&full_log), &index, &period, &settings, &oafr)?;
    let strata_of = |class: LocationClass| -> &[Stratum] {
        build
            .datasets
            .iter()
            .find(|d| d.location_class == class)
            .map(|d| d.strata.as_slice())
            .unwrap_or(&[])
    };
    let within = strata_of(LocationClass::Within);
    let entrance = strata_of(LocationClass::Entrance);
    let audit = AuditReport {
        within: audit_dataset(within, &full_log, &settings),
        entrance: audit_dataset(entrance, &full_log, &settings),
        clean: false,
    };
    let audit = AuditReport {
        clean: audit.within.is_clean() && audit.entrance.is_clean(),
        ..audit
    };
    log::info!(
        "{} within and {} entrance strata, {} crashes dropped",
        within.len(),
        entrance.len(),
        build.drops.len()
    );
    let mut out = Outputs::new(&a.out)?;
    out.stage(WITHIN_FILE, &dataset_bytes(within)?)?;
    out.stage(ENTRANCE_FILE, &dataset_bytes(entrance)?)?;
    out.stage(MATCH_DROPS_FILE, &csv_bytes(&build.drops, MATCH_DROPS_FILE)?)?;
    out.stage_json(AUDIT_FILE, &audit)?;
    out.commit(run)
}

pub fn screen(a: &ScreenArgs) -> Result<()> {
    let mut run = Run::new("screen");
    let strata = load_dataset(&a.data, &mut run)?;
    if strata.is_empty() {
        return Err(CliError::bad_input(format!("{} has no strata", a.data.display())));
    }
    let slice = parse_slice(a.slice)?;
    let columns: Vec<(String, Vec<f64>)> = dataset_columns(&strata)
        .into_iter()
        .filter(|(n, _)| slice.is_none_or(|s| in_slice(n, s)))
        .collect();
    let settings = ScreeningSettings {
        r_threshold: a.r,
        mic_threshold: a.mic,
        cross_slice: !a.no_cross_slice,
        ..ScreeningSettings::default()
    };
    let report = run_screen(&columns, &settings)?;
    let mut out = Outputs::for_file(&a.out)?;
    out.stage(&file_name(&a.out)?, &csv_bytes(&report.pairs, "screening report")?)?;
    let mut retained = report.retained.join("\n");
    retained.push('\n');
    out.stage(&sibling(&a.out, "retained.txt")?, retained.as_bytes())?;
    out.stage(&sibling(&a.out, "dropped.csv")?, &csv_bytes(&report.dropped, "dropped variables")?)?;
    out.commit(run)
}

/// Resolve requested names against the dataset columns; with a slice, a
/// name without a window suffix gets that slice's suffix.
fn resolve_variables(requested: &[String], columns: &[String], slice: Option<TimeSlice>) -> Result<Vec<String>> {
    let mut names = Vec::with_capacity(requested.len());
    for r in requested {
        let r = r.trim();
        if r.is_empty() {
            continue;
        }
        let resolved = if columns.iter().any(|c| c == r) {
            r.to_string()
        } else if let Some(s) = slice.map(|s| format!("{r}_{}", s.suffix())).filter(|n| columns.contains(n)) {
            s
        } else {
            return Err(CliError::bad_input(format!("variable {r} is not in the dataset")));
        };
        if let Some(s) = slice {
            if !in_slice(&resolved, s) {
                return Err(CliError::bad_input(format!(
                    "variable {resolved} is outside slice {}",
                    s.number()
                )));
            }
        }
        if names.contains(&resolved) {
            return Err(CliError::bad_input(format!("variable {resolved} is listed twice")));
        }
        names.push(resolved);
    }
    Ok(names)
}

pub fn fit(a: &FitArgs, strict: bool) -> Result<()> {
    let mut run = Run::new("fit");
    run.seed("mcmc", a.seed);
    let strata = load_dataset(&a.data, &mut run)?;
    let first = strata
        .first()
        .ok_or_else(|| CliError::bad_input(format!("{} has no strata", a.data.display())))?;
    let columns: Vec<String> = first.crash.names().map(str::to_string).collect();
    let slice = parse_slice(a.slice)?;
    let mut requested = a.vars.clone();
    if let Some(p) = &a.vars_file {
        run.config(p)?;
        let text = fs::read_to_string(p).map_err(|e| CliError::bad_input(format!("{}: {e}", p.display())))?;
        requested.extend(text.lines().map(str::to_string));
    }
    let names = if requested.is_empty() {
        columns
            .iter()
            .filter(|n| slice.is_none_or(|s| in_slice(n, s)))
            .cloned()
            .collect()
    } else {
        resolve_variables(&requested, &columns, slice)?
    };
    if names.is_empty() {
        return Err(CliError::bad_input("no variables to fit"));
    }
    let design = Design::from_strata(&strata, &names)?;
    let settings = McmcSettings {
        chains: a.chains,
        iterations: a.iters,
        burn_in: a.burn,
        prior_variance: a.prior_variance,
        seed: a.seed,
        ..McmcSettings::default()
    };
    settings.validate()?;
    let options = FitOptions {
        standardize: a.standardize,
        backward_elimination: a.backward,
    };
    let (mut model, _) = fit_bayes(&a.name, &design, &settings, &options)?;
    model.location_class = first.keys.first().map(|k| k.location_class);
    model.slice = slice.map(TimeSlice::number);
    model.auc = scores_auc(&score_strata(&model_coefficients(&model), &strata)?).ok();
    for w in &model.warnings {
        log::warn!("{w}");
    }
    if strict && !model.warnings.is_empty() {
        return Err(CliError::non_convergence(model.warnings.join("; ")));
    }
    let mut out = Outputs::for_file(&a.out)?;
    out.stage_json(&file_name(&a.out)?, &model)?;
    out.commit(run)
}

pub fn score(a: &ScoreArgs) -> Result<()> {
    let mut run = Run::new("score");
    let model: FittedModel = match (&a.model, &a.paper_model) {
        (Some(p), None) => {
            run.input(p)?;
            let bytes = fs::read(p).map_err(|e| CliError::bad_input(format!("{}: {e}", p.display())))?;
            serde_json::from_slice(&bytes).map_err(|e| CliError::bad_input(format!("{}: {e}", p.display())))?
        }
        (None, Some(name)) => load_paper_model(name)?,
        _ => return Err(CliError::bad_input("exactly one of --model and --paper-model is needed")),
    };
    let strata = load_dataset(&a.data, &mut run)?;
    if let (Some(want), Some(got)) = (
        model.location_class,
        strata.first().and_then(|s| s.keys.first()).map(|k| k.location_class),
    ) {
        if want != got {
            log::warn!("model {} is for {} crashes, data are {}", model.name, want.as_str(), got.as_str());
        }
    }
    let scores = score_strata(&model_coefficients(&model), &strata)?;
    let mut out = Outputs::for_file(&a.out)?;
    out.stage(&file_name(&a.out)?, &csv_bytes(&scores, "scores")?)?;
    out.commit(run)
}

#[derive(Serialize)]
struct Evaluation {
    auc: f64,
    crashes: usize,
    controls: usize,
    null_auc_sd: f64,
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let mut run = Run::new("evaluate");
    run.input(&a.scores)?;
    let scores: Vec<RiskScore> = read_records(&a.scores)?;
    let values: Vec<f64> = scores.iter().map(|s| s.odds_ratio).collect();
    let labels: Vec<bool> = scores.iter().map(|s| s.label == 1).collect();
    let roc = roc_auc(&values, &labels)?;
    let crashes = labels.iter().filter(|&&l| l).count();
    let summary = Evaluation {
        auc: roc.auc,
        crashes,
        controls: labels.len() - crashes,
        null_auc_sd: null_auc_sd(crashes, labels.len() - crashes),
    };
    println!("auc={}", roc.auc);
    let mut out = Outputs::for_file(&a.out)?;
    out.stage(&file_name(&a.out)?, &csv_bytes(&roc.points, "roc")?)?;
    out.stage_json(&sibling(&a.out, "summary.json")?, &summary)?;
    out.commit(run)
}

pub fn report(a: &ReportArgs) -> Result<()> {
    let mut run = Run::new("report");
    let strata = load_dataset(&a.data, &mut run)?;
    let rows = describe(&strata)?;
    let mut out = Outputs::for_file(&a.out)?;
    out.stage(&file_name(&a.out)?, &csv_bytes(&rows, "descriptive statistics")?)?;
    out.commit(run)
}

#[derive(Serialize)]
struct ReplicationRow {
    replication: usize,
    seed: u64,
    expected_crashes: f64,
    model_crashes: usize,
    decoys: usize,
    strata: usize,
    discarded: Option<String>,
    retained: String,
    max_r_hat: Option<f64>,
    auc_in_sample: Option<f64>,
    auc_held_out: Option<f64>,
    null_auc_sd: Option<f64>,
}

#[derive(Serialize)]
struct EstimateRow<'a> {
    replication: usize,
    variable: &'a str,
    mean: f64,
    lower: f64,
    upper: f64,
}

pub fn recover(a: &RecoverArgs, strict: bool) -> Result<()> {
    let mut run = Run::new("recover");
    run.config(&a.scenario)?;
    let config = load_scenario(&a.scenario)?;
    run.seed("scenario", config.seed);
    let location_class: LocationClass = a.class.parse().map_err(|e| CliError::bad_input(format!("--class: {e}")))?;
    let defaults = RecoverySettings::default();
    let settings = RecoverySettings {
        replications: a.reps,
        location_class,
        matching: MatchingSettings {
            m: a.m,
            ..defaults.matching.clone()
        },
        mcmc: McmcSettings {
            chains: a.chains,
            iterations: a.iters,
            burn_in: a.burn,
            ..defaults.mcmc.clone()
        },
        min_strata: a.min_strata,
        ..defaults
    };
    let report = recovery_experiment(&config, &settings)?;
    if strict {
        let bad: Vec<String> = report
            .replications
            .iter()
            .filter(|r| r.discarded.is_none() && !r.max_r_hat.is_some_and(|h| h < 1.1))
            .map(|r| r.index.to_string())
            .collect();
        if !bad.is_empty() {
            return Err(CliError::non_convergence(format!(
                "R-hat >= 1.1 in replications {}",
                bad.join(",")
            )));
        }
    }
    let rows: Vec<ReplicationRow> = report
        .replications
        .iter()
        .map(|r| ReplicationRow {
            replication: r.index,
            seed: r.seed,
            expected_crashes: r.expected_crashes,
            model_crashes: r.model_crashes,
            decoys: r.decoys,
            strata: r.strata,
            discarded: r.discarded.clone(),
            retained: r.retained.join(";"),
            max_r_hat: r.max_r_hat,
            auc_in_sample: r.auc_in_sample,
            auc_held_out: r.auc_held_out,
            null_auc_sd: r.null_auc_sd,
        })
        .collect();
    let estimates: Vec<EstimateRow> = report
        .replications
        .iter()
        .flat_map(|r| {
            r.estimates.iter().map(move |e| EstimateRow {
                replication: r.index,
                variable: &e.name,
                mean: e.mean,
                lower: e.lower,
                upper: e.upper,
            })
        })
        .collect();
    let settings_record: BTreeMap<&str, serde_json::Value> = [
        ("scenario", serde_json::to_value(&config)?),
        ("settings", serde_json::to_value(&settings)?),
        ("report", serde_json::to_value(&report)?),
    ]
    .into_iter()
    .collect();
    let mut out = Outputs::new(&a.out)?;
    out.stage("recovery.csv", &csv_bytes(&report.coefficients, "recovery")?)?;
    out.stage("replications.csv", &csv_bytes(&rows, "replications")?)?;
    out.stage("estimates.csv", &csv_bytes(&estimates, "estimates")?)?;
    out.stage_json("recovery.json", &settings_record)?;
    out.commit(run)
}
