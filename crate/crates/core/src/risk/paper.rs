//! Published reference models: posterior means, intervals and odds ratios
//! exactly as printed.

use crate::domain::{LocationClass, TimeSlice};
use crate::inference::{significance, CoefficientSummary, FittedModel, Interval, ModelSource, Significance};

use super::RiskError;

pub const PAPER_MODEL_NAMES: [&str; 10] = [
    "within_full",
    "within_slice1",
    "within_slice2",
    "within_slice3",
    "within_slice4",
    "entrance_full",
    "entrance_slice1",
    "entrance_slice2",
    "entrance_slice3",
    "entrance_slice4",
];

/// One printed row: coefficient mean and interval, odds-ratio mean and
/// interval, and whether the row is marked as significant only at 0.1.
#[derive(Debug, Clone, Copy)]
pub struct PrintedRow {
    pub variable: &'static str,
    pub mean: f64,
    pub interval: (f64, f64),
    pub odds_ratio: f64,
    pub odds_ratio_interval: (f64, f64),
    pub starred: bool,
}

const fn row(
    variable: &'static str,
    mean: f64,
    lo: f64,
    hi: f64,
    odds_ratio: f64,
    or_lo: f64,
    or_hi: f64,
    starred: bool,
) -> PrintedRow {
    PrintedRow {
        variable,
        mean,
        interval: (lo, hi),
        odds_ratio,
        odds_ratio_interval: (or_lo, or_hi),
        starred,
    }
}

pub struct PrintedModel {
    pub name: &'static str,
    pub location_class: LocationClass,
    pub slice: Option<u8>,
    pub auc: f64,
    /// Variable names in slice models carry no window suffix.
    pub rows: &'static [PrintedRow],
}

const WITHIN_FULL: &[PrintedRow] = &[
    row("Avg_speed_0_5", -0.038, -0.07, -0.005, 0.963, 0.932, 0.995, true),
    row("Std_speed_0_5", 0.066, 0.001, 0.131, 1.068, 1.001, 1.14, false),
    row("B_TH_Avg_Wait_0_5", 0.013, 0.002, 0.024, 1.013, 1.002, 1.024, false),
    row("D_TH_Avg_Wait_0_5", 0.016, 0.006, 0.026, 1.016, 1.006, 1.026, false),
    row("B_LT_Std_Green_5_10", -0.138, -0.248, -0.04, 0.871, 0.78, 0.961, false),
    row("C_TH_Avg_Wait_5_10", 0.017, 0.001, 0.032, 1.017, 1.001, 1.033, true),
    row("B_Vol_LT_10_15", 0.029, 0.005, 0.054, 1.029, 1.005, 1.055, true),
    row("D_TH_Avg_Green_10_15", -0.059, -0.103, -0.017, 0.943, 0.902, 0.983, false),
    row("A_LT_Avg_Green_15_20", -0.055, -0.106, -0.006, 0.946, 0.899, 0.994, false),
    row("A_LT_Std_Green_15_20", -0.090, -0.161, -0.019, 0.914, 0.851, 0.981, false),
    row("C_LT_Avg_Queue_15_20", -0.094, -0.18, -0.013, 0.910, 0.835, 0.987, false),
    row("D_TH_GreenRatio_15_20", -0.088, -0.175, -0.004, 0.916, 0.839, 0.996, false),
    row("D_TH_Std_Green_15_20", 0.060, 0.004, 0.114, 1.062, 1.004, 1.121, false),
    row("D_TH_Avg_Queue_15_20", -0.067, -0.13, -0.005, 0.935, 0.878, 0.995, false),
];

const WITHIN_SLICE1: &[PrintedRow] = &[
    row("Avg_speed", -0.033, -0.063, -0.004, 0.968, 0.939, 0.996, true),
    row("Std_speed", 0.056, 0.008, 0.101, 1.058, 1.008, 1.106, true),
    row("B_Vol_LT", 0.034, 0.009, 0.063, 1.035, 1.009, 1.065, false),
    row("B_TH_Avg_Wait", 0.013, 0.003, 0.022, 1.013, 1.003, 1.022, false),
    row("C_Vol_Th", -0.006, -0.012, 0.000, 0.994, 0.988, 1.000, true),
    row("D_TH_Avg_Wait", 0.009, 0.000, 0.017, 1.009, 1.000, 1.017, false),
];

const WITHIN_SLICE2: &[PrintedRow] = &[
    row("A_Vol_Th", 0.005, 0.001, 0.011, 1.005, 1.001, 1.011, true),
    row("B_Vol_LT", 0.039, 0.011, 0.07, 1.040, 1.011, 1.073, false),
    row("B_LT_Std_Green", -0.106, -0.206, -0.017, 0.899, 0.814, 0.983, false),
    row("B_TH_Avg_Queue", -0.046, -0.09, -0.005, 0.955, 0.914, 0.995, true),
    row("D_Vol_LT", -0.036, -0.067, -0.004, 0.965, 0.935, 0.996, true),
    row("D_OAFR", 0.518, 0.077, 0.978, 1.679, 1.08, 2.659, false),
    row("D_TH_Avg_Wait", -0.011, -0.02, -0.002, 0.989, 0.98, 0.998, false),
];

const WITHIN_SLICE3: &[PrintedRow] = &[
    row("B_Vol_LT", 0.031, 0.005, 0.058, 1.031, 1.005, 1.06, false),
    row("D_TH_Avg_Green", -0.057, -0.099, -0.019, 0.945, 0.906, 0.981, false),
    row("D_TH_Avg_Wait", 0.011, 0.001, 0.021, 1.011, 1.001, 1.021, false),
];

const WITHIN_SLICE4: &[PrintedRow] = &[
    row("A_LT_Avg_Green", -0.041, -0.08, -0.003, 0.96, 0.923, 0.997, true),
    row("A_LT_Std_Green", -0.064, -0.131, -0.004, 0.938, 0.877, 0.996, false),
    row("B_Vol_LT", 0.036, 0.006, 0.066, 1.037, 1.006, 1.068, false),
    row("B_TH_Avg_Queue", -0.052, -0.103, -0.008, 0.949, 0.902, 0.992, false),
    row("C_LT_Avg_Queue", -0.076, -0.159, -0.003, 0.927, 0.853, 0.997, false),
    row("D_Vol_LT", -0.039, -0.078, -0.004, 0.962, 0.925, 0.996, false),
    row("D_TH_GreenRatio", -0.074, -0.145, -0.004, 0.929, 0.865, 0.996, false),
    row("D_TH_Std_Green", 0.054, 0.006, 0.103, 1.055, 1.006, 1.108, false),
];

const ENTRANCE_FULL: &[PrintedRow] = &[
    row("A_TH_Avg_Queue_0_5", 0.054, 0.018, 0.094, 1.055, 1.018, 1.099, false),
    row("A_LT_Avg_Green_5_10", -0.056, -0.107, -0.006, 0.946, 0.899, 0.994, false),
    row("A_LT_Avg_Queue_5_10", -0.065, -0.128, -0.007, 0.937, 0.88, 0.993, true),
    row("A_TH_Avg_Wait_5_10", 0.014, 0.000, 0.028, 1.014, 1.000, 1.028, false),
    row("Avg_speed_10_15", -0.046, -0.078, -0.017, 0.955, 0.925, 0.983, false),
    row("A_TH_Avg_Green_15_20", -0.037, -0.069, -0.009, 0.964, 0.933, 0.991, false),
    row("A_LT_GreenRatio_15_20", -0.084, -0.167, -0.003, 0.919, 0.846, 0.997, false),
];

const ENTRANCE_SLICE1: &[PrintedRow] = &[
    row("Avg_speed", -0.050, -0.077, -0.024, 0.951, 0.926, 0.976, false),
    row("A_Vol_LT", -0.048, -0.086, -0.013, 0.953, 0.918, 0.987, false),
    row("A_TH_Avg_Queue", 0.030, 0.001, 0.061, 1.030, 1.001, 1.063, true),
];

const ENTRANCE_SLICE2: &[PrintedRow] = &[
    row("Avg_speed", -0.041, -0.072, -0.012, 0.96, 0.931, 0.988, false),
    row("A_Vol_LT", -0.037, -0.07, -0.005, 0.964, 0.932, 0.995, true),
    row("A_LT_Avg_Wait", -0.013, -0.022, -0.003, 0.987, 0.978, 0.997, false),
    row("A_TH_GreenRatio", -0.040, -0.081, -0.002, 0.961, 0.922, 0.998, false),
];

const ENTRANCE_SLICE3: &[PrintedRow] = &[
    row("Avg_speed", -0.038, -0.066, -0.01, 0.963, 0.936, 0.99, false),
    row("A_Vol_LT", -0.046, -0.086, -0.01, 0.955, 0.918, 0.99, false),
    row("A_TH_Std_Green", -0.035, -0.075, 0.0, 0.966, 0.928, 1.0, false),
];

const ENTRANCE_SLICE4: &[PrintedRow] = &[
    row("Avg_speed", -0.037, -0.068, -0.006, 0.964, 0.934, 0.994, false),
    row("A_Vol_LT", -0.047, -0.091, -0.009, 0.954, 0.913, 0.991, false),
    row("A_LT_Avg_Green", -0.050, -0.096, -0.003, 0.951, 0.908, 0.997, false),
    row("A_TH_Std_Green", -0.041, -0.077, -0.007, 0.960, 0.926, 0.993, false),
];

pub const PRINTED_MODELS: [PrintedModel; 10] = [
    PrintedModel { name: "within_full", location_class: LocationClass::Within, slice: None, auc: 0.7596, rows: WITHIN_FULL },
    PrintedModel { name: "within_slice1", location_class: LocationClass::Within, slice: Some(1), auc: 0.6759, rows: WITHIN_SLICE1 },
    PrintedModel { name: "within_slice2", location_class: LocationClass::Within, slice: Some(2), auc: 0.6927, rows: WITHIN_SLICE2 },
    PrintedModel { name: "within_slice3", location_class: LocationClass::Within, slice: Some(3), auc: 0.6337, rows: WITHIN_SLICE3 },
    PrintedModel { name: "within_slice4", location_class: LocationClass::Within, slice: Some(4), auc: 0.6858, rows: WITHIN_SLICE4 },
    PrintedModel { name: "entrance_full", location_class: LocationClass::Entrance, slice: None, auc: 0.728, rows: ENTRANCE_FULL },
    PrintedModel { name: "entrance_slice1", location_class: LocationClass::Entrance, slice: Some(1), auc: 0.6679, rows: ENTRANCE_SLICE1 },
    PrintedModel { name: "entrance_slice2", location_class: LocationClass::Entrance, slice: Some(2), auc: 0.6770, rows: ENTRANCE_SLICE2 },
    PrintedModel { name: "entrance_slice3", location_class: LocationClass::Entrance, slice: Some(3), auc: 0.6466, rows: ENTRANCE_SLICE3 },
    PrintedModel { name: "entrance_slice4", location_class: LocationClass::Entrance, slice: Some(4), auc: 0.6767, rows: ENTRANCE_SLICE4 },
];

impl PrintedModel {
    /// Full variable name of a row, with the window suffix for slice models.
    pub fn variable_name(&self, row: &PrintedRow) -> String {
        match self.slice.and_then(TimeSlice::from_number) {
            Some(s) => format!("{}_{}", row.variable, s.suffix()),
            None => row.variable.to_string(),
        }
    }
}

fn summary(name: String, r: &PrintedRow) -> CoefficientSummary {
    let interval = Interval::new(r.interval.0, r.interval.1);
    let or_interval = Interval::new(r.odds_ratio_interval.0, r.odds_ratio_interval.1);
    // Starred rows are significant only at 0.1, so the printed interval is
    // stored as the 90% interval.
    let (bci95, bci90, or95, or90) = if r.starred {
        (None, Some(interval), None, Some(or_interval))
    } else {
        (Some(interval), None, Some(or_interval), None)
    };
    CoefficientSummary {
        name,
        mean: r.mean,
        sd: None,
        bci95,
        bci90,
        odds_ratio_mean: r.odds_ratio,
        odds_ratio_bci95: or95,
        odds_ratio_bci90: or90,
        significance: significance(bci95, bci90),
        printed_significance: Some(if r.starred { Significance::P10 } else { Significance::P05 }),
        r_hat: None,
        ess: None,
    }
}

pub fn printed_model(name: &str) -> Result<&'static PrintedModel, RiskError> {
    PRINTED_MODELS
        .iter()
        .find(|m| m.name == name)
        .ok_or_else(|| {
            RiskError::InvalidInput(format!(
                "unknown published model `{name}`; expected one of {}",
                PAPER_MODEL_NAMES.join(", ")
            ))
        })
}

/// A published model as a scoring artifact.
pub fn load_paper_model(name: &str) -> Result<FittedModel, RiskError> {
    let m = printed_model(name)?;
    let coefficients: Vec<CoefficientSummary> = m.rows.iter().map(|r| summary(m.variable_name(r), r)).collect();
    Ok(FittedModel {
        name: m.name.to_string(),
        source: ModelSource::Published,
        location_class: Some(m.location_class),
        slice: m.slice,
        variables: coefficients.iter().map(|c| c.name.clone()).collect(),
        coefficients,
        auc: Some(m.auc),
        sampler: None,
        dataset: None,
        standardization: None,
        acceptance_rates: Vec::new(),
        warnings: Vec::new(),
    })
}
