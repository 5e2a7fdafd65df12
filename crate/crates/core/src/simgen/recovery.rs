//! Parameter-recovery experiment: generate, filter, match, screen and fit
//! repeatedly, then compare the posteriors with the injected coefficients.

use serde::{Deserialize, Serialize};

use super::inject::inject_crashes;
use super::scenario::{BetaScale, ScenarioConfig, ScenarioError};
use super::streams::generate_streams;
use crate::domain::{layout_for, FeatureVector, LocationClass, Stratum, TimeSlice};
use crate::features::StreamIndex;
use crate::inference::{fit_bayes, Coefficients, Design, FitOptions, McmcSettings};
use crate::matching::{build_dataset, filter_crashes, CrashLog, MatchingSettings, StudyPeriod};
use crate::rng::derive_seed;
use crate::risk::{null_auc_sd, score_strata, scores_auc};
use crate::screening::{dataset_columns, screen, ScreeningSettings};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecoverySettings {
    pub replications: usize,
    pub location_class: LocationClass,
    pub matching: MatchingSettings,
    pub screening: ScreeningSettings,
    pub mcmc: McmcSettings,
    /// Replications with fewer strata are discarded.
    pub min_strata: usize,
}

impl Default for RecoverySettings {
    fn default() -> Self {
        RecoverySettings {
            replications: 20,
            location_class: LocationClass::Within,
            matching: MatchingSettings::default(),
            screening: ScreeningSettings::default(),
            mcmc: McmcSettings::default(),
            min_strata: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub name: String,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub index: usize,
    pub seed: u64,
    pub expected_crashes: f64,
    pub model_crashes: usize,
    pub decoys: usize,
    pub strata: usize,
    /// Reason the replication was not used, if it was not.
    pub discarded: Option<String>,
    /// Variables left after screening.
    pub retained: Vec<String>,
    pub estimates: Vec<Estimate>,
    pub max_r_hat: Option<f64>,
    pub auc_in_sample: Option<f64>,
    /// AUC of this replication's model on the next replication's strata.
    pub auc_held_out: Option<f64>,
    pub null_auc_sd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRecovery {
    pub name: String,
    pub true_beta: f64,
    /// Replications in which the variable was estimated.
    pub estimated: usize,
    /// Replications used (not discarded).
    pub replications: usize,
    pub bias: f64,
    pub rmse: f64,
    /// Share of used replications whose 95% interval covers the true value;
    /// a variable removed by screening counts as not covered.
    pub coverage: f64,
    /// Share of used replications whose posterior mean has the true sign.
    pub sign_agreement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    /// `per_sd` when coefficients are per scenario standard deviation.
    pub scale: String,
    pub replications: Vec<ReplicationResult>,
    pub coefficients: Vec<CoefficientRecovery>,
}

impl RecoveryReport {
    pub fn used(&self) -> usize {
        self.replications.iter().filter(|r| r.discarded.is_none()).count()
    }
}

/// Keep only `names` and divide each by its scale.
fn rescale(strata: &[Stratum], names: &[String], scale: &[f64]) -> Vec<Stratum> {
    let map = |x: &FeatureVector| -> FeatureVector {
        names
            .iter()
            .zip(scale)
            .map(|(n, s)| (n.clone(), x.get(n).expect("layout variable") / s))
            .collect()
    };
    strata
        .iter()
        .map(|s| Stratum {
            stratum_id: s.stratum_id.clone(),
            crash: map(&s.crash),
            controls: s.controls.iter().map(map).collect(),
            keys: s.keys.clone(),
        })
        .collect()
}

struct Fitted {
    result: ReplicationResult,
    strata: Vec<Stratum>,
    beta: Option<Coefficients>,
}

fn replicate(
    config: &ScenarioConfig,
    settings: &RecoverySettings,
    index: usize,
    names: &[String],
) -> Result<Fitted, ScenarioError> {
    let seed = derive_seed(config.seed, &["replication", &index.to_string()]);
    let cfg = ScenarioConfig {
        seed,
        ..config.clone()
    };
    let streams = generate_streams(&cfg)?;
    let injection = inject_crashes(&streams, &cfg)?;
    let (kept, _) = filter_crashes(&injection.crashes, &streams.intersections);
    let log = CrashLog::new(&injection.crashes);
    let period = StudyPeriod::from_streams(&streams).ok_or_else(|| ScenarioError("empty volume feed".into()))?;
    let stream_index = StreamIndex::new(&streams).map_err(|e| ScenarioError(e.to_string()))?;
    let matching = MatchingSettings {
        rng_seed: derive_seed(seed, &["match"]),
        ..settings.matching.clone()
    };
    let build = build_dataset(&kept, &log, &stream_index, &period, &matching, &cfg.oafr)
        .map_err(|e| ScenarioError(e.to_string()))?;
    drop(stream_index);
    drop(streams);
    let strata: Vec<Stratum> = build
        .datasets
        .into_iter()
        .find(|d| d.location_class == settings.location_class)
        .map(|d| d.strata)
        .unwrap_or_default();
    let mut result = ReplicationResult {
        index,
        seed,
        expected_crashes: injection.expected,
        model_crashes: injection.model_crashes,
        decoys: injection.decoys,
        strata: strata.len(),
        discarded: None,
        retained: Vec::new(),
        estimates: Vec::new(),
        max_r_hat: None,
        auc_in_sample: None,
        auc_held_out: None,
        null_auc_sd: None,
    };
    if strata.len() < settings.min_strata {
        let reason = format!("{} strata, fewer than {}", strata.len(), settings.min_strata);
        log::warn!("recovery replication {index} discarded: {reason}");
        result.discarded = Some(reason);
        return Ok(Fitted {
            result,
            strata: Vec::new(),
            beta: None,
        });
    }
    let scale: Vec<f64> = names
        .iter()
        .map(|n| match config.beta_scale {
            BetaScale::Raw => 1.0,
            BetaScale::ScenarioSd => injection.scale_of(n).filter(|s| *s > 0.0).unwrap_or(1.0),
        })
        .collect();
    let scaled = rescale(&strata, names, &scale);
    let report = screen(&dataset_columns(&scaled), &settings.screening).map_err(|e| ScenarioError(e.to_string()))?;
    result.retained = report.retained.clone();
    if report.retained.is_empty() {
        result.discarded = Some("screening removed every variable".into());
        return Ok(Fitted {
            result,
            strata: Vec::new(),
            beta: None,
        });
    }
    let design = Design::from_strata(&scaled, &report.retained).map_err(|e| ScenarioError(e.to_string()))?;
    let mcmc = McmcSettings {
        seed: derive_seed(seed, &["mcmc"]),
        ..settings.mcmc.clone()
    };
    let (model, _) = match fit_bayes(&format!("recovery-{index}"), &design, &mcmc, &FitOptions::default()) {
        Ok(m) => m,
        Err(e) => {
            result.discarded = Some(format!("fit failed: {e}"));
            return Ok(Fitted {
                result,
                strata: Vec::new(),
                beta: None,
            });
        }
    };
    for c in &model.coefficients {
        let i = c.bci95.expect("fitted models carry 95% intervals");
        result.estimates.push(Estimate {
            name: c.name.clone(),
            mean: c.mean,
            lower: i.lower,
            upper: i.upper,
        });
    }
    result.max_r_hat = model.coefficients.iter().filter_map(|c| c.r_hat).reduce(f64::max);
    let beta = Coefficients {
        names: model.variables.clone(),
        values: model.raw_beta(),
    };
    let scores = score_strata(&beta, &scaled).map_err(|e| ScenarioError(e.to_string()))?;
    result.auc_in_sample = scores_auc(&scores).ok();
    let m = scaled[0].m();
    result.null_auc_sd = Some(null_auc_sd(scaled.len(), scaled.len() * m));
    Ok(Fitted {
        result,
        strata: scaled,
        beta: Some(beta),
    })
}

/// Run the full pipeline `settings.replications` times with derived seeds
/// and summarise how well the posteriors recover `config.true_beta`.
pub fn recovery_experiment(config: &ScenarioConfig, settings: &RecoverySettings) -> Result<RecoveryReport, ScenarioError> {
    config.validate()?;
    settings.mcmc.validate().map_err(|e| ScenarioError(e.to_string()))?;
    settings.matching.validate().map_err(|e| ScenarioError(e.to_string()))?;
    if settings.replications == 0 {
        return Err(ScenarioError("at least one replication is needed".into()));
    }
    if settings.location_class == LocationClass::Exit {
        return Err(ScenarioError("exit crashes are not modelled".into()));
    }
    if !config.location_classes.contains(&settings.location_class) {
        return Err(ScenarioError("the scenario does not inject crashes of the recovery class".into()));
    }
    let layout: Vec<String> = layout_for(settings.location_class, &TimeSlice::ALL)
        .iter()
        .map(|v| v.name())
        .collect();
    let names: Vec<String> = config
        .true_beta
        .keys()
        .filter(|n| layout.contains(n))
        .cloned()
        .collect();
    if names.is_empty() {
        return Err(ScenarioError("true_beta has no variable carried by the recovery class".into()));
    }
    // Replications run one after another; each already uses every thread
    // and holds a full set of streams in memory.
    let mut fitted = Vec::with_capacity(settings.replications);
    for r in 0..settings.replications {
        fitted.push(replicate(config, settings, r, &names)?);
    }
    let used: Vec<usize> = (0..fitted.len()).filter(|&i| fitted[i].beta.is_some()).collect();
    for (pos, &i) in used.iter().enumerate() {
        if used.len() < 2 {
            break;
        }
        let next = used[(pos + 1) % used.len()];
        let beta = fitted[i].beta.clone().expect("used replication");
        let auc = score_strata(&beta, &fitted[next].strata)
            .ok()
            .and_then(|s| scores_auc(&s).ok());
        fitted[i].result.auc_held_out = auc;
    }
    let results: Vec<ReplicationResult> = fitted.into_iter().map(|f| f.result).collect();
    let n_used = results.iter().filter(|r| r.discarded.is_none()).count();
    let mut coefficients = Vec::new();
    for name in &names {
        let truth = config.true_beta[name];
        let ests: Vec<&Estimate> = results
            .iter()
            .filter(|r| r.discarded.is_none())
            .filter_map(|r| r.estimates.iter().find(|e| &e.name == name))
            .collect();
        let n = ests.len() as f64;
        let covered = ests.iter().filter(|e| e.lower <= truth && truth <= e.upper).count();
        let signed = ests.iter().filter(|e| e.mean.signum() == truth.signum() && truth != 0.0).count();
        let share = |k: usize| if n_used > 0 { k as f64 / n_used as f64 } else { f64::NAN };
        coefficients.push(CoefficientRecovery {
            name: name.clone(),
            true_beta: truth,
            estimated: ests.len(),
            replications: n_used,
            bias: ests.iter().map(|e| e.mean - truth).sum::<f64>() / n,
            rmse: (ests.iter().map(|e| (e.mean - truth).powi(2)).sum::<f64>() / n).sqrt(),
            coverage: share(covered),
            sign_agreement: share(signed),
        });
    }
    Ok(RecoveryReport {
        scale: match config.beta_scale {
            BetaScale::Raw => "raw".into(),
            BetaScale::ScenarioSd => "per_sd".into(),
        },
        replications: results,
        coefficients,
    })
}
