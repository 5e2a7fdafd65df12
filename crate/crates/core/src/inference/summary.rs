//! Posterior summaries, significance flags and the fitted-model artifact.

use serde::{Deserialize, Serialize};

use super::design::{DatasetFingerprint, Design, Standardization};
use super::diagnostics::{effective_sample_size, quantile, r_hat};
use super::mcmc::{run_mcmc, McmcRun, McmcSettings};
use super::mle::{fit_mle, MleSettings};
use super::InferenceError;
use crate::domain::LocationClass;

/// R̂ above this attaches a non-convergence warning.
pub const R_HAT_THRESHOLD: f64 = 1.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn new(lower: f64, upper: f64) -> Self {
        Interval { lower, upper }
    }

    pub fn excludes_zero(&self) -> bool {
        self.lower > 0.0 || self.upper < 0.0
    }

    pub fn exp(&self) -> Interval {
        Interval::new(self.lower.exp(), self.upper.exp())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Significance {
    #[serde(rename = "0.05")]
    P05,
    #[serde(rename = "0.1")]
    P10,
    #[serde(rename = "none")]
    NotSignificant,
}

impl Significance {
    pub fn as_str(self) -> &'static str {
        match self {
            Significance::P05 => "0.05",
            Significance::P10 => "0.1",
            Significance::NotSignificant => "none",
        }
    }
}

/// 0.05 if the 95% interval excludes zero, else 0.1 if the 90% interval
/// does, else not significant.
pub fn significance(bci95: Option<Interval>, bci90: Option<Interval>) -> Significance {
    if bci95.is_some_and(|i| i.excludes_zero()) {
        Significance::P05
    } else if bci90.is_some_and(|i| i.excludes_zero()) {
        Significance::P10
    } else {
        Significance::NotSignificant
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSummary {
    pub name: String,
    pub mean: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bci95: Option<Interval>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bci90: Option<Interval>,
    pub odds_ratio_mean: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub odds_ratio_bci95: Option<Interval>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub odds_ratio_bci90: Option<Interval>,
    pub significance: Significance,
    /// Flag as printed in a published table, where it can disagree with
    /// intervals whose endpoints were rounded to zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub printed_significance: Option<Significance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_hat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ess: Option<f64>,
}

/// Summaries of pooled post-burn-in draws, one per coefficient.
pub fn summarize(run: &McmcRun) -> Vec<CoefficientSummary> {
    (0..run.k())
        .map(|u| {
            let cols = run.columns(u);
            let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
            let mut pooled: Vec<f64> = cols.concat();
            let n = pooled.len() as f64;
            let mean = pooled.iter().sum::<f64>() / n;
            let sd = (pooled.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            let or_mean = pooled.iter().map(|x| x.exp()).sum::<f64>() / n;
            pooled.sort_by(f64::total_cmp);
            let bci95 = Interval::new(quantile(&pooled, 0.025), quantile(&pooled, 0.975));
            let bci90 = Interval::new(quantile(&pooled, 0.05), quantile(&pooled, 0.95));
            CoefficientSummary {
                name: run.names[u].clone(),
                mean,
                sd: Some(sd),
                bci95: Some(bci95),
                bci90: Some(bci90),
                odds_ratio_mean: or_mean,
                odds_ratio_bci95: Some(bci95.exp()),
                odds_ratio_bci90: Some(bci90.exp()),
                significance: significance(Some(bci95), Some(bci90)),
                printed_significance: None,
                r_hat: Some(r_hat(&refs)),
                ess: Some(effective_sample_size(&refs)),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSource {
    Fitted,
    Published,
}

/// Everything needed to score new data and audit how a model was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub name: String,
    pub source: ModelSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location_class: Option<LocationClass>,
    /// Slice number for single-slice models.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slice: Option<u8>,
    pub variables: Vec<String>,
    pub coefficients: Vec<CoefficientSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler: Option<McmcSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetFingerprint>,
    /// Present when coefficients refer to standardized covariates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardization: Option<Standardization>,
    #[serde(default)]
    pub acceptance_rates: Vec<f64>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl FittedModel {
    /// Posterior-mean coefficients on the raw covariate scale. Centering
    /// cancels within strata, so only the scale is undone.
    pub fn raw_beta(&self) -> Vec<f64> {
        match &self.standardization {
            Some(s) => self
                .coefficients
                .iter()
                .zip(&s.sds)
                .map(|(c, sd)| c.mean / sd)
                .collect(),
            None => self.coefficients.iter().map(|c| c.mean).collect(),
        }
    }

    pub fn coefficient(&self, name: &str) -> Option<&CoefficientSummary> {
        self.coefficients.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FitOptions {
    pub standardize: bool,
    /// Drop the weakest variable by Wald statistic until every remaining
    /// one is significant at this level (0.05 or 0.1) before sampling.
    pub backward_elimination: Option<f64>,
}

/// Standard normal two-sided critical values for the supported levels.
fn critical_value(level: f64) -> Result<f64, InferenceError> {
    if (level - 0.05).abs() < 1e-12 {
        Ok(1.959_963_984_540_054)
    } else if (level - 0.1).abs() < 1e-12 {
        Ok(1.644_853_626_951_472_2)
    } else {
        Err(InferenceError::InvalidSettings(format!(
            "backward elimination level must be 0.05 or 0.1, got {level}"
        )))
    }
}

/// Backward elimination on maximum-likelihood Wald statistics.
pub fn backward_eliminate(design: &Design, level: f64) -> Result<Vec<String>, InferenceError> {
    let z = critical_value(level)?;
    let mut names = design.names().to_vec();
    loop {
        let sub = design.select(&names)?;
        let fit = fit_mle(&sub, &MleSettings::default())?;
        let se = fit.std_errors();
        let (weakest, stat) = (0..names.len())
            .map(|u| (u, (fit.beta[u] / se[u]).abs()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("at least one variable");
        if stat >= z || names.len() == 1 {
            return Ok(names);
        }
        names.remove(weakest);
    }
}

/// Sample the posterior and package the artifact. Returns the raw chains too.
pub fn fit_bayes(
    name: &str,
    design: &Design,
    settings: &McmcSettings,
    options: &FitOptions,
) -> Result<(FittedModel, McmcRun), InferenceError> {
    let selected;
    let design = match options.backward_elimination {
        Some(level) => {
            selected = design.select(&backward_eliminate(design, level)?)?;
            &selected
        }
        None => design,
    };
    let (work, standardization) = if options.standardize {
        let (d, s) = design.standardize()?;
        (d, Some(s))
    } else {
        (design.clone(), None)
    };
    let run = run_mcmc(&work, settings)?;
    let coefficients = summarize(&run);
    let mut warnings = Vec::new();
    for c in &coefficients {
        if let Some(r) = c.r_hat {
            if !(r < R_HAT_THRESHOLD) {
                warnings.push(format!("non-convergence: R-hat {r:.4} for {}", c.name));
            }
        }
    }
    let model = FittedModel {
        name: name.to_string(),
        source: ModelSource::Fitted,
        location_class: None,
        slice: None,
        variables: design.names().to_vec(),
        coefficients,
        auc: None,
        sampler: Some(settings.clone()),
        dataset: Some(design.fingerprint()),
        standardization,
        acceptance_rates: run.chains.iter().map(|c| c.acceptance_rate).collect(),
        warnings,
    };
    Ok((model, run))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significance_levels() {
        assert_eq!(significance(Some(Interval::new(0.002, 0.024)), None), Significance::P05);
        assert_eq!(significance(None, Some(Interval::new(-0.07, -0.005))), Significance::P10);
        assert_eq!(
            significance(Some(Interval::new(-0.09, 0.001)), Some(Interval::new(-0.08, -0.002))),
            Significance::P10
        );
        assert_eq!(
            significance(Some(Interval::new(-0.01, 0.02)), Some(Interval::new(-0.005, 0.015))),
            Significance::NotSignificant
        );
        assert_eq!(significance(Some(Interval::new(-0.012, 0.0)), None), Significance::NotSignificant);
    }

    #[test]
    fn significance_serializes_as_level() {
        assert_eq!(serde_json::to_string(&Significance::P10).unwrap(), "\"0.1\"");
    }
}
