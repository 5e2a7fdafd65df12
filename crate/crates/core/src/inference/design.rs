//! Dense stratified design matrices.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::InferenceError;
use crate::domain::Stratum;

/// Observations grouped by stratum, crash first, `group` rows per stratum.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    names: Vec<String>,
    group: usize,
    n_strata: usize,
    /// Row-major, `n_strata * group` rows of `k` values.
    x: Vec<f64>,
    /// Control-minus-crash differences, `n_strata * (group - 1)` rows.
    d: Vec<f64>,
}

impl Design {
    /// Build from per-stratum rows (`strata[i][j][u]`, crash at `j = 0`).
    pub fn from_rows(names: Vec<String>, strata: &[Vec<Vec<f64>>]) -> Result<Design, InferenceError> {
        let k = names.len();
        if k == 0 {
            return Err(InferenceError::InvalidInput("no variables".into()));
        }
        let Some(first) = strata.first() else {
            return Err(InferenceError::InvalidInput("no strata".into()));
        };
        let group = first.len();
        if group < 2 {
            return Err(InferenceError::InvalidInput("each stratum needs a crash and at least one control".into()));
        }
        let mut x = Vec::with_capacity(strata.len() * group * k);
        for (i, s) in strata.iter().enumerate() {
            if s.len() != group {
                return Err(InferenceError::InvalidInput(format!(
                    "stratum {i} has {} observations, expected {group}",
                    s.len()
                )));
            }
            for row in s {
                if row.len() != k {
                    return Err(InferenceError::InvalidInput(format!(
                        "stratum {i} has a row of width {}, expected {k}",
                        row.len()
                    )));
                }
                if row.iter().any(|v| !v.is_finite()) {
                    return Err(InferenceError::InvalidInput(format!("stratum {i} has a non-finite value")));
                }
                x.extend_from_slice(row);
            }
        }
        Ok(Self::assemble(names, group, strata.len(), x))
    }

    fn assemble(names: Vec<String>, group: usize, n_strata: usize, x: Vec<f64>) -> Design {
        let k = names.len();
        let mut d = Vec::with_capacity(n_strata * (group - 1) * k);
        for i in 0..n_strata {
            let base = i * group * k;
            let crash = &x[base..base + k];
            for j in 1..group {
                let row = &x[base + j * k..base + (j + 1) * k];
                d.extend(row.iter().zip(crash).map(|(a, b)| a - b));
            }
        }
        Design {
            names,
            group,
            n_strata,
            x,
            d,
        }
    }

    /// Select `names` from matched strata.
    pub fn from_strata(strata: &[Stratum], names: &[String]) -> Result<Design, InferenceError> {
        let rows: Vec<Vec<Vec<f64>>> = strata
            .iter()
            .map(|s| {
                s.observations()
                    .map(|fv| {
                        names
                            .iter()
                            .map(|n| {
                                fv.get(n).ok_or_else(|| {
                                    InferenceError::InvalidInput(format!(
                                        "variable {n} missing from stratum {}",
                                        s.stratum_id
                                    ))
                                })
                            })
                            .collect::<Result<Vec<f64>, _>>()
                    })
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<_, _>>()?;
        Design::from_rows(names.to_vec(), &rows)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn k(&self) -> usize {
        self.names.len()
    }

    pub fn n_strata(&self) -> usize {
        self.n_strata
    }

    /// Controls per stratum.
    pub fn m(&self) -> usize {
        self.group - 1
    }

    pub fn rows(&self) -> usize {
        self.n_strata * self.group
    }

    /// Observation `j` of stratum `i`.
    pub fn row(&self, i: usize, j: usize) -> &[f64] {
        let k = self.k();
        let start = (i * self.group + j) * k;
        &self.x[start..start + k]
    }

    /// Differences `x_ij − x_i0` for `j = 1..=m`, row-major.
    pub(crate) fn diffs(&self, i: usize) -> &[f64] {
        let k = self.k();
        let per = (self.group - 1) * k;
        &self.d[i * per..(i + 1) * per]
    }

    /// Keep only the listed columns, in the given order.
    pub fn select(&self, names: &[String]) -> Result<Design, InferenceError> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| {
                self.names
                    .iter()
                    .position(|m| m == n)
                    .ok_or_else(|| InferenceError::InvalidInput(format!("unknown variable {n}")))
            })
            .collect::<Result<_, _>>()?;
        let k = self.k();
        let x = self
            .x
            .chunks(k)
            .flat_map(|row| idx.iter().map(move |&u| row[u]))
            .collect();
        Ok(Self::assemble(names.to_vec(), self.group, self.n_strata, x))
    }

    /// Centre and scale every column by its pooled mean and sample sd.
    pub fn standardize(&self) -> Result<(Design, Standardization), InferenceError> {
        let k = self.k();
        let n = self.rows() as f64;
        let mut means = vec![0.0; k];
        for row in self.x.chunks(k) {
            for u in 0..k {
                means[u] += row[u];
            }
        }
        for m in &mut means {
            *m /= n;
        }
        let mut sds = vec![0.0; k];
        for row in self.x.chunks(k) {
            for u in 0..k {
                sds[u] += (row[u] - means[u]).powi(2);
            }
        }
        for (u, s) in sds.iter_mut().enumerate() {
            *s = (*s / (n - 1.0)).sqrt();
            if *s == 0.0 {
                return Err(InferenceError::InvalidInput(format!(
                    "variable {} is constant and cannot be standardized",
                    self.names[u]
                )));
            }
        }
        let x = self
            .x
            .chunks(k)
            .flat_map(|row| (0..k).map(|u| (row[u] - means[u]) / sds[u]).collect::<Vec<_>>())
            .collect();
        Ok((
            Self::assemble(self.names.clone(), self.group, self.n_strata, x),
            Standardization { means, sds },
        ))
    }

    pub fn fingerprint(&self) -> DatasetFingerprint {
        let mut names = Sha256::new();
        for n in &self.names {
            names.update(n.as_bytes());
            names.update([0u8]);
        }
        let mut data = Sha256::new();
        for v in &self.x {
            data.update(v.to_le_bytes());
        }
        DatasetFingerprint {
            rows: self.rows(),
            strata: self.n_strata,
            m: self.m(),
            variable_hash: hex::encode(names.finalize()),
            data_hash: hex::encode(data.finalize()),
        }
    }
}

/// Column transform applied before fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetFingerprint {
    pub rows: usize,
    pub strata: usize,
    pub m: usize,
    pub variable_hash: String,
    pub data_hash: String,
}
