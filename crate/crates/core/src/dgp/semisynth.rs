//! Semi-synthetic harness built on the ACIC 2018 student-mindset data.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::index;

use super::copula::{draw_covariates, random_correlation_matrix};
use crate::data::{ObservedDataset, SimulatedDataset};
use crate::error::{CateError, Result};
use crate::matrix::Matrix;
use crate::seed::Stream;

/// Roles read from the file, in feature order after the outcome and
/// treatment.
pub const FEATURE_ROLES: [&str; 10] = ["S3", "C1", "C2", "C3", "XC", "X1", "X2", "X3", "X4", "X5"];

/// Maps roles (Y, W, S3, C1, ...) to header names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnMap {
    names: HashMap<String, String>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        let names = ["Y", "W"]
            .iter()
            .chain(FEATURE_ROLES.iter())
            .map(|r| (r.to_string(), r.to_string()))
            .collect();
        Self { names }
    }
}

impl ColumnMap {
    /// Header names of the published ACIC file, whose treatment column is `Z`.
    pub fn acic() -> Self {
        let mut map = Self::default();
        map.names.insert("W".into(), "Z".into());
        map
    }

    /// Parses `role = "header"` lines. Roles not listed keep their own name.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let table: HashMap<String, String> = toml::from_str(text).map_err(|e| CateError::Format {
            path: origin.to_path_buf(),
            reason: e.to_string(),
        })?;
        let mut map = Self::default();
        for (role, header) in table {
            let role = role.to_ascii_uppercase();
            if !map.names.contains_key(&role) {
                return Err(CateError::Format {
                    path: origin.to_path_buf(),
                    reason: format!("unknown role `{role}`"),
                });
            }
            map.names.insert(role, header);
        }
        Ok(map)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CateError::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn header(&self, role: &str) -> &str {
        &self.names[role]
    }

    pub fn set(&mut self, role: &str, header: &str) {
        self.names.insert(role.to_ascii_uppercase(), header.to_string());
    }
}

#[derive(Debug, Clone)]
pub struct SemiSyntheticOptions {
    pub columns: ColumnMap,
    /// Number of correlated-uniform noise covariates appended.
    pub augment_p: usize,
}

impl Default for SemiSyntheticOptions {
    fn default() -> Self {
        Self {
            columns: ColumnMap::default(),
            augment_p: 90,
        }
    }
}

/// `0.228 + 0.05 1(x1 < 0.07) - 0.05 1(x2 < -0.69) - 0.08 1(c1 in {1, 13, 14})`
pub fn semisynthetic_cate(x1: f64, x2: f64, c1: f64) -> f64 {
    let mut tau = 0.228;
    if x1 < 0.07 {
        tau += 0.05;
    }
    if x2 < -0.69 {
        tau -= 0.05;
    }
    if c1 == 1.0 || c1 == 13.0 || c1 == 14.0 {
        tau -= 0.08;
    }
    tau
}

/// Reads a comma-separated file with a header row and builds the
/// semi-synthetic dataset. Row numbers in errors count data rows from 1.
pub fn load_semisynthetic(
    path: &Path,
    options: &SemiSyntheticOptions,
    rng: &mut Stream,
) -> Result<SimulatedDataset> {
    let file = std::fs::File::open(path).map_err(|e| CateError::io(path, e))?;
    load_from_reader(file, path, options, rng)
}

pub fn load_from_reader<R: std::io::Read>(
    reader: R,
    origin: &Path,
    options: &SemiSyntheticOptions,
    rng: &mut Stream,
) -> Result<SimulatedDataset> {
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let format_err = |e: csv::Error| CateError::Format {
        path: origin.to_path_buf(),
        reason: e.to_string(),
    };
    let headers = csv.headers().map_err(format_err)?.clone();
    let locate = |role: &str| {
        let name = options.columns.header(role);
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CateError::SchemaError {
                column: name.to_string(),
                path: origin.display().to_string(),
            })
    };
    let y_col = locate("Y")?;
    let w_col = locate("W")?;
    let feature_cols = FEATURE_ROLES
        .iter()
        .map(|r| locate(r))
        .collect::<Result<Vec<_>>>()?;

    let mut y = Vec::new();
    let mut w = Vec::new();
    let mut features = Vec::new();
    for (i, record) in csv.records().enumerate() {
        let record = record.map_err(format_err)?;
        let row = i + 1;
        let cell = |col: usize| -> Result<f64> {
            let raw = record.get(col).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| CateError::ParseError {
                    row,
                    column: headers[col].to_string(),
                    value: raw.to_string(),
                })
        };
        y.push(cell(y_col)?);
        let wv = cell(w_col)?;
        if wv != 0.0 && wv != 1.0 {
            return Err(CateError::ParseError {
                row,
                column: headers[w_col].to_string(),
                value: record.get(w_col).unwrap_or("").to_string(),
            });
        }
        w.push(wv == 1.0);
        for &c in &feature_cols {
            features.push(cell(c)?);
        }
    }
    let n = y.len();
    if n == 0 {
        return Err(CateError::InsufficientData {
            context: format!("semi-synthetic file {}", origin.display()),
            needed: 1,
            got: 0,
        });
    }

    let base = Matrix::from_row_major(n, FEATURE_ROLES.len(), features)?;
    // feature order S3, C1, C2, C3, XC, X1, ...
    let tau = base
        .rows()
        .map(|r| semisynthetic_cate(r[5], r[6], r[1]))
        .collect();
    let x = if options.augment_p > 0 {
        let sigma = random_correlation_matrix(options.augment_p, rng);
        base.hstack(&draw_covariates(n, &sigma, rng))?
    } else {
        base
    };
    Ok(SimulatedDataset {
        observed: ObservedDataset::new(x, w, y)?,
        y0: None,
        y1: None,
        tau,
        e_true: None,
        mu0: None,
        redraws: 0,
    })
}

/// Fixed validation hold-out plus independent training draws from the
/// remaining rows.
#[derive(Debug, Clone)]
pub struct SemiSyntheticSampler {
    validation_rows: Vec<usize>,
    pool: Vec<usize>,
}

impl SemiSyntheticSampler {
    pub fn new(n_total: usize, holdout: usize, rng: &mut Stream) -> Result<Self> {
        if holdout > n_total {
            return Err(CateError::InsufficientData {
                context: "validation hold-out".into(),
                needed: holdout,
                got: n_total,
            });
        }
        let mut perm = index::sample(rng, n_total, n_total).into_vec();
        let pool = perm.split_off(holdout);
        Ok(Self {
            validation_rows: perm,
            pool,
        })
    }

    pub fn validation_rows(&self) -> &[usize] {
        &self.validation_rows
    }

    pub fn pool_size(&self) -> usize {
        self.pool.len()
    }

    /// `n_train` rows drawn without replacement from outside the hold-out.
    pub fn training_rows(&self, n_train: usize, rng: &mut Stream) -> Result<Vec<usize>> {
        if n_train > self.pool.len() {
            return Err(CateError::InsufficientData {
                context: "training sample outside the validation hold-out".into(),
                needed: n_train,
                got: self.pool.len(),
            });
        }
        Ok(index::sample(rng, self.pool.len(), n_train)
            .iter()
            .map(|k| self.pool[k])
            .collect())
    }
}

/// Splits off a validation set of `holdout` rows and draws `n_train`
/// training rows from the remainder.
pub fn sample_training(
    dataset: &SimulatedDataset,
    n_train: usize,
    holdout: usize,
    rng: &mut Stream,
) -> Result<(SimulatedDataset, SimulatedDataset)> {
    if n_train + holdout > dataset.len() {
        return Err(CateError::InsufficientData {
            context: "training plus validation sample".into(),
            needed: n_train + holdout,
            got: dataset.len(),
        });
    }
    let sampler = SemiSyntheticSampler::new(dataset.len(), holdout, rng)?;
    let train = sampler.training_rows(n_train, rng)?;
    Ok((dataset.subset(&train), dataset.subset(sampler.validation_rows())))
}
