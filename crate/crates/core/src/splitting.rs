//! Full-sample, double sample-splitting and double cross-fitting.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ObservedDataset;
use crate::error::{CateError, Result};
use crate::metalearners::{
    fit_pipeline, BaseLearner, CateModel, FitDiagnostics, Learner, LearnerParams, RoleRows,
};
use crate::seed::{child_seed, stream, Stream};

/// Number of folds used by sample splitting and cross-fitting.
pub const DEFAULT_FOLDS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ProcedureKind {
    FullSample,
    SampleSplit,
    CrossFit,
}

impl ProcedureKind {
    pub const ALL: [ProcedureKind; 3] = [ProcedureKind::FullSample, ProcedureKind::SampleSplit, ProcedureKind::CrossFit];

    pub fn label(self) -> &'static str {
        match self {
            ProcedureKind::FullSample => "full",
            ProcedureKind::SampleSplit => "split",
            ProcedureKind::CrossFit => "crossfit",
        }
    }

    /// Suffix used in cell names such as `DR-C`.
    pub fn suffix(self) -> &'static str {
        match self {
            ProcedureKind::FullSample => "F",
            ProcedureKind::SampleSplit => "S",
            ProcedureKind::CrossFit => "C",
        }
    }

    pub fn code(self) -> u64 {
        match self {
            ProcedureKind::FullSample => 1,
            ProcedureKind::SampleSplit => 2,
            ProcedureKind::CrossFit => 3,
        }
    }
}

impl fmt::Display for ProcedureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ProcedureKind {
    type Err = CateError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "full" | "f" | "fullsample" | "full-sample" => Ok(ProcedureKind::FullSample),
            "split" | "s" | "samplesplit" | "sample-split" => Ok(ProcedureKind::SampleSplit),
            "crossfit" | "c" | "cross-fit" | "cross-fitting" => Ok(ProcedureKind::CrossFit),
            other => Err(CateError::invalid(format!("unknown procedure `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    fold_of: Vec<usize>,
    k: usize,
}

impl FoldAssignment {
    pub fn from_labels(fold_of: Vec<usize>, k: usize) -> Result<Self> {
        if k == 0 || fold_of.iter().any(|&f| f >= k) {
            return Err(CateError::invalid(format!("fold labels must lie in 0..{k}")));
        }
        Ok(Self { fold_of, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn fold_of(&self) -> &[usize] {
        &self.fold_of
    }

    /// Rows of fold `f` in ascending order.
    pub fn rows(&self, f: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] == f).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.fold_of {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Uniformly random partition of `0..n` into `k` folds whose sizes differ by
/// at most one; the larger folds are the lowest-numbered ones.
pub fn assign_folds(n: usize, k: usize, rng: &mut Stream) -> Result<FoldAssignment> {
    if k == 0 {
        return Err(CateError::invalid("fold count must be positive"));
    }
    if n < k {
        return Err(CateError::InsufficientData {
            context: format!("{k}-fold partition"),
            needed: k,
            got: n,
        });
    }
    let order = index::sample(rng, n, n);
    let mut fold_of = vec![0; n];
    let (base, extra) = (n / k, n % k);
    let mut pos = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        for i in order.iter().skip(pos).take(size) {
            fold_of[i] = f;
        }
        pos += size;
    }
    Ok(FoldAssignment { fold_of, k })
}

/// Fold index playing each role in one pipeline run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleMap {
    pub propensity: usize,
    pub response: usize,
    pub cate: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProcedureSpec {
    pub kind: ProcedureKind,
    pub k: usize,
    /// One entry per pipeline run; empty for full-sample estimation.
    pub role_map: Vec<RoleMap>,
}

impl ProcedureSpec {
    pub fn new(kind: ProcedureKind) -> Self {
        let first = RoleMap {
            propensity: 0,
            response: 1,
            cate: 2,
        };
        match kind {
            ProcedureKind::FullSample => Self {
                kind,
                k: 1,
                role_map: Vec::new(),
            },
            ProcedureKind::SampleSplit => Self {
                kind,
                k: DEFAULT_FOLDS,
                role_map: vec![first],
            },
            ProcedureKind::CrossFit => Self {
                kind,
                k: DEFAULT_FOLDS,
                role_map: (0..DEFAULT_FOLDS)
                    .map(|r| RoleMap {
                        propensity: r,
                        response: (r + 1) % DEFAULT_FOLDS,
                        cate: (r + 2) % DEFAULT_FOLDS,
                    })
                    .collect(),
            },
        }
    }
}

/// Pointwise mean of `K` component prediction vectors, summed in component
/// order.
pub fn crossfit_combine(components: &[Vec<f64>]) -> Result<Vec<f64>> {
    let Some(first) = components.first() else {
        return Err(CateError::invalid("cross-fit combination needs at least one component"));
    };
    let m = first.len();
    if let Some(bad) = components.iter().find(|c| c.len() != m) {
        return Err(CateError::invalid(format!(
            "component predictions have lengths {m} and {}",
            bad.len()
        )));
    }
    let k = components.len() as f64;
    Ok((0..m)
        .map(|i| {
            let mut s = 0.0;
            for c in components {
                s += c[i];
            }
            s / k
        })
        .collect())
}

fn too_small(fold: usize, role: &str, reason: String) -> CateError {
    CateError::FoldTooSmall {
        fold,
        role: role.to_string(),
        reason,
    }
}

fn check_rows(fold: usize, role: &str, rows: usize, need: usize) -> Result<()> {
    if rows < need {
        return Err(too_small(fold, role, format!("{rows} rows, need at least {need}")));
    }
    Ok(())
}

fn check_arms(data: &ObservedDataset, fold: usize, role: &str, rows: &[usize], need: usize) -> Result<()> {
    let treated = data.arm_rows(rows, true).len();
    let control = rows.len() - treated;
    if treated < need || control < need {
        return Err(too_small(
            fold,
            role,
            format!("{treated} treated and {control} control rows, need at least {need} of each"),
        ));
    }
    Ok(())
}

fn check_folds(
    learner: Learner,
    data: &ObservedDataset,
    map: &RoleMap,
    rows: &RoleRows,
    need: usize,
) -> Result<()> {
    check_rows(map.propensity, "propensity", rows.propensity.len(), need)?;
    match learner {
        Learner::X | Learner::DR => check_arms(data, map.response, "response", &rows.response, need)?,
        _ => check_rows(map.response, "response", rows.response.len(), need)?,
    }
    match learner {
        Learner::X => check_arms(data, map.cate, "cate", &rows.cate, need),
        _ => check_rows(map.cate, "cate", rows.cate.len(), need),
    }
}

/// Fits `learner` under `spec`. The fold partition is drawn from `seed`, and
/// each pipeline run uses its own sub-seed.
pub fn run_procedure(
    learner: Learner,
    data: &ObservedDataset,
    spec: &ProcedureSpec,
    base: &dyn BaseLearner,
    params: &LearnerParams,
    seed: u64,
) -> Result<CateModel> {
    let effective = learner.effective_procedure(spec.kind);
    if effective != spec.kind {
        log::info!(
            "{learner}-learner has no separate nuisance functions; using the full sample instead of {}",
            spec.kind
        );
    }
    if effective == ProcedureKind::FullSample {
        let (predictor, nuisance, diagnostics) =
            fit_pipeline(learner, data, base, params, &RoleRows::full(data.len()), child_seed(seed, 1))?;
        return CateModel::new(
            learner,
            effective,
            data.n_features(),
            vec![predictor],
            vec![nuisance],
            diagnostics,
        );
    }
    let folds = assign_folds(data.len(), spec.k, &mut stream(child_seed(seed, 0)))?;
    run_procedure_with_folds(learner, data, spec, &folds, base, params, seed)
}

/// [`run_procedure`] with a caller-supplied partition.
pub fn run_procedure_with_folds(
    learner: Learner,
    data: &ObservedDataset,
    spec: &ProcedureSpec,
    folds: &FoldAssignment,
    base: &dyn BaseLearner,
    params: &LearnerParams,
    seed: u64,
) -> Result<CateModel> {
    if learner.uses_full_sample_only() || spec.kind == ProcedureKind::FullSample {
        let full = ProcedureSpec::new(ProcedureKind::FullSample);
        return run_procedure(learner, data, &full, base, params, seed);
    }
    if folds.fold_of().len() != data.len() || folds.k() != spec.k {
        return Err(CateError::invalid("fold assignment does not match the data and procedure"));
    }
    let role_rows: Vec<(RoleMap, RoleRows)> = spec
        .role_map
        .iter()
        .map(|map| {
            (
                *map,
                RoleRows {
                    propensity: folds.rows(map.propensity),
                    response: folds.rows(map.response),
                    cate: folds.rows(map.cate),
                },
            )
        })
        .collect();
    for (map, rows) in &role_rows {
        check_folds(learner, data, map, rows, base.min_rows())?;
    }
    let fitted = role_rows
        .par_iter()
        .enumerate()
        .map(|(r, (_, rows))| fit_pipeline(learner, data, base, params, rows, child_seed(seed, 1 + r as u64)))
        .collect::<Result<Vec<_>>>()?;
    let mut components = Vec::with_capacity(fitted.len());
    let mut nuisances = Vec::with_capacity(fitted.len());
    let mut diagnostics = FitDiagnostics::default();
    for (predictor, nuisance, diag) in fitted {
        components.push(predictor);
        nuisances.push(nuisance);
        diagnostics.oob_fallbacks += diag.oob_fallbacks;
    }
    CateModel::new(learner, spec.kind, data.n_features(), components, nuisances, diagnostics)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fold_sizes_follow_remainder_rule() {
        let f = assign_folds(9, 3, &mut stream(0)).unwrap();
        assert_eq!(f.sizes(), vec![3, 3, 3]);
        let f = assign_folds(10, 3, &mut stream(0)).unwrap();
        assert_eq!(f.sizes(), vec![4, 3, 3]);
        let f = assign_folds(11, 3, &mut stream(0)).unwrap();
        assert_eq!(f.sizes(), vec![4, 4, 3]);
        assert!(matches!(
            assign_folds(2, 3, &mut stream(0)),
            Err(CateError::InsufficientData { needed: 3, got: 2, .. })
        ));
    }

    #[test]
    fn cross_fit_rotations_cover_every_role() {
        let spec = ProcedureSpec::new(ProcedureKind::CrossFit);
        for fold in 0..3 {
            assert_eq!(spec.role_map.iter().filter(|m| m.propensity == fold).count(), 1);
            assert_eq!(spec.role_map.iter().filter(|m| m.response == fold).count(), 1);
            assert_eq!(spec.role_map.iter().filter(|m| m.cate == fold).count(), 1);
        }
        let split = ProcedureSpec::new(ProcedureKind::SampleSplit);
        assert_eq!(split.role_map, vec![RoleMap { propensity: 0, response: 1, cate: 2 }]);
    }

    #[test]
    fn combine_rules() {
        let one = vec![vec![0.1, 0.7, -3.0]];
        assert_eq!(crossfit_combine(&one).unwrap(), one[0]);
        let three = vec![vec![0.0; 4], vec![1.0; 4], vec![2.0; 4]];
        assert_eq!(crossfit_combine(&three).unwrap(), vec![1.0; 4]);
        assert!(crossfit_combine(&[]).is_err());
        assert!(crossfit_combine(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn procedure_labels_round_trip() {
        for p in ProcedureKind::ALL {
            assert_eq!(p.label().parse::<ProcedureKind>().unwrap(), p);
            assert_eq!(p.suffix().parse::<ProcedureKind>().unwrap(), p);
        }
    }
}
