//! S, SW, T, X, DR and R meta-learners.
//!
//! Each learner is expressed as one pipeline run on three row sets: the rows
//! that train the propensity, the rows that train the response functions and
//! the rows that train the CATE stage. Under full-sample estimation the three
//! sets coincide and in-sample nuisance predictions come from out-of-bag
//! predictions. The estimation procedures in [`crate::splitting`] decide
//! which rows play which role.

pub mod base;
pub mod pseudo;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::ObservedDataset;
use crate::error::{CateError, Result};
use crate::matrix::Matrix;
use crate::seed::child_seed;
use crate::splitting::{crossfit_combine, ProcedureKind};

pub use base::{BaseLearner, FitRole, FitTask, ForestLearner, Regressor};
pub use pseudo::{
    clip_propensity, compute_dr_pseudo_outcome, compute_r_modified_outcome, impute_x_effects,
    RESIDUAL_TREATMENT_FLOOR,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Learner {
    S,
    SW,
    T,
    X,
    DR,
    R,
}

impl Learner {
    pub const ALL: [Learner; 6] = [Learner::S, Learner::SW, Learner::T, Learner::X, Learner::DR, Learner::R];

    pub fn label(self) -> &'static str {
        match self {
            Learner::S => "S",
            Learner::SW => "SW",
            Learner::T => "T",
            Learner::X => "X",
            Learner::DR => "DR",
            Learner::R => "R",
        }
    }

    /// Seed-tree code; 0 is reserved for data generation.
    pub fn code(self) -> u64 {
        match self {
            Learner::S => 1,
            Learner::SW => 2,
            Learner::T => 3,
            Learner::X => 4,
            Learner::DR => 5,
            Learner::R => 6,
        }
    }

    /// Learners that fit no nuisance beyond their own response models and so
    /// always use the full sample.
    pub fn uses_full_sample_only(self) -> bool {
        matches!(self, Learner::S | Learner::SW | Learner::T)
    }

    /// Procedure actually run when `requested` is asked for.
    pub fn effective_procedure(self, requested: ProcedureKind) -> ProcedureKind {
        if self.uses_full_sample_only() {
            ProcedureKind::FullSample
        } else {
            requested
        }
    }
}

impl fmt::Display for Learner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Learner {
    type Err = CateError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().replace('-', "").as_str() {
            "S" => Ok(Learner::S),
            "SW" => Ok(Learner::SW),
            "T" => Ok(Learner::T),
            "X" => Ok(Learner::X),
            "DR" => Ok(Learner::DR),
            "R" => Ok(Learner::R),
            other => Err(CateError::invalid(format!("unknown learner `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LearnerParams {
    /// Clip estimated propensities into `[eps, 1 - eps]` before the DR and R
    /// constructions. Off by default.
    pub propensity_clip: Option<f64>,
}

/// Global row indices playing each role in one pipeline run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoleRows {
    pub propensity: Vec<usize>,
    pub response: Vec<usize>,
    pub cate: Vec<usize>,
}

impl RoleRows {
    pub fn full(n: usize) -> Self {
        let all: Vec<usize> = (0..n).collect();
        Self {
            propensity: all.clone(),
            response: all.clone(),
            cate: all,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Nuisance {
    Mu1,
    Mu0,
    Mu,
    E,
}

/// Where one nuisance column came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub nuisance: Nuisance,
    /// Global rows the producing model was trained on.
    pub trained_on: Vec<usize>,
    /// Rows of the target set whose value is an out-of-bag prediction.
    pub out_of_bag_rows: usize,
}

/// Nuisance predictions on the CATE-stage rows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NuisanceSet {
    /// Global rows the columns refer to.
    pub rows: Vec<usize>,
    pub mu1_hat: Option<Vec<f64>>,
    pub mu0_hat: Option<Vec<f64>>,
    pub mu_hat: Option<Vec<f64>>,
    pub e_hat: Option<Vec<f64>>,
    pub provenance: Vec<Provenance>,
}

impl NuisanceSet {
    pub fn source(&self, nuisance: Nuisance) -> Option<&Provenance> {
        self.provenance.iter().find(|p| p.nuisance == nuisance)
    }
}

/// A fitted CATE predictor from one pipeline run.
#[derive(Debug)]
pub enum CatePredictor {
    /// `mu(x, 1) - mu(x, 0)` from one model with the treatment as last column.
    Joint { model: Box<dyn Regressor> },
    /// `mu1(x) - mu0(x)` from per-arm models.
    Arms {
        mu1: Box<dyn Regressor>,
        mu0: Box<dyn Regressor>,
    },
    /// `e(x) tau0(x) + (1 - e(x)) tau1(x)`.
    Weighted {
        tau1: Box<dyn Regressor>,
        tau0: Box<dyn Regressor>,
        e: Box<dyn Regressor>,
    },
    /// Direct regression of a pseudo-outcome.
    Direct { model: Box<dyn Regressor> },
}

impl CatePredictor {
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        match self {
            CatePredictor::Joint { model } => {
                let m1 = model.predict(&x.with_constant_column(1.0))?;
                let m0 = model.predict(&x.with_constant_column(0.0))?;
                Ok(m1.iter().zip(&m0).map(|(a, b)| a - b).collect())
            }
            CatePredictor::Arms { mu1, mu0 } => {
                let m1 = mu1.predict(x)?;
                let m0 = mu0.predict(x)?;
                Ok(m1.iter().zip(&m0).map(|(a, b)| a - b).collect())
            }
            CatePredictor::Weighted { tau1, tau0, e } => {
                let t1 = tau1.predict(x)?;
                let t0 = tau0.predict(x)?;
                let e = e.predict(x)?;
                Ok((0..e.len())
                    .map(|i| e[i] * t0[i] + (1.0 - e[i]) * t1[i])
                    .collect())
            }
            CatePredictor::Direct { model } => model.predict(x),
        }
    }
}

/// Counters surfaced in result tables.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// In-sample nuisance values that had no out-of-bag tree and fell back to
    /// the full model.
    pub oob_fallbacks: usize,
}

/// A fitted meta-learner under one estimation procedure.
#[derive(Debug)]
pub struct CateModel {
    pub learner: Learner,
    pub procedure: ProcedureKind,
    n_features: usize,
    components: Vec<CatePredictor>,
    nuisances: Vec<NuisanceSet>,
    pub diagnostics: FitDiagnostics,
}

impl CateModel {
    pub fn new(
        learner: Learner,
        procedure: ProcedureKind,
        n_features: usize,
        components: Vec<CatePredictor>,
        nuisances: Vec<NuisanceSet>,
        diagnostics: FitDiagnostics,
    ) -> Result<Self> {
        if components.is_empty() {
            return Err(CateError::invalid("a CATE model needs at least one component"));
        }
        Ok(Self {
            learner,
            procedure,
            n_features,
            components,
            nuisances,
            diagnostics,
        })
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn components(&self) -> &[CatePredictor] {
        &self.components
    }

    /// Nuisance predictions handed to each component's CATE stage.
    pub fn nuisances(&self) -> &[NuisanceSet] {
        &self.nuisances
    }

    pub fn component_predictions(&self, x: &Matrix) -> Result<Vec<Vec<f64>>> {
        if x.n_cols() != self.n_features {
            return Err(CateError::invalid(format!(
                "model trained on {} features, got {}",
                self.n_features,
                x.n_cols()
            )));
        }
        self.components.iter().map(|c| c.predict(x)).collect()
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        crossfit_combine(&self.component_predictions(x)?)
    }
}

// Component seed slots within one pipeline run.
const SEED_JOINT: u64 = 1;
const SEED_MU1: u64 = 2;
const SEED_MU0: u64 = 3;
const SEED_MU: u64 = 4;
const SEED_E: u64 = 5;
const SEED_TAU1: u64 = 6;
const SEED_TAU0: u64 = 7;
const SEED_SECOND: u64 = 8;

struct Fitted {
    model: Box<dyn Regressor>,
    rows: Vec<usize>,
}

struct Pipeline<'a> {
    data: &'a ObservedDataset,
    base: &'a dyn BaseLearner,
    seed: u64,
    oob_fallbacks: usize,
}

impl Pipeline<'_> {
    fn fit(
        &self,
        rows: &[usize],
        targets: Vec<f64>,
        weights: Option<&[f64]>,
        role: FitRole,
        slot: u64,
    ) -> Result<Fitted> {
        let x = self.data.x().select_rows(rows);
        let task = FitTask {
            x: &x,
            y: &targets,
            case_weights: weights,
            forced_feature: None,
            role,
        };
        Ok(Fitted {
            model: self.base.fit(&task, child_seed(self.seed, slot))?,
            rows: rows.to_vec(),
        })
    }

    fn outcomes(&self, rows: &[usize]) -> Vec<f64> {
        rows.iter().map(|&i| self.data.y()[i]).collect()
    }

    fn treatments(&self, rows: &[usize]) -> Vec<bool> {
        rows.iter().map(|&i| self.data.w()[i]).collect()
    }

    fn arm(&self, rows: &[usize], treated: bool, context: &str) -> Result<Vec<usize>> {
        let arm = self.data.arm_rows(rows, treated);
        if arm.is_empty() {
            return Err(CateError::EmptyTreatmentArm {
                arm: u8::from(treated),
                context: context.to_string(),
            });
        }
        Ok(arm)
    }

    /// Predictions of `fitted` on `target` rows: out-of-bag for rows the
    /// model was trained on, full-model otherwise.
    fn predict_rows(&mut self, fitted: &Fitted, target: &[usize], nuisance: Nuisance) -> Result<(Vec<f64>, Provenance)> {
        let n = self.data.len();
        let mut position = vec![usize::MAX; n];
        for (k, &r) in fitted.rows.iter().enumerate() {
            position[r] = k;
        }
        let mut out = vec![0.0; target.len()];
        let mut outside = Vec::new();
        let mut outside_slots = Vec::new();
        let mut in_sample = 0;
        let oob = if target.iter().any(|&r| position[r] != usize::MAX) {
            Some(fitted.model.predict_oob())
        } else {
            None
        };
        for (slot, &r) in target.iter().enumerate() {
            match (position[r], &oob) {
                (k, Some(oob)) if k != usize::MAX => {
                    out[slot] = oob.values[k];
                    in_sample += 1;
                    if !oob.valid[k] {
                        self.oob_fallbacks += 1;
                    }
                }
                _ => {
                    outside.push(r);
                    outside_slots.push(slot);
                }
            }
        }
        if !outside.is_empty() {
            let preds = fitted.model.predict(&self.data.x().select_rows(&outside))?;
            for (slot, v) in outside_slots.into_iter().zip(preds) {
                out[slot] = v;
            }
        }
        let provenance = Provenance {
            nuisance,
            trained_on: fitted.rows.clone(),
            out_of_bag_rows: in_sample,
        };
        Ok((out, provenance))
    }

    fn propensity(&self, rows: &[usize]) -> Result<Fitted> {
        let w = rows.iter().map(|&i| self.data.w_f64(i)).collect();
        self.fit(rows, w, None, FitRole::Propensity, SEED_E)
    }

    fn arm_responses(&self, rows: &[usize]) -> Result<(Fitted, Fitted)> {
        let treated = self.arm(rows, true, "treated response model")?;
        let control = self.arm(rows, false, "control response model")?;
        let mu1 = self.fit(&treated, self.outcomes(&treated), None, FitRole::ArmResponse(true), SEED_MU1)?;
        let mu0 = self.fit(&control, self.outcomes(&control), None, FitRole::ArmResponse(false), SEED_MU0)?;
        Ok((mu1, mu0))
    }
}

fn relocate(err: CateError, rows: &[usize]) -> CateError {
    match err {
        CateError::ExtremePropensity { row, value } => CateError::ExtremePropensity { row: rows[row], value },
        CateError::DegenerateResidualTreatment { row, residual } => {
            CateError::DegenerateResidualTreatment { row: rows[row], residual }
        }
        other => other,
    }
}

/// Runs one learner pipeline on the given role rows and returns its CATE
/// predictor with the nuisance values fed to the CATE stage.
pub fn fit_pipeline(
    learner: Learner,
    data: &ObservedDataset,
    base: &dyn BaseLearner,
    params: &LearnerParams,
    rows: &RoleRows,
    seed: u64,
) -> Result<(CatePredictor, NuisanceSet, FitDiagnostics)> {
    let mut pipe = Pipeline {
        data,
        base,
        seed,
        oob_fallbacks: 0,
    };
    let cate = &rows.cate;
    let mut nuisances = NuisanceSet {
        rows: cate.clone(),
        ..NuisanceSet::default()
    };

    let predictor = match learner {
        Learner::S | Learner::SW => {
            let x = data.x().select_rows(cate).with_column(&pipe.treatments(cate).iter().map(|&t| if t { 1.0 } else { 0.0 }).collect::<Vec<_>>())?;
            let y = pipe.outcomes(cate);
            let task = FitTask {
                x: &x,
                y: &y,
                case_weights: None,
                forced_feature: (learner == Learner::SW).then_some(data.n_features()),
                role: FitRole::JointResponse,
            };
            CatePredictor::Joint {
                model: base.fit(&task, child_seed(seed, SEED_JOINT))?,
            }
        }
        Learner::T => {
            let (mu1, mu0) = pipe.arm_responses(cate)?;
            CatePredictor::Arms {
                mu1: mu1.model,
                mu0: mu0.model,
            }
        }
        Learner::X => {
            let (mu1, mu0) = pipe.arm_responses(&rows.response)?;
            let (m1, p1) = pipe.predict_rows(&mu1, cate, Nuisance::Mu1)?;
            let (m0, p0) = pipe.predict_rows(&mu0, cate, Nuisance::Mu0)?;
            let w = pipe.treatments(cate);
            let xi = impute_x_effects(&pipe.outcomes(cate), &w, &m1, &m0)?;
            let mut xi1 = Vec::new();
            let mut xi0 = Vec::new();
            let mut treated = Vec::new();
            let mut control = Vec::new();
            for (k, &r) in cate.iter().enumerate() {
                if w[k] {
                    treated.push(r);
                    xi1.push(xi[k]);
                } else {
                    control.push(r);
                    xi0.push(xi[k]);
                }
            }
            if treated.is_empty() || control.is_empty() {
                return Err(CateError::EmptyTreatmentArm {
                    arm: u8::from(treated.is_empty()),
                    context: "X-learner effect regression".into(),
                });
            }
            let tau1 = pipe.fit(&treated, xi1, None, FitRole::ArmEffect(true), SEED_TAU1)?;
            let tau0 = pipe.fit(&control, xi0, None, FitRole::ArmEffect(false), SEED_TAU0)?;
            let e = pipe.propensity(&rows.propensity)?;
            nuisances.mu1_hat = Some(m1);
            nuisances.mu0_hat = Some(m0);
            nuisances.provenance.extend([p1, p0]);
            CatePredictor::Weighted {
                tau1: tau1.model,
                tau0: tau0.model,
                e: e.model,
            }
        }
        Learner::DR => {
            let (mu1, mu0) = pipe.arm_responses(&rows.response)?;
            let e = pipe.propensity(&rows.propensity)?;
            let (m1, p1) = pipe.predict_rows(&mu1, cate, Nuisance::Mu1)?;
            let (m0, p0) = pipe.predict_rows(&mu0, cate, Nuisance::Mu0)?;
            let (mut e_hat, pe) = pipe.predict_rows(&e, cate, Nuisance::E)?;
            if let Some(eps) = params.propensity_clip {
                clip_propensity(&mut e_hat, eps);
            }
            let psi = compute_dr_pseudo_outcome(&pipe.outcomes(cate), &pipe.treatments(cate), &m1, &m0, &e_hat)
                .map_err(|err| relocate(err, cate))?;
            let second = pipe.fit(cate, psi, None, FitRole::PseudoOutcome, SEED_SECOND)?;
            nuisances.mu1_hat = Some(m1);
            nuisances.mu0_hat = Some(m0);
            nuisances.e_hat = Some(e_hat);
            nuisances.provenance.extend([p1, p0, pe]);
            CatePredictor::Direct { model: second.model }
        }
        Learner::R => {
            let response = &rows.response;
            let mu = pipe.fit(response, pipe.outcomes(response), None, FitRole::PooledResponse, SEED_MU)?;
            let e = pipe.propensity(&rows.propensity)?;
            let (m, pm) = pipe.predict_rows(&mu, cate, Nuisance::Mu)?;
            let (mut e_hat, pe) = pipe.predict_rows(&e, cate, Nuisance::E)?;
            if let Some(eps) = params.propensity_clip {
                clip_propensity(&mut e_hat, eps);
            }
            let (phi, weights) = compute_r_modified_outcome(&pipe.outcomes(cate), &pipe.treatments(cate), &m, &e_hat)
                .map_err(|err| relocate(err, cate))?;
            let second = pipe.fit(cate, phi, Some(&weights), FitRole::PseudoOutcome, SEED_SECOND)?;
            nuisances.mu_hat = Some(m);
            nuisances.e_hat = Some(e_hat);
            nuisances.provenance.extend([pm, pe]);
            CatePredictor::Direct { model: second.model }
        }
    };
    let diagnostics = FitDiagnostics {
        oob_fallbacks: pipe.oob_fallbacks,
    };
    Ok((predictor, nuisances, diagnostics))
}
