//! The fit/predict contract shared by forests and test doubles.

use std::fmt::Debug;

use crate::error::Result;
use crate::forest::{self, ForestModel, ForestParams, OobPrediction};
use crate::matrix::Matrix;

/// What a regression is estimating, so that oracle stand-ins can return the
/// matching true function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FitRole {
    /// `mu(x, w)` on covariates with the treatment appended last.
    JointResponse,
    /// `mu(x, w)` on one treatment arm.
    ArmResponse(bool),
    /// `mu(x) = E[Y | X = x]`.
    PooledResponse,
    /// `e(x)`, fitted on the 0/1 treatment indicator.
    Propensity,
    /// X-learner effect regression on the imputed effects of one arm.
    ArmEffect(bool),
    /// Second stage of the DR- and R-learners.
    PseudoOutcome,
}

pub struct FitTask<'a> {
    pub x: &'a Matrix,
    pub y: &'a [f64],
    pub case_weights: Option<&'a [f64]>,
    pub forced_feature: Option<usize>,
    pub role: FitRole,
}

pub trait Regressor: Send + Sync + Debug {
    fn predict(&self, x: &Matrix) -> Result<Vec<f64>>;

    /// Predictions for the training rows, in training order, each using
    /// only model parts that did not see the row.
    fn predict_oob(&self) -> OobPrediction;
}

pub trait BaseLearner: Sync {
    fn fit(&self, task: &FitTask<'_>, seed: u64) -> Result<Box<dyn Regressor>>;

    /// Smallest training set the learner accepts.
    fn min_rows(&self) -> usize {
        1
    }
}

impl Regressor for ForestModel {
    fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        ForestModel::predict(self, x)
    }

    fn predict_oob(&self) -> OobPrediction {
        ForestModel::predict_oob(self)
    }
}

/// Random forest with fixed hyperparameters; forced feature and case
/// weights come from each task.
#[derive(Debug, Clone, PartialEq)]
pub struct ForestLearner {
    pub params: ForestParams,
}

impl ForestLearner {
    pub fn new(params: ForestParams) -> Self {
        Self { params }
    }
}

impl Default for ForestLearner {
    fn default() -> Self {
        Self::new(ForestParams::default())
    }
}

impl BaseLearner for ForestLearner {
    fn fit(&self, task: &FitTask<'_>, seed: u64) -> Result<Box<dyn Regressor>> {
        let mut params = self.params.clone();
        params.forced_feature = task.forced_feature;
        params.case_weights = task.case_weights.map(<[f64]>::to_vec);
        Ok(Box::new(forest::fit(task.x, task.y, &params, seed)?))
    }

    fn min_rows(&self) -> usize {
        2 * self.params.min_leaf
    }
}
