//! Random-forest regression base learner.
//!
//! Breiman-style forest: each tree is grown to purity (subject to a minimum
//! leaf size) on a bootstrap sample, with `mtry` candidate features drawn at
//! every node. Binary targets coded 0/1 are handled by the same regression
//! machinery, so the forest doubles as a probability estimator.
//!
//! The fitted model remembers which rows every tree drew, which makes
//! out-of-bag predictions for the training rows available without keeping
//! the training matrix around.

mod tree;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CateError, Result};
use crate::matrix::Matrix;
use crate::seed::{child_seed, stream};

pub use tree::{Node, SplitChoice, SplitObserver, SplitVisit, Tree};

use tree::{ColumnData, GrowSettings, SplitScratch};

/// Trees fitted per parallel batch; bounds the transient memory held by
/// per-tree out-of-bag contributions.
const TREE_BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Candidate features per node; `None` means `ceil(sqrt(p))`.
    pub mtry: Option<usize>,
    pub min_leaf: usize,
    /// Feature appended to every node's candidate set when not drawn.
    pub forced_feature: Option<usize>,
    /// Bootstrap sampling weights, one per training row.
    pub case_weights: Option<Vec<f64>>,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 1000,
            mtry: None,
            min_leaf: 5,
            forced_feature: None,
            case_weights: None,
        }
    }
}

impl ForestParams {
    pub fn resolved_mtry(&self, n_features: usize) -> usize {
        self.mtry
            .unwrap_or_else(|| (n_features as f64).sqrt().ceil() as usize)
            .clamp(1, n_features.max(1))
    }

    fn validate(&self, n_rows: usize, n_features: usize) -> Result<()> {
        if self.n_trees == 0 {
            return Err(CateError::invalid("n_trees must be at least 1"));
        }
        if self.min_leaf == 0 {
            return Err(CateError::invalid("min_leaf must be at least 1"));
        }
        if n_features == 0 {
            return Err(CateError::invalid("at least one feature is required"));
        }
        if let Some(mtry) = self.mtry {
            if mtry == 0 || mtry > n_features {
                return Err(CateError::invalid(format!(
                    "mtry = {mtry} must lie in 1..={n_features}"
                )));
            }
        }
        if let Some(f) = self.forced_feature {
            if f >= n_features {
                return Err(CateError::invalid(format!(
                    "forced feature {f} out of range for {n_features} features"
                )));
            }
        }
        if let Some(w) = &self.case_weights {
            if w.len() != n_rows {
                return Err(CateError::invalid(format!(
                    "{} case weights for {n_rows} rows",
                    w.len()
                )));
            }
            if w.iter().any(|&v| !v.is_finite() || v < 0.0) {
                return Err(CateError::invalid("case weights must be finite and non-negative"));
            }
            if !w.iter().any(|&v| v > 0.0) {
                return Err(CateError::invalid("at least one case weight must be positive"));
            }
        }
        Ok(())
    }
}

/// Bootstrap multiplicities of one tree, indexed by training row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InBag {
    counts: Vec<u16>,
}

impl InBag {
    pub fn from_counts(counts: Vec<u16>) -> Self {
        Self { counts }
    }

    #[inline]
    pub fn count(&self, row: usize) -> u16 {
        self.counts[row]
    }

    #[inline]
    pub fn is_out_of_bag(&self, row: usize) -> bool {
        self.counts[row] == 0
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn n_distinct(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }
}

/// Out-of-bag predictions for the training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct OobPrediction {
    pub values: Vec<f64>,
    /// `false` where no tree left the row out; the value is then the
    /// full-forest prediction.
    pub valid: Vec<bool>,
}

impl OobPrediction {
    pub fn n_fallback(&self) -> usize {
        self.valid.iter().filter(|v| !**v).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    trees: Vec<Tree>,
    inbag: Vec<InBag>,
    training_range: (f64, f64),
    n_features: usize,
    oob_values: Vec<f64>,
    oob_valid: Vec<bool>,
}

impl ForestModel {
    /// Assembles a model from explicit trees and bootstrap records,
    /// computing out-of-bag predictions against `training_features`.
    pub fn from_trees(
        trees: Vec<Tree>,
        inbag: Vec<InBag>,
        training_features: &Matrix,
        training_range: (f64, f64),
    ) -> Result<Self> {
        if trees.is_empty() || trees.len() != inbag.len() {
            return Err(CateError::invalid(format!(
                "{} trees with {} bootstrap records",
                trees.len(),
                inbag.len()
            )));
        }
        let n = training_features.n_rows();
        if inbag.iter().any(|b| b.len() != n) {
            return Err(CateError::invalid("bootstrap records must cover every training row"));
        }
        let p = training_features.n_cols();
        if trees.iter().any(|t| t.max_feature().is_some_and(|f| f >= p)) {
            return Err(CateError::invalid("tree splits on a feature outside the matrix"));
        }
        let mut model = Self {
            trees,
            inbag,
            training_range,
            n_features: p,
            oob_values: Vec::new(),
            oob_valid: Vec::new(),
        };
        let mut acc = OobAccumulator::new(n);
        for (tree, bag) in model.trees.iter().zip(&model.inbag) {
            acc.add(&tree_oob(tree, bag, training_features));
        }
        model.finish_oob(acc, training_features);
        Ok(model)
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn inbag(&self) -> &[InBag] {
        &self.inbag
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_train(&self) -> usize {
        self.oob_values.len()
    }

    pub fn training_range(&self) -> (f64, f64) {
        self.training_range
    }

    #[inline]
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict_row(row)).sum();
        self.clamp(sum / self.trees.len() as f64)
    }

    pub fn predict(&self, features: &Matrix) -> Result<Vec<f64>> {
        if features.n_rows() > 0 && features.n_cols() != self.n_features {
            return Err(CateError::invalid(format!(
                "model trained on {} features, got {}",
                self.n_features,
                features.n_cols()
            )));
        }
        Ok((0..features.n_rows())
            .into_par_iter()
            .with_min_len(64)
            .map(|i| self.predict_row(features.row(i)))
            .collect())
    }

    pub fn predict_oob(&self) -> OobPrediction {
        OobPrediction {
            values: self.oob_values.clone(),
            valid: self.oob_valid.clone(),
        }
    }

    #[inline]
    fn clamp(&self, value: f64) -> f64 {
        value.clamp(self.training_range.0, self.training_range.1)
    }

    fn finish_oob(&mut self, acc: OobAccumulator, training_features: &Matrix) {
        let n = acc.sums.len();
        let mut values = Vec::with_capacity(n);
        let mut valid = Vec::with_capacity(n);
        for i in 0..n {
            if acc.counts[i] > 0 {
                values.push(self.clamp(acc.sums[i] / acc.counts[i] as f64));
                valid.push(true);
            } else {
                values.push(self.predict_row(training_features.row(i)));
                valid.push(false);
            }
        }
        let n_fallback = valid.iter().filter(|v| !**v).count();
        if n_fallback > 0 {
            log::warn!(
                "{n_fallback} of {n} training rows have no out-of-bag tree; \
                 using full-forest predictions for them"
            );
        }
        self.oob_values = values;
        self.oob_valid = valid;
    }
}

struct OobAccumulator {
    sums: Vec<f64>,
    counts: Vec<u32>,
}

impl OobAccumulator {
    fn new(n: usize) -> Self {
        Self {
            sums: vec![0.0; n],
            counts: vec![0; n],
        }
    }

    fn add(&mut self, contributions: &[(u32, f64)]) {
        for &(row, value) in contributions {
            self.sums[row as usize] += value;
            self.counts[row as usize] += 1;
        }
    }
}

fn tree_oob(tree: &Tree, bag: &InBag, features: &Matrix) -> Vec<(u32, f64)> {
    (0..bag.len())
        .filter(|&i| bag.is_out_of_bag(i))
        .map(|i| (i as u32, tree.predict_row(features.row(i))))
        .collect()
}

enum Bootstrap {
    Uniform,
    Weighted(WeightedIndex<f64>),
}

impl Bootstrap {
    fn new(case_weights: Option<&[f64]>) -> Result<Self> {
        let Some(w) = case_weights else {
            return Ok(Bootstrap::Uniform);
        };
        // Equal weights are proportional to uniform sampling; take the
        // uniform path so that both consume the stream identically.
        if w.iter().all(|&v| v == w[0]) {
            return Ok(Bootstrap::Uniform);
        }
        WeightedIndex::new(w)
            .map(Bootstrap::Weighted)
            .map_err(|e| CateError::invalid(format!("case weights: {e}")))
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<u16> {
        let mut counts = vec![0u16; n];
        for _ in 0..n {
            let i = match self {
                Bootstrap::Uniform => rng.random_range(0..n),
                Bootstrap::Weighted(dist) => dist.sample(rng),
            };
            counts[i] = counts[i].saturating_add(1);
        }
        counts
    }
}

fn validate_data(features: &Matrix, targets: &[f64], params: &ForestParams) -> Result<()> {
    let n = features.n_rows();
    if targets.len() != n {
        return Err(CateError::invalid(format!(
            "{} targets for {n} feature rows",
            targets.len()
        )));
    }
    params.validate(n, features.n_cols())?;
    if n < 2 * params.min_leaf {
        return Err(CateError::InsufficientData {
            context: "forest fit".into(),
            needed: 2 * params.min_leaf,
            got: n,
        });
    }
    if !features.all_finite() || targets.iter().any(|v| !v.is_finite()) {
        return Err(CateError::invalid("features and targets must be finite"));
    }
    Ok(())
}

/// Fits a forest. Identical inputs and `seed` give a bit-identical model
/// regardless of the number of worker threads.
pub fn fit(
    features: &Matrix,
    targets: &[f64],
    params: &ForestParams,
    seed: u64,
) -> Result<ForestModel> {
    fit_inner(features, targets, params, seed, None)
}

/// Like [`fit`], but calls `observer` with the candidate feature set of
/// every node that searches for a split.
pub fn fit_observed(
    features: &Matrix,
    targets: &[f64],
    params: &ForestParams,
    seed: u64,
    observer: SplitObserver<'_>,
) -> Result<ForestModel> {
    fit_inner(features, targets, params, seed, Some(observer))
}

fn fit_inner(
    features: &Matrix,
    targets: &[f64],
    params: &ForestParams,
    seed: u64,
    observer: Option<SplitObserver<'_>>,
) -> Result<ForestModel> {
    validate_data(features, targets, params)?;
    let n = features.n_rows();
    let p = features.n_cols();

    let mut columns = vec![0.0; n * p];
    for (i, row) in features.rows().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            columns[j * n + i] = v;
        }
    }
    let data = ColumnData {
        columns: &columns,
        n_rows: n,
        n_features: p,
        targets,
    };
    let settings = GrowSettings {
        mtry: params.resolved_mtry(p),
        min_leaf: params.min_leaf,
        forced_feature: params.forced_feature,
    };
    let bootstrap = Bootstrap::new(params.case_weights.as_deref())?;
    let training_range = targets
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &y| {
            (lo.min(y), hi.max(y))
        });

    let mut trees = Vec::with_capacity(params.n_trees);
    let mut inbag = Vec::with_capacity(params.n_trees);
    let mut acc = OobAccumulator::new(n);
    for batch_start in (0..params.n_trees).step_by(TREE_BATCH) {
        let batch_end = (batch_start + TREE_BATCH).min(params.n_trees);
        let fitted: Vec<(Tree, InBag, Vec<(u32, f64)>)> = (batch_start..batch_end)
            .into_par_iter()
            .map(|t| {
                let mut rng = stream(child_seed(seed, t as u64));
                let counts = bootstrap.draw(&mut rng, n);
                let weights: Vec<f64> = counts.iter().map(|&c| f64::from(c)).collect();
                let tree =
                    tree::grow_tree(&data, &weights, &settings, &mut rng, observer.map(|o| (t, o)));
                let bag = InBag::from_counts(counts);
                let oob = tree_oob(&tree, &bag, features);
                (tree, bag, oob)
            })
            .collect();
        for (tree, bag, oob) in fitted {
            acc.add(&oob);
            trees.push(tree);
            inbag.push(bag);
        }
    }

    let mut model = ForestModel {
        trees,
        inbag,
        training_range,
        n_features: p,
        oob_values: Vec::new(),
        oob_valid: Vec::new(),
    };
    model.finish_oob(acc, features);
    Ok(model)
}

/// Best variance-reduction split of `rows` over `candidates` (searched in
/// the given order), using unit weights per listed row. Exposed for
/// checking the tree grower's split search against independent oracles.
pub fn best_split(
    features: &Matrix,
    targets: &[f64],
    rows: &[usize],
    candidates: &[usize],
    min_leaf: usize,
) -> Option<SplitChoice> {
    let n = features.n_rows();
    let p = features.n_cols();
    let mut columns = vec![0.0; n * p];
    for (i, row) in features.rows().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            columns[j * n + i] = v;
        }
    }
    let data = ColumnData {
        columns: &columns,
        n_rows: n,
        n_features: p,
        targets,
    };
    let mut weights = vec![0.0; n];
    for &r in rows {
        weights[r] += 1.0;
    }
    let mut samples: Vec<u32> = rows.iter().map(|&r| r as u32).collect();
    samples.sort_unstable();
    samples.dedup();
    tree::search_split(
        &data,
        &weights,
        &samples,
        candidates,
        min_leaf,
        &mut SplitScratch::new(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use std::sync::Mutex;

    fn uniform_matrix(n: usize, p: usize, seed: u64) -> Matrix {
        let mut rng = stream(seed);
        let data = (0..n * p).map(|_| rng.random::<f64>()).collect();
        Matrix::from_row_major(n, p, data).unwrap()
    }

    fn small_params(n_trees: usize) -> ForestParams {
        ForestParams {
            n_trees,
            ..ForestParams::default()
        }
    }

    #[test]
    fn constant_targets_predict_constant() {
        let x = uniform_matrix(60, 3, 1);
        let y = vec![0.1; 60];
        let model = fit(&x, &y, &small_params(20), 9).unwrap();
        let preds = model.predict(&uniform_matrix(15, 3, 2)).unwrap();
        assert!(preds.iter().all(|&v| v == 0.1));
        let oob = model.predict_oob();
        assert!(oob.values.iter().all(|&v| v == 0.1));
    }

    #[test]
    fn empty_prediction_matrix() {
        let x = uniform_matrix(30, 2, 1);
        let y: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let model = fit(&x, &y, &small_params(5), 3).unwrap();
        assert!(model.predict(&Matrix::zeros(0, 2)).unwrap().is_empty());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let x = uniform_matrix(30, 2, 1);
        let y: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let model = fit(&x, &y, &small_params(5), 3).unwrap();
        assert!(matches!(
            model.predict(&Matrix::zeros(4, 3)),
            Err(CateError::InvalidInput(_))
        ));
    }

    #[test]
    fn too_few_rows() {
        let x = uniform_matrix(9, 2, 1);
        let y = vec![0.0; 9];
        assert!(matches!(
            fit(&x, &y, &small_params(5), 3),
            Err(CateError::InsufficientData { needed: 10, got: 9, .. })
        ));
    }

    #[test]
    fn non_finite_rejected() {
        let mut x = uniform_matrix(20, 2, 1);
        x.set(3, 1, f64::NAN);
        let y = vec![0.0; 20];
        assert!(matches!(
            fit(&x, &y, &small_params(5), 3),
            Err(CateError::InvalidInput(_))
        ));
        let x = uniform_matrix(20, 2, 1);
        let mut y = vec![0.0; 20];
        y[0] = f64::INFINITY;
        assert!(fit(&x, &y, &small_params(5), 3).is_err());
    }

    #[test]
    fn bad_params_rejected() {
        let x = uniform_matrix(20, 2, 1);
        let y = vec![0.0; 20];
        for params in [
            ForestParams { n_trees: 0, ..small_params(1) },
            ForestParams { mtry: Some(3), ..small_params(1) },
            ForestParams { mtry: Some(0), ..small_params(1) },
            ForestParams { min_leaf: 0, ..small_params(1) },
            ForestParams { forced_feature: Some(2), ..small_params(1) },
            ForestParams { case_weights: Some(vec![0.0; 20]), ..small_params(1) },
            ForestParams { case_weights: Some(vec![-1.0; 20]), ..small_params(1) },
            ForestParams { case_weights: Some(vec![1.0; 19]), ..small_params(1) },
        ] {
            assert!(fit(&x, &y, &params, 0).is_err(), "{params:?}");
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let x = uniform_matrix(200, 4, 5);
        let y: Vec<f64> = x.rows().map(|r| r[0] + r[1] * r[2]).collect();
        let a = fit(&x, &y, &small_params(30), 77).unwrap();
        let b = fit(&x, &y, &small_params(30), 77).unwrap();
        assert_eq!(a, b);
        let c = fit(&x, &y, &small_params(30), 78).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let x = uniform_matrix(150, 4, 5);
        let y: Vec<f64> = x.rows().map(|r| r[0] - r[3]).collect();
        let fit_with = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| fit(&x, &y, &small_params(70), 5).unwrap())
        };
        assert_eq!(fit_with(1), fit_with(3));
    }

    #[test]
    fn leaves_hold_min_leaf_and_predictions_bounded() {
        let x = uniform_matrix(300, 3, 11);
        let mut rng = stream(4);
        let y: Vec<f64> = (0..300).map(|_| rng.random::<f64>() * 10.0 - 5.0).collect();
        let params = ForestParams { min_leaf: 7, ..small_params(25) };
        let model = fit(&x, &y, &params, 1).unwrap();
        let (lo, hi) = model.training_range();
        for (tree, bag) in model.trees().iter().zip(model.inbag()) {
            // route every in-bag draw to its leaf and count per leaf
            let mut per_leaf = std::collections::HashMap::new();
            for i in 0..300 {
                let c = bag.count(i);
                if c == 0 {
                    continue;
                }
                let mut id = 0;
                while let Node::Split { feature, threshold, left, right } = tree.nodes()[id] {
                    id = if x.get(i, feature) <= threshold { left } else { right };
                }
                *per_leaf.entry(id).or_insert(0u32) += u32::from(c);
            }
            assert_eq!(per_leaf.len(), tree.n_leaves(), "every leaf holds training rows");
            assert!(per_leaf.values().all(|&c| c >= 7));
        }
        for v in model.predict(&uniform_matrix(100, 3, 12)).unwrap() {
            assert!(lo <= v && v <= hi);
        }
    }

    #[test]
    fn oob_matches_manual_recomputation() {
        let x = uniform_matrix(120, 3, 21);
        let y: Vec<f64> = x.rows().map(|r| (r[0] * 6.0).sin()).collect();
        let model = fit(&x, &y, &small_params(40), 2).unwrap();
        let oob = model.predict_oob();
        for i in 0..120 {
            let mut sum = 0.0;
            let mut k = 0;
            for (tree, bag) in model.trees().iter().zip(model.inbag()) {
                if bag.is_out_of_bag(i) {
                    sum += tree.predict_row(x.row(i));
                    k += 1;
                }
            }
            if k > 0 {
                assert!(oob.valid[i]);
                assert!((oob.values[i] - sum / k as f64).abs() < 1e-12);
            } else {
                assert!(!oob.valid[i]);
            }
        }
    }

    #[test]
    fn single_full_bag_tree_falls_back() {
        let x = uniform_matrix(12, 1, 3);
        let tree = Tree::from_nodes(vec![
            Node::Split { feature: 0, threshold: 0.5, left: 1, right: 2 },
            Node::Leaf { value: 0.25 },
            Node::Leaf { value: 0.75 },
        ])
        .unwrap();
        let bag = InBag::from_counts(vec![1; 12]);
        let model = ForestModel::from_trees(vec![tree], vec![bag], &x, (0.0, 1.0)).unwrap();
        let oob = model.predict_oob();
        assert_eq!(oob.n_fallback(), 12);
        assert_eq!(oob.values, model.predict(&x).unwrap());
    }

    #[test]
    fn forced_feature_in_every_candidate_set() {
        let x = uniform_matrix(200, 9, 8);
        let y: Vec<f64> = x.rows().map(|r| r[1] + r[4]).collect();
        let params = ForestParams {
            forced_feature: Some(8),
            mtry: Some(2),
            ..small_params(10)
        };
        let visits = Mutex::new(Vec::new());
        let observer = |v: &SplitVisit<'_>| visits.lock().unwrap().push(v.candidates.to_vec());
        fit_observed(&x, &y, &params, 4, &observer).unwrap();
        let visits = visits.into_inner().unwrap();
        assert!(!visits.is_empty());
        for cands in visits {
            assert!(cands.contains(&8));
            assert!(cands.len() == 2 || cands.len() == 3);
            assert!(cands.len() == 2 || cands[2] == 8, "forced feature is appended last");
        }
    }

    #[test]
    fn equal_case_weights_match_unweighted() {
        let x = uniform_matrix(80, 3, 8);
        let y: Vec<f64> = x.rows().map(|r| r[2]).collect();
        let a = fit(&x, &y, &small_params(10), 6).unwrap();
        let weighted = ForestParams {
            case_weights: Some(vec![0.3; 80]),
            ..small_params(10)
        };
        let b = fit(&x, &y, &weighted, 6).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_weight_rows_never_in_bag() {
        let x = uniform_matrix(80, 3, 8);
        let y: Vec<f64> = x.rows().map(|r| r[2]).collect();
        let mut w = vec![1.0; 80];
        for v in w.iter_mut().take(20) {
            *v = 0.0;
        }
        let params = ForestParams { case_weights: Some(w), ..small_params(15) };
        let model = fit(&x, &y, &params, 6).unwrap();
        for bag in model.inbag() {
            assert!((0..20).all(|i| bag.is_out_of_bag(i)));
        }
    }
}
