//! Single regression tree: storage, traversal and CART growth.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CateError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Node {
    /// Rows with `x[feature] <= threshold` descend to `left`.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    /// Builds a tree from an explicit node table rooted at index 0.
    pub fn from_nodes(nodes: Vec<Node>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(CateError::invalid("a tree needs at least one node"));
        }
        let mut visited = vec![false; nodes.len()];
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            if std::mem::replace(&mut visited[id], true) {
                return Err(CateError::invalid(format!("node {id} is reachable twice")));
            }
            if let Node::Split { left, right, .. } = nodes[id] {
                for child in [left, right] {
                    if child >= nodes.len() {
                        return Err(CateError::invalid(format!(
                            "node {id} links to missing node {child}"
                        )));
                    }
                    stack.push(child);
                }
            }
        }
        Ok(Self { nodes })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    #[inline]
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut id = 0;
        loop {
            match self.nodes[id] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => id = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    /// Largest feature index used by any split.
    pub fn max_feature(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .max()
    }
}

/// Best split of a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    /// Weighted reduction of the node's sum of squared errors.
    pub decrease: f64,
}

/// Information handed to a split observer each time a node searches for a
/// split.
#[derive(Debug, Clone, Copy)]
pub struct SplitVisit<'a> {
    pub tree: usize,
    pub candidates: &'a [usize],
    pub node_weight: f64,
}

pub type SplitObserver<'o> = &'o (dyn Fn(&SplitVisit<'_>) + Sync);

/// Training data laid out column-major for split search.
pub(crate) struct ColumnData<'a> {
    pub columns: &'a [f64],
    pub n_rows: usize,
    pub n_features: usize,
    pub targets: &'a [f64],
}

impl ColumnData<'_> {
    #[inline]
    fn value(&self, row: usize, feature: usize) -> f64 {
        self.columns[feature * self.n_rows + row]
    }
}

pub(crate) struct GrowSettings {
    pub mtry: usize,
    pub min_leaf: usize,
    pub forced_feature: Option<usize>,
}

/// Midpoint between two consecutive distinct sorted values that still
/// separates them.
#[inline]
pub(crate) fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid >= hi {
        lo
    } else {
        mid
    }
}

/// Scratch space reused across nodes.
pub(crate) struct SplitScratch {
    sorted: Vec<(f64, u32)>,
}

impl SplitScratch {
    pub fn new() -> Self {
        Self { sorted: Vec::new() }
    }
}

/// Exhaustive variance-reduction search over `candidates`, in order.
///
/// `samples` lists distinct rows with positive `weights`. Ties keep the
/// earliest candidate and, within a feature, the lowest threshold.
pub(crate) fn search_split(
    data: &ColumnData<'_>,
    weights: &[f64],
    samples: &[u32],
    candidates: &[usize],
    min_leaf: usize,
    scratch: &mut SplitScratch,
) -> Option<SplitChoice> {
    let min_leaf = min_leaf as f64;
    let (total_w, total_s) = samples.iter().fold((0.0, 0.0), |(w, s), &r| {
        let r = r as usize;
        (w + weights[r], s + weights[r] * data.targets[r])
    });
    if total_w < 2.0 * min_leaf {
        return None;
    }
    let parent_score = total_s * total_s / total_w;

    let mut best: Option<SplitChoice> = None;
    for &feature in candidates {
        let sorted = &mut scratch.sorted;
        sorted.clear();
        sorted.extend(
            samples
                .iter()
                .map(|&r| (data.value(r as usize, feature), r)),
        );
        sorted.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        if sorted[0].0 == sorted[sorted.len() - 1].0 {
            continue;
        }

        let mut left_w = 0.0;
        let mut left_s = 0.0;
        for k in 0..sorted.len() - 1 {
            let (x, r) = sorted[k];
            let r = r as usize;
            left_w += weights[r];
            left_s += weights[r] * data.targets[r];
            let next_x = sorted[k + 1].0;
            if x == next_x || left_w < min_leaf {
                continue;
            }
            let right_w = total_w - left_w;
            if right_w < min_leaf {
                break;
            }
            let right_s = total_s - left_s;
            let decrease = left_s * left_s / left_w + right_s * right_s / right_w - parent_score;
            if decrease > best.map_or(0.0, |b| b.decrease) {
                best = Some(SplitChoice {
                    feature,
                    threshold: midpoint(x, next_x),
                    decrease,
                });
            }
        }
    }
    best
}

/// Draws the candidate feature set of one node: `mtry` features without
/// replacement in draw order, then the forced feature if it was not drawn.
pub(crate) fn draw_candidates<R: Rng + ?Sized>(
    rng: &mut R,
    n_features: usize,
    settings: &GrowSettings,
    out: &mut Vec<usize>,
) {
    out.clear();
    out.extend(index::sample(rng, n_features, settings.mtry).iter());
    if let Some(forced) = settings.forced_feature {
        if !out.contains(&forced) {
            out.push(forced);
        }
    }
}

/// Grows one tree on the in-bag rows described by `weights` (bootstrap
/// multiplicities, zero for out-of-bag rows).
pub(crate) fn grow_tree<R: Rng + ?Sized>(
    data: &ColumnData<'_>,
    weights: &[f64],
    settings: &GrowSettings,
    rng: &mut R,
    observer: Option<(usize, SplitObserver<'_>)>,
) -> Tree {
    let mut samples: Vec<u32> = (0..data.n_rows as u32)
        .filter(|&r| weights[r as usize] > 0.0)
        .collect();
    let mut nodes: Vec<Node> = vec![Node::Leaf { value: 0.0 }];
    // (node id, start, end) into `samples`
    let mut stack: Vec<(usize, usize, usize)> = vec![(0, 0, samples.len())];
    let mut candidates = Vec::with_capacity(settings.mtry + 1);
    let mut scratch = SplitScratch::new();

    while let Some((id, start, end)) = stack.pop() {
        let node_rows = &mut samples[start..end];
        let mut w = 0.0;
        let mut s = 0.0;
        let mut y_min = f64::INFINITY;
        let mut y_max = f64::NEG_INFINITY;
        for &r in node_rows.iter() {
            let r = r as usize;
            let y = data.targets[r];
            w += weights[r];
            s += weights[r] * y;
            y_min = y_min.min(y);
            y_max = y_max.max(y);
        }
        let leaf_value = (s / w).clamp(y_min, y_max);

        if w < 2.0 * settings.min_leaf as f64 || y_min == y_max {
            nodes[id] = Node::Leaf { value: leaf_value };
            continue;
        }

        draw_candidates(rng, data.n_features, settings, &mut candidates);
        if let Some((tree, observe)) = observer {
            observe(&SplitVisit {
                tree,
                candidates: &candidates,
                node_weight: w,
            });
        }
        let Some(split) = search_split(
            data,
            weights,
            node_rows,
            &candidates,
            settings.min_leaf,
            &mut scratch,
        ) else {
            nodes[id] = Node::Leaf { value: leaf_value };
            continue;
        };

        let mut boundary = 0;
        for k in 0..node_rows.len() {
            if data.value(node_rows[k] as usize, split.feature) <= split.threshold {
                node_rows.swap(k, boundary);
                boundary += 1;
            }
        }
        let left = nodes.len();
        let right = left + 1;
        nodes.push(Node::Leaf { value: 0.0 });
        nodes.push(Node::Leaf { value: 0.0 });
        nodes[id] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        stack.push((right, start + boundary, end));
        stack.push((left, start, start + boundary));
    }

    Tree { nodes }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_built_tree_traversal() {
        let tree = Tree::from_nodes(vec![
            Node::Split {
                feature: 0,
                threshold: 0.5,
                left: 1,
                right: 2,
            },
            Node::Leaf { value: 0.0 },
            Node::Leaf { value: 1.0 },
        ])
        .unwrap();
        assert_eq!(tree.predict_row(&[0.7]), 1.0);
        assert_eq!(tree.predict_row(&[0.5]), 0.0);
        assert_eq!(tree.n_leaves(), 2);
    }

    #[test]
    fn malformed_trees_rejected() {
        assert!(Tree::from_nodes(vec![]).is_err());
        let dangling = vec![Node::Split {
            feature: 0,
            threshold: 0.0,
            left: 1,
            right: 2,
        }];
        assert!(Tree::from_nodes(dangling).is_err());
        let cycle = vec![
            Node::Split {
                feature: 0,
                threshold: 0.0,
                left: 0,
                right: 1,
            },
            Node::Leaf { value: 0.0 },
        ];
        assert!(Tree::from_nodes(cycle).is_err());
    }

    #[test]
    fn midpoint_separates_adjacent_floats() {
        let lo = 1.0_f64;
        let hi = f64::from_bits(lo.to_bits() + 1);
        let t = midpoint(lo, hi);
        assert!(lo <= t && t < hi);
        assert_eq!(midpoint(0.0, 1.0), 0.5);
    }

    #[test]
    fn split_respects_min_leaf_on_both_sides() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        // The best unconstrained cut isolates row 0; min_leaf = 3 forbids it.
        let mut ys = vec![0.0; 10];
        ys[0] = 100.0;
        let data = ColumnData {
            columns: &xs,
            n_rows: 10,
            n_features: 1,
            targets: &ys,
        };
        let weights = vec![1.0; 10];
        let samples: Vec<u32> = (0..10).collect();
        let mut scratch = SplitScratch::new();
        let split = search_split(&data, &weights, &samples, &[0], 3, &mut scratch).unwrap();
        assert_eq!(split.threshold, 2.5);
        assert!(search_split(&data, &weights, &samples, &[0], 6, &mut scratch).is_none());
    }
}
