use std::cmp::Ordering;

use super::{gini, Split, TreeModel, TreeNode, TreeParams};
use crate::error::{Error, Result};
use crate::pathfeat::FeatureTable;

/// Split quality as the exact fraction `num / den`, where larger is better.
///
/// Weighted Gini of a split is `1 - q / n` with
/// `q = (aL² + bL²) / nL + (aR² + bR²) / nR`, so maximizing `q` minimizes it.
#[derive(Debug, Clone, Copy)]
struct Score {
    num: u128,
    den: u128,
}

impl Score {
    fn new(left: [usize; 2], right: [usize; 2]) -> Self {
        let sq = |h: [usize; 2]| (h[0] as u128).pow(2) + (h[1] as u128).pow(2);
        let nl = (left[0] + left[1]) as u128;
        let nr = (right[0] + right[1]) as u128;
        Self {
            num: sq(left) * nr + sq(right) * nl,
            den: nl * nr,
        }
    }

    fn cmp(&self, other: &Score) -> Ordering {
        (self.num * other.den).cmp(&(other.num * self.den))
    }
}

struct Candidate {
    feature: usize,
    threshold: f64,
    score: Score,
}

struct Grower<'a, R> {
    columns: &'a [String],
    rows: &'a [R],
    labels: &'a [u8],
    params: TreeParams,
    nodes: Vec<TreeNode>,
}

impl<R: AsRef<[f64]>> Grower<'_, R> {
    fn value(&self, row: usize, feature: usize) -> f64 {
        self.rows[row].as_ref()[feature]
    }

    fn histogram(&self, idx: &[usize]) -> [usize; 2] {
        let mut h = [0, 0];
        for &i in idx {
            h[self.labels[i] as usize] += 1;
        }
        h
    }

    /// Lowest-index feature, then lowest threshold, among the best splits.
    fn best_split(&self, idx: &[usize], hist: [usize; 2]) -> Option<Candidate> {
        let n = idx.len();
        let min_leaf = self.params.min_leaf;
        let mut best: Option<Candidate> = None;
        let mut order = idx.to_vec();
        for f in 0..self.columns.len() {
            order.sort_by(|&a, &b| self.value(a, f).total_cmp(&self.value(b, f)));
            let mut left = [0usize; 2];
            for k in 1..n {
                left[self.labels[order[k - 1]] as usize] += 1;
                if k < min_leaf || n - k < min_leaf {
                    continue;
                }
                let lo = self.value(order[k - 1], f);
                let hi = self.value(order[k], f);
                if lo >= hi {
                    continue;
                }
                let right = [hist[0] - left[0], hist[1] - left[1]];
                let score = Score::new(left, right);
                if best.as_ref().is_none_or(|b| score.cmp(&b.score) == Ordering::Greater) {
                    let mut threshold = lo + (hi - lo) / 2.0;
                    if threshold >= hi || !threshold.is_finite() {
                        threshold = lo;
                    }
                    best = Some(Candidate {
                        feature: f,
                        threshold,
                        score,
                    });
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: Vec<usize>, parent: Option<usize>, depth: usize) -> usize {
        let hist = self.histogram(&idx);
        let id = self.nodes.len();
        self.nodes.push(TreeNode {
            id,
            parent,
            depth,
            split: None,
            left: None,
            right: None,
            impurity: gini(hist),
            sample_count: idx.len(),
            class_histogram: hist,
        });
        let pure = hist[0] == 0 || hist[1] == 0;
        if pure || depth >= self.params.max_depth || idx.len() < 2 * self.params.min_leaf {
            return id;
        }
        let Some(best) = self.best_split(&idx, hist) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| self.value(i, best.feature) <= best.threshold);
        let left = self.grow(l, Some(id), depth + 1);
        let right = self.grow(r, Some(id), depth + 1);
        let node = &mut self.nodes[id];
        node.split = Some(Split {
            feature: self.columns[best.feature].clone(),
            feature_index: best.feature,
            threshold: best.threshold,
        });
        node.left = Some(left);
        node.right = Some(right);
        id
    }
}

/// Greedy CART growth on a row-major matrix with labels in `{0, 1}`.
///
/// Candidate thresholds are midpoints between consecutive distinct values.
/// A node is split whenever it is impure, above `max_depth` and has a split
/// leaving `min_leaf` rows on each side.
pub fn fit_matrix<R: AsRef<[f64]>>(
    columns: &[String],
    rows: &[R],
    labels: &[u8],
    params: &TreeParams,
    seed: u64,
) -> Result<TreeModel> {
    params.validate()?;
    if rows.len() != labels.len() {
        return Err(Error::Length(format!(
            "{} rows but {} labels",
            rows.len(),
            labels.len()
        )));
    }
    for (i, r) in rows.iter().enumerate() {
        let r = r.as_ref();
        if r.len() != columns.len() {
            return Err(Error::Shape(format!(
                "row {i} has {} values for {} columns",
                r.len(),
                columns.len()
            )));
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("row {i} has a non-finite feature value")));
        }
    }
    if let Some(bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Data(format!("class label {bad} is not 0 or 1")));
    }
    let ones = labels.iter().filter(|&&l| l == 1).count();
    if ones == 0 || ones == labels.len() {
        return Err(Error::DegenerateTree(format!(
            "all {} training rows belong to one class",
            labels.len()
        )));
    }
    if rows.len() < 2 * params.min_leaf {
        return Err(Error::Parameter(format!(
            "{} training rows cannot fill two leaves of {}",
            rows.len(),
            params.min_leaf
        )));
    }
    let mut grower = Grower {
        columns,
        rows,
        labels,
        params: *params,
        nodes: Vec::new(),
    };
    grower.grow((0..rows.len()).collect(), None, 0);
    Ok(TreeModel {
        mode: None,
        min_leaf: params.min_leaf,
        max_depth: params.max_depth,
        positive_class: 1,
        seed,
        nodes: grower.nodes,
    })
}

/// Fit on every unflagged row of `table`, augmented variants included.
///
/// The split search is deterministic, so `seed` is only recorded in the model.
pub fn fit_tree(table: &FeatureTable, min_leaf: usize, max_depth: usize, seed: u64) -> Result<TreeModel> {
    let usable = table.rows.iter().filter(|r| !r.flagged);
    let rows: Vec<&[f64]> = usable.clone().map(|r| r.values.as_slice()).collect();
    let labels: Vec<u8> = usable.map(|r| r.class_label).collect();
    let params = TreeParams { min_leaf, max_depth };
    let mut model = fit_matrix(&table.columns, &rows, &labels, &params, seed)?;
    model.mode = Some(table.mode);
    Ok(model)
}
