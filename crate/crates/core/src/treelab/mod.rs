//! Shallow CART trees with Gini impurity, leave-two-out cross-validation
//! and binary classification metrics.

mod cart;
mod eval;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use cart::{fit_matrix, fit_tree};
pub use eval::{leave_two_out_cv, metrics, EvalResult, FoldResult, ScoredImage};

use crate::error::{Error, Result};
use crate::pathfeat::{FeatureMode, FeatureTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeParams {
    pub min_leaf: usize,
    pub max_depth: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            min_leaf: 20,
            max_depth: 4,
        }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_leaf == 0 {
            return Err(Error::Parameter("min_leaf must be at least 1".into()));
        }
        Ok(())
    }
}

/// Rows with `value <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub feature: String,
    pub feature_index: usize,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: usize,
    pub parent: Option<usize>,
    pub depth: usize,
    pub split: Option<Split>,
    pub left: Option<usize>,
    pub right: Option<usize>,
    pub impurity: f64,
    pub sample_count: usize,
    /// Training rows per class, `[class 0, class 1]`.
    pub class_histogram: [usize; 2],
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.split.is_none()
    }

    /// Majority class; ties go to class 0.
    pub fn majority_class(&self) -> u8 {
        u8::from(self.class_histogram[1] > self.class_histogram[0])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeModel {
    /// Feature mode of the table the tree was fitted on, if known.
    pub mode: Option<FeatureMode>,
    pub min_leaf: usize,
    pub max_depth: usize,
    pub positive_class: u8,
    pub seed: u64,
    /// Pre-order; node 0 is the root.
    pub nodes: Vec<TreeNode>,
}

impl TreeModel {
    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    pub fn leaves(&self) -> impl Iterator<Item = &TreeNode> {
        self.nodes.iter().filter(|n| n.is_leaf())
    }

    /// Index of the leaf reached by a row whose values are looked up by name.
    pub fn leaf_for(&self, lookup: impl Fn(&str) -> Option<f64>) -> Result<usize> {
        let mut i = 0;
        while let Some(split) = &self.nodes[i].split {
            let v = lookup(&split.feature).ok_or_else(|| Error::MissingFeature(split.feature.clone()))?;
            let node = &self.nodes[i];
            i = if v <= split.threshold { node.left } else { node.right }.expect("internal node has two children");
        }
        Ok(i)
    }

    pub fn predict(&self, lookup: impl Fn(&str) -> Option<f64>) -> Result<u8> {
        Ok(self.nodes[self.leaf_for(lookup)?].majority_class())
    }

    /// Predict a row given as parallel name and value slices.
    pub fn predict_values(&self, columns: &[String], values: &[f64]) -> Result<u8> {
        self.predict(|name| columns.iter().position(|c| c == name).map(|i| values[i]))
    }

    /// Predict every row of `table`; the table must be in the tree's mode.
    pub fn predict_table(&self, table: &FeatureTable) -> Result<Vec<u8>> {
        if let Some(mode) = self.mode {
            if mode != table.mode {
                return Err(Error::ModeMismatch {
                    tree: mode.to_string(),
                    table: table.mode.to_string(),
                });
            }
        }
        table
            .rows
            .iter()
            .map(|r| self.predict_values(&table.columns, &r.values))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: TreeModel = serde_json::from_str(text)?;
        model.check_structure()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    fn check_structure(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Serde(format!("malformed tree: {m}")));
        if self.nodes.is_empty() {
            return bad("no nodes".into());
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id != i {
                return bad(format!("node {i} has id {}", n.id));
            }
            let children = [n.left, n.right];
            match (&n.split, children) {
                (None, [None, None]) => {}
                (Some(_), [Some(l), Some(r)]) => {
                    for c in [l, r] {
                        if c <= i || c >= self.nodes.len() || self.nodes[c].parent != Some(i) {
                            return bad(format!("node {i} has bad child {c}"));
                        }
                    }
                }
                _ => return bad(format!("node {i} has inconsistent children")),
            }
        }
        Ok(())
    }
}

/// Internal nodes by descending sample count, then shallower depth, then name.
pub fn rank_features(model: &TreeModel) -> Vec<(String, usize)> {
    let mut internal: Vec<(&str, usize, usize)> = model
        .nodes
        .iter()
        .filter_map(|n| n.split.as_ref().map(|s| (s.feature.as_str(), n.sample_count, n.depth)))
        .collect();
    internal.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)).then(a.0.cmp(b.0)));
    internal.into_iter().map(|(f, n, _)| (f.to_string(), n)).collect()
}

/// Gini impurity of a two-class histogram.
pub fn gini(histogram: [usize; 2]) -> f64 {
    let n = histogram[0] + histogram[1];
    if n == 0 {
        return 0.0;
    }
    let (a, b, n) = (histogram[0] as f64, histogram[1] as f64, n as f64);
    1.0 - (a * a + b * b) / (n * n)
}
