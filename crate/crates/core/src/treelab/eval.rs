use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{cart::fit_matrix, TreeParams};
use crate::error::{Error, Result};
use crate::pathfeat::FeatureTable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredImage {
    pub image_id: String,
    pub group_id: String,
    pub label: u8,
    pub prediction: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    /// Held-out group of class 0, then of class 1.
    pub held_out_groups: [String; 2],
    pub train_rows: usize,
    pub scored: Vec<ScoredImage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub accuracy: f64,
    pub f1: f64,
    /// `[[TN, FP], [FN, TP]]`
    pub confusion: [[usize; 2]; 2],
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub per_fold: Option<Vec<FoldResult>>,
}

impl EvalResult {
    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }

    pub fn confusion_csv(&self) -> String {
        let [[tn, fp], [fn_, tp]] = self.confusion;
        format!("actual,predicted_0,predicted_1\n0,{tn},{fp}\n1,{fn_},{tp}\n")
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// Accuracy, F1 for class 1 and the confusion matrix. F1 is 0 when undefined.
pub fn metrics(predictions: &[u8], labels: &[u8]) -> Result<EvalResult> {
    if predictions.len() != labels.len() {
        return Err(Error::Length(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Length("no predictions to score".into()));
    }
    let mut confusion = [[0usize; 2]; 2];
    for (&p, &l) in predictions.iter().zip(labels) {
        if p > 1 || l > 1 {
            return Err(Error::Data(format!("class {} is not 0 or 1", p.max(l))));
        }
        confusion[l as usize][p as usize] += 1;
    }
    let [[tn, fp], [fn_, tp]] = confusion;
    let accuracy = (tp + tn) as f64 / labels.len() as f64;
    let den = 2 * tp + fp + fn_;
    let f1 = if den == 0 { 0.0 } else { (2 * tp) as f64 / den as f64 };
    Ok(EvalResult {
        accuracy,
        f1,
        confusion,
        per_fold: None,
    })
}

/// Leave-two-out cross-validation at group level.
///
/// Groups of each class are sorted by id and fold `k` holds out the `k`-th
/// group of both classes, so there are as many folds as groups in the
/// smaller class. Augmented rows stay with their group; only source rows of
/// the held-out groups are scored. Flagged rows are left out entirely.
pub fn leave_two_out_cv(table: &FeatureTable, min_leaf: usize, max_depth: usize, seed: u64) -> Result<EvalResult> {
    let mut groups: [BTreeMap<&str, Vec<usize>>; 2] = [BTreeMap::new(), BTreeMap::new()];
    let mut group_class: BTreeMap<&str, u8> = BTreeMap::new();
    for (i, r) in table.rows.iter().enumerate().filter(|(_, r)| !r.flagged) {
        if r.class_label > 1 {
            return Err(Error::Data(format!(
                "{}: class {} is not 0 or 1",
                r.image_id, r.class_label
            )));
        }
        let c = *group_class.entry(&r.group_id).or_insert(r.class_label);
        if c != r.class_label {
            return Err(Error::Data(format!("group {} mixes both classes", r.group_id)));
        }
        groups[c as usize].entry(&r.group_id).or_default().push(i);
    }
    let folds = groups[0].len().min(groups[1].len());
    if folds == 0 {
        return Err(Error::CohortEmpty {
            class0: groups[0].len(),
            class1: groups[1].len(),
        });
    }
    let params = TreeParams { min_leaf, max_depth };
    let ordered: [Vec<(&str, &Vec<usize>)>; 2] = [
        groups[0].iter().map(|(g, v)| (*g, v)).collect(),
        groups[1].iter().map(|(g, v)| (*g, v)).collect(),
    ];
    let mut per_fold = Vec::with_capacity(folds);
    let mut preds = Vec::new();
    let mut labels = Vec::new();
    for (k, (&g0, &g1)) in ordered[0].iter().zip(&ordered[1]).take(folds).enumerate() {
        let held = [g0, g1];
        let mut held_out = vec![false; table.rows.len()];
        for (_, idx) in held {
            for &i in idx {
                held_out[i] = true;
            }
        }
        let train: Vec<usize> = (0..table.rows.len())
            .filter(|&i| !held_out[i] && !table.rows[i].flagged)
            .collect();
        let x: Vec<&[f64]> = train.iter().map(|&i| table.rows[i].values.as_slice()).collect();
        let y: Vec<u8> = train.iter().map(|&i| table.rows[i].class_label).collect();
        let mut model = fit_matrix(&table.columns, &x, &y, &params, seed)?;
        model.mode = Some(table.mode);
        let mut scored = Vec::new();
        for (_, idx) in held {
            for &i in idx {
                let row = &table.rows[i];
                if !row.is_source() {
                    continue;
                }
                let prediction = model.predict_values(&table.columns, &row.values)?;
                preds.push(prediction);
                labels.push(row.class_label);
                scored.push(ScoredImage {
                    image_id: row.image_id.clone(),
                    group_id: row.group_id.clone(),
                    label: row.class_label,
                    prediction,
                });
            }
        }
        per_fold.push(FoldResult {
            fold: k,
            held_out_groups: [held[0].0.to_string(), held[1].0.to_string()],
            train_rows: train.len(),
            scored,
        });
    }
    let mut result = metrics(&preds, &labels)?;
    result.per_fold = Some(per_fold);
    Ok(result)
}
