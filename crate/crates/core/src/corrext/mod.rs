//! Correlating tree predictions on an external corpus with its free-form
//! label annotations.

mod ratio;

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use ratio::{
    frequency_ratio, null_hypothesis_check, null_hypothesis_check_with, Lexicon, NullCheck, NullToken, RatioReport,
    RatioRow,
};

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::pathfeat::FeatureTable;
use crate::treelab::TreeModel;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExternalColumns {
    /// When `None` the image id is the file stem of the image path.
    pub image_id: Option<String>,
    pub image_path: String,
    pub labels: String,
}

impl Default for ExternalColumns {
    fn default() -> Self {
        Self {
            image_id: None,
            image_path: "image_path".into(),
            labels: "labels".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedImage {
    pub image_id: String,
    pub image_path: PathBuf,
    /// Present when loaded with `keep_pixels`.
    pub pixels: Option<GrayImage>,
    /// Trimmed, lowercase, unique within the image.
    pub labels: Vec<String>,
    /// The image decoded successfully.
    pub valid: bool,
    /// The label cell held no parseable labels.
    pub unlabeled: bool,
}

/// Split one label cell into tokens.
///
/// Accepts a bracketed list of quoted strings (`['a', "b c"]`) or a bare
/// list separated by `,`, `;` or `|`. Tokens are trimmed, lowercased and
/// deduplicated; inner whitespace is collapsed so multiword labels stay whole.
pub fn parse_label_cell(cell: &str) -> Vec<String> {
    let body = cell.trim();
    let body = body.strip_prefix('[').and_then(|b| b.strip_suffix(']')).unwrap_or(body);
    let mut raw = Vec::new();
    let mut current = String::new();
    let mut quote: Option<char> = None;
    for ch in body.chars() {
        match quote {
            Some(q) if ch == q => quote = None,
            Some(_) => current.push(ch),
            None => match ch {
                '\'' | '"' | '‘' | '’' | '“' | '”' => {
                    quote = Some(match ch {
                        '‘' => '’',
                        '“' => '”',
                        c => c,
                    })
                }
                ',' | ';' | '|' => raw.push(std::mem::take(&mut current)),
                c => current.push(c),
            },
        }
    }
    raw.push(current);
    let mut seen = HashSet::new();
    raw.into_iter()
        .map(|t| t.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase())
        .filter(|t| !t.is_empty() && seen.insert(t.clone()))
        .collect()
}

/// Read an external manifest. Image paths are relative to the manifest's
/// directory. Undecodable images are kept with `valid = false`.
pub fn load_external(manifest: &Path, columns: &ExternalColumns, keep_pixels: bool) -> Result<Vec<AnnotatedImage>> {
    let root = manifest.parent().unwrap_or(Path::new("."));
    let mut rdr = csv::Reader::from_path(manifest).map_err(|e| Error::Data(format!("{}: {e}", manifest.display())))?;
    let headers = rdr
        .headers()
        .map_err(|e| Error::ManifestRow {
            row: 0,
            message: e.to_string(),
        })?
        .clone();
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let missing: Vec<String> = [&columns.image_path, &columns.labels]
        .into_iter()
        .filter(|c| find(c).is_none())
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(Error::ManifestSchema { missing });
    }
    let path_col = find(&columns.image_path).unwrap();
    let label_col = find(&columns.labels).unwrap();
    let id_col = columns.image_id.as_deref().and_then(find);

    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (idx, rec) in rdr.records().enumerate() {
        let row = idx + 1;
        let rec = rec.map_err(|e| Error::ManifestRow {
            row,
            message: e.to_string(),
        })?;
        let rel = rec.get(path_col).unwrap_or("").trim();
        if rel.is_empty() {
            return Err(Error::ManifestRow {
                row,
                message: format!("empty `{}` cell", columns.image_path),
            });
        }
        let image_path = root.join(rel);
        let image_id = match id_col.and_then(|c| rec.get(c)).map(str::trim) {
            Some(id) if !id.is_empty() => id.to_string(),
            _ => Path::new(rel)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| rel.to_string()),
        };
        if !seen.insert(image_id.clone()) {
            return Err(Error::ManifestRow {
                row,
                message: format!("duplicate image id `{image_id}`"),
            });
        }
        let labels = parse_label_cell(rec.get(label_col).unwrap_or(""));
        let (valid, pixels) = match GrayImage::load(&image_path) {
            Ok(img) => (true, keep_pixels.then_some(img)),
            Err(e) => {
                log::warn!("{image_id}: {e}");
                (false, None)
            }
        };
        out.push(AnnotatedImage {
            image_id,
            image_path,
            pixels,
            unlabeled: labels.is_empty(),
            labels,
            valid,
        });
    }
    Ok(out)
}

/// Image ids assigned to each predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExternalPartition {
    pub class0: Vec<String>,
    pub class1: Vec<String>,
}

impl ExternalPartition {
    pub fn len(&self) -> usize {
        self.class0.len() + self.class1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn class_of(&self, image_id: &str) -> Option<u8> {
        if self.class0.iter().any(|i| i == image_id) {
            Some(0)
        } else if self.class1.iter().any(|i| i == image_id) {
            Some(1)
        } else {
            None
        }
    }
}

/// Partition the rows of an external feature table by tree prediction.
/// The table must be in the mode the tree was fitted on.
pub fn classify_external(model: &TreeModel, table: &FeatureTable) -> Result<ExternalPartition> {
    let preds = model.predict_table(table)?;
    let mut part = ExternalPartition::default();
    for (row, p) in table.rows.iter().zip(preds) {
        if p == 1 {
            part.class1.push(row.image_id.clone());
        } else {
            part.class0.push(row.image_id.clone());
        }
    }
    Ok(part)
}

/// Token sets of `images` split by `partition`; unpartitioned images are ignored.
pub fn tokens_by_class<'a>(images: &'a [AnnotatedImage], partition: &ExternalPartition) -> [Vec<&'a [String]>; 2] {
    let mut out = [Vec::new(), Vec::new()];
    for img in images {
        if let Some(c) = partition.class_of(&img.image_id) {
            out[c as usize].push(img.labels.as_slice());
        }
    }
    out
}
