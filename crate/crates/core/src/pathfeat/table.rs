use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::adapter::{ExtractorAdapter, MID_LEN};
use super::{cut_entropy, extract_last, extract_mid, gradient_map, Cut, PATHOLOGY_LABELS};
use crate::cohort::ImageRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    Mid,
    Last,
    Gradient,
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureMode::Mid => "mid",
            FeatureMode::Last => "last",
            FeatureMode::Gradient => "gradient",
        })
    }
}

impl FromStr for FeatureMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mid" => Ok(FeatureMode::Mid),
            "last" => Ok(FeatureMode::Last),
            "gradient" => Ok(FeatureMode::Gradient),
            _ => Err(Error::Parameter(format!(
                "unknown feature mode `{s}` (expected mid, last or gradient)"
            ))),
        }
    }
}

/// `<pathology>/<cut>` for every label and cut, label-major.
pub fn gradient_columns() -> Vec<String> {
    PATHOLOGY_LABELS
        .iter()
        .flat_map(|l| Cut::ALL.iter().map(move |c| format!("{l}/{c}")))
        .collect()
}

impl FeatureMode {
    pub fn columns(self) -> Vec<String> {
        match self {
            FeatureMode::Mid => (0..MID_LEN).map(|i| format!("mid_{i:04}")).collect(),
            FeatureMode::Last => PATHOLOGY_LABELS.iter().map(|s| s.to_string()).collect(),
            FeatureMode::Gradient => gradient_columns(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub image_id: String,
    pub group_id: String,
    pub class_label: u8,
    /// Source image id for augmented rows.
    pub augmentation_of: Option<String>,
    /// Degenerate gradient maps were replaced by uniform ones.
    pub flagged: bool,
    pub values: Vec<f64>,
}

impl FeatureRow {
    pub fn is_source(&self) -> bool {
        self.augmentation_of.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub mode: FeatureMode,
    pub columns: Vec<String>,
    pub rows: Vec<FeatureRow>,
    pub adapter_fingerprint: String,
    /// `(image_id, reason)` for rows the adapter could not produce.
    pub skipped: Vec<(String, String)>,
}

/// JSON sidecar written next to the CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSchema {
    pub mode: FeatureMode,
    pub columns: Vec<String>,
    pub adapter_fingerprint: String,
    pub row_count: usize,
    pub skipped: Vec<(String, String)>,
}

const META_COLUMNS: [&str; 5] = ["image_id", "group_id", "class_label", "augmentation_of", "flagged"];

impl FeatureTable {
    pub fn new(mode: FeatureMode, columns: Vec<String>, adapter_fingerprint: String) -> Self {
        Self {
            mode,
            columns,
            rows: Vec::new(),
            adapter_fingerprint,
            skipped: Vec::new(),
        }
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Value of `column` in `row`, looked up by name.
    pub fn value(&self, row: &FeatureRow, column: &str) -> Result<f64> {
        self.column_index(column)
            .map(|i| row.values[i])
            .ok_or_else(|| Error::MissingFeature(column.to_string()))
    }

    pub fn schema(&self) -> TableSchema {
        TableSchema {
            mode: self.mode,
            columns: self.columns.clone(),
            adapter_fingerprint: self.adapter_fingerprint.clone(),
            row_count: self.rows.len(),
            skipped: self.skipped.clone(),
        }
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header: Vec<&str> = META_COLUMNS
            .iter()
            .copied()
            .chain(self.columns.iter().map(String::as_str))
            .collect();
        let csv_err = |e: csv::Error| Error::Serde(e.to_string());
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.rows {
            let mut rec = vec![
                r.image_id.clone(),
                r.group_id.clone(),
                r.class_label.to_string(),
                r.augmentation_of.clone().unwrap_or_default(),
                u8::from(r.flagged).to_string(),
            ];
            rec.extend(r.values.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv writer emits utf-8"))
    }

    /// Write `<stem>.csv` and `<stem>.schema.json`.
    pub fn write(&self, csv_path: &Path) -> Result<()> {
        if let Some(parent) = csv_path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(csv_path, self.to_csv_string()?).map_err(|e| Error::io(csv_path, e))?;
        let schema_path = csv_path.with_extension("schema.json");
        let text = serde_json::to_string_pretty(&self.schema())?;
        std::fs::write(&schema_path, text).map_err(|e| Error::io(&schema_path, e))
    }

    pub fn read(csv_path: &Path) -> Result<Self> {
        let schema_path = csv_path.with_extension("schema.json");
        let schema: TableSchema =
            serde_json::from_str(&std::fs::read_to_string(&schema_path).map_err(|e| Error::io(&schema_path, e))?)?;
        let mut rdr = csv::Reader::from_path(csv_path).map_err(|e| Error::Serde(e.to_string()))?;
        let headers = rdr.headers().map_err(|e| Error::Serde(e.to_string()))?.clone();
        let expected: Vec<&str> = META_COLUMNS
            .iter()
            .copied()
            .chain(schema.columns.iter().map(String::as_str))
            .collect();
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Data(format!(
                "{} header does not match its schema",
                csv_path.display()
            )));
        }
        let mut table = FeatureTable::new(schema.mode, schema.columns, schema.adapter_fingerprint);
        table.skipped = schema.skipped;
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::ManifestRow {
                row: i + 1,
                message: e.to_string(),
            })?;
            let bad = |what: &str| Error::ManifestRow {
                row: i + 1,
                message: format!("bad {what}"),
            };
            let values = rec
                .iter()
                .skip(META_COLUMNS.len())
                .map(|v| v.parse::<f64>().map_err(|_| bad("feature value")))
                .collect::<Result<Vec<_>>>()?;
            table.rows.push(FeatureRow {
                image_id: rec[0].to_string(),
                group_id: rec[1].to_string(),
                class_label: rec[2].parse().map_err(|_| bad("class label"))?,
                augmentation_of: Some(rec[3].to_string()).filter(|s| !s.is_empty()),
                flagged: &rec[4] == "1",
                values,
            });
        }
        Ok(table)
    }
}

fn row_values(adapter: &dyn ExtractorAdapter, record: &ImageRecord, mode: FeatureMode) -> Result<(Vec<f64>, bool)> {
    let (w, h) = adapter.input_size();
    let image = record.pixels.resize(w, h);
    match mode {
        FeatureMode::Mid => Ok((extract_mid(adapter, &image)?, false)),
        FeatureMode::Last => Ok((extract_last(adapter, &image)?, false)),
        FeatureMode::Gradient => {
            let mut values = Vec::with_capacity(PATHOLOGY_LABELS.len() * 4);
            let mut flagged = false;
            for label in PATHOLOGY_LABELS {
                let map = gradient_map(adapter, &image, &record.image_id, label)?;
                flagged |= map.degenerate;
                values.extend(Cut::ALL.iter().map(|&c| cut_entropy(&map, c).value));
            }
            Ok((values, flagged))
        }
    }
}

/// One row per record; images are resized to the adapter's input size.
/// Records the adapter fails on are skipped and logged.
pub fn build_feature_table(records: &[ImageRecord], adapter: &dyn ExtractorAdapter, mode: FeatureMode) -> FeatureTable {
    let mut table = FeatureTable::new(mode, mode.columns(), adapter.fingerprint());
    for r in records {
        match row_values(adapter, r, mode) {
            Ok((values, flagged)) => {
                if flagged {
                    log::warn!("{}: degenerate gradient map replaced by uniform", r.image_id);
                }
                table.rows.push(FeatureRow {
                    image_id: r.image_id.clone(),
                    group_id: r.group_id.clone(),
                    class_label: r.class_label,
                    augmentation_of: r.augmentation_of.clone(),
                    flagged,
                    values,
                })
            }
            Err(e) => {
                log::warn!("{}: feature extraction failed: {e}", r.image_id);
                table.skipped.push((r.image_id.clone(), e.to_string()));
            }
        }
    }
    table
}
