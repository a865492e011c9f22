//! Cohort ingestion: manifest parsing, ICU-outcome selection and gentle
//! affine augmentation with lineage tracking.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayImage;

/// Outcome flag parsed from the literal tokens `Y`, `N` or an empty cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TriState {
    Yes,
    No,
    Unknown,
}

impl TriState {
    pub fn parse(token: &str) -> Option<Self> {
        match token.trim() {
            "Y" => Some(TriState::Yes),
            "N" => Some(TriState::No),
            "" => Some(TriState::Unknown),
            _ => None,
        }
    }
}

impl fmt::Display for TriState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TriState::Yes => "Y",
            TriState::No => "N",
            TriState::Unknown => "",
        })
    }
}

/// Column names looked up in the manifest header.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ManifestColumns {
    /// When `None` (or absent from the file) the image id is the filename stem.
    pub image_id: Option<String>,
    pub patient_id: String,
    pub filename: String,
    pub went_icu: String,
    pub in_icu: String,
    pub view: Option<String>,
}

impl Default for ManifestColumns {
    fn default() -> Self {
        Self {
            image_id: None,
            patient_id: "patientid".into(),
            filename: "filename".into(),
            went_icu: "went_icu".into(),
            in_icu: "in_icu".into(),
            view: Some("view".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortRecord {
    pub image_id: String,
    pub patient_id: String,
    pub went_icu: TriState,
    pub in_icu: TriState,
    pub image_path: PathBuf,
    pub view: Option<String>,
}

/// Parse a CSV manifest. Image paths are resolved against `image_root`.
pub fn parse_manifest(manifest: &Path, columns: &ManifestColumns, image_root: &Path) -> Result<Vec<CohortRecord>> {
    let file = std::fs::File::open(manifest).map_err(|e| Error::io(manifest, e))?;
    parse_manifest_from(file, columns, image_root)
}

pub fn parse_manifest_from<R: std::io::Read>(
    reader: R,
    columns: &ManifestColumns,
    image_root: &Path,
) -> Result<Vec<CohortRecord>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::ManifestRow {
            row: 0,
            message: e.to_string(),
        })?
        .clone();
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);

    let required = [
        &columns.patient_id,
        &columns.filename,
        &columns.went_icu,
        &columns.in_icu,
    ];
    let missing: Vec<String> = required
        .iter()
        .filter(|c| find(c).is_none())
        .map(|c| c.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::ManifestSchema { missing });
    }
    let patient_col = find(&columns.patient_id).unwrap();
    let file_col = find(&columns.filename).unwrap();
    let went_col = find(&columns.went_icu).unwrap();
    let in_col = find(&columns.in_icu).unwrap();
    let id_col = columns.image_id.as_deref().and_then(find);
    let view_col = columns.view.as_deref().and_then(find);

    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (idx, row) in rdr.records().enumerate() {
        // Row 1 is the first data row after the header.
        let row_no = idx + 1;
        let row = row.map_err(|e| Error::ManifestRow {
            row: row_no,
            message: e.to_string(),
        })?;
        let field = |col: usize| row.get(col).unwrap_or("").trim().to_string();
        let tri = |col: usize, name: &str| {
            let raw = row.get(col).unwrap_or("");
            TriState::parse(raw).ok_or_else(|| Error::ManifestRow {
                row: row_no,
                message: format!("column `{name}` has token {raw:?}; expected Y, N or empty"),
            })
        };
        let filename = field(file_col);
        if filename.is_empty() {
            return Err(Error::ManifestRow {
                row: row_no,
                message: format!("empty `{}` cell", columns.filename),
            });
        }
        let image_id = match id_col {
            Some(c) if !field(c).is_empty() => field(c),
            _ => Path::new(&filename)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| filename.clone()),
        };
        if !seen.insert(image_id.clone()) {
            return Err(Error::ManifestRow {
                row: row_no,
                message: format!("duplicate image id `{image_id}`"),
            });
        }
        out.push(CohortRecord {
            image_id,
            patient_id: field(patient_col),
            went_icu: tri(went_col, &columns.went_icu)?,
            in_icu: tri(in_col, &columns.in_icu)?,
            image_path: image_root.join(&filename),
            view: view_col.map(field).filter(|v| !v.is_empty()),
        });
    }
    Ok(out)
}

/// Class assignment for one manifest record, `None` when excluded.
///
/// Class 1: went to ICU later but the image predates admission.
/// Class 0: explicitly never went to ICU.
pub fn icu_class(record: &CohortRecord) -> Option<u8> {
    match (record.went_icu, record.in_icu) {
        (TriState::Yes, TriState::No) => Some(1),
        (TriState::No, TriState::No) => Some(0),
        _ => None,
    }
}

/// Filter records to the ICU cohort, keeping manifest order.
pub fn select_icu_cohort(records: &[CohortRecord]) -> Result<Vec<(CohortRecord, u8)>> {
    let selected: Vec<_> = records
        .iter()
        .filter_map(|r| icu_class(r).map(|c| (r.clone(), c)))
        .collect();
    let class1 = selected.iter().filter(|(_, c)| *c == 1).count();
    let class0 = selected.len() - class1;
    if class0 == 0 || class1 == 0 {
        return Err(Error::CohortEmpty { class0, class1 });
    }
    Ok(selected)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformParam {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image_id: String,
    pub patient_id: String,
    pub group_id: String,
    pub class_label: u8,
    pub pixels: GrayImage,
    pub augmentation_of: Option<String>,
    pub transform_log: Vec<TransformParam>,
}

impl ImageRecord {
    pub fn is_augmented(&self) -> bool {
        self.augmentation_of.is_some()
    }
}

/// Load pixels for the selected cohort. `group_id` is the patient id.
pub fn load_cohort_images(selected: &[(CohortRecord, u8)]) -> Result<Vec<ImageRecord>> {
    selected
        .iter()
        .map(|(r, class)| {
            Ok(ImageRecord {
                image_id: r.image_id.clone(),
                patient_id: r.patient_id.clone(),
                group_id: r.patient_id.clone(),
                class_label: *class,
                pixels: GrayImage::load(&r.image_path)?,
                augmentation_of: None,
                transform_log: Vec::new(),
            })
        })
        .collect()
}

/// Augmentation magnitudes; every parameter is drawn uniformly in `[-max, max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentParams {
    pub rotation_deg: f64,
    /// Fraction of the image side.
    pub translation_frac: f64,
    pub shear_deg: f64,
    /// Control-point jitter as a fraction of the image side.
    pub piecewise_jitter_frac: f64,
    /// Control grid cells per side for the piecewise affine warp.
    pub piecewise_cells: usize,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            rotation_deg: 10.0,
            translation_frac: 0.05,
            shear_deg: 5.0,
            piecewise_jitter_frac: 0.02,
            piecewise_cells: 4,
        }
    }
}

/// A rotation/shear/translation about the image centre composed with a
/// piecewise affine displacement field on a triangulated control grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Warp {
    width: usize,
    height: usize,
    /// Inverse of the linear part (rotation * shear).
    inv: [[f64; 2]; 2],
    translate: (f64, f64),
    cells: usize,
    /// Control point displacements, `(cells + 1)^2` row-major.
    jitter: Vec<(f64, f64)>,
}

impl Warp {
    pub fn random(
        width: usize,
        height: usize,
        params: &AugmentParams,
        rng: &mut impl Rng,
    ) -> (Self, Vec<TransformParam>) {
        let sym = |rng: &mut dyn rand::RngCore, max: f64| {
            if max > 0.0 {
                rng.gen_range(-max..=max)
            } else {
                0.0
            }
        };
        let rot = sym(rng, params.rotation_deg);
        let shear = sym(rng, params.shear_deg);
        let tx = sym(rng, params.translation_frac) * width as f64;
        let ty = sym(rng, params.translation_frac) * height as f64;
        let cells = params.piecewise_cells.max(1);
        let mut jitter = vec![(0.0, 0.0); (cells + 1) * (cells + 1)];
        for gy in 1..cells {
            for gx in 1..cells {
                let dx = sym(rng, params.piecewise_jitter_frac) * width as f64;
                let dy = sym(rng, params.piecewise_jitter_frac) * height as f64;
                jitter[gy * (cells + 1) + gx] = (dx, dy);
            }
        }

        let (s, c) = rot.to_radians().sin_cos();
        let k = shear.to_radians().tan();
        // Forward linear map: R * [[1, k], [0, 1]]
        let fwd = [[c, c * k - s], [s, s * k + c]];
        let det = fwd[0][0] * fwd[1][1] - fwd[0][1] * fwd[1][0];
        let inv = [[fwd[1][1] / det, -fwd[0][1] / det], [-fwd[1][0] / det, fwd[0][0] / det]];
        let max_jitter = jitter.iter().map(|(x, y)| x.abs().max(y.abs())).fold(0.0, f64::max);
        let log = vec![
            param("rotation_deg", rot),
            param("shear_deg", shear),
            param("translate_x_px", tx),
            param("translate_y_px", ty),
            param("piecewise_cells", cells as f64),
            param("piecewise_max_jitter_px", max_jitter),
        ];
        (
            Self {
                width,
                height,
                inv,
                translate: (tx, ty),
                cells,
                jitter,
            },
            log,
        )
    }

    fn displacement(&self, x: f64, y: f64) -> (f64, f64) {
        let n = self.cells;
        let cw = (self.width.max(2) - 1) as f64 / n as f64;
        let ch = (self.height.max(2) - 1) as f64 / n as f64;
        let gx = (x / cw).clamp(0.0, n as f64 - 1e-9);
        let gy = (y / ch).clamp(0.0, n as f64 - 1e-9);
        let (ix, iy) = (gx.floor() as usize, gy.floor() as usize);
        let (fx, fy) = (gx - ix as f64, gy - iy as f64);
        let at = |cx: usize, cy: usize| self.jitter[cy * (n + 1) + cx];
        // Each cell splits along its anti-diagonal into two triangles; the
        // field is affine (barycentric) inside each triangle.
        let (p00, p10, p01, p11) = (at(ix, iy), at(ix + 1, iy), at(ix, iy + 1), at(ix + 1, iy + 1));
        if fx + fy <= 1.0 {
            let w0 = 1.0 - fx - fy;
            (
                w0 * p00.0 + fx * p10.0 + fy * p01.0,
                w0 * p00.1 + fx * p10.1 + fy * p01.1,
            )
        } else {
            let w11 = fx + fy - 1.0;
            let w10 = 1.0 - fy;
            let w01 = 1.0 - fx;
            (
                w11 * p11.0 + w10 * p10.0 + w01 * p01.0,
                w11 * p11.1 + w10 * p10.1 + w01 * p01.1,
            )
        }
    }

    /// Source coordinate for output pixel `(x, y)`.
    pub fn source_of(&self, x: f64, y: f64) -> (f64, f64) {
        let cx = (self.width as f64 - 1.0) / 2.0;
        let cy = (self.height as f64 - 1.0) / 2.0;
        let u = x - cx - self.translate.0;
        let v = y - cy - self.translate.1;
        let (dx, dy) = self.displacement(x, y);
        (
            self.inv[0][0] * u + self.inv[0][1] * v + cx + dx,
            self.inv[1][0] * u + self.inv[1][1] * v + cy + dy,
        )
    }

    /// Bilinear resampling with edge replication.
    pub fn apply(&self, img: &GrayImage) -> GrayImage {
        GrayImage::from_fn(img.width(), img.height(), |x, y| {
            let (sx, sy) = self.source_of(x as f64, y as f64);
            img.sample_bilinear(sx, sy)
        })
    }

    /// Nearest-neighbour resampling, keeps binary masks binary.
    pub fn apply_nearest(&self, img: &GrayImage) -> GrayImage {
        GrayImage::from_fn(img.width(), img.height(), |x, y| {
            let (sx, sy) = self.source_of(x as f64, y as f64);
            img.sample_nearest(sx, sy)
        })
    }
}

fn param(name: &str, value: f64) -> TransformParam {
    TransformParam {
        name: name.to_string(),
        value,
    }
}

/// Stable 64-bit FNV-1a, used to derive per-record RNG streams.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub(crate) fn derive_seed(seed: u64, key: &str, index: u64) -> u64 {
    let mut buf = seed.to_le_bytes().to_vec();
    buf.extend_from_slice(key.as_bytes());
    buf.extend_from_slice(&index.to_le_bytes());
    fnv1a(&buf)
}

/// Return the original followed by `multiplier - 1` augmented variants.
pub fn augment(record: &ImageRecord, multiplier: usize, seed: u64, params: &AugmentParams) -> Result<Vec<ImageRecord>> {
    if multiplier == 0 {
        return Err(Error::Parameter("augmentation multiplier must be >= 1".into()));
    }
    if record.pixels.is_empty() {
        return Err(Error::Parameter(format!("image `{}` has no pixels", record.image_id)));
    }
    let (w, h) = record.pixels.dims();
    let mut out = Vec::with_capacity(multiplier);
    out.push(record.clone());
    for k in 1..multiplier {
        let rng_seed = derive_seed(seed, &record.image_id, k as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let (warp, mut log) = Warp::random(w, h, params, &mut rng);
        log.push(param("variant_index", k as f64));
        out.push(ImageRecord {
            image_id: format!("{}_aug{k:02}", record.image_id),
            patient_id: record.patient_id.clone(),
            group_id: record.group_id.clone(),
            class_label: record.class_label,
            pixels: warp.apply(&record.pixels),
            augmentation_of: Some(record.image_id.clone()),
            transform_log: log,
        });
    }
    Ok(out)
}

/// Augment every record; originals keep their order, each followed by its variants.
pub fn augment_all(
    records: &[ImageRecord],
    multiplier: usize,
    seed: u64,
    params: &AugmentParams,
) -> Result<Vec<ImageRecord>> {
    let mut out = Vec::with_capacity(records.len() * multiplier);
    for r in records {
        out.extend(augment(r, multiplier, seed, params)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Lineage {
    pub image_id: String,
    pub patient_id: String,
    pub group_id: String,
    pub class_label: u8,
    pub augmentation_of: Option<String>,
    pub seed: u64,
    pub transform_log: Vec<TransformParam>,
}

/// Write `<id>.png` plus `<id>.json` lineage for each record.
pub fn write_records(records: &[ImageRecord], dir: &Path, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for r in records {
        r.pixels.save_png(&dir.join(format!("{}.png", r.image_id)))?;
        let lineage = Lineage {
            image_id: r.image_id.clone(),
            patient_id: r.patient_id.clone(),
            group_id: r.group_id.clone(),
            class_label: r.class_label,
            augmentation_of: r.augmentation_of.clone(),
            seed,
            transform_log: r.transform_log.clone(),
        };
        let path = dir.join(format!("{}.json", r.image_id));
        let text = serde_json::to_string_pretty(&lineage)?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Read records previously written by [`write_records`], sorted by image id.
pub fn read_records(dir: &Path) -> Result<Vec<ImageRecord>> {
    let mut jsons: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    jsons.sort();
    jsons
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let l: Lineage = serde_json::from_str(&text)?;
            Ok(ImageRecord {
                pixels: GrayImage::load(&p.with_extension("png"))?,
                image_id: l.image_id,
                patient_id: l.patient_id,
                group_id: l.group_id,
                class_label: l.class_label,
                augmentation_of: l.augmentation_of,
                transform_log: l.transform_log,
            })
        })
        .collect()
}
