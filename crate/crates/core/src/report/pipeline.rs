use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::config::{AdapterKind, LoadedConfig, PipelineConfig};
use super::render::{average_gradient_surface, render_tree, Surface};
use crate::cohort::{
    augment_all, load_cohort_images, parse_manifest, read_records, select_icu_cohort, write_records, ImageRecord,
};
use crate::corrext::{
    classify_external, frequency_ratio, load_external, null_hypothesis_check, tokens_by_class, Lexicon,
};
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::imgproc::{cleanup_mask, crop_to_lung, normalize_contrast, LungMask};
use crate::lungseg::{load_paired_corpus, train_segmenter, Segmenter};
use crate::pathfeat::{
    build_feature_table, gradient_map, label_index, ExtractorAdapter, FeatureMode, FeatureTable, ProcessAdapter,
    StubAdapter, TableSchema,
};
use crate::treelab::{fit_tree, leave_two_out_cv, metrics, rank_features, TreeModel};

/// Pipeline stages in execution order.
pub const STAGES: [&str; 7] = [
    "cohort", "lungseg", "imgproc", "pathfeat", "treelab", "corrext", "surface",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Run,
    Resumed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub stages: Vec<(String, StageStatus)>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    stage: String,
    key: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct FileEntry {
    path: String,
    bytes: u64,
    sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path).map_err(|e| Error::io(path, e))?))
}

fn fresh_dir(path: &Path) -> Result<()> {
    if path.exists() {
        std::fs::remove_dir_all(path).map_err(|e| Error::io(path, e))?;
    }
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write(path, serde_json::to_string_pretty(value)? + "\n")
}

fn file_slug(label: &str) -> String {
    label.replace(' ', "_")
}

/// Walk `dir` recursively; paths are relative and `/`-separated, sorted.
fn list_files(dir: &Path) -> Result<Vec<String>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
        for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else {
                let rel = path.strip_prefix(root).expect("walk stays under root");
                out.push(
                    rel.components()
                        .map(|c| c.as_os_str().to_string_lossy())
                        .collect::<Vec<_>>()
                        .join("/"),
                );
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out)?;
    out.sort();
    Ok(out)
}

/// Staged, checkpointed run of the whole analysis.
pub struct Pipeline {
    cfg: PipelineConfig,
    echo: Option<(String, &'static str)>,
    out: PathBuf,
    segmenter: Option<Arc<Segmenter>>,
    adapter: Option<Arc<dyn ExtractorAdapter>>,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            out: cfg.output_dir.clone(),
            cfg,
            echo: None,
            segmenter: None,
            adapter: None,
        })
    }

    pub fn from_loaded(loaded: &LoadedConfig) -> Result<Self> {
        let mut p = Self::new(loaded.config.clone())?;
        p.echo = Some((loaded.source_text.clone(), loaded.format));
        Ok(p)
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn output_dir(&self) -> &Path {
        &self.out
    }

    fn dir(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn stage_key(&self, stage: &str) -> Result<String> {
        let mut text = serde_json::to_string(&self.cfg)?;
        text.push_str(stage);
        Ok(sha256_hex(text.as_bytes()))
    }

    fn checkpoint_path(&self, stage: &str) -> PathBuf {
        self.dir("checkpoints").join(format!("{stage}.json"))
    }

    fn checkpoint_valid(&self, stage: &str) -> Result<bool> {
        let p = self.checkpoint_path(stage);
        let Ok(text) = std::fs::read_to_string(&p) else {
            return Ok(false);
        };
        let cp: Checkpoint = match serde_json::from_str(&text) {
            Ok(cp) => cp,
            Err(_) => return Ok(false),
        };
        Ok(cp.stage == stage && cp.key == self.stage_key(stage)?)
    }

    fn stage_enabled(&self, stage: &str) -> bool {
        stage != "corrext" || self.cfg.paths.external_manifest.is_some()
    }

    /// Run every stage, or stop after `until`.
    pub fn run(&mut self, until: Option<&str>) -> Result<RunSummary> {
        if let Some(u) = until {
            if !STAGES.contains(&u) {
                return Err(Error::Parameter(format!(
                    "unknown stage `{u}`; stages: {}",
                    STAGES.join(", ")
                )));
            }
        }
        std::fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        if !self.cfg.resume {
            let cp = self.dir("checkpoints");
            if cp.exists() {
                std::fs::remove_dir_all(&cp).map_err(|e| Error::io(&cp, e))?;
            }
        }
        self.write_config_echo()?;
        let mut stages = Vec::new();
        let mut last_ok = "none".to_string();
        let mut upstream_ran = false;
        for stage in STAGES {
            if !self.stage_enabled(stage) {
                let _ = std::fs::remove_file(self.checkpoint_path(stage));
                stages.push((stage.to_string(), StageStatus::Skipped));
            } else if self.cfg.resume && !upstream_ran && self.checkpoint_valid(stage)? {
                log::info!("stage {stage}: resumed from checkpoint");
                stages.push((stage.to_string(), StageStatus::Resumed));
                last_ok = stage.to_string();
            } else {
                upstream_ran = true;
                let _ = std::fs::remove_file(self.checkpoint_path(stage));
                log::info!("stage {stage}: running");
                self.run_stage(stage).map_err(|e| Error::Stage {
                    stage: stage.to_string(),
                    last_ok: last_ok.clone(),
                    source: Box::new(e),
                })?;
                write_json(
                    &self.checkpoint_path(stage),
                    &Checkpoint {
                        stage: stage.to_string(),
                        key: self.stage_key(stage)?,
                    },
                )?;
                stages.push((stage.to_string(), StageStatus::Run));
                last_ok = stage.to_string();
            }
            if until == Some(stage) {
                break;
            }
        }
        self.write_manifest(&stages)?;
        Ok(RunSummary {
            output_dir: self.out.clone(),
            stages,
        })
    }

    fn run_stage(&mut self, stage: &str) -> Result<()> {
        match stage {
            "cohort" => self.stage_cohort(),
            "lungseg" => self.stage_lungseg(),
            "imgproc" => self.stage_imgproc(),
            "pathfeat" => self.stage_pathfeat(),
            "treelab" => self.stage_treelab(),
            "corrext" => self.stage_corrext(),
            "surface" => self.stage_surface(),
            _ => unreachable!("stage list is fixed"),
        }
    }

    fn write_config_echo(&self) -> Result<()> {
        if let Some((text, format)) = &self.echo {
            write(&self.dir(&format!("config.{format}")), text)?;
        }
        write_json(&self.dir("effective_config.json"), &self.cfg)
    }

    fn stage_cohort(&mut self) -> Result<()> {
        let cfg = &self.cfg;
        let records = parse_manifest(&cfg.paths.cohort_manifest, &cfg.cohort_columns, &cfg.cohort_images())?;
        let selected = select_icu_cohort(&records)?;
        log::info!("cohort: {} of {} manifest rows selected", selected.len(), records.len());
        let images = load_cohort_images(&selected)?;
        let augmented = augment_all(&images, cfg.augment.multiplier, cfg.seed, &cfg.augment.params)?;
        let dir = self.dir("cohort");
        fresh_dir(&dir)?;
        write_records(&augmented, &dir.join("records"), cfg.seed)?;
        let mut csv = String::from("image_id,patient_id,class_label,width,height\n");
        for r in &images {
            let _ = writeln!(
                csv,
                "{},{},{},{},{}",
                r.image_id,
                r.patient_id,
                r.class_label,
                r.pixels.width(),
                r.pixels.height()
            );
        }
        write(&dir.join("selection.csv"), csv)
    }

    fn stage_lungseg(&mut self) -> Result<()> {
        let dir = self.dir("models");
        fresh_dir(&dir)?;
        self.segmenter = None;
        let paths = &self.cfg.paths;
        if let Some(w) = paths.segmenter_weights.as_ref().filter(|w| w.exists()) {
            let seg = Segmenter::load(w)?;
            write_json(
                &dir.join("segmenter_source.json"),
                &json!({ "weights": w, "sha256": sha256_file(w)? }),
            )?;
            self.segmenter = Some(Arc::new(seg));
            return Ok(());
        }
        let Some(corpus) = &paths.train_corpus else {
            return Err(Error::Config(match &paths.segmenter_weights {
                Some(w) => format!(
                    "segmenter weights not found at {} and no paths.train_corpus to train from",
                    w.display()
                ),
                None => "neither paths.segmenter_weights nor paths.train_corpus is set".into(),
            }));
        };
        let pairs = load_paired_corpus(corpus)?;
        log::info!("lungseg: training on {} pairs", pairs.len());
        let outcome = train_segmenter(&pairs, &self.cfg.segmenter)?;
        outcome.segmenter.save(&dir.join("segmenter.ckpt"))?;
        let mut hist = String::from("epoch,train_loss,val_dice\n");
        for e in &outcome.history {
            let _ = writeln!(hist, "{},{},{}", e.epoch, e.train_loss, e.val_dice);
        }
        write(&dir.join("training_history.csv"), hist)?;
        write_json(
            &dir.join("segmenter_source.json"),
            &json!({
                "trained_from": corpus,
                "pairs": pairs.len(),
                "best_epoch": outcome.best_epoch,
                "best_val_dice": outcome.best_val_dice,
            }),
        )?;
        self.segmenter = Some(Arc::new(outcome.segmenter));
        Ok(())
    }

    fn segmenter(&mut self) -> Result<Arc<Segmenter>> {
        if self.segmenter.is_none() {
            let trained = self.dir("models").join("segmenter.ckpt");
            let path = if trained.exists() {
                trained
            } else {
                self.cfg
                    .paths
                    .segmenter_weights
                    .clone()
                    .ok_or_else(|| Error::Config("no segmenter available; run the lungseg stage".into()))?
            };
            self.segmenter = Some(Arc::new(Segmenter::load(&path)?));
        }
        Ok(self.segmenter.clone().expect("set above"))
    }

    fn adapter(&mut self) -> Result<Arc<dyn ExtractorAdapter>> {
        if self.adapter.is_none() {
            let adapter: Arc<dyn ExtractorAdapter> = match self.cfg.features.adapter {
                AdapterKind::Stub => Arc::new(StubAdapter::new(self.cfg.stub_seed())),
                AdapterKind::Real => {
                    let w = self.cfg.paths.adapter_weights.as_ref().ok_or_else(|| {
                        Error::Config("features.adapter = \"real\" requires paths.adapter_weights".into())
                    })?;
                    Arc::new(ProcessAdapter::spawn(&self.cfg.features.bridge_command, w)?)
                }
            };
            log::info!("adapter: {}", adapter.fingerprint());
            self.adapter = Some(adapter);
        }
        Ok(self.adapter.clone().expect("set above"))
    }

    /// Segment the raw image, equalize it, and crop the equalized image to the lungs.
    fn preprocess_image(&self, seg: &Segmenter, image: &GrayImage) -> Result<(GrayImage, LungMask)> {
        let p = &self.cfg.preprocess;
        let prob = seg.segment(image);
        let mask = cleanup_mask(&prob, p.threshold, &p.cleanup)?;
        let eq = normalize_contrast(image, &p.equalize)?;
        crop_to_lung(&eq, &mask, p.margin_frac, p.zero_outside)
    }

    fn stage_imgproc(&mut self) -> Result<()> {
        let seg = self.segmenter()?;
        let records = read_records(&self.dir("cohort").join("records"))?;
        let dir = self.dir("preprocessed");
        fresh_dir(&dir)?;
        let mut kept = Vec::new();
        let mut log_csv = String::from("image_id,status,width,height,mask_area,detail\n");
        for r in records {
            match self.preprocess_image(&seg, &r.pixels) {
                Ok((img, mask)) => {
                    let _ = writeln!(
                        log_csv,
                        "{},ok,{},{},{},",
                        r.image_id,
                        img.width(),
                        img.height(),
                        mask.area()
                    );
                    mask.save_png(&dir.join("masks").join(format!("{}.png", r.image_id)))?;
                    kept.push(ImageRecord { pixels: img, ..r });
                }
                Err(Error::EmptyMask(m)) => {
                    log::warn!("{}: dropped, {m}", r.image_id);
                    let _ = writeln!(log_csv, "{},unsegmentable,,,,{m}", r.image_id);
                }
                Err(e) => return Err(e),
            }
        }
        if kept.is_empty() {
            return Err(Error::Data("no cohort image survived segmentation".into()));
        }
        write_records(&kept, &dir.join("records"), self.cfg.seed)?;
        write(&dir.join("preprocess_log.csv"), log_csv)
    }

    fn table_path(&self, mode: FeatureMode) -> PathBuf {
        self.dir("features").join(format!("{mode}.csv"))
    }

    fn stage_pathfeat(&mut self) -> Result<()> {
        let adapter = self.adapter()?;
        let records = read_records(&self.dir("preprocessed").join("records"))?;
        fresh_dir(&self.dir("features"))?;
        for &mode in &self.cfg.features.modes {
            let table = build_feature_table(&records, adapter.as_ref(), mode);
            if table.is_empty() {
                return Err(Error::Data(format!("no {mode} features could be extracted")));
            }
            let flagged = table.rows.iter().filter(|r| r.flagged).count();
            log::info!("pathfeat: {mode} table with {} rows ({flagged} flagged)", table.len());
            table.write(&self.table_path(mode))?;
        }
        Ok(())
    }

    fn tree_dir(&self, mode: FeatureMode) -> PathBuf {
        self.dir("trees").join(mode.to_string())
    }

    fn stage_treelab(&mut self) -> Result<()> {
        fresh_dir(&self.dir("trees"))?;
        let t = self.cfg.tree;
        let mut summary =
            String::from("mode,whole_set_accuracy,whole_set_f1,cv_accuracy,cv_f1,cv_folds,root_feature\n");
        for &mode in &self.cfg.features.modes {
            let table = FeatureTable::read(&self.table_path(mode))?;
            let dir = self.tree_dir(mode);
            let model = fit_tree(&table, t.min_leaf, t.max_depth, self.cfg.seed)?;
            model.save(&dir.join("tree.json"))?;
            let (text, dot) = render_tree(&model);
            write(&dir.join("tree.txt"), text)?;
            write(&dir.join("tree.dot"), dot)?;

            let sources: Vec<_> = table.rows.iter().filter(|r| r.is_source() && !r.flagged).collect();
            let preds = sources
                .iter()
                .map(|r| model.predict_values(&table.columns, &r.values))
                .collect::<Result<Vec<_>>>()?;
            let labels: Vec<u8> = sources.iter().map(|r| r.class_label).collect();
            let whole = metrics(&preds, &labels)?;
            write(&dir.join("whole_set.json"), whole.to_json()?)?;
            write(&dir.join("whole_set_confusion.csv"), whole.confusion_csv())?;

            let mut ranking = String::from("rank,feature,samples\n");
            for (i, (f, n)) in rank_features(&model).iter().enumerate() {
                let _ = writeln!(ranking, "{},{f},{n}", i + 1);
            }
            write(&dir.join("ranking.csv"), ranking)?;

            let cv = leave_two_out_cv(&table, t.min_leaf, t.max_depth, self.cfg.seed)?;
            write(&dir.join("cv.json"), cv.to_json()?)?;
            write(&dir.join("cv_confusion.csv"), cv.confusion_csv())?;
            let folds = cv.per_fold.as_deref().unwrap_or_default();
            let mut preds_csv = String::from("fold,image_id,group_id,label,prediction\n");
            for f in folds {
                for s in &f.scored {
                    let _ = writeln!(
                        preds_csv,
                        "{},{},{},{},{}",
                        f.fold, s.image_id, s.group_id, s.label, s.prediction
                    );
                }
            }
            write(&dir.join("cv_predictions.csv"), preds_csv)?;
            let root = model.root().split.as_ref().map(|s| s.feature.as_str()).unwrap_or("");
            let _ = writeln!(
                summary,
                "{mode},{},{},{},{},{},{root}",
                whole.accuracy,
                whole.f1,
                cv.accuracy,
                cv.f1,
                folds.len()
            );
        }
        write(&self.dir("trees").join("summary.csv"), summary)
    }

    fn stage_corrext(&mut self) -> Result<()> {
        let manifest = self
            .cfg
            .paths
            .external_manifest
            .clone()
            .expect("stage enabled only with a manifest");
        let mode = self.cfg.features.correlate_mode;
        let seg = self.segmenter()?;
        let adapter = self.adapter()?;
        let dir = self.dir("external");
        fresh_dir(&dir)?;
        let images = load_external(&manifest, &self.cfg.external_columns, false)?;
        let mut log_csv = String::from("image_id,status,label_count\n");
        let mut records = Vec::new();
        for img in &images {
            let status = if !img.valid {
                "unreadable"
            } else {
                let pixels = GrayImage::load(&img.image_path)?;
                match self.preprocess_image(&seg, &pixels) {
                    Ok((cropped, _)) => {
                        let p = dir.join("preprocessed").join(format!("{}.png", img.image_id));
                        cropped.save_png(&p)?;
                        records.push(ImageRecord {
                            image_id: img.image_id.clone(),
                            patient_id: img.image_id.clone(),
                            group_id: img.image_id.clone(),
                            class_label: 0,
                            pixels: GrayImage::load(&p)?,
                            augmentation_of: None,
                            transform_log: Vec::new(),
                        });
                        "ok"
                    }
                    Err(Error::EmptyMask(_)) => "unsegmentable",
                    Err(e) => return Err(e),
                }
            };
            let _ = writeln!(log_csv, "{},{status},{}", img.image_id, img.labels.len());
        }
        write(&dir.join("preprocess_log.csv"), log_csv)?;

        let table = build_feature_table(&records, adapter.as_ref(), mode);
        table.write(&dir.join(format!("features_{mode}.csv")))?;
        let model = TreeModel::load(&self.tree_dir(mode).join("tree.json"))?;
        let partition = classify_external(&model, &table)?;
        let mut part_csv = String::from("image_id,predicted_class\n");
        for row in &table.rows {
            let c = partition.class_of(&row.image_id).expect("every row is classified");
            let _ = writeln!(part_csv, "{},{c}", row.image_id);
        }
        write(&dir.join("partition.csv"), part_csv)?;

        let lexicon = match &self.cfg.paths.lexicon {
            Some(p) => Lexicon::load(p)?,
            None => Lexicon::default(),
        };
        let [c0, c1] = tokens_by_class(&images, &partition);
        let report = frequency_ratio(&c0, &c1, self.cfg.correlation.min_count);
        write(&dir.join("ratios.csv"), report.to_csv(&lexicon))?;
        write(&dir.join("ratios.txt"), report.to_text_table(&lexicon))?;
        write_json(&dir.join("ratio_report.json"), &report)?;

        let token_sets: Vec<&[String]> = c0.iter().chain(&c1).copied().collect();
        let labels: Vec<u8> = std::iter::repeat_n(0u8, c0.len())
            .chain(std::iter::repeat_n(1u8, c1.len()))
            .collect();
        let null = null_hypothesis_check(
            &token_sets,
            &labels,
            self.cfg.correlation.min_count,
            self.cfg.seed,
            self.cfg.correlation.null_trials,
        )?;
        write(&dir.join("null_check.csv"), null.to_csv())?;
        write_json(&dir.join("null_check.json"), &null)?;

        let count = |f: &dyn Fn(&crate::corrext::AnnotatedImage) -> bool| images.iter().filter(|i| f(i)).count();
        write_json(
            &dir.join("summary.json"),
            &json!({
                "mode": mode,
                "manifest_rows": images.len(),
                "unreadable": count(&|i| !i.valid),
                "unlabeled": count(&|i| i.unlabeled),
                "unsegmentable": images.len() - count(&|i| !i.valid) - records.len(),
                "feature_rows": table.len(),
                "class0": partition.class0.len(),
                "class1": partition.class1.len(),
            }),
        )
    }

    fn stage_surface(&mut self) -> Result<()> {
        let adapter = self.adapter()?;
        let (w, h) = adapter.input_size();
        let records: Vec<ImageRecord> = read_records(&self.dir("preprocessed").join("records"))?
            .into_iter()
            .filter(|r| !r.is_augmented())
            .collect();
        let dir = self.dir("surface");
        fresh_dir(&dir)?;
        let resized: Vec<(String, u8, GrayImage)> = records
            .iter()
            .map(|r| (r.image_id.clone(), r.class_label, r.pixels.resize(w, h)))
            .collect();
        let mut summary = String::from("label,class,maps,degenerate_maps,peak,entropy\n");
        for label in &self.cfg.surface.labels {
            label_index(label)?;
            let mut surfaces: Vec<Surface> = Vec::new();
            for class in [0u8, 1] {
                let maps = resized
                    .iter()
                    .filter(|(_, c, _)| *c == class)
                    .map(|(id, _, img)| gradient_map(adapter.as_ref(), img, id, label))
                    .collect::<Result<Vec<_>>>()?;
                let degenerate = maps.iter().filter(|m| m.degenerate).count();
                let s = average_gradient_surface(&maps, class, self.cfg.surface.grid)?;
                let entropy: f64 = s.values.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
                let _ = writeln!(
                    summary,
                    "{label},{class},{},{degenerate},{},{entropy}",
                    s.map_count,
                    s.max()
                );
                write(&dir.join(format!("{}_class{class}.csv", file_slug(label))), s.to_csv())?;
                surfaces.push(s);
            }
            let vmax = surfaces.iter().map(Surface::max).fold(0.0, f64::max);
            for s in &surfaces {
                s.save_heatmap(
                    &dir.join(format!("{}_class{}.png", file_slug(label), s.class_label)),
                    vmax,
                )?;
            }
        }
        write(&dir.join("summary.csv"), summary)
    }

    fn adapter_fingerprint(&self) -> Option<String> {
        if let Some(a) = &self.adapter {
            return Some(a.fingerprint());
        }
        let mode = self.cfg.features.modes.first()?;
        let schema_path = self.table_path(*mode).with_extension("schema.json");
        let schema: TableSchema = serde_json::from_str(&std::fs::read_to_string(schema_path).ok()?).ok()?;
        Some(schema.adapter_fingerprint)
    }

    fn write_manifest(&self, stages: &[(String, StageStatus)]) -> Result<()> {
        let manifest_name = "run_manifest.json";
        let mut files = Vec::new();
        for rel in list_files(&self.out)? {
            if rel == manifest_name {
                continue;
            }
            let p = self.out.join(&rel);
            let bytes = std::fs::metadata(&p).map_err(|e| Error::io(&p, e))?.len();
            files.push(FileEntry {
                sha256: sha256_file(&p)?,
                path: rel,
                bytes,
            });
        }
        let mut inputs = Vec::new();
        let p = &self.cfg.paths;
        for path in [
            Some(&p.cohort_manifest),
            p.external_manifest.as_ref(),
            p.segmenter_weights.as_ref(),
            p.lexicon.as_ref(),
        ]
        .into_iter()
        .flatten()
        .filter(|p| p.is_file())
        {
            inputs.push(json!({ "path": path, "sha256": sha256_file(path)? }));
        }
        let completed: Vec<&str> = stages
            .iter()
            .filter(|(_, s)| *s != StageStatus::Skipped)
            .map(|(n, _)| n.as_str())
            .collect();
        write_json(
            &self.out.join(manifest_name),
            &json!({
                "seed": self.cfg.seed,
                "adapter": self.cfg.features.adapter,
                "adapter_fingerprint": self.adapter_fingerprint(),
                "stages_completed": completed,
                "config": self.cfg,
                "inputs": inputs,
                "files": files,
            }),
        )
    }
}

/// Run the full pipeline described by a loaded config file.
pub fn run_pipeline(loaded: &LoadedConfig) -> Result<RunSummary> {
    Pipeline::from_loaded(loaded)?.run(None)
}
