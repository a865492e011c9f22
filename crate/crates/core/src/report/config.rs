use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cohort::{AugmentParams, ManifestColumns};
use crate::corrext::ExternalColumns;
use crate::error::{Error, Result};
use crate::imgproc::{CleanupParams, EqualizeParams};
use crate::lungseg::SegmenterConfig;
use crate::pathfeat::FeatureMode;
use crate::treelab::TreeParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterKind {
    Stub,
    Real,
}

impl std::str::FromStr for AdapterKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stub" => Ok(AdapterKind::Stub),
            "real" => Ok(AdapterKind::Real),
            _ => Err(Error::Parameter(format!(
                "unknown adapter `{s}` (expected stub or real)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub cohort_manifest: PathBuf,
    /// Defaults to `images/` next to the cohort manifest.
    pub cohort_images: Option<PathBuf>,
    pub external_manifest: Option<PathBuf>,
    /// Segmenter checkpoint; trained from `train_corpus` when absent.
    pub segmenter_weights: Option<PathBuf>,
    /// Directory with `images/` and `masks/` of paired training data.
    pub train_corpus: Option<PathBuf>,
    /// Weights of the pretrained pathology model (real adapter only).
    pub adapter_weights: Option<PathBuf>,
    /// Localization lexicon, one token per line.
    pub lexicon: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub equalize: EqualizeParams,
    pub cleanup: CleanupParams,
    pub threshold: f32,
    pub margin_frac: f64,
    pub zero_outside: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            equalize: EqualizeParams::default(),
            cleanup: CleanupParams::default(),
            threshold: 0.5,
            margin_frac: 0.03,
            zero_outside: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Output size per source image, original included.
    pub multiplier: usize,
    pub params: AugmentParams,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            multiplier: 10,
            params: AugmentParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// Tables to extract; each gets its own tree.
    pub modes: Vec<FeatureMode>,
    /// Mode whose tree classifies the external corpus.
    pub correlate_mode: FeatureMode,
    pub adapter: AdapterKind,
    /// Seed of the stub adapter; the run seed when absent.
    pub stub_seed: Option<u64>,
    /// Command serving the real model; `--weights <path>` is appended.
    pub bridge_command: Vec<String>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            modes: vec![FeatureMode::Last, FeatureMode::Mid, FeatureMode::Gradient],
            correlate_mode: FeatureMode::Last,
            adapter: AdapterKind::Stub,
            stub_seed: None,
            bridge_command: vec!["python3".into(), "scripts/xrv_bridge.py".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrelationConfig {
    pub min_count: usize,
    pub null_trials: usize,
}

impl Default for CorrelationConfig {
    fn default() -> Self {
        Self {
            min_count: 20,
            null_trials: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurfaceConfig {
    pub labels: Vec<String>,
    pub grid: (usize, usize),
}

impl Default for SurfaceConfig {
    fn default() -> Self {
        Self {
            labels: vec!["Effusion".into()],
            grid: (128, 128),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Skip stages whose checkpoint matches the current config. Not echoed
    /// into artifacts.
    #[serde(skip_serializing)]
    pub resume: bool,
    pub paths: Paths,
    pub cohort_columns: ManifestColumns,
    pub external_columns: ExternalColumns,
    pub preprocess: PreprocessConfig,
    pub augment: AugmentConfig,
    pub segmenter: SegmenterConfig,
    pub features: FeatureConfig,
    pub tree: TreeParams,
    pub correlation: CorrelationConfig,
    pub surface: SurfaceConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("out"),
            resume: true,
            paths: Paths::default(),
            cohort_columns: ManifestColumns::default(),
            external_columns: ExternalColumns::default(),
            preprocess: PreprocessConfig::default(),
            augment: AugmentConfig::default(),
            segmenter: SegmenterConfig::default(),
            features: FeatureConfig::default(),
            tree: TreeParams::default(),
            correlation: CorrelationConfig::default(),
            surface: SurfaceConfig::default(),
        }
    }
}

/// A parsed config plus the text it was read from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: PipelineConfig,
    pub source_text: String,
    /// `toml` or `json`.
    pub format: &'static str,
}

impl PipelineConfig {
    /// Parse `.json` files as JSON and everything else as TOML. Relative
    /// paths are resolved against the config file's directory.
    pub fn load(path: &Path) -> Result<LoadedConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_json = path.extension().is_some_and(|e| e == "json");
        let mut config: PipelineConfig = if is_json {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        config.validate()?;
        Ok(LoadedConfig {
            config,
            source_text: text,
            format: if is_json { "json" } else { "toml" },
        })
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        fix(&mut self.paths.cohort_manifest);
        for p in [
            &mut self.paths.cohort_images,
            &mut self.paths.external_manifest,
            &mut self.paths.segmenter_weights,
            &mut self.paths.train_corpus,
            &mut self.paths.adapter_weights,
            &mut self.paths.lexicon,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.paths.cohort_manifest.as_os_str().is_empty() {
            return Err(Error::Config("paths.cohort_manifest is required".into()));
        }
        if self.features.modes.is_empty() {
            return Err(Error::Config("features.modes is empty".into()));
        }
        if self.paths.external_manifest.is_some() && !self.features.modes.contains(&self.features.correlate_mode) {
            return Err(Error::Config(format!(
                "features.correlate_mode `{}` is not among features.modes",
                self.features.correlate_mode
            )));
        }
        if self.augment.multiplier == 0 {
            return Err(Error::Config("augment.multiplier must be >= 1".into()));
        }
        self.tree.validate()?;
        self.segmenter.validate()
    }

    pub fn cohort_images(&self) -> PathBuf {
        self.paths.cohort_images.clone().unwrap_or_else(|| {
            self.paths
                .cohort_manifest
                .parent()
                .unwrap_or(Path::new("."))
                .join("images")
        })
    }

    pub fn stub_seed(&self) -> u64 {
        self.features.stub_seed.unwrap_or(self.seed)
    }

    /// Restrict the run to one feature mode.
    pub fn set_mode(&mut self, mode: FeatureMode) {
        self.features.modes = vec![mode];
        self.features.correlate_mode = mode;
    }
}
