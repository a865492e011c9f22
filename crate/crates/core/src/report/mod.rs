//! Configured end-to-end runs, tree diagrams and class-averaged gradient surfaces.

mod config;
mod pipeline;
mod render;

pub use config::{
    AdapterKind, AugmentConfig, CorrelationConfig, FeatureConfig, LoadedConfig, Paths, PipelineConfig,
    PreprocessConfig, SurfaceConfig,
};
pub use pipeline::{run_pipeline, sha256_hex, Pipeline, RunSummary, StageStatus, STAGES};
pub use render::{average_gradient_surface, render_tree, render_tree_dot, render_tree_text, resample_energy, Surface};
