use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use icufeat::imgproc::{cleanup_mask, CleanupParams};
use icufeat::lungseg::{load_paired_corpus, train_segmenter, LossKind, Segmenter, SegmenterConfig};
use icufeat::pathfeat::{FeatureMode, FeatureTable};
use icufeat::report::{AdapterKind, Pipeline, PipelineConfig, RunSummary};
use icufeat::treelab::EvalResult;
use icufeat::GrayImage;

#[derive(Parser)]
#[command(
    name = "icufeat",
    version,
    about = "Interpretable chest X-ray features for ICU-admission analysis"
)]
struct Cli {
    /// Log level filter (error, warn, info, debug)
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Pipeline config (TOML, or JSON with a .json extension)
    #[arg(long, short)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = ["stub", "real"])]
    adapter: Option<String>,
    /// Restrict the run to one feature mode
    #[arg(long, value_parser = ["mid", "last", "gradient"])]
    mode: Option<String>,
    /// Ignore existing checkpoints and rerun every stage
    #[arg(long)]
    no_resume: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Select the ICU cohort and write augmented records
    Ingest(RunArgs),
    /// Train the lung segmenter on a paired image/mask corpus
    SegmentTrain {
        /// Directory with images/ and masks/
        #[arg(long)]
        corpus: PathBuf,
        /// Checkpoint to write
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 256)]
        input_size: usize,
        #[arg(long, default_value_t = 4)]
        depth: usize,
        #[arg(long, default_value_t = 32)]
        base_channels: usize,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long, default_value_t = 8)]
        batch: usize,
        #[arg(long, default_value_t = 1e-3)]
        learning_rate: f32,
        #[arg(long, default_value_t = 0.1)]
        val_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Train with soft dice only instead of BCE plus dice
        #[arg(long)]
        dice_only: bool,
    },
    /// Write cleaned lung masks for an image or a directory of images
    Segment {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f32,
    },
    /// Run through segmentation, equalization and cropping
    Preprocess(RunArgs),
    /// Run through feature extraction
    Extract(RunArgs),
    /// Run through tree fitting and print whole-set metrics
    Fit(RunArgs),
    /// Run through tree fitting and print cross-validation metrics
    Crossval(RunArgs),
    /// Run through the external-corpus correlation
    Correlate(RunArgs),
    /// Run through the class-averaged gradient surfaces
    Surface(RunArgs),
    /// Run every stage
    Pipeline(RunArgs),
    /// Write a synthetic input set and a matching pipeline config
    Fixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 128)]
        size: usize,
        #[arg(long, default_value_t = 20)]
        cohort: usize,
        #[arg(long, default_value_t = 40)]
        seg_pairs: usize,
        #[arg(long, default_value_t = 80)]
        external: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn load_config(args: &RunArgs) -> Result<Pipeline> {
    let mut loaded = PipelineConfig::load(&args.config)?;
    let cfg = &mut loaded.config;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(a) = &args.adapter {
        cfg.features.adapter = a.parse::<AdapterKind>()?;
    }
    if let Some(m) = &args.mode {
        cfg.set_mode(m.parse::<FeatureMode>()?);
    }
    if args.no_resume {
        cfg.resume = false;
    }
    cfg.validate()?;
    Ok(Pipeline::from_loaded(&loaded)?)
}

fn run_until(args: &RunArgs, stage: Option<&str>) -> Result<(Pipeline, RunSummary)> {
    let mut p = load_config(args)?;
    let summary = p.run(stage)?;
    for (name, status) in &summary.stages {
        println!("{name:<9} {}", serde_json::to_string(status)?.trim_matches('"'));
    }
    println!("artifacts: {}", summary.output_dir.display());
    Ok((p, summary))
}

fn print_eval(p: &Pipeline, file: &str) -> Result<()> {
    for mode in &p.config().features.modes {
        let path = p.output_dir().join("trees").join(mode.to_string()).join(file);
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let r: EvalResult = serde_json::from_str(&text)?;
        println!(
            "{mode:<9} accuracy {:.3}  f1 {:.3}  confusion {:?}",
            r.accuracy, r.f1, r.confusion
        );
    }
    Ok(())
}

fn segment_paths(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut out: Vec<PathBuf> = std::fs::read_dir(input)
        .with_context(|| format!("reading {}", input.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        })
        .collect();
    out.sort();
    Ok(out)
}

fn fixture_config(size: usize) -> String {
    format!(
        r#"seed = 7
output_dir = "run"

[paths]
cohort_manifest = "cohort/metadata.csv"
external_manifest = "external/metadata.csv"
train_corpus = "segcorpus"

[augment]
multiplier = 10

[segmenter]
input_size = [{size}, {size}]
depth = 4
base_channels = 8
epochs = 6
batch = 4
learning_rate = 0.002
seed = 7

[features]
modes = ["last", "mid", "gradient"]
correlate_mode = "last"
adapter = "stub"

[tree]
min_leaf = 20
max_depth = 4

[correlation]
min_count = 5
null_trials = 200

[surface]
labels = ["Effusion", "Consolidation"]
grid = [128, 128]
"#
    )
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(a) => drop(run_until(&a, Some("cohort"))?),
        Command::Preprocess(a) => drop(run_until(&a, Some("imgproc"))?),
        Command::Extract(a) => {
            let (p, _) = run_until(&a, Some("pathfeat"))?;
            for mode in &p.config().features.modes {
                let path = p.output_dir().join("features").join(format!("{mode}.csv"));
                let t = FeatureTable::read(&path)?;
                println!(
                    "{mode:<9} {} rows x {} columns, {} skipped",
                    t.len(),
                    t.columns.len(),
                    t.skipped.len()
                );
            }
        }
        Command::Fit(a) => {
            let (p, _) = run_until(&a, Some("treelab"))?;
            print_eval(&p, "whole_set.json")?;
        }
        Command::Crossval(a) => {
            let (p, _) = run_until(&a, Some("treelab"))?;
            print_eval(&p, "cv.json")?;
        }
        Command::Correlate(a) => {
            let (p, _) = run_until(&a, Some("corrext"))?;
            let path = p.output_dir().join("external").join("ratios.txt");
            if let Ok(text) = std::fs::read_to_string(path) {
                print!("{text}");
            }
        }
        Command::Surface(a) | Command::Pipeline(a) => drop(run_until(&a, None)?),
        Command::SegmentTrain {
            corpus,
            out,
            input_size,
            depth,
            base_channels,
            epochs,
            batch,
            learning_rate,
            val_fraction,
            seed,
            dice_only,
        } => {
            let cfg = SegmenterConfig {
                input_size: (input_size, input_size),
                depth,
                base_channels,
                epochs,
                batch,
                learning_rate,
                val_fraction,
                seed,
                loss: if dice_only { LossKind::Dice } else { LossKind::BceDice },
                ..SegmenterConfig::default()
            };
            cfg.validate()?;
            let pairs = load_paired_corpus(&corpus)?;
            let outcome = train_segmenter(&pairs, &cfg)?;
            for e in &outcome.history {
                println!(
                    "epoch {:>3}  loss {:.5}  val dice {:.4}",
                    e.epoch, e.train_loss, e.val_dice
                );
            }
            outcome.segmenter.save(&out)?;
            println!(
                "best epoch {} (val dice {:.4}) -> {}",
                outcome.best_epoch,
                outcome.best_val_dice,
                out.display()
            );
        }
        Command::Segment {
            weights,
            input,
            output,
            threshold,
        } => {
            let seg = Segmenter::load(&weights)?;
            std::fs::create_dir_all(&output)?;
            let mut failed = 0;
            for path in segment_paths(&input)? {
                let name = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                let img = GrayImage::load(&path)?;
                match cleanup_mask(&seg.segment(&img), threshold, &CleanupParams::default()) {
                    Ok(mask) => {
                        mask.save_png(&output.join(format!("{name}.png")))?;
                        println!("{name}: {} lung pixels", mask.area());
                    }
                    Err(e) => {
                        failed += 1;
                        eprintln!("{name}: {e}");
                    }
                }
            }
            if failed > 0 {
                bail!("{failed} image(s) could not be segmented");
            }
        }
        Command::Fixture {
            out,
            size,
            cohort,
            seg_pairs,
            external,
            seed,
        } => {
            icufeat::synth::write_fixture(&out, size, cohort, seg_pairs, external, seed)?;
            let cfg = out.join("pipeline.toml");
            std::fs::write(&cfg, fixture_config(size))?;
            println!("fixture written; run `icufeat pipeline --config {}`", cfg.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log)
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut shown = e.to_string();
            eprintln!("error: {shown}");
            for cause in e.chain().skip(1) {
                let text = cause.to_string();
                if !shown.contains(&text) {
                    eprintln!("  caused by: {text}");
                }
                shown = text;
            }
            ExitCode::FAILURE
        }
    }
}
