use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use segthresh::morphology::{ElementShape, PostprocessOrder};
use segthresh::report::{self, RunConfig};
use segthresh::{EmptyTruthPolicy, Split};

/// Segmentation metrics and decision-threshold selection.
#[derive(Parser)]
#[command(name = "segthresh", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    common: Common,
}

/// Flags shared by every subcommand. Anything left unset falls back to the
/// config file, then to built-in defaults.
#[derive(Args, Default)]
struct Common {
    /// TOML file with default settings
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dataset root; manifest and record paths resolve against it
    #[arg(long, global = true)]
    root: Option<PathBuf>,
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Threshold grid as start:stop:step
    #[arg(long, global = true, value_name = "START:STOP:STEP")]
    grid: Option<String>,
    #[arg(long, global = true)]
    threshold: Option<f64>,
    /// Objective weights for dice, iou and pixel accuracy
    #[arg(long, global = true, value_name = "D,I,P")]
    weights: Option<String>,
    /// Whether images with empty ground truth count toward the means
    #[arg(long, global = true, value_name = "include|exclude")]
    policy: Option<EmptyTruthPolicy>,
    /// Clean binarized predictions with morphology before scoring
    #[arg(long, global = true)]
    postprocess: bool,
    #[arg(long, global = true, value_name = "cross3|square3")]
    se: Option<ElementShape>,
    #[arg(long, global = true, value_name = "open-close|close-open")]
    order: Option<PostprocessOrder>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Replay per-threshold aggregates from a CSV instead of reading images
    #[arg(long, global = true)]
    from_csv: Option<PathBuf>,
    /// Only use manifest records from this split
    #[arg(long, global = true)]
    split: Option<Split>,
    /// Epoch label carried into reports
    #[arg(long, global = true)]
    epoch: Option<u32>,
}

#[derive(Subcommand)]
enum Command {
    /// Score a dataset at one threshold
    Eval,
    /// Score a dataset at every grid threshold
    Sweep,
    /// Sweep and report the threshold maximizing the weighted objective
    Optimize,
    /// Generate a synthetic dataset
    Synth(SynthArgs),
    /// Assign train/validation/test splits to a manifest
    Split,
    /// Resize, normalize and augment images and masks
    Preprocess(PreprocessArgs),
    /// Apply morphological clean-up to a directory of masks
    Postprocess(PostprocessArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    /// Probability that an image contains foreground
    #[arg(long)]
    presence: Option<f64>,
    #[arg(long)]
    blur: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    /// Threshold to make per-image Dice-optimal
    #[arg(long)]
    plant: Option<f64>,
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long)]
    masks: Option<PathBuf>,
    /// Output side length
    #[arg(long)]
    size: Option<usize>,
    /// Augmented copies per image/mask pair
    #[arg(long)]
    augment: Option<usize>,
}

#[derive(Args)]
struct PostprocessArgs {
    #[arg(long)]
    input: Option<PathBuf>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn resolve(cli: &Cli) -> segthresh::Result<RunConfig> {
    let c = &cli.common;
    let mut cfg = match &c.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    set(&mut cfg.root, c.root.clone());
    set(&mut cfg.manifest, c.manifest.clone());
    set(&mut cfg.grid, c.grid.clone());
    if c.threshold.is_some() {
        cfg.threshold = c.threshold;
    }
    if let Some(w) = &c.weights {
        let parts: Vec<f64> = w
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| segthresh::Error::Config(format!("bad --weights {w:?}")))?;
        cfg.weights = parts
            .try_into()
            .map_err(|_| segthresh::Error::Config(format!("--weights needs three values, got {w:?}")))?;
    }
    set(&mut cfg.policy, c.policy);
    cfg.postprocess |= c.postprocess;
    set(&mut cfg.se, c.se);
    set(&mut cfg.order, c.order);
    set(&mut cfg.out, c.out.clone());
    set(&mut cfg.seed, c.seed);
    set(&mut cfg.workers, c.workers);
    if c.from_csv.is_some() {
        cfg.from_csv = c.from_csv.clone();
    }
    if c.split.is_some() {
        cfg.split = c.split;
    }
    if c.epoch.is_some() {
        cfg.epoch = c.epoch;
    }

    match &cli.command {
        Command::Synth(a) => {
            let s = &mut cfg.synth;
            set(&mut s.count, a.n);
            set(&mut s.width, a.width);
            set(&mut s.height, a.height);
            set(&mut s.presence, a.presence);
            set(&mut s.blur, a.blur);
            set(&mut s.noise, a.noise);
            if a.plant.is_some() {
                s.plant = a.plant;
            }
        }
        Command::Preprocess(a) => {
            let p = &mut cfg.preprocess;
            if a.images.is_some() {
                p.images = a.images.clone();
            }
            if a.masks.is_some() {
                p.masks = a.masks.clone();
            }
            set(&mut p.size, a.size);
            set(&mut p.augment, a.augment);
        }
        Command::Postprocess(a) => {
            if a.input.is_some() {
                cfg.input = a.input.clone();
            }
        }
        _ => {}
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> segthresh::Result<()> {
    let cfg = resolve(cli)?;
    match &cli.command {
        Command::Eval => {
            let r = report::cmd_eval(&cfg)?;
            let s = &r.summary;
            println!(
                "threshold {:.6} dice {:.6} iou {:.6} pixel_accuracy {:.6}",
                s.threshold, s.mean_dice, s.mean_iou, s.mean_pixel_accuracy
            );
        }
        Command::Sweep => {
            let r = report::cmd_sweep(&cfg)?;
            println!("optimal_threshold {:.6}", r.optimal_threshold);
        }
        Command::Optimize => {
            let (_, text) = report::cmd_optimize(&cfg)?;
            print!("{text}");
        }
        Command::Synth(_) => {
            let m = report::cmd_synth(&cfg)?;
            println!(
                "wrote {} samples (train {}, validation {}, test {})",
                m.records.len(),
                m.count(Split::Train),
                m.count(Split::Validation),
                m.count(Split::Test)
            );
        }
        Command::Split => {
            let m = report::cmd_split(&cfg)?;
            println!(
                "train {} validation {} test {}",
                m.count(Split::Train),
                m.count(Split::Validation),
                m.count(Split::Test)
            );
        }
        Command::Preprocess(_) => {
            let s = report::cmd_preprocess(&cfg)?;
            println!(
                "images {} masks {} augmented {}",
                s.images, s.masks, s.augmented
            );
        }
        Command::Postprocess(_) => {
            let n = report::cmd_postprocess(&cfg)?;
            println!("cleaned {n} masks");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
