//! Command implementations behind the `segthresh` binary.
//!
//! Each `cmd_*` takes a fully resolved [`RunConfig`], does its work on a
//! rayon pool of `workers` threads, and writes its outputs under `out`.
//! Every numeric value in CSV and JSON output is rounded to six decimals,
//! and rows are ordered by threshold or image id, so reruns are
//! byte-identical regardless of worker count.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    read_mask, read_pmap, split_dataset, write_atomic, write_mask, write_pmap, DatasetManifest,
    ManifestRecord,
};
use crate::error::{Error, Result};
use crate::metrics::{binarize, confusion};
use crate::morphology::{ElementShape, PostprocessOrder, PostprocessPlan};
use crate::preprocess::{
    augment, binarize_mask_image, normalize, resize_image, resize_mask, AugmentationSpec,
    GrayImage,
};
use crate::sweep::{optimize, run_sweep, EmptyTruthPolicy, EvalSample, SweepResult};
use crate::synth::{gen_sample, SynthSpec};
use crate::types::{
    round_to, EvaluationTag, MetricTriple, ObjectiveWeights, Split, ThresholdGrid,
};

pub const CURVE_HEADER: &str = "threshold,dice,iou,pixel_accuracy,objective";

/// Effective configuration of one run. Echoed verbatim into `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub root: PathBuf,
    /// Relative paths resolve against `root`.
    pub manifest: PathBuf,
    /// `start:stop:step`.
    pub grid: String,
    pub threshold: Option<f64>,
    /// Dice, IoU, pixel-accuracy weights before normalization.
    pub weights: [f64; 3],
    pub policy: EmptyTruthPolicy,
    pub postprocess: bool,
    pub se: ElementShape,
    pub order: PostprocessOrder,
    pub out: PathBuf,
    pub seed: u64,
    pub workers: usize,
    pub from_csv: Option<PathBuf>,
    /// Restrict evaluation to one split of the manifest.
    pub split: Option<Split>,
    pub epoch: Option<u32>,
    pub synth: SynthOptions,
    pub preprocess: PreprocessOptions,
    /// Input directory for `postprocess`.
    pub input: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            root: PathBuf::from("."),
            manifest: PathBuf::from("manifest.tsv"),
            grid: "0.01:0.99:0.01".into(),
            threshold: None,
            weights: [1.0, 1.0, 1.0],
            policy: EmptyTruthPolicy::Include,
            postprocess: false,
            se: ElementShape::Cross3,
            order: PostprocessOrder::OpenClose,
            out: PathBuf::from("out"),
            seed: 0,
            workers: 1,
            from_csv: None,
            split: None,
            epoch: None,
            synth: SynthOptions::default(),
            preprocess: PreprocessOptions::default(),
            input: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthOptions {
    pub count: usize,
    pub width: usize,
    pub height: usize,
    pub presence: f64,
    pub blur: usize,
    pub noise: f64,
    pub plant: Option<f64>,
}

impl Default for SynthOptions {
    fn default() -> Self {
        let spec = SynthSpec::default();
        SynthOptions {
            count: 100,
            width: spec.width,
            height: spec.height,
            presence: spec.presence_probability,
            blur: spec.blur_radius,
            noise: spec.noise_amplitude,
            plant: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessOptions {
    pub images: Option<PathBuf>,
    pub masks: Option<PathBuf>,
    pub size: usize,
    /// Augmented copies per image/mask pair.
    pub augment: usize,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        PreprocessOptions {
            images: None,
            masks: None,
            size: 256,
            augment: 0,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        self.threshold_grid()?;
        self.objective_weights()?;
        if let Some(t) = self.threshold {
            crate::metrics::check_threshold(t)?;
        }
        Ok(())
    }

    pub fn threshold_grid(&self) -> Result<ThresholdGrid> {
        self.grid.parse()
    }

    pub fn objective_weights(&self) -> Result<ObjectiveWeights> {
        let [d, i, p] = self.weights;
        ObjectiveWeights::new(d, i, p)
    }

    pub fn manifest_path(&self) -> PathBuf {
        if self.manifest.is_absolute() {
            self.manifest.clone()
        } else {
            self.root.join(&self.manifest)
        }
    }

    pub fn tag(&self) -> EvaluationTag {
        EvaluationTag {
            epoch: self.epoch,
            split: self.split.unwrap_or_default(),
        }
    }

    fn postprocess_plan(&self) -> Option<PostprocessPlan> {
        self.postprocess.then_some(PostprocessPlan {
            shape: self.se,
            order: self.order,
        })
    }
}

/// Runs `f` on a dedicated pool of `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn r6(x: f64) -> f64 {
    round_to(x, 6)
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

#[derive(Serialize)]
struct RunManifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config: &'a RunConfig,
}

fn write_run_manifest(cfg: &RunConfig, command: &str) -> Result<()> {
    let m = RunManifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command,
        config: cfg,
    };
    write_atomic(&cfg.out.join("run.json"), to_json(&m).as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsReport {
    pub dice: f64,
    pub iou: f64,
    pub pixel_accuracy: f64,
}

impl From<&ObjectiveWeights> for WeightsReport {
    fn from(w: &ObjectiveWeights) -> Self {
        WeightsReport {
            dice: r6(w.dice()),
            iou: r6(w.iou()),
            pixel_accuracy: r6(w.pixel_accuracy()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub dice: f64,
    pub iou: f64,
    pub pixel_accuracy: f64,
    pub objective: f64,
}

/// `sweep.json`: the curve plus the selected operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub threshold: f64,
    pub optimal_threshold: f64,
    pub mean_dice: f64,
    pub mean_iou: f64,
    pub mean_pixel_accuracy: f64,
    pub objective: f64,
    pub weights: WeightsReport,
    pub n_images: Option<usize>,
    pub policy: EmptyTruthPolicy,
    pub tag: EvaluationTag,
    pub curve: Vec<CurvePoint>,
}

impl SweepReport {
    pub fn new(result: &SweepResult, n_images: Option<usize>) -> Self {
        let best = result.optimal_metrics();
        SweepReport {
            threshold: r6(result.optimal_threshold),
            optimal_threshold: r6(result.optimal_threshold),
            mean_dice: r6(best.dice),
            mean_iou: r6(best.iou),
            mean_pixel_accuracy: r6(best.pixel_accuracy),
            objective: r6(result.optimal_objective()),
            weights: (&result.weights).into(),
            n_images,
            policy: result.empty_truth_policy,
            tag: result.tag,
            curve: result
                .grid
                .thresholds()
                .iter()
                .zip(&result.per_threshold)
                .zip(&result.objectives)
                .map(|((&t, m), &o)| CurvePoint {
                    threshold: r6(t),
                    dice: r6(m.dice),
                    iou: r6(m.iou),
                    pixel_accuracy: r6(m.pixel_accuracy),
                    objective: r6(o),
                })
                .collect(),
        }
    }
}

/// `summary.json` of a single-threshold evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub threshold: f64,
    pub mean_dice: f64,
    pub mean_iou: f64,
    pub mean_pixel_accuracy: f64,
    pub n_images: Option<usize>,
    pub policy: EmptyTruthPolicy,
    pub postprocess: bool,
    pub tag: EvaluationTag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageScore {
    pub id: String,
    pub metrics: MetricTriple,
    pub truth_empty: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub summary: EvalSummary,
    pub per_image: Vec<ImageScore>,
}

/// Six-decimal curve CSV, one row per grid threshold.
pub fn curve_csv(result: &SweepResult) -> String {
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for ((t, m), o) in result
        .grid
        .thresholds()
        .iter()
        .zip(&result.per_threshold)
        .zip(&result.objectives)
    {
        out.push_str(&format!(
            "{t:.6},{:.6},{:.6},{:.6},{o:.6}\n",
            m.dice, m.iou, m.pixel_accuracy
        ));
    }
    out
}

fn per_image_csv(scores: &[ImageScore]) -> String {
    let mut out = String::from("id,dice,iou,pixel_accuracy,truth_empty\n");
    for s in scores {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{}\n",
            s.id, s.metrics.dice, s.metrics.iou, s.metrics.pixel_accuracy, s.truth_empty
        ));
    }
    out
}

#[derive(Debug, Deserialize)]
struct CurveRow {
    threshold: f64,
    dice: f64,
    iou: f64,
    pixel_accuracy: f64,
}

/// Reads per-threshold aggregates (`threshold,dice,iou,pixel_accuracy[,...]`).
/// Rows are sorted by threshold; extra columns are ignored.
pub fn read_curve_csv(path: &Path) -> Result<(ThresholdGrid, Vec<MetricTriple>)> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut rows: Vec<CurveRow> = reader
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| csv_error(path, e))?;
    rows.sort_by(|a, b| a.threshold.total_cmp(&b.threshold));
    for r in &rows {
        for v in [r.dice, r.iou, r.pixel_accuracy] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!(
                    "{}: metric {v} at threshold {} outside [0, 1]",
                    path.display(),
                    r.threshold
                )));
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset(format!("{} has no rows", path.display())));
    }
    let grid = ThresholdGrid::new(rows.iter().map(|r| r.threshold).collect())?;
    let triples = rows
        .iter()
        .map(|r| MetricTriple::new(r.dice, r.iou, r.pixel_accuracy))
        .collect();
    Ok((grid, triples))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::InvalidArgument(format!("{}: {e}", path.display()))
    }
}

/// Loads every manifest record (optionally one split) into memory, in parallel.
pub fn load_samples(cfg: &RunConfig) -> Result<Vec<EvalSample>> {
    let manifest = DatasetManifest::load(&cfg.manifest_path(), &cfg.root)?;
    let records: Vec<&ManifestRecord> = manifest
        .records
        .iter()
        .filter(|r| cfg.split.is_none_or(|s| r.split == s))
        .collect();
    if records.is_empty() {
        return Err(Error::EmptyDataset(match cfg.split {
            Some(s) => format!("no images in the {s} split"),
            None => "manifest lists no images".into(),
        }));
    }
    let loaded: Vec<Result<EvalSample>> = records
        .par_iter()
        .map(|r| {
            let map = read_pmap(&cfg.root.join(&r.pmap))?;
            let truth = read_mask(&cfg.root.join(&r.mask))?;
            Ok(EvalSample::new(r.id.clone(), map, truth))
        })
        .collect();
    loaded.into_iter().collect()
}

fn sweep_from_config(cfg: &RunConfig) -> Result<(SweepResult, Option<usize>)> {
    let weights = cfg.objective_weights()?;
    match &cfg.from_csv {
        Some(path) => {
            let (grid, triples) = read_curve_csv(path)?;
            let mut result = optimize(&triples, &grid, &weights)?;
            result.empty_truth_policy = cfg.policy;
            result.tag = cfg.tag();
            Ok((result, None))
        }
        None => {
            let grid = cfg.threshold_grid()?;
            let samples = load_samples(cfg)?;
            let mut result = run_sweep(&samples, &grid, &weights, cfg.policy)?;
            result.tag = cfg.tag();
            let n = result.images_evaluated;
            Ok((result, Some(n)))
        }
    }
}

fn write_sweep_outputs(cfg: &RunConfig, result: &SweepResult, n: Option<usize>) -> Result<()> {
    write_atomic(&cfg.out.join("curve.csv"), curve_csv(result).as_bytes())?;
    write_atomic(
        &cfg.out.join("sweep.json"),
        to_json(&SweepReport::new(result, n)).as_bytes(),
    )
}

/// Full-grid sweep: `curve.csv` and `sweep.json`.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<SweepResult> {
    cfg.validate()?;
    if cfg.postprocess {
        return Err(Error::Config(
            "--postprocess applies to eval and optimize, not to full-grid sweeps".into(),
        ));
    }
    let (result, n) = with_workers(cfg.workers, || sweep_from_config(cfg))??;
    write_sweep_outputs(cfg, &result, n)?;
    write_run_manifest(cfg, "sweep")?;
    Ok(result)
}

/// Sweep, then report the selected threshold. With `postprocess`, the
/// dataset is re-scored at the selected threshold on cleaned masks and
/// written to `summary.json`.
pub fn cmd_optimize(cfg: &RunConfig) -> Result<(SweepResult, String)> {
    cfg.validate()?;
    if cfg.postprocess && cfg.from_csv.is_some() {
        return Err(Error::Config(
            "--postprocess needs images; it cannot be combined with --from-csv".into(),
        ));
    }
    let (result, n) = with_workers(cfg.workers, || sweep_from_config(cfg))??;
    write_sweep_outputs(cfg, &result, n)?;

    let mut text = format!("optimal_threshold {:.6}\n", result.optimal_threshold);
    text.push_str("threshold objective\n");
    for (t, o) in result.grid.thresholds().iter().zip(&result.objectives) {
        text.push_str(&format!("{t:.6} {o:.6}\n"));
    }

    if cfg.postprocess {
        let at_best = RunConfig {
            threshold: Some(result.optimal_threshold),
            ..cfg.clone()
        };
        let report = with_workers(cfg.workers, || evaluate_dataset(&at_best))??;
        write_eval_outputs(cfg, &report)?;
        text.push_str(&format!(
            "postprocessed dice {:.6} iou {:.6} pixel_accuracy {:.6}\n",
            report.summary.mean_dice, report.summary.mean_iou, report.summary.mean_pixel_accuracy
        ));
    }
    write_run_manifest(cfg, "optimize")?;
    Ok((result, text))
}

fn evaluate_dataset(cfg: &RunConfig) -> Result<EvalReport> {
    let threshold = cfg
        .threshold
        .ok_or_else(|| Error::Config("eval needs --threshold".into()))?;
    let plan = cfg.postprocess_plan();
    let samples = load_samples(cfg)?;
    let scored: Vec<Result<ImageScore>> = samples
        .par_iter()
        .map(|s| {
            let score = || -> Result<ImageScore> {
                let mut pred = binarize(&s.map, threshold)?;
                if let Some(plan) = &plan {
                    pred = plan.apply(&pred);
                }
                let counts = confusion(&pred, &s.truth)?;
                Ok(ImageScore {
                    id: s.id.clone(),
                    metrics: MetricTriple::from_counts(&counts)?,
                    truth_empty: counts.truth_positives() == 0,
                })
            };
            score().map_err(|e| Error::in_image(s.id.clone(), e))
        })
        .collect();
    let mut per_image: Vec<ImageScore> = scored.into_iter().collect::<Result<_>>()?;
    per_image.sort_by(|a, b| a.id.cmp(&b.id));

    let kept: Vec<&ImageScore> = per_image
        .iter()
        .filter(|s| cfg.policy == EmptyTruthPolicy::Include || !s.truth_empty)
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyDataset(
            "every image has an empty ground truth and the policy excludes them".into(),
        ));
    }
    let n = kept.len() as f64;
    let mean = |f: fn(&MetricTriple) -> f64| kept.iter().map(|s| f(&s.metrics)).sum::<f64>() / n;
    let summary = EvalSummary {
        threshold: r6(threshold),
        mean_dice: r6(mean(|m| m.dice)),
        mean_iou: r6(mean(|m| m.iou)),
        mean_pixel_accuracy: r6(mean(|m| m.pixel_accuracy)),
        n_images: Some(kept.len()),
        policy: cfg.policy,
        postprocess: cfg.postprocess,
        tag: cfg.tag(),
    };
    Ok(EvalReport { summary, per_image })
}

fn replay_eval(cfg: &RunConfig, path: &Path) -> Result<EvalReport> {
    let threshold = cfg
        .threshold
        .ok_or_else(|| Error::Config("eval needs --threshold".into()))?;
    if cfg.postprocess {
        return Err(Error::Config(
            "--postprocess needs images; it cannot be combined with --from-csv".into(),
        ));
    }
    let (grid, triples) = read_curve_csv(path)?;
    let i = grid
        .thresholds()
        .iter()
        .position(|&t| (t - threshold).abs() < 1e-9)
        .ok_or_else(|| {
            Error::InvalidArgument(format!(
                "{} has no row for threshold {threshold}",
                path.display()
            ))
        })?;
    let m = triples[i];
    Ok(EvalReport {
        summary: EvalSummary {
            threshold: r6(threshold),
            mean_dice: r6(m.dice),
            mean_iou: r6(m.iou),
            mean_pixel_accuracy: r6(m.pixel_accuracy),
            n_images: None,
            policy: cfg.policy,
            postprocess: false,
            tag: cfg.tag(),
        },
        per_image: Vec::new(),
    })
}

fn write_eval_outputs(cfg: &RunConfig, report: &EvalReport) -> Result<()> {
    write_atomic(&cfg.out.join("summary.json"), to_json(&report.summary).as_bytes())?;
    write_atomic(
        &cfg.out.join("per_image.csv"),
        per_image_csv(&report.per_image).as_bytes(),
    )
}

/// Scores the dataset at one threshold: `summary.json` and `per_image.csv`.
pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let report = match &cfg.from_csv {
        Some(path) => replay_eval(cfg, path)?,
        None => with_workers(cfg.workers, || evaluate_dataset(cfg))??,
    };
    write_eval_outputs(cfg, &report)?;
    write_run_manifest(cfg, "eval")?;
    Ok(report)
}

impl SynthOptions {
    pub fn spec(&self, seed: u64) -> SynthSpec {
        SynthSpec {
            seed,
            width: self.width,
            height: self.height,
            presence_probability: self.presence,
            blur_radius: self.blur,
            noise_amplitude: self.noise,
            planted_threshold: self.plant,
            ..SynthSpec::default()
        }
    }
}

pub fn synth_id(index: u64) -> String {
    format!("synth_{index:05}")
}

/// Writes `pmaps/`, `masks/`, an 80:10:10 `manifest.tsv` and a `plant.txt`
/// sidecar under `out`. Returns the manifest.
pub fn cmd_synth(cfg: &RunConfig) -> Result<DatasetManifest> {
    cfg.validate()?;
    let opts = &cfg.synth;
    if opts.count == 0 {
        return Err(Error::EmptyDataset("synth count is zero".into()));
    }
    let spec = opts.spec(cfg.seed);
    spec.validate()?;

    let samples = with_workers(cfg.workers, || {
        (0..opts.count as u64)
            .into_par_iter()
            .map(|i| gen_sample(&spec, i))
            .collect::<Vec<_>>()
    })?
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let ids: Vec<String> = (0..opts.count as u64).map(synth_id).collect();
    let splits = split_dataset(&ids, cfg.seed)?;
    let mut records = Vec::with_capacity(samples.len());
    let mut sidecar = String::from("# id\tplanted_threshold\tbest_grid_threshold\n");
    for (sample, (id, split)) in samples.iter().zip(&splits) {
        let pmap = PathBuf::from("pmaps").join(format!("{id}.pmap"));
        let mask = PathBuf::from("masks").join(format!("{id}.png"));
        write_pmap(&sample.map, &cfg.out.join(&pmap))?;
        write_mask(&sample.mask, &cfg.out.join(&mask))?;
        let fmt = |v: Option<f64>| v.map_or_else(|| "none".to_string(), |t| format!("{t:.6}"));
        sidecar.push_str(&format!(
            "{id}\t{}\t{}\n",
            fmt(sample.planted_threshold),
            fmt(sample.best_grid_threshold)
        ));
        records.push(ManifestRecord {
            id: id.clone(),
            pmap,
            mask,
            split: *split,
            tag: None,
        });
    }
    let manifest = DatasetManifest { records };
    manifest.save(&cfg.out.join("manifest.tsv"))?;
    write_atomic(&cfg.out.join("plant.txt"), sidecar.as_bytes())?;
    write_run_manifest(cfg, "synth")?;
    Ok(manifest)
}

/// Reassigns splits of the manifest and writes it to `out/manifest.tsv`.
pub fn cmd_split(cfg: &RunConfig) -> Result<DatasetManifest> {
    cfg.validate()?;
    let path = cfg.manifest_path();
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut manifest = DatasetManifest::parse(&text, &path)?;
    if manifest.records.is_empty() {
        return Err(Error::EmptyDataset(format!("{} lists no images", path.display())));
    }
    manifest.resplit(cfg.seed)?;
    manifest.save(&cfg.out.join("manifest.tsv"))?;
    write_run_manifest(cfg, "split")?;
    Ok(manifest)
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("png" | "tif" | "tiff")) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Reads an 8- or 16-bit single-channel image as raw intensities.
pub fn read_gray(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let values: Vec<f64> = match img {
        image::DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(f64::from).collect(),
        image::DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(f64::from).collect(),
        other => {
            return Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
                reason: format!("expected single-channel grayscale, found {:?}", other.color()),
            })
        }
    };
    GrayImage::new(w, h, values)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PreprocessSummary {
    pub images: usize,
    pub masks: usize,
    pub augmented: usize,
}

/// Resizes and normalizes images (written as PMAP under `images/`), binarizes
/// and resizes masks (`masks/`), and writes seeded augmented copies of
/// matching pairs (`augmented/`).
pub fn cmd_preprocess(cfg: &RunConfig) -> Result<PreprocessSummary> {
    cfg.validate()?;
    let opts = &cfg.preprocess;
    if opts.images.is_none() && opts.masks.is_none() {
        return Err(Error::Config("preprocess needs --images and/or --masks".into()));
    }
    let size = opts.size;
    let image_files = opts.images.as_deref().map(list_images).transpose()?.unwrap_or_default();
    let mask_files = opts.masks.as_deref().map(list_images).transpose()?.unwrap_or_default();

    let (images, masks) = with_workers(cfg.workers, || -> Result<_> {
        let images = image_files
            .par_iter()
            .map(|p| Ok((stem(p), normalize(&resize_image(&read_gray(p)?, size, size)?))))
            .collect::<Result<Vec<_>>>()?;
        let masks = mask_files
            .par_iter()
            .map(|p| Ok((stem(p), resize_mask(&binarize_mask_image(&read_gray(p)?), size, size)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok((images, masks))
    })??;

    for (name, img) in &images {
        write_pmap(&img.to_probability_map()?, &cfg.out.join("images").join(format!("{name}.pmap")))?;
    }
    for (name, mask) in &masks {
        write_mask(mask, &cfg.out.join("masks").join(format!("{name}.png")))?;
    }

    let mut augmented = 0;
    if opts.augment > 0 {
        let spec = AugmentationSpec {
            seed: cfg.seed,
            ..AugmentationSpec::default()
        };
        let lookup: std::collections::HashMap<&str, &crate::types::BinaryMask> =
            masks.iter().map(|(n, m)| (n.as_str(), m)).collect();
        for (pair_index, (name, img)) in images.iter().enumerate() {
            let Some(mask) = lookup.get(name.as_str()) else {
                continue;
            };
            for k in 0..opts.augment {
                let sample_index = (pair_index * opts.augment + k) as u64;
                let (a_img, a_mask) = augment(img, mask, &spec, sample_index)?;
                let base = cfg.out.join("augmented");
                write_pmap(&a_img.to_probability_map()?, &base.join(format!("{name}_aug{k}.pmap")))?;
                write_mask(&a_mask, &base.join(format!("{name}_aug{k}.png")))?;
                augmented += 1;
            }
        }
    }
    write_run_manifest(cfg, "preprocess")?;
    Ok(PreprocessSummary {
        images: images.len(),
        masks: masks.len(),
        augmented,
    })
}

/// Cleans every mask in `input` with the configured morphology plan.
pub fn cmd_postprocess(cfg: &RunConfig) -> Result<usize> {
    cfg.validate()?;
    let input = cfg
        .input
        .as_deref()
        .ok_or_else(|| Error::Config("postprocess needs --input".into()))?;
    let plan = PostprocessPlan {
        shape: cfg.se,
        order: cfg.order,
    };
    let files = list_images(input)?;
    let cleaned = with_workers(cfg.workers, || {
        files
            .par_iter()
            .map(|p| Ok((stem(p), plan.apply(&read_mask(p)?))))
            .collect::<Result<Vec<_>>>()
    })??;
    for (name, mask) in &cleaned {
        write_mask(mask, &cfg.out.join(format!("{name}.png")))?;
    }
    write_run_manifest(cfg, "postprocess")?;
    Ok(cleaned.len())
}
