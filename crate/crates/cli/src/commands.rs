use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use colony_core::evaluate::{
    evaluate_detection, evaluate_segmentation, ground_truth_boxes, DetectionEvaluation,
    SegmentationEvaluation,
};
use colony_core::ingest::{
    export_preannotations, import_coco_boxes, import_mask_folder, load_predictions,
    DatasetManifest, ImagePredictions, ImportOptions, PredictionSet,
};
use colony_core::pipeline::{run_pipeline, PipelineConfig, ProviderDescriptor, RunOutcome};
use colony_core::reporting::{
    emit_report, load_plate, render_overlay, save_overlay, MetricsReport, OverlaySpec,
    ReportFormat, RunMetadata,
};
use colony_core::{match_image, Error, ErrorClass};
use log::{info, warn};

use crate::config::{check_jobs, resolve, FileConfig, Overrides, RunConfig, PROVIDER_ENV};

#[derive(Debug, Args)]
pub struct CocoArgs {
    /// COCO-style annotation JSON.
    #[arg(long)]
    pub annotations: PathBuf,
    /// Directory holding the image files.
    #[arg(long)]
    pub images: PathBuf,
    /// Manifest file to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub name: Option<String>,
    /// Skip decoding image headers to check dimensions.
    #[arg(long)]
    pub no_verify_images: bool,
}

#[derive(Debug, Args)]
pub struct MaskArgs {
    /// Directory holding the mask PNGs.
    #[arg(long)]
    pub masks: PathBuf,
    /// Directory holding the image files.
    #[arg(long)]
    pub images: PathBuf,
    /// Mask file name for an image stem; `*` is a wildcard.
    #[arg(long, default_value = "{stem}_mask.png")]
    pub pairing: String,
    /// Manifest file to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long)]
    pub no_verify_images: bool,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub predictions: PathBuf,
    /// COCO annotation file to write.
    #[arg(long)]
    pub out: PathBuf,
}

/// A run that finished with per-image failures or was cut short.
#[derive(Debug)]
pub struct IncompleteRun {
    pub failed: usize,
    pub not_attempted: usize,
    pub class: ErrorClass,
}

impl std::fmt::Display for IncompleteRun {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "run incomplete: {} image(s) failed, {} not attempted",
            self.failed, self.not_attempted
        )
    }
}

impl std::error::Error for IncompleteRun {}

/// 1 for I/O and transport problems, 2 for everything else.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return class_code(e.class());
        }
        if let Some(r) = cause.downcast_ref::<IncompleteRun>() {
            return class_code(r.class);
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 1;
        }
    }
    2
}

fn class_code(c: ErrorClass) -> u8 {
    match c {
        ErrorClass::Io => 1,
        ErrorClass::Validation => 2,
    }
}

pub fn layered(config: Option<&Path>, cli: &Overrides) -> anyhow::Result<RunConfig> {
    let file = match config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let resolved = resolve(cli, &file, std::env::var(PROVIDER_ENV).ok());
    check_jobs(resolved.jobs)?;
    Ok(resolved)
}

fn options(name: &Option<String>, no_verify: bool) -> ImportOptions {
    ImportOptions {
        verify_images: !no_verify,
        name: name.clone(),
    }
}

pub fn import_coco(a: &CocoArgs) -> anyhow::Result<()> {
    let (manifest, report) = import_coco_boxes(
        &a.annotations,
        &a.images,
        &options(&a.name, a.no_verify_images),
    )?;
    for r in &report.rejected {
        warn!("annotation #{} rejected: {}", r.index, r.reason);
    }
    manifest.save(&a.out)?;
    println!(
        "{}: {} images, {} of {} boxes imported ({} clipped, {} rejected)",
        a.out.display(),
        manifest.images.len(),
        report.imported,
        report.source_records,
        report.clipped,
        report.rejected.len()
    );
    Ok(())
}

pub fn import_masks(a: &MaskArgs) -> anyhow::Result<()> {
    let (manifest, report) = import_mask_folder(
        &a.masks,
        &a.images,
        &a.pairing,
        &options(&a.name, a.no_verify_images),
    )?;
    for p in &report.unpaired_images {
        warn!("no mask for image {}", p.display());
    }
    for p in &report.unpaired_masks {
        warn!("no image for mask {}", p.display());
    }
    manifest.save(&a.out)?;
    println!(
        "{}: {} image/mask pairs ({} unpaired images, {} unpaired masks)",
        a.out.display(),
        manifest.images.len(),
        report.unpaired_images.len(),
        report.unpaired_masks.len()
    );
    Ok(())
}

pub fn export_preann(a: &ExportArgs) -> anyhow::Result<()> {
    let manifest = DatasetManifest::load(&a.manifest)?;
    let preds = load_predictions(&a.predictions, &manifest)?;
    export_preannotations(&preds, &manifest, &a.out)?;
    println!("{}: {} images", a.out.display(), preds.images.len());
    Ok(())
}

fn timestamp() -> String {
    let now = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok())
        .and_then(|secs| chrono::DateTime::from_timestamp(secs, 0))
        .unwrap_or_else(chrono::Utc::now);
    now.to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

fn metadata(
    manifest: &DatasetManifest,
    preds: &PredictionSet,
    pipeline: &PipelineConfig,
) -> RunMetadata {
    RunMetadata {
        dataset: manifest.name.clone(),
        provider_source: preds.source.clone(),
        model_version: preds.model_version.clone(),
        config_fingerprint: pipeline.fingerprint(&preds.model_version),
        timestamp: timestamp(),
    }
}

fn load_set(cfg: &RunConfig) -> anyhow::Result<(DatasetManifest, PredictionSet, PipelineConfig)> {
    let manifest = DatasetManifest::load(cfg.require_manifest()?)?;
    let path = cfg.require_predictions()?;
    let mut preds = load_predictions(path, &manifest)?;
    for entry in preds.images.values_mut() {
        entry.retain_confident(cfg.confidence_floor);
    }
    let pipeline = cfg.pipeline(ProviderDescriptor::File(path.to_path_buf()))?;
    Ok((manifest, preds, pipeline))
}

fn write_report(
    out: &Path,
    manifest: &DatasetManifest,
    meta: RunMetadata,
    det: Option<&DetectionEvaluation>,
    seg: Option<&SegmentationEvaluation>,
) -> anyhow::Result<MetricsReport> {
    let report = MetricsReport::build(meta, &manifest.categories, det, seg);
    emit_report(&report, out, &[ReportFormat::Json, ReportFormat::Csv])?;
    if let Some(d) = &report.detection {
        println!(
            "mAP@{} = {:.6} (TP {}, FP {}, FN {})",
            d.iou_threshold, d.map, d.tp, d.fp, d.fn_
        );
    }
    if let Some(s) = &report.segmentation {
        println!(
            "Dice micro {:.6} macro {:.6}; Dice@detection micro {:.6} macro {:.6}",
            s.micro_dice, s.macro_dice, s.micro_dice_at_detection, s.macro_dice_at_detection
        );
    }
    Ok(report)
}

pub fn eval_det(cfg: &RunConfig) -> anyhow::Result<()> {
    let (manifest, preds, pipeline) = load_set(cfg)?;
    let out = cfg.require_out()?;
    cfg.write(out)?;
    let det = evaluate_detection(&manifest, &preds, cfg.iou_threshold)?;
    write_report(
        out,
        &manifest,
        metadata(&manifest, &preds, &pipeline),
        Some(&det),
        None,
    )?;
    Ok(())
}

pub fn eval_seg(cfg: &RunConfig) -> anyhow::Result<()> {
    let (manifest, preds, pipeline) = load_set(cfg)?;
    let out = cfg.require_out()?;
    cfg.write(out)?;
    let seg = evaluate_segmentation(&manifest, &preds)?;
    write_report(
        out,
        &manifest,
        metadata(&manifest, &preds, &pipeline),
        None,
        Some(&seg),
    )?;
    Ok(())
}

pub fn render(cfg: &RunConfig) -> anyhow::Result<()> {
    let (manifest, preds, _) = load_set(cfg)?;
    let out = cfg.require_out()?;
    cfg.write(out)?;
    let n = render_all(
        &manifest,
        &preds,
        &out.join("overlays"),
        cfg,
        &cfg.overlay()?,
    )?;
    println!("{n} overlays written to {}", out.join("overlays").display());
    Ok(())
}

/// Renders one overlay per manifest image; images without predictions show
/// their ground truth only.
fn render_all(
    manifest: &DatasetManifest,
    preds: &PredictionSet,
    dir: &Path,
    cfg: &RunConfig,
    spec: &OverlaySpec,
) -> anyhow::Result<usize> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let empty = &ImagePredictions::default();
    let chunk = manifest.images.len().div_ceil(cfg.jobs).max(1);
    std::thread::scope(|s| {
        let workers: Vec<_> = manifest
            .images
            .chunks(chunk)
            .map(|recs| {
                s.spawn(move || -> anyhow::Result<()> {
                    for rec in recs {
                        let entry = preds.images.get(&rec.id).unwrap_or(empty);
                        let gts = ground_truth_boxes(manifest, &rec.id);
                        let matches = match_image(&entry.detections, &gts, cfg.iou_threshold)?;
                        let plate = load_plate(&rec.file)?;
                        let img = render_overlay(
                            &plate,
                            &matches,
                            &entry.detections,
                            &gts,
                            entry.masks.as_deref(),
                            spec,
                        )?;
                        save_overlay(&img, &dir.join(format!("{}.png", rec.id)))?;
                    }
                    Ok(())
                })
            })
            .collect();
        workers
            .into_iter()
            .try_for_each(|w| w.join().expect("render worker panicked"))
    })?;
    Ok(manifest.images.len())
}

pub fn run(cfg: &RunConfig) -> anyhow::Result<()> {
    let manifest_path = cfg.require_manifest()?;
    let manifest = DatasetManifest::load(manifest_path)?;
    let out = cfg.require_out()?;
    let pipeline = cfg.pipeline(cfg.provider()?)?;
    let spec = cfg.overlay()?;
    cfg.write(out)?;

    let outcome = run_pipeline(&manifest, &pipeline)?;
    let preds_path = out.join("predictions.json");
    outcome.predictions.save(&preds_path)?;
    info!("wrote {}", preds_path.display());

    let det = if manifest.has_boxes() {
        evaluate_detection(&manifest, &outcome.predictions, pipeline.iou_threshold)
            .map_err(|e| warn!("detection metrics unavailable: {e}"))
            .ok()
    } else {
        None
    };
    let seg = if manifest.has_masks() {
        evaluate_segmentation(&manifest, &outcome.predictions)
            .map_err(|e| warn!("segmentation metrics unavailable: {e}"))
            .ok()
    } else {
        None
    };
    let meta = metadata(&manifest, &outcome.predictions, &pipeline);
    write_report(out, &manifest, meta, det.as_ref(), seg.as_ref())?;
    render_all(
        &manifest,
        &outcome.predictions,
        &out.join("overlays"),
        cfg,
        &spec,
    )
    .context("rendering overlays")?;
    finish(outcome)
}

fn finish(outcome: RunOutcome) -> anyhow::Result<()> {
    if outcome.is_complete() {
        return Ok(());
    }
    for f in &outcome.failures {
        eprintln!("failed: {}: {}", f.image_id, f.message);
    }
    if let Some(why) = &outcome.aborted {
        eprintln!("aborted: {why}");
    }
    let class = if outcome.aborted.is_some()
        || outcome.failures.iter().any(|f| f.class == ErrorClass::Io)
    {
        ErrorClass::Io
    } else {
        ErrorClass::Validation
    };
    Err(IncompleteRun {
        failed: outcome.failures.len(),
        not_attempted: outcome.not_attempted.len(),
        class,
    }
    .into())
}
