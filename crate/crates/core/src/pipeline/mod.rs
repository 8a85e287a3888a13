//! Detect → filter → box-prompted segment, per image, across a dataset.
//!
//! Predictions come from a [`PredictionProvider`]: either a saved prediction
//! file or the remote inference service. Images are processed concurrently
//! by at most `request_parallelism` workers; a failing image is recorded and
//! never affects the others. A transport failure that survives the retry
//! policy stops the run, and the outcome lists what completed.

mod cache;
mod remote;
pub mod wire;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use log::{info, warn};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::detection::{validate_iou_threshold, Detection, DEFAULT_IOU_THRESHOLD};
use crate::error::{Error, ErrorClass, Result};
use crate::geometry::{BoundingBox, InstanceMask};
use crate::ingest::{
    load_predictions, DatasetManifest, ImagePredictions, ImageRecord, PredictionSet, RunParams,
};

pub use cache::{sha256_hex, CacheEntry, CacheFingerprint, ResultCache};
pub use remote::{DetectOutcome, RemoteClient, RetryPolicy};

pub const DEFAULT_PROMPT: &str = "bacterial colony";
pub const DEFAULT_BOX_THRESHOLD: f64 = 0.3;
pub const DEFAULT_TEXT_THRESHOLD: f64 = 0.25;
pub const MAX_PARALLELISM: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProviderDescriptor {
    /// A saved prediction file.
    File(PathBuf),
    /// Base URL of an inference service.
    Remote(String),
}

impl FromStr for ProviderDescriptor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(path) = s.strip_prefix("file:") {
            if path.is_empty() {
                return Err(Error::Config("file provider needs a path".into()));
            }
            Ok(ProviderDescriptor::File(PathBuf::from(path)))
        } else if s.starts_with("http://") || s.starts_with("https://") {
            Ok(ProviderDescriptor::Remote(
                s.trim_end_matches('/').to_string(),
            ))
        } else {
            Err(Error::Config(format!(
                "provider '{s}' is neither an http(s) URL nor file:PATH"
            )))
        }
    }
}

impl fmt::Display for ProviderDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProviderDescriptor::File(p) => write!(f, "file:{}", p.display()),
            ProviderDescriptor::Remote(url) => f.write_str(url),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub prompt_text: String,
    pub box_threshold: f64,
    pub text_threshold: f64,
    /// Detections scored below this are dropped before segmentation.
    pub confidence_floor: f64,
    pub iou_threshold: f64,
    pub provider: ProviderDescriptor,
    pub request_parallelism: usize,
    pub cache_dir: Option<PathBuf>,
    /// Pins the provider's model identity; otherwise it is read from
    /// `/v1/health` once per run.
    pub model_version: Option<String>,
    pub retry: RetryPolicy,
    pub request_timeout: Duration,
}

impl PipelineConfig {
    pub fn new(provider: ProviderDescriptor) -> Self {
        Self {
            prompt_text: DEFAULT_PROMPT.into(),
            box_threshold: DEFAULT_BOX_THRESHOLD,
            text_threshold: DEFAULT_TEXT_THRESHOLD,
            confidence_floor: 0.0,
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            provider,
            request_parallelism: 4,
            cache_dir: None,
            model_version: None,
            retry: RetryPolicy::default(),
            request_timeout: Duration::from_secs(120),
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_iou_threshold(self.iou_threshold)?;
        for (name, v) in [
            ("confidence floor", self.confidence_floor),
            ("box threshold", self.box_threshold),
            ("text threshold", self.text_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.prompt_text.trim().is_empty() {
            return Err(Error::Config("prompt text is empty".into()));
        }
        if !(1..=MAX_PARALLELISM).contains(&self.request_parallelism) {
            return Err(Error::Config(format!(
                "request parallelism must lie in 1..={MAX_PARALLELISM}, got {}",
                self.request_parallelism
            )));
        }
        Ok(())
    }

    pub fn run_params(&self) -> RunParams {
        RunParams {
            prompt: self.prompt_text.clone(),
            box_threshold: self.box_threshold,
            text_threshold: self.text_threshold,
            confidence_floor: self.confidence_floor,
        }
    }

    /// Hash of every setting that changes results.
    pub fn fingerprint(&self, model_version: &str) -> String {
        #[derive(Serialize)]
        struct Canonical<'a> {
            provider: String,
            model_version: &'a str,
            prompt: &'a str,
            box_threshold: f64,
            text_threshold: f64,
            confidence_floor: f64,
            iou_threshold: f64,
        }
        let c = Canonical {
            provider: self.provider.to_string(),
            model_version,
            prompt: &self.prompt_text,
            box_threshold: self.box_threshold,
            text_threshold: self.text_threshold,
            confidence_floor: self.confidence_floor,
            iou_threshold: self.iou_threshold,
        };
        hex::encode(Sha256::digest(serde_json::to_vec(&c).expect("serializes")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderResult {
    pub image_id: String,
    pub detections: Vec<Detection>,
    /// Index-aligned with `detections`.
    pub masks: Option<Vec<InstanceMask>>,
    pub provider_latency: Duration,
    pub model_version: String,
}

pub trait PredictionProvider: Sync {
    /// Provider identity recorded as the prediction set's source.
    fn source(&self) -> String;

    fn model_version(&self) -> String;

    fn run_params(&self, config: &PipelineConfig) -> Option<RunParams> {
        Some(config.run_params())
    }

    fn predict(&self, image: &ImageRecord, config: &PipelineConfig) -> Result<ProviderResult>;
}

/// Serves a saved prediction set.
#[derive(Debug, Clone)]
pub struct FileProvider {
    path: PathBuf,
    set: PredictionSet,
}

impl FileProvider {
    pub fn open(path: PathBuf, manifest: &DatasetManifest) -> Result<Self> {
        let set = load_predictions(&path, manifest)?;
        Ok(Self { path, set })
    }

    pub fn path(&self) -> &PathBuf {
        &self.path
    }
}

impl PredictionProvider for FileProvider {
    fn source(&self) -> String {
        self.set.source.clone()
    }

    fn model_version(&self) -> String {
        self.set.model_version.clone()
    }

    fn run_params(&self, _config: &PipelineConfig) -> Option<RunParams> {
        self.set.params.clone()
    }

    fn predict(&self, image: &ImageRecord, _config: &PipelineConfig) -> Result<ProviderResult> {
        let entry = self.set.images.get(&image.id).ok_or_else(|| {
            Error::ReferentialIntegrity(format!(
                "image '{}' is missing from {}",
                image.id,
                self.path.display()
            ))
        })?;
        Ok(ProviderResult {
            image_id: image.id.clone(),
            detections: entry.detections.clone(),
            masks: entry.masks.clone(),
            provider_latency: Duration::ZERO,
            model_version: self.set.model_version.clone(),
        })
    }
}

/// Calls the inference service: one `/v1/detect`, then one `/v1/segment`
/// carrying every surviving box. Results are cached by image content and
/// settings when a cache is configured.
#[derive(Debug)]
pub struct RemoteProvider {
    client: RemoteClient,
    model_version: String,
    cache: Option<ResultCache>,
    cache_hits: AtomicUsize,
}

impl RemoteProvider {
    /// Resolves the model identity (pinned, or from `/v1/health`).
    pub fn connect(base_url: &str, config: &PipelineConfig) -> Result<Self> {
        let client = RemoteClient::new(base_url, config.request_timeout, config.retry);
        let model_version = match &config.model_version {
            Some(v) => v.clone(),
            None => {
                let health = client.health()?;
                if health.status != "ok" {
                    return Err(Error::Remote {
                        status: 503,
                        message: format!("service reports status '{}'", health.status),
                    });
                }
                health.model_version()
            }
        };
        let cache = config
            .cache_dir
            .as_deref()
            .map(ResultCache::open)
            .transpose()?;
        Ok(Self {
            client,
            model_version,
            cache,
            cache_hits: AtomicUsize::new(0),
        })
    }

    pub fn cache_hits(&self) -> usize {
        self.cache_hits.load(Ordering::Relaxed)
    }

    fn query(
        &self,
        image: &ImageRecord,
        bytes: &[u8],
        config: &PipelineConfig,
    ) -> Result<(Vec<Detection>, Vec<InstanceMask>)> {
        let detected = self.client.detect(
            bytes,
            image.dims,
            &config.prompt_text,
            config.box_threshold,
            config.text_threshold,
        )?;
        let detections: Vec<Detection> = detected
            .detections
            .into_iter()
            .filter(|d| d.confidence >= config.confidence_floor)
            .collect();
        if detections.is_empty() {
            return Ok((detections, Vec::new()));
        }
        let boxes: Vec<BoundingBox> = detections.iter().map(|d| d.bbox).collect();
        let (_, masks) = self.client.segment(bytes, image.dims, &boxes)?;
        Ok((detections, masks))
    }
}

impl PredictionProvider for RemoteProvider {
    fn source(&self) -> String {
        self.client.base_url().to_string()
    }

    fn model_version(&self) -> String {
        self.model_version.clone()
    }

    fn predict(&self, image: &ImageRecord, config: &PipelineConfig) -> Result<ProviderResult> {
        let bytes = std::fs::read(&image.file).map_err(|e| Error::io(&image.file, e))?;
        let digest = sha256_hex(&bytes);
        let key = CacheFingerprint {
            image_sha256: &digest,
            prompt: &config.prompt_text,
            box_threshold: config.box_threshold,
            text_threshold: config.text_threshold,
            confidence_floor: config.confidence_floor,
            model_version: &self.model_version,
        }
        .key();

        if let Some(hit) = self.cache.as_ref().and_then(|c| c.lookup(&key)) {
            self.cache_hits.fetch_add(1, Ordering::Relaxed);
            return Ok(ProviderResult {
                image_id: image.id.clone(),
                detections: hit.detections,
                masks: hit.masks,
                provider_latency: Duration::ZERO,
                model_version: hit.model_version,
            });
        }

        let started = Instant::now();
        let (detections, masks) = self.query(image, &bytes, config)?;
        let result = ProviderResult {
            image_id: image.id.clone(),
            detections,
            masks: Some(masks),
            provider_latency: started.elapsed(),
            model_version: self.model_version.clone(),
        };
        if let Some(cache) = &self.cache {
            let entry = CacheEntry {
                key,
                model_version: result.model_version.clone(),
                detections: result.detections.clone(),
                masks: result.masks.clone(),
            };
            if let Err(e) = cache.store(&entry) {
                warn!("could not cache result for '{}': {e}", image.id);
            }
        }
        Ok(result)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageFailure {
    pub image_id: String,
    pub message: String,
    pub class: ErrorClass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub predictions: PredictionSet,
    pub failures: Vec<ImageFailure>,
    /// Set when a transport failure stopped the run early.
    pub aborted: Option<String>,
    /// Images never dispatched because the run stopped.
    pub not_attempted: Vec<String>,
}

impl RunOutcome {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty() && self.aborted.is_none() && self.not_attempted.is_empty()
    }
}

/// Builds the configured provider and runs every image of `manifest`.
pub fn run_pipeline(manifest: &DatasetManifest, config: &PipelineConfig) -> Result<RunOutcome> {
    config.validate()?;
    match &config.provider {
        ProviderDescriptor::File(path) => {
            let provider = FileProvider::open(path.clone(), manifest)?;
            run_with_provider(manifest, config, &provider)
        }
        ProviderDescriptor::Remote(url) => {
            let provider = RemoteProvider::connect(url, config)?;
            run_with_provider(manifest, config, &provider)
        }
    }
}

fn assemble(
    rec: &ImageRecord,
    result: ProviderResult,
    config: &PipelineConfig,
) -> Result<ImagePredictions> {
    if let Some(masks) = &result.masks {
        if masks.len() != result.detections.len() {
            return Err(Error::Protocol(format!(
                "{} masks for {} detections",
                masks.len(),
                result.detections.len()
            )));
        }
    }
    let mut entry = ImagePredictions {
        detections: result.detections,
        masks: result.masks,
    };
    entry.retain_confident(config.confidence_floor);
    entry.validate_for(rec)?;
    Ok(entry)
}

/// Runs `provider` over every image with bounded concurrency and gathers the
/// results through a single collector.
pub fn run_with_provider(
    manifest: &DatasetManifest,
    config: &PipelineConfig,
    provider: &dyn PredictionProvider,
) -> Result<RunOutcome> {
    config.validate()?;
    let images = &manifest.images;
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let workers = config.request_parallelism.min(images.len()).max(1);
    let mut slots: Vec<Option<Result<ImagePredictions>>> =
        (0..images.len()).map(|_| None).collect();

    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel();
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, stop) = (&next, &stop);
            scope.spawn(move || loop {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let idx = next.fetch_add(1, Ordering::SeqCst);
                let Some(rec) = images.get(idx) else { break };
                let outcome = provider.predict(rec, config).and_then(|r| {
                    info!(
                        "{}: {} detections in {} ms",
                        rec.id,
                        r.detections.len(),
                        r.provider_latency.as_millis()
                    );
                    assemble(rec, r, config)
                });
                if matches!(outcome, Err(Error::Transport(_))) {
                    stop.store(true, Ordering::SeqCst);
                }
                if tx.send((idx, outcome)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (idx, outcome) in rx {
            slots[idx] = Some(outcome);
        }
    });

    let mut predictions = PredictionSet {
        source: provider.source(),
        model_version: provider.model_version(),
        params: provider.run_params(config),
        images: Default::default(),
    };
    let mut failures = Vec::new();
    let mut not_attempted = Vec::new();
    let mut aborted = None;
    for (rec, slot) in images.iter().zip(slots) {
        match slot {
            Some(Ok(entry)) => {
                predictions.images.insert(rec.id.clone(), entry);
            }
            Some(Err(e)) => {
                warn!("{}: {e}", rec.id);
                if matches!(e, Error::Transport(_)) && aborted.is_none() {
                    aborted = Some(e.to_string());
                }
                failures.push(ImageFailure {
                    image_id: rec.id.clone(),
                    message: e.to_string(),
                    class: e.class(),
                });
            }
            None => not_attempted.push(rec.id.clone()),
        }
    }
    Ok(RunOutcome {
        predictions,
        failures,
        aborted,
        not_attempted,
    })
}
