//! Layered run configuration: command line over config file over defaults.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context};
use clap::Args;
use colony_core::pipeline::{
    PipelineConfig, ProviderDescriptor, DEFAULT_BOX_THRESHOLD, DEFAULT_PROMPT,
    DEFAULT_TEXT_THRESHOLD,
};
use colony_core::reporting::OverlaySpec;
use colony_core::DEFAULT_IOU_THRESHOLD;
use serde::{Deserialize, Serialize};

pub const PROVIDER_ENV: &str = "COLONY_PROVIDER_URL";
pub const DEFAULT_JOBS: usize = 4;
pub const DEFAULT_TIMEOUT_SECS: u64 = 120;
pub const DEFAULT_STROKE_WIDTH: u32 = 2;

/// Keys accepted in a TOML config file. A written `run_config.toml` is
/// itself a valid config file.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub manifest: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub provider: Option<String>,
    pub prompt: Option<String>,
    pub box_threshold: Option<f64>,
    pub text_threshold: Option<f64>,
    pub confidence_floor: Option<f64>,
    pub iou_threshold: Option<f64>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub model_version: Option<String>,
    pub timeout_secs: Option<u64>,
    pub stroke_width: Option<u32>,
    pub draw_labels: Option<bool>,
}

impl FileConfig {
    /// Parses a config file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: FileConfig = toml::from_str(&text).map_err(|e| {
            anyhow::Error::new(colony_core::Error::Config(format!(
                "{}: {e}",
                path.display()
            )))
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.manifest,
            &mut cfg.predictions,
            &mut cfg.out,
            &mut cfg.cache_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(provider) = &mut cfg.provider {
            if let Some(rel) = provider.strip_prefix("file:") {
                if Path::new(rel).is_relative() {
                    *provider = format!("file:{}", base.join(rel).display());
                }
            }
        }
        Ok(cfg)
    }
}

/// Flags shared by the commands that take a run configuration.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Dataset manifest JSON.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Prediction set JSON.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Inference service URL or `file:PATH` to a saved prediction set.
    #[arg(long)]
    pub provider: Option<String>,
    /// Detector text prompt.
    #[arg(long)]
    pub prompt: Option<String>,
    /// Detector box score cutoff (default 0.3).
    #[arg(long)]
    pub box_threshold: Option<f64>,
    /// Detector phrase score cutoff (default 0.25).
    #[arg(long)]
    pub text_threshold: Option<f64>,
    /// Drop detections scored below this value.
    #[arg(long)]
    pub confidence_floor: Option<f64>,
    /// IoU a prediction needs to match a ground truth.
    #[arg(long)]
    pub iou_threshold: Option<f64>,
    /// Maximum concurrent images.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory for cached provider results.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Pin the provider's model identity instead of asking the service.
    #[arg(long)]
    pub model_version: Option<String>,
    /// Per-request timeout against the inference service.
    #[arg(long)]
    pub timeout_secs: Option<u64>,
    /// Overlay stroke width in pixels.
    #[arg(long)]
    pub stroke_width: Option<u32>,
    /// Print confidences on overlays.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub draw_labels: Option<bool>,
}

/// Fully resolved settings, written next to every run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predictions: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub provider: Option<String>,
    pub prompt: String,
    pub box_threshold: f64,
    pub text_threshold: f64,
    pub confidence_floor: f64,
    pub iou_threshold: f64,
    pub jobs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_version: Option<String>,
    pub timeout_secs: u64,
    pub stroke_width: u32,
    pub draw_labels: bool,
}

/// Merges the layers. The provider falls back to `env_provider` when
/// neither the command line nor the file sets one.
pub fn resolve(cli: &Overrides, file: &FileConfig, env_provider: Option<String>) -> RunConfig {
    macro_rules! pick {
        ($field:ident) => {
            cli.$field.clone().or_else(|| file.$field.clone())
        };
    }
    RunConfig {
        manifest: pick!(manifest),
        predictions: pick!(predictions),
        provider: pick!(provider).or(env_provider.filter(|s| !s.is_empty())),
        prompt: pick!(prompt).unwrap_or_else(|| DEFAULT_PROMPT.into()),
        box_threshold: pick!(box_threshold).unwrap_or(DEFAULT_BOX_THRESHOLD),
        text_threshold: pick!(text_threshold).unwrap_or(DEFAULT_TEXT_THRESHOLD),
        confidence_floor: pick!(confidence_floor).unwrap_or(0.0),
        iou_threshold: pick!(iou_threshold).unwrap_or(DEFAULT_IOU_THRESHOLD),
        jobs: pick!(jobs).unwrap_or(DEFAULT_JOBS),
        out: pick!(out),
        cache_dir: pick!(cache_dir),
        model_version: pick!(model_version),
        timeout_secs: pick!(timeout_secs).unwrap_or(DEFAULT_TIMEOUT_SECS),
        stroke_width: pick!(stroke_width).unwrap_or(DEFAULT_STROKE_WIDTH),
        draw_labels: pick!(draw_labels).unwrap_or(false),
    }
}

fn usage(msg: String) -> anyhow::Error {
    anyhow::Error::new(colony_core::Error::Config(msg))
}

impl RunConfig {
    pub fn require_manifest(&self) -> anyhow::Result<&Path> {
        self.manifest
            .as_deref()
            .ok_or_else(|| usage("--manifest is required".into()))
    }

    pub fn require_predictions(&self) -> anyhow::Result<&Path> {
        self.predictions
            .as_deref()
            .ok_or_else(|| usage("--predictions is required".into()))
    }

    pub fn require_out(&self) -> anyhow::Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| usage("--out is required".into()))
    }

    pub fn provider(&self) -> anyhow::Result<ProviderDescriptor> {
        match &self.provider {
            Some(p) => Ok(p.parse()?),
            None => Err(usage(format!(
                "--provider is required (or set {PROVIDER_ENV})"
            ))),
        }
    }

    pub fn pipeline(&self, provider: ProviderDescriptor) -> anyhow::Result<PipelineConfig> {
        let mut c = PipelineConfig::new(provider);
        c.prompt_text = self.prompt.clone();
        c.box_threshold = self.box_threshold;
        c.text_threshold = self.text_threshold;
        c.confidence_floor = self.confidence_floor;
        c.iou_threshold = self.iou_threshold;
        c.request_parallelism = self.jobs;
        c.cache_dir = self.cache_dir.clone();
        c.model_version = self.model_version.clone();
        c.request_timeout = Duration::from_secs(self.timeout_secs);
        c.validate()?;
        Ok(c)
    }

    pub fn overlay(&self) -> anyhow::Result<OverlaySpec> {
        let spec = OverlaySpec {
            stroke_width: self.stroke_width,
            draw_labels: self.draw_labels,
            ..OverlaySpec::default()
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn write(&self, dir: &Path) -> anyhow::Result<PathBuf> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join("run_config.toml");
        std::fs::write(&path, self.to_toml()).map_err(|e| colony_core::Error::io(&path, e))?;
        Ok(path)
    }
}

pub fn check_jobs(jobs: usize) -> anyhow::Result<()> {
    if jobs == 0 || jobs > colony_core::pipeline::MAX_PARALLELISM {
        bail!(colony_core::Error::Config(format!(
            "--jobs must lie in 1..={}, got {jobs}",
            colony_core::pipeline::MAX_PARALLELISM
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file_layer() -> FileConfig {
        FileConfig {
            manifest: Some("file/m.json".into()),
            predictions: Some("file/p.json".into()),
            provider: Some("http://file:1".into()),
            prompt: Some("file prompt".into()),
            box_threshold: Some(0.4),
            text_threshold: Some(0.35),
            confidence_floor: Some(0.1),
            iou_threshold: Some(0.2),
            jobs: Some(3),
            out: Some("file/out".into()),
            cache_dir: Some("file/cache".into()),
            model_version: Some("file-model".into()),
            timeout_secs: Some(30),
            stroke_width: Some(3),
            draw_labels: Some(false),
        }
    }

    fn cli_layer() -> Overrides {
        Overrides {
            manifest: Some("cli/m.json".into()),
            predictions: Some("cli/p.json".into()),
            provider: Some("http://cli:1".into()),
            prompt: Some("cli prompt".into()),
            box_threshold: Some(0.5),
            text_threshold: Some(0.45),
            confidence_floor: Some(0.6),
            iou_threshold: Some(0.5),
            jobs: Some(7),
            out: Some("cli/out".into()),
            cache_dir: Some("cli/cache".into()),
            model_version: Some("cli-model".into()),
            timeout_secs: Some(5),
            stroke_width: Some(1),
            draw_labels: Some(true),
        }
    }

    #[test]
    fn defaults_apply_when_no_layer_sets_a_value() {
        let r = resolve(&Overrides::default(), &FileConfig::default(), None);
        assert_eq!(r.iou_threshold, 0.2);
        assert_eq!(r.prompt, "bacterial colony");
        assert_eq!((r.box_threshold, r.text_threshold), (0.3, 0.25));
        assert_eq!(r.confidence_floor, 0.0);
        assert_eq!(r.jobs, DEFAULT_JOBS);
        assert_eq!(r.timeout_secs, DEFAULT_TIMEOUT_SECS);
        assert_eq!(r.stroke_width, DEFAULT_STROKE_WIDTH);
        assert!(!r.draw_labels);
        assert!(r.manifest.is_none() && r.provider.is_none() && r.out.is_none());
    }

    #[test]
    fn file_beats_defaults_for_every_key() {
        let f = file_layer();
        let r = resolve(&Overrides::default(), &f, Some("http://env:1".into()));
        assert_eq!(r.manifest, f.manifest);
        assert_eq!(r.predictions, f.predictions);
        assert_eq!(r.provider, f.provider);
        assert_eq!(Some(r.prompt), f.prompt);
        assert_eq!(Some(r.box_threshold), f.box_threshold);
        assert_eq!(Some(r.text_threshold), f.text_threshold);
        assert_eq!(Some(r.confidence_floor), f.confidence_floor);
        assert_eq!(Some(r.iou_threshold), f.iou_threshold);
        assert_eq!(Some(r.jobs), f.jobs);
        assert_eq!(r.out, f.out);
        assert_eq!(r.cache_dir, f.cache_dir);
        assert_eq!(r.model_version, f.model_version);
        assert_eq!(Some(r.timeout_secs), f.timeout_secs);
        assert_eq!(Some(r.stroke_width), f.stroke_width);
        assert_eq!(Some(r.draw_labels), f.draw_labels);
    }

    #[test]
    fn command_line_beats_file_for_every_key() {
        let c = cli_layer();
        let r = resolve(&c, &file_layer(), Some("http://env:1".into()));
        assert_eq!(r.manifest, c.manifest);
        assert_eq!(r.predictions, c.predictions);
        assert_eq!(r.provider, c.provider);
        assert_eq!(Some(r.prompt), c.prompt);
        assert_eq!(Some(r.box_threshold), c.box_threshold);
        assert_eq!(Some(r.text_threshold), c.text_threshold);
        assert_eq!(Some(r.confidence_floor), c.confidence_floor);
        assert_eq!(Some(r.iou_threshold), c.iou_threshold);
        assert_eq!(Some(r.jobs), c.jobs);
        assert_eq!(r.out, c.out);
        assert_eq!(r.cache_dir, c.cache_dir);
        assert_eq!(r.model_version, c.model_version);
        assert_eq!(Some(r.timeout_secs), c.timeout_secs);
        assert_eq!(Some(r.stroke_width), c.stroke_width);
        assert_eq!(Some(r.draw_labels), c.draw_labels);
    }

    #[test]
    fn environment_is_the_provider_fallback() {
        let r = resolve(
            &Overrides::default(),
            &FileConfig::default(),
            Some("http://env:1".into()),
        );
        assert_eq!(r.provider.as_deref(), Some("http://env:1"));
        let r = resolve(
            &Overrides::default(),
            &FileConfig::default(),
            Some(String::new()),
        );
        assert!(r.provider.is_none());
    }

    #[test]
    fn iou_flag_overrides_file_value() {
        let file = FileConfig {
            iou_threshold: Some(0.2),
            ..FileConfig::default()
        };
        let cli = Overrides {
            iou_threshold: Some(0.5),
            ..Overrides::default()
        };
        assert_eq!(resolve(&cli, &file, None).iou_threshold, 0.5);
    }

    #[test]
    fn written_config_parses_back_as_a_file_layer() {
        let r = resolve(&cli_layer(), &FileConfig::default(), None);
        let parsed: FileConfig = toml::from_str(&r.to_toml()).unwrap();
        assert_eq!(resolve(&Overrides::default(), &parsed, None), r);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "iou_treshold = 0.3\n").unwrap();
        let err = FileConfig::load(&path).unwrap_err();
        assert!(err.to_string().contains("iou_treshold"));
    }

    #[test]
    fn relative_paths_resolve_against_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "manifest = \"m.json\"\nprovider = \"file:p.json\"\n").unwrap();
        let cfg = FileConfig::load(&path).unwrap();
        assert_eq!(cfg.manifest, Some(dir.path().join("m.json")));
        assert_eq!(
            cfg.provider,
            Some(format!("file:{}", dir.path().join("p.json").display()))
        );
    }
}
