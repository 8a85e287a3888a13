use std::time::Duration;

use base64::Engine;
use log::warn;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::detection::Detection;
use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, ImageDims, InstanceMask};

use super::wire::{
    DetectRequest, DetectResponse, ErrorBody, HealthResponse, SegmentRequest, SegmentResponse,
};

const MAX_RESPONSE_BYTES: u64 = 1 << 30;

/// Retries apply to transport failures only; HTTP errors and malformed
/// responses are deterministic and surface immediately.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_millis(200),
        }
    }
}

/// Blocking client for the inference service.
#[derive(Debug, Clone)]
pub struct RemoteClient {
    base_url: String,
    agent: ureq::Agent,
    retry: RetryPolicy,
}

/// Detections after frame clipping, plus how many boxes needed it.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectOutcome {
    pub model_version: String,
    pub detections: Vec<Detection>,
    pub clipped: usize,
    pub dropped: usize,
}

impl RemoteClient {
    pub fn new(base_url: &str, timeout: Duration, retry: RetryPolicy) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            agent,
            retry,
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    pub fn health(&self) -> Result<HealthResponse> {
        self.with_retries("/v1/health", || {
            self.agent
                .get(format!("{}/v1/health", self.base_url))
                .call()
        })
    }

    /// `POST /v1/detect`. Boxes overshooting the frame are clipped with a
    /// warning; boxes left without area are dropped.
    pub fn detect(
        &self,
        image: &[u8],
        dims: ImageDims,
        prompt: &str,
        box_threshold: f64,
        text_threshold: f64,
    ) -> Result<DetectOutcome> {
        let body = DetectRequest {
            image: base64::engine::general_purpose::STANDARD.encode(image),
            prompt: prompt.to_string(),
            box_threshold,
            text_threshold,
        };
        let resp: DetectResponse = self.post("/v1/detect", &body)?;
        let mut out = DetectOutcome {
            model_version: resp.model_version,
            detections: Vec::with_capacity(resp.detections.len()),
            clipped: 0,
            dropped: 0,
        };
        for (k, d) in resp.detections.into_iter().enumerate() {
            if !(d.score.is_finite() && (0.0..=1.0).contains(&d.score)) {
                return Err(Error::Protocol(format!(
                    "detection {k} has score {} outside [0, 1]",
                    d.score
                )));
            }
            let Some(bbox) = BoundingBox::clipped_from_corners(d.bbox, dims) else {
                warn!(
                    "dropping detection {k}: box {:?} has no area inside the frame",
                    d.bbox
                );
                out.dropped += 1;
                continue;
            };
            if bbox.corners() != d.bbox {
                warn!(
                    "clipped detection {k} from {:?} to {:?}",
                    d.bbox,
                    bbox.corners()
                );
                out.clipped += 1;
            }
            out.detections.push(Detection {
                bbox,
                confidence: d.score,
                phrase: d.phrase,
            });
        }
        Ok(out)
    }

    /// `POST /v1/segment`: one mask per prompt box, in request order.
    pub fn segment(
        &self,
        image: &[u8],
        dims: ImageDims,
        boxes: &[BoundingBox],
    ) -> Result<(String, Vec<InstanceMask>)> {
        if boxes.is_empty() {
            return Err(Error::Config(
                "segment needs at least one prompt box".into(),
            ));
        }
        let body = SegmentRequest {
            image: base64::engine::general_purpose::STANDARD.encode(image),
            boxes: boxes.iter().map(BoundingBox::corners).collect(),
        };
        let resp: SegmentResponse = self.post("/v1/segment", &body)?;
        if resp.masks.len() != boxes.len() {
            return Err(Error::Protocol(format!(
                "sent {} boxes, received {} masks",
                boxes.len(),
                resp.masks.len()
            )));
        }
        if let Some((k, m)) = resp
            .masks
            .iter()
            .enumerate()
            .find(|(_, m)| m.dims() != dims)
        {
            return Err(Error::Protocol(format!(
                "mask {k} is {}x{}, image is {}x{}",
                m.width(),
                m.height(),
                dims.width,
                dims.height
            )));
        }
        Ok((resp.model_version, resp.masks))
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        let payload = serde_json::to_vec(body).expect("request serializes");
        self.with_retries(path, || {
            self.agent
                .post(format!("{}{path}", self.base_url))
                .header("content-type", "application/json")
                .send(&payload[..])
        })
    }

    fn with_retries<T: DeserializeOwned>(
        &self,
        path: &str,
        send: impl Fn() -> std::result::Result<ureq::http::Response<ureq::Body>, ureq::Error>,
    ) -> Result<T> {
        let attempts = self.retry.attempts.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.retry.base_delay * 2u32.pow(attempt - 1));
            }
            let mut resp = match send() {
                Ok(r) => r,
                Err(e) => {
                    last = e.to_string();
                    continue;
                }
            };
            let status = resp.status().as_u16();
            let bytes = match resp
                .body_mut()
                .with_config()
                .limit(MAX_RESPONSE_BYTES)
                .read_to_vec()
            {
                Ok(b) => b,
                Err(e) => {
                    last = e.to_string();
                    continue;
                }
            };
            if !(200..300).contains(&status) {
                let message = serde_json::from_slice::<ErrorBody>(&bytes)
                    .map(|b| b.error)
                    .unwrap_or_else(|_| String::from_utf8_lossy(&bytes).into_owned());
                return Err(Error::Remote { status, message });
            }
            return serde_json::from_slice(&bytes)
                .map_err(|e| Error::Protocol(format!("{path}: malformed response: {e}")));
        }
        Err(Error::Transport(format!(
            "{}{path} unreachable after {attempts} attempts: {last}",
            self.base_url
        )))
    }
}
