//! JSON bodies of the versioned (`/v1`) inference HTTP contract.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::geometry::InstanceMask;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectRequest {
    /// Base64-encoded image file.
    pub image: String,
    pub prompt: String,
    pub box_threshold: f64,
    pub text_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireDetection {
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub score: f64,
    #[serde(default)]
    pub phrase: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectResponse {
    pub model_version: String,
    pub detections: Vec<WireDetection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRequest {
    pub image: String,
    pub boxes: Vec<[f64; 4]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentResponse {
    pub model_version: String,
    pub masks: Vec<InstanceMask>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub models: BTreeMap<String, String>,
}

impl HealthResponse {
    /// `detector+segmenter` identifier used to version cached results.
    pub fn model_version(&self) -> String {
        let get = |k: &str| self.models.get(k).map_or("unknown", String::as_str);
        format!("{}+{}", get("detector"), get("segmenter"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}
