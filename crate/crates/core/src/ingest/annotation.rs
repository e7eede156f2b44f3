use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_text, write_atomic, IngestError};
use crate::ids::{Category, VideoId};
use crate::temporal::{HazardAnnotation, Interval};

/// On-disk annotation. Frame indices are 0-based, intervals inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub video_id: VideoId,
    pub is_hazard: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<Category>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visible: Option<Interval>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active: Option<Interval>,
}

impl AnnotationRecord {
    pub fn from_annotation(a: &HazardAnnotation) -> Self {
        Self {
            video_id: a.video_id().clone(),
            is_hazard: a.is_hazard(),
            category: a.category().cloned(),
            visible: a.visible(),
            active: a.active(),
        }
    }
}

pub fn load_annotations(path: &Path, frame_count: usize) -> Result<HazardAnnotation, IngestError> {
    let text = read_text(path)?;
    let record: AnnotationRecord =
        serde_json::from_str(&text).map_err(|e| IngestError::json(path, e))?;
    HazardAnnotation::new(
        record.video_id,
        frame_count,
        record.is_hazard,
        record.category,
        record.visible,
        record.active,
    )
    .map_err(|source| IngestError::Annotation {
        path: path.to_path_buf(),
        source,
    })
}

pub fn save_annotation(path: &Path, a: &HazardAnnotation) -> Result<(), IngestError> {
    let mut text = serde_json::to_string_pretty(&AnnotationRecord::from_annotation(a))
        .expect("annotation serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}
