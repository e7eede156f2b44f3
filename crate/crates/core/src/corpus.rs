//! In-memory corpus: annotated videos with one margin series per category.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ids::{Category, VideoId};
use crate::signal::MarginSeries;
use crate::temporal::HazardAnnotation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Calibration,
    Evaluation,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Calibration => "calibration",
            Split::Evaluation => "evaluation",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "calibration" => Ok(Split::Calibration),
            "evaluation" => Ok(Split::Evaluation),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub annotation: HazardAnnotation,
    pub split: Split,
    /// Drawn from nominal (hazard-free) driving footage.
    pub nominal: bool,
    pub signals: BTreeMap<Category, MarginSeries>,
}

impl VideoRecord {
    pub fn video_id(&self) -> &VideoId {
        self.annotation.video_id()
    }

    pub fn frame_count(&self) -> usize {
        self.annotation.frame_count()
    }

    pub fn is_hazard(&self) -> bool {
        self.annotation.is_hazard()
    }
}

/// Videos in ascending video id order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    videos: Vec<VideoRecord>,
}

impl Corpus {
    pub fn new(mut videos: Vec<VideoRecord>) -> Self {
        videos.sort_by(|a, b| a.video_id().cmp(b.video_id()));
        Self { videos }
    }

    pub fn videos(&self) -> &[VideoRecord] {
        &self.videos
    }

    pub fn get(&self, id: &VideoId) -> Option<&VideoRecord> {
        self.videos
            .binary_search_by(|v| v.video_id().cmp(id))
            .ok()
            .map(|i| &self.videos[i])
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &VideoRecord> {
        self.videos.iter().filter(move |v| v.split == split)
    }

    pub fn annotations(&self) -> Vec<HazardAnnotation> {
        self.videos.iter().map(|v| v.annotation.clone()).collect()
    }

    /// Content digest over annotations and margins, independent of file paths.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.videos {
            let a = &v.annotation;
            h.update(a.video_id().as_str().as_bytes());
            h.update([0u8]);
            h.update((a.frame_count() as u64).to_le_bytes());
            h.update([a.is_hazard() as u8, v.nominal as u8, v.split as u8]);
            h.update(a.category().map_or("", |c| c.as_str()).as_bytes());
            h.update([0u8]);
            for interval in [a.visible(), a.active()] {
                match interval {
                    Some(i) => {
                        h.update([1u8]);
                        h.update((i.start as u64).to_le_bytes());
                        h.update((i.end as u64).to_le_bytes());
                    }
                    None => h.update([0u8]),
                }
            }
            for (category, series) in &v.signals {
                h.update(category.as_str().as_bytes());
                h.update([0u8]);
                for m in series.margins() {
                    h.update(m.to_le_bytes());
                }
            }
        }
        hex::encode(h.finalize())
    }
}
