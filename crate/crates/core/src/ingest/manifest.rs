//! Corpus manifests.
//!
//! ```json
//! {
//!   "version": 1,
//!   "prompts": "prompts.json",
//!   "videos": [
//!     {"video_id": "v000", "frame_count": 50, "annotation": "annotations/v000.json",
//!      "scores": ["scores/v000.csv"], "split": "calibration", "nominal": false}
//!   ]
//! }
//! ```
//!
//! Each video supplies its signal either as one or more score tables (rows
//! from all tables are merged) or as a frame embedding file. Relative paths
//! resolve against the manifest's directory.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    load_annotations, read_embedding_file, read_score_table, read_text, resolve, write_atomic,
    IngestError, PromptBundle,
};
use crate::corpus::{Corpus, Split, VideoRecord};
use crate::ids::{Category, VideoId};
use crate::signal::{margin_signal, MarginSeries};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFile {
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompts: Option<PathBuf>,
    pub videos: Vec<ManifestVideo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestVideo {
    pub video_id: VideoId,
    pub frame_count: usize,
    pub annotation: PathBuf,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scores: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    pub split: Split,
    #[serde(default)]
    pub nominal: bool,
}

/// A validated manifest with every path resolved and checked to exist.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    pub path: PathBuf,
    pub prompts: Option<PathBuf>,
    pub videos: Vec<VideoEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoEntry {
    pub video_id: VideoId,
    pub frame_count: usize,
    pub annotation: PathBuf,
    pub scores: Vec<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub split: Split,
    pub nominal: bool,
}

impl CorpusManifest {
    pub fn video(&self, id: &VideoId) -> Option<&VideoEntry> {
        self.videos.iter().find(|v| &v.video_id == id)
    }
}

fn existing(path: PathBuf) -> Result<PathBuf, IngestError> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(IngestError::DanglingPath(path))
    }
}

pub fn load_manifest(path: &Path) -> Result<CorpusManifest, IngestError> {
    let text = read_text(path)?;
    let file: ManifestFile = serde_json::from_str(&text).map_err(|e| IngestError::json(path, e))?;
    if file.version != MANIFEST_VERSION {
        return Err(IngestError::SchemaVersionMismatch {
            path: path.to_path_buf(),
            expected: MANIFEST_VERSION,
            found: file.version,
        });
    }
    let prompts = file
        .prompts
        .map(|p| existing(resolve(path, &p)))
        .transpose()?;

    let mut seen = BTreeSet::new();
    let mut videos = Vec::with_capacity(file.videos.len());
    for (i, v) in file.videos.into_iter().enumerate() {
        if !seen.insert(v.video_id.clone()) {
            return Err(IngestError::DuplicateVideoId(v.video_id));
        }
        if v.frame_count == 0 {
            return Err(IngestError::invalid(
                path,
                format!("videos[{i}].frame_count"),
                "must be at least 1",
            ));
        }
        match (v.scores.is_empty(), &v.embeddings) {
            (true, None) => {
                return Err(IngestError::invalid(
                    path,
                    format!("videos[{i}]"),
                    "needs either scores or embeddings",
                ))
            }
            (false, Some(_)) => {
                return Err(IngestError::invalid(
                    path,
                    format!("videos[{i}]"),
                    "scores and embeddings are mutually exclusive",
                ))
            }
            _ => {}
        }
        videos.push(VideoEntry {
            annotation: existing(resolve(path, &v.annotation))?,
            scores: v
                .scores
                .iter()
                .map(|p| existing(resolve(path, p)))
                .collect::<Result<_, _>>()?,
            embeddings: v
                .embeddings
                .map(|p| existing(resolve(path, &p)))
                .transpose()?,
            video_id: v.video_id,
            frame_count: v.frame_count,
            split: v.split,
            nominal: v.nominal,
        });
    }
    Ok(CorpusManifest {
        path: path.to_path_buf(),
        prompts,
        videos,
    })
}

pub fn save_manifest(path: &Path, file: &ManifestFile) -> Result<(), IngestError> {
    let mut text = serde_json::to_string_pretty(file).expect("manifest serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Load annotations and build every prompt-set category's margin series.
pub fn load_corpus(manifest: &CorpusManifest, prompts: &PromptBundle) -> Result<Corpus, IngestError> {
    let videos = manifest
        .videos
        .par_iter()
        .map(|entry| load_video(manifest, entry, prompts))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Corpus::new(videos))
}

fn load_video(
    manifest: &CorpusManifest,
    entry: &VideoEntry,
    prompts: &PromptBundle,
) -> Result<VideoRecord, IngestError> {
    let annotation = load_annotations(&entry.annotation, entry.frame_count)?;
    if annotation.video_id() != &entry.video_id {
        return Err(IngestError::VideoIdMismatch {
            path: entry.annotation.clone(),
            expected: entry.video_id.clone(),
            found: annotation.video_id().clone(),
        });
    }
    if entry.nominal && annotation.is_hazard() {
        return Err(IngestError::invalid(
            &manifest.path,
            format!("video {}", entry.video_id),
            "nominal footage is annotated as a hazard video",
        ));
    }

    let signals = match &entry.embeddings {
        Some(path) => embedding_signals(entry, path, prompts)?,
        None => score_signals(entry, prompts)?,
    };
    Ok(VideoRecord {
        annotation,
        split: entry.split,
        nominal: entry.nominal,
        signals,
    })
}

fn score_signals(
    entry: &VideoEntry,
    prompts: &PromptBundle,
) -> Result<BTreeMap<Category, MarginSeries>, IngestError> {
    let mut merged: BTreeMap<Category, Vec<f64>> = BTreeMap::new();
    for path in &entry.scores {
        for (category, margins) in read_score_table(path, entry.frame_count)? {
            if merged.insert(category.clone(), margins).is_some() {
                return Err(IngestError::invalid(
                    path,
                    format!("category {category}"),
                    format!("already supplied by another score table of video {}", entry.video_id),
                ));
            }
        }
    }
    prompts
        .set
        .categories()
        .map(|category| {
            let margins = merged.remove(category).ok_or_else(|| IngestError::MissingScore {
                video: entry.video_id.clone(),
                category: category.clone(),
            })?;
            let series = MarginSeries::new(entry.video_id.clone(), category.clone(), margins)
                .map_err(|source| IngestError::Signal {
                    video: entry.video_id.clone(),
                    source,
                })?;
            Ok((category.clone(), series))
        })
        .collect()
}

fn embedding_signals(
    entry: &VideoEntry,
    path: &Path,
    prompts: &PromptBundle,
) -> Result<BTreeMap<Category, MarginSeries>, IngestError> {
    let text = prompts
        .text_embeddings
        .as_ref()
        .ok_or_else(|| IngestError::MissingTextEmbeddings(entry.video_id.clone()))?;
    let matrix = read_embedding_file(path)?;
    if matrix.rows() != entry.frame_count {
        return Err(IngestError::FrameCountMismatch {
            video: entry.video_id.clone(),
            expected: entry.frame_count,
            actual: matrix.rows(),
        });
    }
    let signal_err = |source| IngestError::Signal {
        video: entry.video_id.clone(),
        source,
    };
    let frames = matrix.to_vectors().map_err(signal_err)?;
    prompts
        .set
        .pairs
        .iter()
        .map(|pair| {
            let series = margin_signal(&entry.video_id, &frames, pair, text, matrix.logit_scale())
                .map_err(signal_err)?;
            Ok((pair.category.clone(), series))
        })
        .collect()
}
