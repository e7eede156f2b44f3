//! File formats and persistence.
//!
//! | file | format |
//! |------|--------|
//! | corpus manifest | JSON |
//! | prompt set | JSON |
//! | annotation | JSON, one per video |
//! | frame / prompt embeddings | binary `HSE1` |
//! | score table | CSV (TSV when the extension is `.tsv`) |
//! | calibration profile | JSON, floats written with 17 significant digits |
//! | alert segments | CSV |
//! | trajectory table | CSV |
//!
//! Writers go through a temporary file in the destination directory and
//! rename it into place, so readers never see partial files.

mod annotation;
mod embedding;
mod fixture;
mod manifest;
mod profile;
mod prompts;
mod scores;
mod segments;
mod trajectory_table;

use std::io::{self, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::calibration::ProfileMismatch;
use crate::ids::{Category, SceneId, VideoId};
use crate::signal::SignalError;
use crate::temporal::MetricsError;
use crate::trajectory::TrajectoryError;

pub use annotation::{load_annotations, save_annotation, AnnotationRecord};
pub use embedding::{
    decode_embeddings, encode_embeddings, read_embedding_file, write_embedding_file,
    EmbeddingMatrix, FormatError, EMBEDDING_HEADER_LEN, EMBEDDING_MAGIC, EMBEDDING_VERSION,
};
pub use fixture::{generate_fixture, FixtureSpec};
pub use manifest::{load_corpus, load_manifest, save_manifest, CorpusManifest, ManifestFile, ManifestVideo, VideoEntry};
pub use profile::{load_profile, profile_from_json, profile_to_json, save_profile};
pub use prompts::{load_prompts, save_prompts, PromptBundle, PromptFile};
pub use scores::{read_score_table, write_score_table, ScoreRow};
pub use segments::{read_segments, segments_to_csv, write_segments};
pub use trajectory_table::{
    read_trajectory_table, scene_evaluations, write_trajectory_table, Condition, TrajectoryRow,
};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: parse error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Parse {
        path: PathBuf,
        line: Option<u64>,
        message: String,
    },
    #[error("{path}: invalid {field}: {message}")]
    Invalid {
        path: PathBuf,
        field: String,
        message: String,
    },
    #[error("referenced file does not exist: {0}")]
    DanglingPath(PathBuf),
    #[error("duplicate video id {0}")]
    DuplicateVideoId(VideoId),
    #[error("{path}: {source}")]
    Embedding {
        path: PathBuf,
        #[source]
        source: FormatError,
    },
    #[error("{path}: {source}")]
    Annotation {
        path: PathBuf,
        #[source]
        source: MetricsError,
    },
    #[error("{path}: annotation is for video {found}, manifest expects {expected}")]
    VideoIdMismatch {
        path: PathBuf,
        expected: VideoId,
        found: VideoId,
    },
    #[error("{path}: schema version {found} is not supported (expected {expected})")]
    SchemaVersionMismatch {
        path: PathBuf,
        expected: u32,
        found: u32,
    },
    #[error("video {video}: {source}")]
    Signal {
        video: VideoId,
        #[source]
        source: SignalError,
    },
    #[error("{path}: frame {frame} at line {line} is outside 0..{frame_count}")]
    FrameOutOfRange {
        path: PathBuf,
        line: u64,
        frame: usize,
        frame_count: usize,
    },
    #[error("{path}: duplicate row for frame {frame}, category {category} at line {line}")]
    DuplicateRow {
        path: PathBuf,
        line: u64,
        frame: usize,
        category: Category,
    },
    #[error("video {video}: no score rows for category {category}")]
    MissingScore { video: VideoId, category: Category },
    #[error("video {video}: embedding file has {actual} frames, manifest says {expected}")]
    FrameCountMismatch {
        video: VideoId,
        expected: usize,
        actual: usize,
    },
    #[error("video {0} uses embeddings but the prompt set has no text embeddings")]
    MissingTextEmbeddings(VideoId),
    #[error("profile {path}: {source}")]
    ProfileMismatch {
        path: PathBuf,
        #[source]
        source: ProfileMismatch,
    },
    #[error("scene {0} has no baseline trajectory")]
    MissingBaseline(SceneId),
    #[error("scene {0} has no ground-truth trajectory")]
    MissingGroundTruth(SceneId),
    #[error("scene {scene}: {source}")]
    Trajectory {
        scene: SceneId,
        #[source]
        source: TrajectoryError,
    },
}

impl IngestError {
    pub fn is_io(&self) -> bool {
        matches!(self, IngestError::Io { .. })
    }

    pub(crate) fn io(path: &Path) -> impl FnOnce(io::Error) -> IngestError + '_ {
        move |source| IngestError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn invalid(path: &Path, field: impl Into<String>, message: impl Into<String>) -> Self {
        IngestError::Invalid {
            path: path.to_path_buf(),
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn json(path: &Path, err: serde_json::Error) -> Self {
        IngestError::Parse {
            path: path.to_path_buf(),
            line: (err.line() > 0).then_some(err.line() as u64),
            message: err.to_string(),
        }
    }
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>, IngestError> {
    std::fs::read(path).map_err(IngestError::io(path))
}

pub(crate) fn read_text(path: &Path) -> Result<String, IngestError> {
    std::fs::read_to_string(path).map_err(IngestError::io(path))
}

/// Write `bytes` to a temporary sibling of `path`, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IngestError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(IngestError::io(path))?;
    tmp.write_all(bytes).map_err(IngestError::io(path))?;
    tmp.as_file().sync_all().map_err(IngestError::io(path))?;
    tmp.persist(path)
        .map_err(|e| IngestError::io(path)(e.error))?;
    Ok(())
}

/// Resolve `rel` against the directory containing `base`.
pub(crate) fn resolve(base: &Path, rel: &Path) -> PathBuf {
    if rel.is_absolute() {
        rel.to_path_buf()
    } else {
        base.parent().unwrap_or(Path::new("")).join(rel)
    }
}
