//! Prompt set files.
//!
//! ```json
//! {
//!   "version": 1,
//!   "general": "hazard",
//!   "text_embeddings": "prompt_embeddings.hse",
//!   "categories": [
//!     {"category": "hazard", "positive": ["a driving hazard on the road"],
//!      "negative": ["normal driving scene"], "aggregation": "max"}
//!   ]
//! }
//! ```
//!
//! `text_embeddings` is optional and only needed for corpora that supply
//! frame embeddings. Its rows follow [`PromptSet::phrasings`] order.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_embedding_file, read_text, resolve, write_atomic, IngestError};
use crate::ids::Category;
use crate::signal::{EmbeddingVector, PromptPair, PromptSet};

pub const PROMPT_FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptFile {
    pub version: u32,
    pub general: Category,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_embeddings: Option<PathBuf>,
    pub categories: Vec<PromptPair>,
}

/// A validated prompt set with its text embeddings, when present.
#[derive(Debug, Clone)]
pub struct PromptBundle {
    pub set: PromptSet,
    pub text_embeddings: Option<HashMap<String, EmbeddingVector>>,
}

pub fn load_prompts(path: &Path) -> Result<PromptBundle, IngestError> {
    let text = read_text(path)?;
    let file: PromptFile = serde_json::from_str(&text).map_err(|e| IngestError::json(path, e))?;
    if file.version != PROMPT_FILE_VERSION {
        return Err(IngestError::SchemaVersionMismatch {
            path: path.to_path_buf(),
            expected: PROMPT_FILE_VERSION,
            found: file.version,
        });
    }
    let set = PromptSet::new(file.general, file.categories)
        .map_err(|e| IngestError::invalid(path, "categories", e.to_string()))?;

    let text_embeddings = match file.text_embeddings {
        None => None,
        Some(rel) => {
            let emb_path = resolve(path, &rel);
            if !emb_path.exists() {
                return Err(IngestError::DanglingPath(emb_path));
            }
            let matrix = read_embedding_file(&emb_path)?;
            let phrasings = set.phrasings();
            if matrix.rows() != phrasings.len() {
                return Err(IngestError::invalid(
                    &emb_path,
                    "row count",
                    format!(
                        "{} rows for {} distinct phrasings",
                        matrix.rows(),
                        phrasings.len()
                    ),
                ));
            }
            let vectors = matrix
                .to_vectors()
                .map_err(|e| IngestError::invalid(&emb_path, "payload", e.to_string()))?;
            Some(
                phrasings
                    .into_iter()
                    .map(str::to_owned)
                    .zip(vectors)
                    .collect(),
            )
        }
    };
    Ok(PromptBundle {
        set,
        text_embeddings,
    })
}

pub fn save_prompts(path: &Path, file: &PromptFile) -> Result<(), IngestError> {
    let mut text = serde_json::to_string_pretty(file).expect("prompt file serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}
